"""Declarative scenario definitions with three-valued evaluation."""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass, field, fields
from importlib import resources
from typing import Any, Callable, Iterable, Mapping, Sequence

import yaml

from .errors import EmptyDataset, UndeclaredVariable, ValidationError
from .nds import TurnEvent
from .records import DerivedFlags, Junction, RecordSchema, Turning, VehicleRecord, schema_for


class Outcome(str, enum.Enum):
    Match = "Match"
    NoMatch = "NoMatch"
    Unknown = "Unknown"


class UnknownPolicy(str, enum.Enum):
    ExcludeFromNumerator = "ExcludeFromNumerator"
    ExcludeFromBoth = "ExcludeFromBoth"


_MISSING = object()

_OPS: dict[str, Callable[[Any, Any], bool]] = {
    "in": lambda v, ref: v in ref,
    "not_in": lambda v, ref: v not in ref,
    "eq": lambda v, ref: v == ref,
    "ne": lambda v, ref: v != ref,
    "lt": lambda v, ref: v < ref,
    "le": lambda v, ref: v <= ref,
    "gt": lambda v, ref: v > ref,
    "ge": lambda v, ref: v >= ref,
}


def _norm(value):
    if isinstance(value, enum.Enum):
        value = value.value
    if isinstance(value, str):
        return " ".join(value.split()).casefold()
    return value


@dataclass(frozen=True)
class Atom:
    variable: str
    op: str
    value: Any

    def __post_init__(self):
        if self.op not in _OPS:
            raise ValidationError(f"unknown operator {self.op!r}")
        if self.op in ("in", "not_in"):
            object.__setattr__(self, "value", frozenset(_norm(v) for v in self.value))
        else:
            object.__setattr__(self, "value", _norm(self.value))

    def variables(self) -> set[str]:
        return {self.variable}

    def eval(self, lookup) -> Outcome:
        v = lookup(self.variable)
        if v is _MISSING:
            return Outcome.Unknown
        try:
            ok = _OPS[self.op](_norm(v), self.value)
        except TypeError:
            raise ValidationError(f"cannot compare {self.variable}={v!r} with {self.value!r}") from None
        return Outcome.Match if ok else Outcome.NoMatch


@dataclass(frozen=True)
class All:
    children: tuple

    def variables(self) -> set[str]:
        return set().union(*(c.variables() for c in self.children))

    def eval(self, lookup) -> Outcome:
        seen_unknown = False
        for c in self.children:
            r = c.eval(lookup)
            if r is Outcome.NoMatch:
                return r
            seen_unknown |= r is Outcome.Unknown
        return Outcome.Unknown if seen_unknown else Outcome.Match


@dataclass(frozen=True)
class Any_:
    children: tuple

    def variables(self) -> set[str]:
        return set().union(*(c.variables() for c in self.children))

    def eval(self, lookup) -> Outcome:
        seen_unknown = False
        for c in self.children:
            r = c.eval(lookup)
            if r is Outcome.Match:
                return r
            seen_unknown |= r is Outcome.Unknown
        return Outcome.Unknown if seen_unknown else Outcome.NoMatch


@dataclass(frozen=True)
class Not:
    child: Any

    def variables(self) -> set[str]:
        return self.child.variables()

    def eval(self, lookup) -> Outcome:
        r = self.child.eval(lookup)
        if r is Outcome.Unknown:
            return r
        return Outcome.NoMatch if r is Outcome.Match else Outcome.Match


@dataclass(frozen=True)
class ScenarioDefinition:
    name: str
    record_predicate: Any = None
    event_predicate: Any = None
    unknown_policy: UnknownPolicy = UnknownPolicy.ExcludeFromNumerator
    codesets: Mapping[str, tuple] = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if self.record_predicate is None and self.event_predicate is None:
            raise ValidationError(f"scenario {self.name!r} has no predicate")


@dataclass(frozen=True)
class FlaggedRecord:
    record: VehicleRecord
    flags: DerivedFlags

    @property
    def sample_weight(self) -> float:
        return self.record.sample_weight


DERIVED_VARIABLES = ("junction", "turning")
RECORD_FIELDS = ("dataset_id", "body_class", "severity", "calendar_year", "model_year")
EVENT_VARIABLES = tuple(f.name for f in fields(TurnEvent)) + ("abs_net_yaw",)


def _record_lookup(record: VehicleRecord, flags: DerivedFlags | None):
    def lookup(var):
        if var == "junction":
            if flags is None or flags.junction is Junction.Unknown:
                return _MISSING
            return flags.junction
        if var == "turning":
            if flags is None or flags.turning is Turning.Unknown:
                return _MISSING
            return flags.turning
        if var in RECORD_FIELDS:
            v = getattr(record, var)
            return _MISSING if v is None else v
        v = record.code(var)
        return _MISSING if v is None else v

    return lookup


def evaluate(definition: ScenarioDefinition, record: VehicleRecord, flags: DerivedFlags | None,
             schema: RecordSchema | None = None) -> Outcome:
    if definition.record_predicate is None:
        raise ValidationError(f"scenario {definition.name!r} has no record predicate")
    schema = schema or schema_for(record.dataset_id)
    for var in definition.record_predicate.variables():
        if var not in DERIVED_VARIABLES and var not in RECORD_FIELDS and not schema.declares(var):
            raise UndeclaredVariable(var)
    return definition.record_predicate.eval(_record_lookup(record, flags))


def evaluate_event(definition: ScenarioDefinition, event: TurnEvent) -> Outcome:
    if definition.event_predicate is None:
        raise ValidationError(f"scenario {definition.name!r} has no event predicate")
    for var in definition.event_predicate.variables():
        if var not in EVENT_VARIABLES:
            raise UndeclaredVariable(var)
    return definition.event_predicate.eval(lambda var: getattr(event, var))


def evaluate_item(definition: ScenarioDefinition, item) -> Outcome:
    if isinstance(item, TurnEvent):
        return evaluate_event(definition, item)
    if isinstance(item, FlaggedRecord):
        return evaluate(definition, item.record, item.flags)
    record, flags = item
    return evaluate(definition, record, flags)


@dataclass(frozen=True)
class Proportion:
    numerator: float
    denominator: float
    fraction: float
    counts: Mapping[Outcome, int]


def _weight(item) -> float:
    if isinstance(item, TurnEvent):
        return 1.0
    if isinstance(item, FlaggedRecord):
        return item.record.sample_weight
    return item[0].sample_weight


def proportions(definition: ScenarioDefinition, dataset: Sequence, weighted: bool = False) -> Proportion:
    if len(dataset) == 0:
        raise EmptyDataset(f"no items to evaluate for {definition.name!r}")
    counts = {o: 0 for o in Outcome}
    weights = {o: [] for o in Outcome}
    for item in dataset:
        o = evaluate_item(definition, item)
        counts[o] += 1
        weights[o].append(_weight(item) if weighted else 1.0)
    num = math.fsum(weights[Outcome.Match])
    denom_parts = weights[Outcome.Match] + weights[Outcome.NoMatch]
    if definition.unknown_policy is UnknownPolicy.ExcludeFromNumerator:
        denom_parts = denom_parts + weights[Outcome.Unknown]
    den = math.fsum(denom_parts)
    if den == 0:
        raise EmptyDataset(f"every item is Unknown for {definition.name!r}")
    return Proportion(num, den, num / den, counts)


# ---------------------------------------------------------------------------
# file format


def parse_expr(node, codesets: Mapping[str, Sequence] | None = None):
    codesets = codesets or {}
    if not isinstance(node, Mapping):
        raise ValidationError(f"expression node must be a mapping, got {node!r}")
    if "all" in node or "any" in node:
        key = "all" if "all" in node else "any"
        children = node[key]
        if len(node) != 1 or not isinstance(children, list) or not children:
            raise ValidationError(f"'{key}' needs a non-empty list and nothing else")
        kids = tuple(parse_expr(c, codesets) for c in children)
        return All(kids) if key == "all" else Any_(kids)
    if "not" in node:
        if len(node) != 1:
            raise ValidationError("'not' takes a single child")
        return Not(parse_expr(node["not"], codesets))
    if "var" not in node:
        raise ValidationError(f"atom needs 'var': {node!r}")
    ops = [k for k in node if k != "var"]
    if len(ops) != 1 or ops[0] not in _OPS:
        raise ValidationError(f"atom needs exactly one operator from {sorted(_OPS)}: {node!r}")
    op = ops[0]
    value = node[op]
    if isinstance(value, str) and value.startswith("@"):
        try:
            value = codesets[value[1:]]
        except KeyError:
            raise ValidationError(f"undefined code-set {value}") from None
    if op in ("in", "not_in") and isinstance(value, (str, int, float)):
        value = [value]
    return Atom(str(node["var"]), op, value)


def definition_from_dict(doc: Mapping) -> ScenarioDefinition:
    allowed = {"name", "description", "unknown_policy", "codesets", "record_predicate", "event_predicate"}
    extra = set(doc) - allowed
    if extra:
        raise ValidationError(f"unknown keys in scenario definition: {sorted(extra)}")
    codesets = {k: tuple(v) for k, v in (doc.get("codesets") or {}).items()}
    rp = doc.get("record_predicate")
    ep = doc.get("event_predicate")
    return ScenarioDefinition(
        name=str(doc["name"]),
        record_predicate=parse_expr(rp, codesets) if rp is not None else None,
        event_predicate=parse_expr(ep, codesets) if ep is not None else None,
        unknown_policy=UnknownPolicy(doc.get("unknown_policy", "ExcludeFromNumerator")),
        codesets=codesets,
    )


def load_definition(source) -> ScenarioDefinition:
    with open(os.fspath(source), encoding="utf-8") as fh:
        return definition_from_dict(yaml.safe_load(fh))


def builtin_definition(name: str = "turns_at_intersections") -> ScenarioDefinition:
    text = resources.files("scenario_fusion").joinpath("data", f"{name}.yaml").read_text(encoding="utf-8")
    return definition_from_dict(yaml.safe_load(text))


def flag_records(records: Iterable[VehicleRecord], flags: Iterable[DerivedFlags]) -> list[FlaggedRecord]:
    return [FlaggedRecord(r, f) for r, f in zip(records, flags, strict=True)]
