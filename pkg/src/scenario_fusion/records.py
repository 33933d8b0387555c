"""Vehicle-level crash records: ingest, derived flags, cohort filter."""

from __future__ import annotations

import csv
import enum
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import EmptyCase, EmptyFile, MissingColumn, TypeMismatch, UnknownColumn


class DatasetId(str, enum.Enum):
    FatalNCD = "FatalNCD"
    NonFatalNCD = "NonFatalNCD"
    NdsCrash = "NdsCrash"
    NdsNearCrash = "NdsNearCrash"
    NdsBaseline = "NdsBaseline"

    @property
    def is_nds(self) -> bool:
        return self.value.startswith("Nds")


class BodyClass(str, enum.Enum):
    LightPassengerVehicle = "LightPassengerVehicle"
    MotorcycleMoped = "MotorcycleMoped"
    MediumHeavyVehicle = "MediumHeavyVehicle"
    Other = "Other"


class Severity(str, enum.Enum):
    Fatal = "Fatal"
    NonFatalInjury = "NonFatalInjury"
    PropertyDamageOnly = "PropertyDamageOnly"
    NearCrash = "NearCrash"
    Baseline = "Baseline"


class ExclusionFlag(str, enum.Enum):
    Emergency = "Emergency"
    Parked = "Parked"
    Stolen = "Stolen"
    DriverAbsent = "DriverAbsent"
    PolicePursuit = "PolicePursuit"


class Junction(str, enum.Enum):
    Junction = "Junction"
    NotAJunction = "NotAJunction"
    Unknown = "Unknown"


class Turning(str, enum.Enum):
    Turning = "Turning"
    NotTurning = "NotTurning"
    Unknown = "Unknown"


@dataclass(frozen=True)
class VehicleRecord:
    dataset_id: DatasetId
    case_id: str
    vehicle_index: int
    calendar_year: int
    model_year: int | None
    body_class: BodyClass
    severity: Severity
    coded: Mapping[str, str] = field(default_factory=dict, hash=False)
    sample_weight: float = 1.0
    first_harmful_event_involved: bool = True
    exclusion_flags: frozenset[ExclusionFlag] = frozenset()

    def __post_init__(self):
        if not self.sample_weight > 0:
            raise ValueError(f"sample_weight must be > 0, got {self.sample_weight}")
        if self.vehicle_index < 1:
            raise ValueError("vehicle_index must be >= 1")
        if self.model_year is not None and self.model_year > self.calendar_year + 1:
            raise ValueError(
                f"model year {self.model_year} exceeds calendar year {self.calendar_year} + 1"
            )

    @property
    def key(self) -> tuple[str, int]:
        return (self.case_id, self.vehicle_index)

    def code(self, variable: str) -> str | None:
        return self.coded.get(variable)


@dataclass(frozen=True)
class DerivedFlags:
    junction: Junction
    turning: Turning


# ---------------------------------------------------------------------------
# schema + delimited-text I/O

FIXED_COLUMNS = (
    "dataset_id",
    "case_id",
    "vehicle_index",
    "calendar_year",
    "model_year",
    "body_class",
    "severity",
    "sample_weight",
    "first_harmful_event",
    "exclusion_flags",
)

NCD_CODED = ("RELJCT2", "P_CRASH1", "P_CRASH2", "ACC_TYPE", "LGT_COND", "MOTORIST_TYPE")
NDS_CODED = (
    "RELATION_TO_JUNCTION",
    "PRE_INCIDENT_MANEUVER",
    "PRECIPITATING_EVENT",
    "M2_PRE_INCIDENT_MANEUVER",
    "M3_PRE_INCIDENT_MANEUVER",
    "LIGHTING",
    "MOTORIST_TYPE",
)


@dataclass(frozen=True)
class RecordSchema:
    """Canonical column layout plus optional per-year column renames.

    ``aliases`` maps a source-file header name onto a canonical name, which is
    how annual files with drifting headers are harmonized onto one schema.
    """

    name: str
    coded_variables: tuple[str, ...]
    aliases: Mapping[str, str] = field(default_factory=dict, hash=False)
    default_weight: float = 1.0

    @property
    def columns(self) -> tuple[str, ...]:
        return FIXED_COLUMNS + tuple(self.coded_variables)

    def declares(self, variable: str) -> bool:
        return variable in self.coded_variables

    def with_aliases(self, aliases: Mapping[str, str]) -> "RecordSchema":
        return RecordSchema(self.name, self.coded_variables, dict(aliases), self.default_weight)


NCD_SCHEMA = RecordSchema("ncd", NCD_CODED)
NDS_SCHEMA = RecordSchema("nds", NDS_CODED)

REQUIRED_COLUMNS = ("case_id", "calendar_year")
_OPTIONAL_DEFAULTS = {
    "sample_weight": None,
    "first_harmful_event": "1",
    "exclusion_flags": "",
    "model_year": "",
}


def schema_for(dataset: DatasetId) -> RecordSchema:
    return NDS_SCHEMA if dataset.is_nds else NCD_SCHEMA


@dataclass
class IngestResult:
    records: list[VehicleRecord]
    diagnostics: list[TypeMismatch]


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "y"):
        return True
    if t in ("0", "false", "no", "n"):
        return False
    raise ValueError(text)


def _parse_row(row: Mapping[str, str], schema: RecordSchema, rownum: int) -> VehicleRecord:
    def get(col):
        val = row.get(col)
        if val is None:
            val = _OPTIONAL_DEFAULTS.get(col, "")
        return val if val is not None else ""

    def convert(col, fn):
        try:
            return fn(get(col))
        except (ValueError, KeyError) as exc:
            raise TypeMismatch(rownum, col, str(exc)) from None

    case_id = get("case_id").strip()
    if not case_id:
        raise TypeMismatch(rownum, "case_id", "empty case id")
    dataset = convert("dataset_id", lambda s: DatasetId(s.strip()))
    cy = convert("calendar_year", lambda s: int(s))
    my_text = get("model_year").strip()
    if my_text in ("", "Unknown", "unknown"):
        my = None
    else:
        my = convert("model_year", lambda s: int(s))
        if my > cy + 1:
            raise TypeMismatch(rownum, "model_year", f"{my} > calendar_year + 1")
    weight_text = row.get("sample_weight")
    if weight_text is None or not weight_text.strip():
        weight = schema.default_weight
    else:
        weight = convert("sample_weight", float)
        if not weight > 0:
            raise TypeMismatch(rownum, "sample_weight", "weight must be > 0")
    vidx = convert("vehicle_index", int)
    if vidx < 1:
        raise TypeMismatch(rownum, "vehicle_index", "must be >= 1")
    flags_text = get("exclusion_flags").strip()
    flags = frozenset(
        convert("exclusion_flags", lambda _s, f=f: ExclusionFlag(f.strip()))
        for f in flags_text.split(";")
        if f.strip()
    )
    coded = {}
    for var in schema.coded_variables:
        val = row.get(var)
        if val is not None and val.strip():
            coded[var] = val.strip()
    return VehicleRecord(
        dataset_id=dataset,
        case_id=case_id,
        vehicle_index=vidx,
        calendar_year=cy,
        model_year=my,
        body_class=convert("body_class", lambda s: BodyClass(s.strip())),
        severity=convert("severity", lambda s: Severity(s.strip())),
        coded=coded,
        sample_weight=weight,
        first_harmful_event_involved=convert("first_harmful_event", _parse_bool),
        exclusion_flags=flags,
    )


def ingest_records(source, schema: RecordSchema, strict: bool = True) -> IngestResult:
    """Read one delimited dataset-year file.

    With ``strict`` the first bad row raises :class:`TypeMismatch`; otherwise
    bad rows are skipped and returned as diagnostics.  Row numbers count the
    header as row 1.
    """
    path = os.fspath(source)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path} is empty") from None
        header = [schema.aliases.get(h.strip(), h.strip()) for h in header]
        declared = set(schema.columns)
        for h in header:
            if h not in declared:
                raise UnknownColumn(h, path)
        for col in REQUIRED_COLUMNS + tuple(schema.coded_variables) + (
            "dataset_id",
            "vehicle_index",
            "body_class",
            "severity",
        ):
            if col not in header:
                raise MissingColumn(col, path)
        records: list[VehicleRecord] = []
        diagnostics: list[TypeMismatch] = []
        for rownum, values in enumerate(reader, start=2):
            if not values or all(not v.strip() for v in values):
                continue
            if len(values) != len(header):
                err = TypeMismatch(rownum, "*", f"expected {len(header)} fields, got {len(values)}")
                if strict:
                    raise err
                diagnostics.append(err)
                continue
            try:
                records.append(_parse_row(dict(zip(header, values)), schema, rownum))
            except TypeMismatch as err:
                if strict:
                    raise
                diagnostics.append(err)
    return IngestResult(records, diagnostics)


def _format_weight(w: float) -> str:
    return repr(float(w))


def write_records(records: Iterable[VehicleRecord], dest, schema: RecordSchema) -> None:
    with open(os.fspath(dest), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(schema.columns)
        for r in records:
            writer.writerow(
                [
                    r.dataset_id.value,
                    r.case_id,
                    r.vehicle_index,
                    r.calendar_year,
                    "" if r.model_year is None else r.model_year,
                    r.body_class.value,
                    r.severity.value,
                    _format_weight(r.sample_weight),
                    "1" if r.first_harmful_event_involved else "0",
                    ";".join(sorted(f.value for f in r.exclusion_flags)),
                ]
                + [r.coded.get(v, "") for v in schema.coded_variables]
            )


# ---------------------------------------------------------------------------
# derived flags


def _norm(code: str) -> str:
    return " ".join(code.split()).casefold()


@dataclass(frozen=True)
class JunctionMap:
    variable: str
    junction: frozenset[str]
    not_junction: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "junction", frozenset(_norm(c) for c in self.junction))
        object.__setattr__(self, "not_junction", frozenset(_norm(c) for c in self.not_junction))
        overlap = self.junction & self.not_junction
        if overlap:
            raise ValueError(f"codes mapped to both classes: {sorted(overlap)}")


@dataclass(frozen=True)
class TurningMap:
    """Which codes indicate a turn, per source variable.

    A code listed under ``known`` (or ``turn``) for its variable is a known
    value; anything else, including a missing cell, is unknown.  Variables in
    ``optional`` may be absent without making the result unknown (the NDS
    motorist-2/3 maneuvers only exist for crashes and near-crashes).
    """

    turn: Mapping[str, frozenset[str]]
    known: Mapping[str, frozenset[str]]
    optional: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "turn", {k: frozenset(_norm(c) for c in v) for k, v in self.turn.items()})
        known = {k: frozenset(_norm(c) for c in v) for k, v in self.known.items()}
        for k, v in self.turn.items():
            known[k] = known.get(k, frozenset()) | v
        object.__setattr__(self, "known", known)

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(self.known)


@dataclass(frozen=True)
class CodeMapping:
    junction: JunctionMap
    turning: TurningMap


def derive_junction(record: VehicleRecord, mapping: JunctionMap) -> Junction:
    code = record.code(mapping.variable)
    if code is None:
        return Junction.Unknown
    c = _norm(code)
    if c in mapping.junction:
        return Junction.Junction
    if c in mapping.not_junction:
        return Junction.NotAJunction
    return Junction.Unknown


def derive_turning(records_of_case: Sequence[VehicleRecord], mapping: TurningMap) -> Turning:
    if not records_of_case:
        raise EmptyCase("derive_turning needs at least one record")
    case_ids = {r.case_id for r in records_of_case}
    if len(case_ids) != 1:
        raise ValueError(f"records span several cases: {sorted(case_ids)}")
    any_unknown = False
    for r in records_of_case:
        for var, known in mapping.known.items():
            code = r.code(var)
            if code is None:
                if var not in mapping.optional:
                    any_unknown = True
                continue
            c = _norm(code)
            if c in mapping.turn.get(var, ()):
                return Turning.Turning
            if c not in known:
                any_unknown = True
    return Turning.Unknown if any_unknown else Turning.NotTurning


def group_cases(records: Iterable[VehicleRecord]) -> dict[tuple[str, str], list[VehicleRecord]]:
    """Group by (dataset, case id), preserving first-seen order."""
    cases: dict[tuple[str, str], list[VehicleRecord]] = {}
    for r in records:
        cases.setdefault((r.dataset_id.value, r.case_id), []).append(r)
    return cases


def derive_flags(records: Sequence[VehicleRecord], mappings: Mapping[str, CodeMapping]) -> list[DerivedFlags]:
    """Per-record flags; turning is a case-level property shared by its vehicles.

    ``mappings`` is keyed by schema name (``"ncd"`` / ``"nds"``).
    """
    turning_by_case = {}
    for key, recs in group_cases(records).items():
        m = mappings[schema_for(recs[0].dataset_id).name]
        turning_by_case[key] = derive_turning(recs, m.turning)
    out = []
    for r in records:
        m = mappings[schema_for(r.dataset_id).name]
        out.append(DerivedFlags(derive_junction(r, m.junction), turning_by_case[(r.dataset_id.value, r.case_id)]))
    return out


# ---------------------------------------------------------------------------
# cohort


class ExclusionReason(str, enum.Enum):
    ModelYear = "ModelYear"
    BodyClass = "BodyClass"
    FirstHarmfulEvent = "FirstHarmfulEvent"
    Emergency = "Emergency"
    Parked = "Parked"
    Stolen = "Stolen"
    DriverAbsent = "DriverAbsent"
    PolicePursuit = "PolicePursuit"


@dataclass(frozen=True)
class CohortPolicy:
    min_model_year: int = 1997
    body_classes: frozenset[BodyClass] = frozenset({BodyClass.LightPassengerVehicle})
    require_first_harmful_event: bool = True
    excluded_flags: frozenset[ExclusionFlag] = frozenset(ExclusionFlag)


def exclusion_reason(record: VehicleRecord, policy: CohortPolicy) -> ExclusionReason | None:
    """First failed criterion in a fixed order, or None for a survivor."""
    if record.model_year is None or record.model_year < policy.min_model_year:
        return ExclusionReason.ModelYear
    if record.body_class not in policy.body_classes:
        return ExclusionReason.BodyClass
    if policy.require_first_harmful_event and not record.first_harmful_event_involved:
        return ExclusionReason.FirstHarmfulEvent
    for flag in ExclusionFlag:
        if flag in policy.excluded_flags and flag in record.exclusion_flags:
            return ExclusionReason(flag.value)
    return None


def apply_cohort_filter(
    records: Iterable[VehicleRecord], policy: CohortPolicy = CohortPolicy()
) -> tuple[list[VehicleRecord], Counter]:
    """Keep cohort members in input order; tally each excluded record once."""
    kept = []
    tally: Counter = Counter()
    for r in records:
        reason = exclusion_reason(r, policy)
        if reason is None:
            kept.append(r)
        else:
            tally[reason] += 1
    return kept, tally
