"""Project configuration: one YAML file with per-command sections."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from importlib import resources
from typing import Any, Mapping

import yaml

from .errors import ConfigError
from .nds import DetectorParams
from .records import (
    NCD_SCHEMA,
    NDS_SCHEMA,
    BodyClass,
    CodeMapping,
    CohortPolicy,
    ExclusionFlag,
    JunctionMap,
    RecordSchema,
    TurningMap,
)

CONFIG_ENV = "SCENFUSE_CONFIG"


def load_defaults() -> dict:
    text = resources.files("scenario_fusion").joinpath("data", "defaults.yaml").read_text(encoding="utf-8")
    return yaml.safe_load(text)


def _reject_unknown(section: str, doc: Mapping, allowed) -> None:
    extra = set(doc) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")


def code_mapping_from_dict(doc: Mapping) -> CodeMapping:
    _reject_unknown("mappings", doc, ("junction", "turning"))
    j = doc["junction"]
    _reject_unknown("mappings.junction", j, ("variable", "junction", "not_junction"))
    t = doc["turning"]
    _reject_unknown("mappings.turning", t, ("turn", "known", "optional"))
    return CodeMapping(
        JunctionMap(j["variable"], frozenset(j.get("junction", ())), frozenset(j.get("not_junction", ()))),
        TurningMap(
            {k: frozenset(v) for k, v in (t.get("turn") or {}).items()},
            {k: frozenset(v) for k, v in (t.get("known") or {}).items()},
            frozenset(t.get("optional") or ()),
        ),
    )


def cohort_policy_from_dict(doc: Mapping) -> CohortPolicy:
    _reject_unknown("cohort", doc, ("min_model_year", "body_classes", "require_first_harmful_event", "excluded_flags"))
    base = CohortPolicy()
    try:
        return CohortPolicy(
            min_model_year=int(doc.get("min_model_year", base.min_model_year)),
            body_classes=frozenset(BodyClass(b) for b in doc.get("body_classes", [b.value for b in base.body_classes])),
            require_first_harmful_event=bool(doc.get("require_first_harmful_event", base.require_first_harmful_event)),
            excluded_flags=frozenset(ExclusionFlag(f) for f in doc.get("excluded_flags", [f.value for f in base.excluded_flags])),
        )
    except ValueError as exc:
        raise ConfigError(f"[cohort]: {exc}") from None


def detector_params_from_dict(doc: Mapping) -> DetectorParams:
    names = [f.name for f in fields(DetectorParams)]
    _reject_unknown("detector", doc, names)
    return DetectorParams(**doc)


def default_mappings() -> dict[str, CodeMapping]:
    return {k: code_mapping_from_dict(v) for k, v in load_defaults()["mappings"].items()}


SCHEMAS = {"ncd": NCD_SCHEMA, "nds": NDS_SCHEMA}

_SECTIONS = {
    "datasets", "mappings", "cohort", "detector", "scenario", "trips", "graph",
    "exposure", "rates", "params", "gen", "synth", "output",
}


@dataclass
class DatasetEntry:
    path: str
    schema: RecordSchema
    label: str


@dataclass
class ProjectConfig:
    base_dir: str = "."
    datasets: list[DatasetEntry] = field(default_factory=list)
    mappings: dict[str, CodeMapping] = field(default_factory=default_mappings)
    cohort: CohortPolicy = field(default_factory=CohortPolicy)
    detector: DetectorParams = field(default_factory=DetectorParams)
    scenario: str | None = None
    trips: str | None = None
    graph: tuple[str, str] | None = None
    exposure: dict = field(default_factory=dict)
    rates: str | None = None
    params: dict = field(default_factory=dict)
    gen: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    output: str = "out"


def _path(base: str, p: str, must_exist: bool = True) -> str:
    full = p if os.path.isabs(p) else os.path.normpath(os.path.join(base, p))
    if must_exist and not os.path.exists(full):
        raise FileNotFoundError(f"configured path does not exist: {full}")
    return full


def config_from_dict(doc: Mapping[str, Any] | None, base_dir: str = ".") -> ProjectConfig:
    doc = dict(doc or {})
    _reject_unknown("top level", doc, _SECTIONS)
    cfg = ProjectConfig(base_dir=base_dir)
    for entry in doc.get("datasets") or []:
        _reject_unknown("datasets[]", entry, ("path", "schema", "aliases", "label"))
        schema_name = entry.get("schema", "ncd")
        if schema_name not in SCHEMAS:
            raise ConfigError(f"unknown schema {schema_name!r}; use one of {sorted(SCHEMAS)}")
        schema = SCHEMAS[schema_name]
        if entry.get("aliases"):
            schema = schema.with_aliases(entry["aliases"])
        path = _path(base_dir, entry["path"])
        label = entry.get("label") or os.path.splitext(os.path.basename(path))[0]
        cfg.datasets.append(DatasetEntry(path, schema, label))
    if "mappings" in doc:
        merged = dict(load_defaults()["mappings"])
        merged.update(doc["mappings"])
        cfg.mappings = {k: code_mapping_from_dict(v) for k, v in merged.items()}
    if "cohort" in doc:
        cfg.cohort = cohort_policy_from_dict(doc["cohort"] or {})
    if "detector" in doc:
        cfg.detector = detector_params_from_dict(doc["detector"] or {})
    if doc.get("scenario"):
        s = doc["scenario"]
        cfg.scenario = s if s.startswith("builtin:") else _path(base_dir, s)
    if doc.get("trips"):
        cfg.trips = _path(base_dir, doc["trips"])
    if doc.get("graph"):
        g = doc["graph"]
        _reject_unknown("graph", g, ("nodes", "segments"))
        cfg.graph = (_path(base_dir, g["nodes"]), _path(base_dir, g["segments"]))
    if doc.get("exposure"):
        e = dict(doc["exposure"])
        _reject_unknown("exposure", e, ("vio", "aam", "cy_from", "cy_to", "my_min", "aam_terminal"))
        for k in ("vio", "aam"):
            if k in e:
                e[k] = _path(base_dir, e[k])
        cfg.exposure = e
    if doc.get("rates"):
        cfg.rates = _path(base_dir, doc["rates"])
    if doc.get("params"):
        p = dict(doc["params"])
        _reject_unknown("params", p, ("events", "bins", "grid", "smoothing", "breakdown_variables", "weighted"))
        if "events" in p:
            p["events"] = _path(base_dir, p["events"])
        cfg.params = p
    if doc.get("gen"):
        g = dict(doc["gen"])
        _reject_unknown("gen", g, ("name", "n", "strategy", "static", "actors", "parameters", "events", "bins"))
        if "events" in g:
            g["events"] = _path(base_dir, g["events"])
        cfg.gen = g
    if doc.get("synth"):
        cfg.synth = dict(doc["synth"])
    if doc.get("output"):
        cfg.output = _path(base_dir, doc["output"], must_exist=False)
    else:
        cfg.output = _path(base_dir, "out", must_exist=False)
    return cfg


def load_config(path: str | None) -> ProjectConfig:
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return config_from_dict({}, os.getcwd())
    with open(path, encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if doc is not None and not isinstance(doc, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(doc, os.path.dirname(os.path.abspath(path)))
