"""``scenfuse`` command line.

Exit status: 0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import glob
import os
import sys
from collections import Counter

import numpy as np
import yaml

from . import exposure as exp
from . import nds, params, rates, records, scenario, synth, testgen
from .config import SCHEMAS, DatasetEntry, ProjectConfig, load_config
from .errors import ValidationError
from .records import DatasetId, schema_for

SYNTH_CONFIG = "scenfuse.yaml"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _out(cfg: ProjectConfig, *parts: str) -> str:
    path = os.path.join(cfg.output, *parts)
    os.makedirs(os.path.dirname(path) if os.path.splitext(path)[1] else path, exist_ok=True)
    return path


def _datasets(cfg: ProjectConfig, args) -> list[DatasetEntry]:
    if getattr(args, "records", None):
        out = []
        for p in args.records:
            schema = SCHEMAS[args.schema] if args.schema else None
            label = os.path.splitext(os.path.basename(p))[0]
            if schema is None:
                try:
                    schema = schema_for(DatasetId(label))
                except ValueError:
                    schema = SCHEMAS["ncd"]
            out.append(DatasetEntry(p, schema, label))
        return out
    if not cfg.datasets:
        raise ValidationError("no record datasets configured (use --records or a datasets key in the config)")
    return cfg.datasets


def _load(entry: DatasetEntry, strict: bool = False) -> records.IngestResult:
    res = records.ingest_records(entry.path, entry.schema, strict=strict)
    for d in res.diagnostics:
        print(f"{entry.path}: {d}", file=sys.stderr)
    return res


def _cohort_records(cfg, entry):
    recs = _load(entry).records
    return records.apply_cohort_filter(recs, cfg.cohort)


def _flagged(cfg, entry, apply_cohort: bool = True):
    if apply_cohort:
        recs, _ = _cohort_records(cfg, entry)
    else:
        recs = _load(entry).records
    flags = records.derive_flags(recs, cfg.mappings)
    return scenario.flag_records(recs, flags)


def _definition(cfg: ProjectConfig, args):
    src = getattr(args, "scenario", None) or cfg.scenario or "builtin:turns_at_intersections"
    if src.startswith("builtin:"):
        return scenario.builtin_definition(src.split(":", 1)[1])
    return scenario.load_definition(src)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: ProjectConfig, args) -> int:
    seed = args.seed if args.seed is not None else int(cfg.synth.get("seed", 0))
    spec = synth.bundled_spec(seed=seed, trips=args.trips if args.trips is not None else int(cfg.synth.get("trips", 20)))
    manifest = synth.write_fixture(spec, cfg.output)
    project = {
        "datasets": [
            {"path": p, "schema": schema_for(DatasetId(ds)).name, "label": ds}
            for ds, p in manifest["records"].items()
        ],
        "trips": "trips",
        "graph": {"nodes": "graph/nodes.csv", "segments": "graph/segments.csv"},
        "output": "out",
    }
    with open(os.path.join(cfg.output, SYNTH_CONFIG), "w", encoding="utf-8") as fh:
        yaml.safe_dump(project, fh, sort_keys=False)
    print(f"wrote fixture (seed {seed}) to {cfg.output}")
    return 0


def cmd_ingest(cfg, args) -> int:
    status = 0
    for entry in _datasets(cfg, args):
        res = _load(entry, strict=args.strict)
        dest = _out(cfg, "ingested", f"{entry.label}.csv")
        records.write_records(res.records, dest, entry.schema)
        print(f"{entry.label}: {len(res.records)} records, {len(res.diagnostics)} diagnostics -> {dest}")
        if res.diagnostics:
            status = 1
    return status


def cmd_cohort(cfg, args) -> int:
    tally_path = _out(cfg, "cohort", "tally.csv")
    rows = []
    for entry in _datasets(cfg, args):
        kept, tally = _cohort_records(cfg, entry)
        records.write_records(kept, _out(cfg, "cohort", f"{entry.label}.csv"), entry.schema)
        for reason in records.ExclusionReason:
            rows.append((entry.label, reason.value, tally.get(reason, 0)))
        print(f"{entry.label}: kept {len(kept)}, excluded {sum(tally.values())}")
    with open(tally_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("dataset", "reason", "excluded"))
        w.writerows(rows)
    return 0


def cmd_derive(cfg, args) -> int:
    for entry in _datasets(cfg, args):
        items = _flagged(cfg, entry, apply_cohort=not args.no_cohort)
        dest = _out(cfg, "derived", f"{entry.label}.csv")
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("dataset_id", "case_id", "vehicle_index", "junction", "turning"))
            for it in items:
                r = it.record
                w.writerow((r.dataset_id.value, r.case_id, r.vehicle_index, it.flags.junction.value, it.flags.turning.value))
        c = Counter(it.flags.junction.value for it in items)
        print(f"{entry.label}: " + ", ".join(f"{k}={c.get(k, 0)}" for k in ("Junction", "NotAJunction", "Unknown")))
    return 0


def _trips_and_graph(cfg, args):
    trips_dir = args.trips or cfg.trips
    if not trips_dir:
        raise ValidationError("no trips directory configured")
    graph = cfg.graph
    if args.graph:
        graph = (os.path.join(args.graph, "nodes.csv"), os.path.join(args.graph, "segments.csv"))
    if not graph:
        raise ValidationError("no road graph configured")
    paths = sorted(glob.glob(os.path.join(trips_dir, "*.csv")))
    if not paths:
        raise FileNotFoundError(f"no trip files in {trips_dir}")
    return [nds.read_trip(p) for p in paths], nds.read_graph(*graph)


def cmd_detect(cfg, args) -> int:
    trips, graph = _trips_and_graph(cfg, args)
    per_trip = nds.detect_many(trips, graph, cfg.detector, jobs=args.jobs)
    events = [e for evs in per_trip for e in evs]
    dest = _out(cfg, "events.csv")
    nds.write_events(events, dest)
    left = sum(e.direction is nds.Direction.Left for e in events)
    print(f"{len(trips)} trips, {len(events)} turns ({left} left, {len(events) - left} right) -> {dest}")
    return 0


def cmd_select(cfg, args) -> int:
    definition = _definition(cfg, args)
    dest = _out(cfg, "proportions.csv")
    rows = []
    if definition.record_predicate is not None:
        for entry in _datasets(cfg, args):
            items = _flagged(cfg, entry)
            p = scenario.proportions(definition, items, weighted=args.weighted)
            rows.append((entry.label, p))
    events_path = args.events or (os.path.join(cfg.output, "events.csv") if os.path.exists(os.path.join(cfg.output, "events.csv")) else None)
    if events_path and definition.event_predicate is not None:
        evs = nds.read_events(events_path)
        if evs:
            rows.append(("detected_turns", scenario.proportions(definition, evs)))
    with open(dest, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("dataset", "match", "nomatch", "unknown", "numerator", "denominator", "fraction"))
        for label, p in rows:
            c = p.counts
            w.writerow((label, c[scenario.Outcome.Match], c[scenario.Outcome.NoMatch], c[scenario.Outcome.Unknown],
                        repr(p.numerator), repr(p.denominator), repr(p.fraction)))
            print(f"{label}: {p.fraction:.4f} ({p.numerator:g} / {p.denominator:g})")
    return 0


def cmd_exposure(cfg, args) -> int:
    e = dict(cfg.exposure)
    for k in ("vio", "aam", "cy_from", "cy_to", "my_min"):
        v = getattr(args, k)
        if v is not None:
            e[k] = v
    missing = [k for k in ("vio", "aam", "cy_from", "cy_to") if k not in e]
    if missing:
        raise ValidationError(f"exposure needs {missing}")
    vio = exp.read_vio(e["vio"])
    aam = exp.read_aam(e["aam"], e.get("aam_terminal"))
    miles = exp.vmt_estimate(vio, aam, int(e["cy_from"]), int(e["cy_to"]), int(e.get("my_min", 1997)))
    plain, trillions = exp.format_miles(miles)
    with open(_out(cfg, "exposure.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("cy_from", "cy_to", "my_min", "miles", "trillion_miles"))
        w.writerow((e["cy_from"], e["cy_to"], e.get("my_min", 1997), repr(miles), trillions))
    print(f"VMT estimate: {plain} miles ({trillions} trillion miles)")
    return 0


def cmd_rates(cfg, args) -> int:
    table = args.table or cfg.rates
    if not table:
        raise ValidationError("rates needs an input table (--table or a rates key in the config)")
    rows = rates.read_rate_rows(table)
    dest = _out(cfg, "rates.csv")
    rates.write_rate_summary(rows, dest, decimals=args.decimals)
    with open(dest, encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    return 0


def cmd_params(cfg, args) -> int:
    p = cfg.params
    events_path = args.events or p.get("events") or os.path.join(cfg.output, "events.csv")
    evs = nds.read_events(events_path)
    if not evs:
        raise ValidationError(f"no events in {events_path}")
    bins = p.get("bins", "auto")
    out_dir = _out(cfg, "params")
    columns = {
        "net_yaw": ("deg", [e.net_yaw for e in evs]),
        "max_abs_lat_accel": ("m/s^2", [e.max_abs_lat_accel for e in evs]),
        "mean_speed": ("m/s", [e.mean_speed for e in evs]),
    }
    for name, (units, vals) in columns.items():
        d = params.fit_histogram(vals, bins, name, units)
        params.write_histogram(d, os.path.join(out_dir, f"hist_{name}.csv"))
        lo, hi = d.bounds_2sigma
        print(f"{name}: n={d.n} mean={d.mean:.3f} sd={d.sd:.3f} 2sigma=({lo:.3f}, {hi:.3f})")
    grid = tuple(p.get("grid", (10, 10)))
    bd = params.fit_bivariate(columns["mean_speed"][1], columns["max_abs_lat_accel"][1], grid,
                              p.get("smoothing"), "mean_speed", "max_abs_lat_accel", "m/s", "m/s^2")
    params.write_bivariate(bd, os.path.join(out_dir, "bivariate_speed_lat_accel.csv"))
    if cfg.datasets or args.records:
        definition = _definition(cfg, args)
        entries = _datasets(cfg, args)
        items = {e.label: _flagged(cfg, e) for e in entries}
        for var in p.get("breakdown_variables", ("MOTORIST_TYPE",)):
            usable = {k: v for k, v in items.items() if v and v[0].record and schema_for(v[0].record.dataset_id).declares(var)}
            if not usable:
                continue
            cb = params.categorical_breakdown(usable, var, definition, weighted=bool(p.get("weighted", False)))
            params.write_breakdown(cb, os.path.join(out_dir, f"breakdown_{var}.csv"))
    print(f"wrote parameter tables to {out_dir}")
    return 0


def _default_gen(events, n_bins):
    speed = np.array([e.mean_speed for e in events])
    lat = np.array([e.max_abs_lat_accel for e in events])
    speed_d = params.fit_histogram(speed, n_bins, "ego_speed", "m/s")
    lat_d = params.fit_histogram(lat, n_bins, "ego_lat_accel", "m/s^2")
    static = testgen.StaticFeatures(legs=4, lanes_per_leg=(1, 1, 1, 1), control="Signal", lighting="Daylight")
    actors = [
        testgen.Actor("ego", "Ego", 0, "TurnLeft", "$ego_speed", "AtDistance", "$trigger_distance"),
        testgen.Actor("other", "PrincipalOther", 2, "Straight", "$other_speed", "AtDistance", 30.0),
    ]
    bindings = {
        "ego_speed": testgen.ParameterBinding("ego_speed", "m/s", speed_d, observations=speed),
        "ego_lat_accel": testgen.ParameterBinding("ego_lat_accel", "m/s^2", lat_d, observations=lat),
        "other_speed": (5.0, 20.0),
        "trigger_distance": (10.0, 60.0),
    }
    return static, actors, bindings


def _gen_from_config(g, events, n_bins):
    st = g.get("static") or {}
    static = testgen.StaticFeatures(
        legs=int(st.get("legs", 4)),
        lanes_per_leg=tuple(st["lanes_per_leg"]) if isinstance(st.get("lanes_per_leg"), list) else int(st.get("lanes_per_leg", 1)),
        control=st.get("control", "Signal"),
        lighting=st.get("lighting", "Daylight"),
    )
    actors = [testgen.Actor(a["name"], a["role"], int(a["approach_leg"]), a["action"], a["speed"],
                            a.get("trigger_type", "AtDistance"), a.get("trigger_value", 30.0), a.get("heading"))
              for a in g.get("actors", [])]
    bindings = {}
    for name, b in (g.get("parameters") or {}).items():
        if b is None:
            bindings[name] = None
        elif "range" in b:
            bindings[name] = tuple(b["range"])
        elif "event_field" in b:
            obs = np.array([getattr(e, b["event_field"]) for e in events], dtype=float)
            d = params.fit_histogram(obs, n_bins, name, b.get("units", ""))
            bindings[name] = testgen.ParameterBinding(name, b.get("units", ""), d, observations=obs)
        else:
            raise ValidationError(f"parameter {name!r}: give 'range' or 'event_field'")
    return static, actors, bindings


def cmd_gen(cfg, args) -> int:
    g = cfg.gen
    events_path = args.events or g.get("events") or os.path.join(cfg.output, "events.csv")
    if not os.path.exists(events_path):
        raise FileNotFoundError(f"events file not found: {events_path}")
    events = nds.read_events(events_path)
    if not events:
        raise ValidationError(f"no events in {events_path}")
    n_bins = g.get("bins", 20)
    if g.get("actors"):
        static, actors, bindings = _gen_from_config(g, events, n_bins)
    else:
        static, actors, bindings = _default_gen(events, n_bins)
    logical = testgen.build_logical(g.get("name", "turns_at_intersections"), static, actors, bindings)
    n = args.n if args.n is not None else int(g.get("n", 10))
    seed = args.seed if args.seed is not None else 0
    strategy = args.strategy or g.get("strategy", "IndependentMarginal")
    concretes = testgen.sample_concrete(logical, n, strategy, seed)
    written = testgen.write_batch(logical, concretes, _out(cfg, "gen"))
    print(f"wrote {len(concretes)} scenarios ({len(written)} files) to {os.path.join(cfg.output, 'gen')}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "cohort": cmd_cohort,
    "derive": cmd_derive,
    "detect": cmd_detect,
    "select": cmd_select,
    "exposure": cmd_exposure,
    "rates": cmd_rates,
    "params": cmd_params,
    "gen": cmd_gen,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="project YAML (default: $SCENFUSE_CONFIG)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--records", nargs="+", help="record CSV files instead of the configured datasets")
    common.add_argument("--schema", choices=sorted(SCHEMAS), help="schema for --records files")
    common.add_argument("--scenario", help="scenario definition file or builtin:<name>")
    common.add_argument("--events", help="turn-event CSV")

    p = _Parser(prog="scenfuse", description="Scenario fusion pipeline over crash records and naturalistic trips.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sp = sub.add_parser("synth", parents=[common], help="write the seeded synthetic fixture")
    sp.add_argument("--trips", type=int, default=None)
    sp = sub.add_parser("ingest", parents=[common], help="validate and normalize record files")
    sp.add_argument("--strict", action="store_true")
    sub.add_parser("cohort", parents=[common], help="apply the cohort filter")
    sp = sub.add_parser("derive", parents=[common], help="derive junction/turning flags")
    sp.add_argument("--no-cohort", action="store_true")
    sp = sub.add_parser("detect", parents=[common], help="detect turn events in trips")
    sp.add_argument("--trips")
    sp.add_argument("--graph", help="directory holding nodes.csv and segments.csv")
    sp = sub.add_parser("select", parents=[common], help="scenario proportions per dataset")
    sp.add_argument("--weighted", action="store_true")
    sp = sub.add_parser("exposure", parents=[common], help="VMT estimate from VIO and AAM tables")
    sp.add_argument("--vio")
    sp.add_argument("--aam")
    sp.add_argument("--cy-from", dest="cy_from", type=int)
    sp.add_argument("--cy-to", dest="cy_to", type=int)
    sp.add_argument("--my-min", dest="my_min", type=int)
    sp = sub.add_parser("rates", parents=[common], help="overall and scenario rates table")
    sp.add_argument("--table")
    sp.add_argument("--decimals", type=int, default=2)
    sub.add_parser("params", parents=[common], help="parameter distributions from events")
    sp = sub.add_parser("gen", parents=[common], help="sample concrete scenarios and emit documents")
    sp.add_argument("-n", type=int, default=None)
    sp.add_argument("--strategy", choices=[s.value for s in testgen.Strategy])
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg.output = os.path.abspath(args.out)
        os.makedirs(cfg.output, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
