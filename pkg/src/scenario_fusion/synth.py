"""Seeded synthetic record datasets, grid road networks and trips with ground truth."""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import IllegalRoute, InvalidSpec
from .nds import RoadGraph, Trip, write_graph, write_trip
from .records import (
    BodyClass,
    DatasetId,
    ExclusionFlag,
    ExclusionReason,
    Severity,
    VehicleRecord,
    schema_for,
    write_records,
)
from .rng import SplitMix64, derive_seed

METRES_PER_DEG_LAT = 111_320.0

LIGHTING_LEVELS = ("Daylight", "Dark - Lighted", "Dark - Not Lighted", "Dawn", "Dusk")
MOTORIST_LEVELS = ("Light Passenger Vehicle", "Motorcycle/Moped", "Medium/Heavy Vehicle", "Pedestrian", "Pedalcyclist", "Not Applicable")


@dataclass(frozen=True)
class RecordSetSpec:
    dataset: DatasetId
    n: int
    match_fraction: float
    unknown_fraction: float = 0.0
    cohort_violations: int = 0
    weight_range: tuple[float, float] = (1.0, 1.0)
    lighting_proportions: tuple[float, ...] = (0.6, 0.15, 0.15, 0.05, 0.05)


@dataclass(frozen=True)
class TripSpec:
    count: int = 10
    sample_rate: float = 10.0
    route_nodes: int = 8
    turn_probability: float = 0.4
    speed_range: tuple[float, float] = (3.5, 9.0)
    turn_radius_range: tuple[float, float] = (10.0, 25.0)
    yaw_noise_sd: float = 0.0
    heading_noise_sd: float = 0.0
    lat_accel_noise_sd: float = 0.0


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    records: tuple[RecordSetSpec, ...] = ()
    grid_size: tuple[int, int] = (8, 8)
    grid_spacing_m: float = 200.0
    origin: tuple[float, float] = (37.23, -80.42)
    trips: TripSpec = field(default_factory=TripSpec)

    def validate(self) -> None:
        for rs in self.records:
            if rs.n < 0 or rs.cohort_violations < 0:
                raise InvalidSpec(f"{rs.dataset.value}: counts must be >= 0")
            for frac in (rs.match_fraction, rs.unknown_fraction):
                if not 0.0 <= frac <= 1.0:
                    raise InvalidSpec(f"{rs.dataset.value}: fractions must lie in [0, 1]")
            if round(rs.match_fraction * rs.n) + round(rs.unknown_fraction * rs.n) > rs.n:
                raise InvalidSpec(f"{rs.dataset.value}: match + unknown fractions exceed 1")
            lo, hi = rs.weight_range
            if not 0 < lo <= hi:
                raise InvalidSpec(f"{rs.dataset.value}: weights must be > 0")
            if len(rs.lighting_proportions) != len(LIGHTING_LEVELS) or min(rs.lighting_proportions) < 0:
                raise InvalidSpec("lighting_proportions must give one non-negative value per level")
        nx, ny = self.grid_size
        if nx < 2 or ny < 2 or self.grid_spacing_m <= 0:
            raise InvalidSpec("grid must be at least 2x2 with positive spacing")
        tp = self.trips
        if tp.count < 0 or tp.sample_rate <= 0 or tp.route_nodes < 3:
            raise InvalidSpec("trips need count >= 0, sample_rate > 0, route_nodes >= 3")
        if min(tp.yaw_noise_sd, tp.heading_noise_sd, tp.lat_accel_noise_sd) < 0:
            raise InvalidSpec("noise levels must be >= 0")
        if not 0 < tp.speed_range[0] <= tp.speed_range[1]:
            raise InvalidSpec("speed range must be positive")
        if not 0 < tp.turn_radius_range[0] <= tp.turn_radius_range[1]:
            raise InvalidSpec("turn radius range must be positive")
        if not 0.0 <= tp.turn_probability <= 1.0:
            raise InvalidSpec("turn_probability must lie in [0, 1]")


# ---------------------------------------------------------------------------
# records

_CODES = {
    "ncd": {
        "junction_var": "RELJCT2",
        "junction": ("Intersection", "Intersection-Related", "Driveway Access", "Driveway Access Related"),
        "not_junction": ("Non-Junction", "Entrance/Exit Ramp", "Through Roadway"),
        "unknown_junction": "Reported as Unknown",
        "turn": {"P_CRASH1": ("Turning Left", "Turning Right")},
        "straight": {
            "P_CRASH1": "Going Straight",
            "P_CRASH2": "Other Vehicle In Lane Stopped",
            "ACC_TYPE": "Same Trafficway Same Direction Rear-End",
        },
        "lighting_var": "LGT_COND",
    },
    "nds": {
        "junction_var": "RELATION_TO_JUNCTION",
        "junction": ("Intersection", "Intersection-Related", "Driveway Access", "Driveway Access Related"),
        "not_junction": ("Non-Junction", "Entrance/Exit Ramp", "Parking Lot"),
        "unknown_junction": "Unknown",
        "turn": {"PRE_INCIDENT_MANEUVER": ("Turning Left", "Turning Right")},
        "straight": {
            "PRE_INCIDENT_MANEUVER": "Going Straight",
            "PRECIPITATING_EVENT": "Lead Vehicle Stopped",
            "M2_PRE_INCIDENT_MANEUVER": "Going Straight",
        },
        "lighting_var": "LIGHTING",
    },
}

_SEVERITY = {
    DatasetId.FatalNCD: Severity.Fatal,
    DatasetId.NonFatalNCD: Severity.NonFatalInjury,
    DatasetId.NdsCrash: Severity.PropertyDamageOnly,
    DatasetId.NdsNearCrash: Severity.NearCrash,
    DatasetId.NdsBaseline: Severity.Baseline,
}

_VIOLATIONS = tuple(ExclusionReason)


def allocate(total: int, proportions) -> list[int]:
    """Largest-remainder integer allocation of ``total`` across proportions."""
    p = np.asarray(proportions, dtype=float)
    if total == 0 or p.sum() == 0:
        return [0] * len(p)
    raw = total * p / p.sum()
    base = np.floor(raw).astype(int)
    rem = raw - base
    order = sorted(range(len(p)), key=lambda i: (-rem[i], i))
    for i in order[: total - int(base.sum())]:
        base[i] += 1
    return [int(b) for b in base]


def _case_sizes(rng: SplitMix64, total: int, allow_pairs: bool) -> list[int]:
    sizes = []
    remaining = total
    while remaining > 0:
        size = 2 if allow_pairs and remaining >= 2 and rng.uniform(1)[0] < 0.3 else 1
        sizes.append(size)
        remaining -= size
    return sizes


def _pick(rng: SplitMix64, options):
    return options[int(rng.integers(0, len(options), 1)[0])]


@dataclass
class RecordTruth:
    dataset: str
    match_keys: list
    unknown_keys: list
    nomatch_keys: list
    violators: dict
    survivors: list
    lighting_counts: dict
    match_weight: float
    total_weight: float


def _gen_dataset(rs: RecordSetSpec, seed: int) -> tuple[list[VehicleRecord], RecordTruth]:
    rng = SplitMix64(derive_seed(seed, "records", rs.dataset.value))
    schema = schema_for(rs.dataset)
    codes = _CODES[schema.name]
    is_nds = rs.dataset.is_nds
    n_match = int(round(rs.match_fraction * rs.n))
    n_unknown = int(round(rs.unknown_fraction * rs.n))
    n_nomatch = rs.n - n_match - n_unknown

    # (category, size) per case; violators are single-vehicle cases
    cases = [("match", s) for s in _case_sizes(rng, n_match, True)]
    cases += [("unknown", 1)] * n_unknown
    cases += [("nomatch", s) for s in _case_sizes(rng, n_nomatch, True)]
    cases += [("violator", 1)] * rs.cohort_violations
    order = rng.permutation(len(cases))
    cases = [cases[i] for i in order]

    lighting = {}
    for cat, count in (("match", n_match), ("unknown", n_unknown), ("nomatch", n_nomatch), ("violator", rs.cohort_violations)):
        levels = []
        for level, k in zip(LIGHTING_LEVELS, allocate(count, rs.lighting_proportions)):
            levels += [level] * k
        perm = rng.permutation(len(levels))
        lighting[cat] = [levels[i] for i in perm]
    lighting_counts = {cat: {lv: vals.count(lv) for lv in LIGHTING_LEVELS} for cat, vals in lighting.items() if cat != "violator"}
    cursor = {cat: 0 for cat in lighting}

    straight = dict(codes["straight"])
    if rs.dataset is DatasetId.NdsBaseline:
        straight.pop("M2_PRE_INCIDENT_MANEUVER", None)
    turn_var, turn_codes = next(iter(codes["turn"].items()))

    records = []
    truth = RecordTruth(rs.dataset.value, [], [], [], {}, [], lighting_counts, 0.0, 0.0)
    weights = []
    prefix = {"FatalNCD": "F", "NonFatalNCD": "N", "NdsCrash": "C", "NdsNearCrash": "R", "NdsBaseline": "B"}[rs.dataset.value]
    viol_i = 0
    for k, (cat, size) in enumerate(cases):
        case_id = f"{prefix}{k + 1:06d}"
        cy = int(rng.integers(2010, 2020, 1)[0])
        if cat == "match":
            jcode = _pick(rng, codes["junction"])
            turner = int(rng.integers(0, size, 1)[0])
            turning = [i == turner for i in range(size)]
        elif cat == "unknown":
            jcode = codes["unknown_junction"]
            turning = [True]
        elif cat == "nomatch":
            if rng.uniform(1)[0] < 0.5:
                jcode = _pick(rng, codes["not_junction"])
                turning = [bool(rng.uniform(1)[0] < 0.5) for _ in range(size)]
            else:
                jcode = _pick(rng, codes["junction"])
                turning = [False] * size
        else:
            jcode = _pick(rng, codes["not_junction"])
            turning = [False]
        for v in range(size):
            coded = dict(straight)
            coded[codes["junction_var"]] = jcode
            if turning[v]:
                coded[turn_var] = _pick(rng, turn_codes)
            coded[codes["lighting_var"]] = lighting[cat][cursor[cat]]
            cursor[cat] += 1
            coded["MOTORIST_TYPE"] = _pick(rng, MOTORIST_LEVELS)
            my = int(rng.integers(1997, cy + 2, 1)[0])
            body = BodyClass.LightPassengerVehicle
            first_harmful = True
            flags: frozenset = frozenset()
            reason = None
            if cat == "violator":
                reason = _VIOLATIONS[viol_i % len(_VIOLATIONS)]
                viol_i += 1
                if reason is ExclusionReason.ModelYear:
                    my = 1990 + int(rng.integers(0, 7, 1)[0])
                elif reason is ExclusionReason.BodyClass:
                    body = _pick(rng, (BodyClass.MotorcycleMoped, BodyClass.MediumHeavyVehicle, BodyClass.Other))
                elif reason is ExclusionReason.FirstHarmfulEvent:
                    first_harmful = False
                else:
                    flags = frozenset({ExclusionFlag(reason.value)})
            lo, hi = rs.weight_range
            w = 1.0 if lo == hi == 1.0 else round(float(rng.uniform(1, lo, hi)[0]), 4)
            rec = VehicleRecord(
                dataset_id=rs.dataset,
                case_id=case_id,
                vehicle_index=v + 1,
                calendar_year=cy,
                model_year=my,
                body_class=body,
                severity=_SEVERITY[rs.dataset],
                coded=coded,
                sample_weight=w,
                first_harmful_event_involved=first_harmful,
                exclusion_flags=flags,
            )
            records.append(rec)
            key = [case_id, v + 1]
            if cat == "violator":
                truth.violators[f"{case_id}:{v + 1}"] = reason.value
                continue
            truth.survivors.append(key)
            getattr(truth, f"{'nomatch' if cat == 'nomatch' else cat}_keys").append(key)
            weights.append((cat, w))
    truth.match_weight = math.fsum(w for c, w in weights if c == "match")
    truth.total_weight = math.fsum(w for _, w in weights)
    return records, truth


def gen_records(spec: SynthSpec) -> tuple[dict[DatasetId, list[VehicleRecord]], dict[str, RecordTruth]]:
    spec.validate()
    datasets, truth = {}, {}
    for rs in spec.records:
        recs, tr = _gen_dataset(rs, spec.seed)
        datasets[rs.dataset] = recs
        truth[rs.dataset.value] = tr
    return datasets, truth


# ---------------------------------------------------------------------------
# road network + trips


def node_id(i: int, j: int) -> str:
    return f"n{i}_{j}"


def grid_graph(spec: SynthSpec) -> RoadGraph:
    nx, ny = spec.grid_size
    lat0, lon0 = spec.origin
    dlat = spec.grid_spacing_m / METRES_PER_DEG_LAT
    dlon = spec.grid_spacing_m / (METRES_PER_DEG_LAT * math.cos(math.radians(lat0)))
    nodes = {node_id(i, j): (lat0 + j * dlat, lon0 + i * dlon) for j in range(ny) for i in range(nx)}
    links = []
    for j in range(ny):
        for i in range(nx):
            if i + 1 < nx:
                links.append((f"h{i}_{j}", node_id(i, j), node_id(i + 1, j), ()))
            if j + 1 < ny:
                links.append((f"v{i}_{j}", node_id(i, j), node_id(i, j + 1), ()))
    return RoadGraph.from_polylines(nodes, links)


def grid_segment(a: tuple[int, int], b: tuple[int, int]) -> str:
    (i1, j1), (i2, j2) = a, b
    if j1 == j2:
        return f"h{min(i1, i2)}_{j1}"
    return f"v{i1}_{min(j1, j2)}"


def _grid_degree(spec: SynthSpec, i: int, j: int) -> int:
    nx, ny = spec.grid_size
    return (i > 0) + (i < nx - 1) + (j > 0) + (j < ny - 1)


def check_route(spec: SynthSpec, route) -> None:
    nx, ny = spec.grid_size
    if len(route) < 3:
        raise IllegalRoute("a route needs at least 3 nodes")
    for i, j in route:
        if not (0 <= i < nx and 0 <= j < ny):
            raise IllegalRoute(f"node ({i}, {j}) is outside the grid")
    for k in range(1, len(route)):
        (i1, j1), (i2, j2) = route[k - 1], route[k]
        if abs(i1 - i2) + abs(j1 - j2) != 1:
            raise IllegalRoute(f"nodes {route[k - 1]} and {route[k]} are not adjacent")
        if k >= 2 and tuple(route[k - 2]) == tuple(route[k]):
            raise IllegalRoute(f"U-turn at {route[k - 1]}")


def random_route(spec: SynthSpec, rng: SplitMix64) -> list[tuple[int, int]]:
    nx, ny = spec.grid_size
    p_turn = spec.trips.turn_probability
    i, j = int(rng.integers(0, nx, 1)[0]), int(rng.integers(0, ny, 1)[0])
    route = [(i, j)]
    dirs = [(1, 0), (0, 1), (-1, 0), (0, -1)]
    feasible = [d for d in dirs if 0 <= i + d[0] < nx and 0 <= j + d[1] < ny]
    d = feasible[int(rng.integers(0, len(feasible), 1)[0])]
    route.append((i + d[0], j + d[1]))
    while len(route) < spec.trips.route_nodes:
        i, j = route[-1]
        options, weights = [], []
        for cand, w in ((d, 1.0 - p_turn), ((-d[1], d[0]), p_turn / 2), ((d[1], -d[0]), p_turn / 2)):
            if 0 <= i + cand[0] < nx and 0 <= j + cand[1] < ny:
                options.append(cand)
                weights.append(w)
        if sum(weights) == 0:
            weights = [1.0] * len(options)
        d = options[int(rng.choice(len(options), 1, np.asarray(weights))[0])]
        route.append((i + d[0], j + d[1]))
    return route


@dataclass
class TruthTurn:
    node: str
    passage_idx: int
    direction: str | None  # None for straight-through
    net_yaw: float
    start_idx: int
    end_idx: int
    degree: int

    @property
    def is_event(self) -> bool:
        return self.direction is not None and self.degree >= 3


@dataclass
class TripTruth:
    trip_id: str
    route: list
    speed: float
    passages: list[TruthTurn]

    @property
    def events(self) -> list[TruthTurn]:
        return [p for p in self.passages if p.is_event]

    @property
    def junction_passages(self) -> list[TruthTurn]:
        return [p for p in self.passages if p.degree >= 3]


def _pulse_fraction(x: np.ndarray) -> np.ndarray:
    """Integral of the unit raised-cosine pulse on [0, 1], clipped outside."""
    xc = np.clip(x, 0.0, 1.0)
    return xc - np.sin(2.0 * np.pi * xc) / (2.0 * np.pi)


def gen_trip(spec: SynthSpec, route, trip_id: str = "trip", seed: int | None = None,
             speed: float | None = None, turn_radius: float | None = None) -> tuple[Trip, TripTruth]:
    """Constant-speed drive from mid-first-segment to mid-last-segment.

    Each direction change is a raised-cosine yaw-rate pulse centred on the
    node passage time, lasting ``radius * |angle| / speed``.
    """
    check_route(spec, route)
    tp = spec.trips
    rng = SplitMix64(derive_seed(spec.seed if seed is None else seed, "trip", trip_id))
    v = float(rng.uniform(1, *tp.speed_range)[0]) if speed is None else float(speed)
    S = spec.grid_spacing_m
    fs = tp.sample_rate
    length = (len(route) - 2) * S
    n = int(math.floor(length / v * fs)) + 1
    t = np.arange(n) / fs

    def direction(a, b):
        return (b[0] - a[0], b[1] - a[1])

    d0 = direction(route[0], route[1])
    psi0 = math.degrees(math.atan2(d0[1], d0[0]))  # ccw from east
    yaw = np.zeros(n)
    psi = np.full(n, psi0)
    passages = []
    node_times = []
    for k in range(1, len(route) - 1):
        tk = (S / 2 + (k - 1) * S) / v
        node_times.append(tk)
        din, dout = direction(route[k - 1], route[k]), direction(route[k], route[k + 1])
        cross = din[0] * dout[1] - din[1] * dout[0]
        turn = 90.0 * cross
        idx = int(math.ceil(tk * fs - 1e-9))
        deg = _grid_degree(spec, *route[k])
        if turn == 0:
            passages.append(TruthTurn(node_id(*route[k]), idx, None, 0.0, idx, idx, deg))
            continue
        r = float(rng.uniform(1, *tp.turn_radius_range)[0]) if turn_radius is None else float(turn_radius)
        dur = r * math.radians(abs(turn)) / v
        x = (t - (tk - dur / 2)) / dur
        inside = (x >= 0) & (x <= 1)
        yaw[inside] += turn / dur * (1.0 - np.cos(2.0 * np.pi * x[inside]))
        psi += turn * _pulse_fraction(x)
        start = int(math.ceil((tk - dur / 2) * fs))
        end = int(math.floor((tk + dur / 2) * fs))
        passages.append(TruthTurn(node_id(*route[k]), idx, "Left" if turn > 0 else "Right", turn, max(start, 0), min(end, n - 1), deg))

    leg = np.searchsorted(np.asarray(node_times), t, side="right")
    segs = [grid_segment(route[i], route[i + 1]) for i in range(len(route) - 1)]
    matched = [segs[i] for i in leg]

    lat = v * np.radians(yaw)
    heading = 90.0 - psi
    if tp.yaw_noise_sd > 0:
        yaw = yaw + rng.normal(n, 0.0, tp.yaw_noise_sd)
    if tp.heading_noise_sd > 0:
        heading = heading + rng.normal(n, 0.0, tp.heading_noise_sd)
    if tp.lat_accel_noise_sd > 0:
        lat = lat + rng.normal(n, 0.0, tp.lat_accel_noise_sd)
    heading = np.mod(heading, 360.0)
    heading[heading >= 360.0] -= 360.0
    trip = Trip(trip_id, fs, t, np.full(n, v), yaw, lat, heading, matched)
    return trip, TripTruth(trip_id, [list(p) for p in route], v, passages)


def gen_trips(spec: SynthSpec) -> list[tuple[Trip, TripTruth]]:
    spec.validate()
    rng = SplitMix64(derive_seed(spec.seed, "routes"))
    out = []
    for k in range(spec.trips.count):
        route = random_route(spec, rng)
        out.append(gen_trip(spec, route, trip_id=f"trip{k:04d}"))
    return out


@dataclass
class DetectionScore:
    true_positive: int
    false_positive: int
    false_negative: int
    yaw_errors: list[float] = field(default_factory=list)

    @property
    def precision(self) -> float:
        found = self.true_positive + self.false_positive
        return self.true_positive / found if found else 1.0

    @property
    def recall(self) -> float:
        planted = self.true_positive + self.false_negative
        return self.true_positive / planted if planted else 1.0

    @property
    def max_yaw_error(self) -> float:
        return max(self.yaw_errors, default=0.0)


def score_detections(events_by_trip, truths) -> DetectionScore:
    """Match detected events to planted turns, one trip at a time.

    A detection is a true positive when it names the planted node, its window
    contains the planted passage index and its direction agrees.  Each planted
    turn can be claimed once.
    """
    tp = fp = fn = 0
    errors = []
    for events, truth in zip(events_by_trip, truths):
        planted = truth.events
        claimed = [False] * len(planted)
        for ev in events:
            hit = None
            for k, p in enumerate(planted):
                if (not claimed[k] and p.node == ev.junction_node and p.direction == ev.direction.value
                        and ev.start_idx <= p.passage_idx <= ev.end_idx):
                    hit = k
                    break
            if hit is None:
                fp += 1
            else:
                claimed[hit] = True
                tp += 1
                errors.append(abs(ev.net_yaw - planted[hit].net_yaw))
        fn += claimed.count(False)
    return DetectionScore(tp, fp, fn, errors)


# ---------------------------------------------------------------------------
# on-disk fixture


def write_fixture(spec: SynthSpec, out_dir) -> dict:
    """Write records, graph, trips and ``groundtruth`` sidecars under ``out_dir``."""
    out = os.fspath(out_dir)
    datasets, rtruth = gen_records(spec)
    manifest = {"seed": spec.seed, "records": {}, "trips": []}
    if datasets:
        os.makedirs(os.path.join(out, "records"), exist_ok=True)
    for ds, recs in datasets.items():
        path = os.path.join(out, "records", f"{ds.value}.csv")
        write_records(recs, path, schema_for(ds))
        manifest["records"][ds.value] = os.path.relpath(path, out)
    os.makedirs(os.path.join(out, "graph"), exist_ok=True)
    os.makedirs(os.path.join(out, "groundtruth"), exist_ok=True)
    write_graph(grid_graph(spec), os.path.join(out, "graph", "nodes.csv"), os.path.join(out, "graph", "segments.csv"))
    trips = gen_trips(spec) if spec.trips.count else []
    if trips:
        os.makedirs(os.path.join(out, "trips"), exist_ok=True)
    ttruth = []
    for trip, truth in trips:
        path = os.path.join(out, "trips", f"{trip.trip_id}.csv")
        write_trip(trip, path)
        manifest["trips"].append(os.path.relpath(path, out))
        ttruth.append({
            "trip_id": truth.trip_id,
            "route": truth.route,
            "speed": truth.speed,
            "passages": [asdict(p) for p in truth.passages],
        })
    with open(os.path.join(out, "groundtruth", "records.json"), "w", encoding="utf-8") as fh:
        json.dump({k: asdict(v) for k, v in rtruth.items()}, fh, indent=1, sort_keys=True)
    with open(os.path.join(out, "groundtruth", "trips.json"), "w", encoding="utf-8") as fh:
        json.dump(ttruth, fh, indent=1, sort_keys=True)
    return manifest


def bundled_spec(seed: int = 0, trips: int = 20) -> SynthSpec:
    """The desk-scale fixture used by the CLI and the acceptance suite."""
    return SynthSpec(
        seed=seed,
        records=(
            RecordSetSpec(DatasetId.FatalNCD, 1000, 0.30, cohort_violations=10),
            RecordSetSpec(DatasetId.NonFatalNCD, 1000, 0.273, unknown_fraction=0.02, cohort_violations=10,
                          weight_range=(1.0, 400.0)),
            RecordSetSpec(DatasetId.NdsCrash, 1000, 0.194, weight_range=(0.5, 2.0)),
            RecordSetSpec(DatasetId.NdsNearCrash, 1000, 0.127, weight_range=(0.5, 2.0)),
            RecordSetSpec(DatasetId.NdsBaseline, 1000, 0.05, weight_range=(0.5, 2.0)),
        ),
        trips=TripSpec(count=trips, yaw_noise_sd=0.5, heading_noise_sd=2.0, lat_accel_noise_sd=0.05),
    )
