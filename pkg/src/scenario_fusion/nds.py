"""Naturalistic trips, road graph, and turn-event detection.

Conventions: yaw rate and lateral acceleration are positive to the left
(counterclockwise); GPS heading is a compass bearing, clockwise from north.
A left turn therefore has positive net yaw and a negative compass change.
"""

from __future__ import annotations

import csv
import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidTrip, NoMapMatch, NotIncident, WindowOutOfBounds


# ---------------------------------------------------------------------------
# trips


@dataclass
class Trip:
    trip_id: str
    sample_rate: float
    t: np.ndarray
    speed: np.ndarray
    yaw_rate: np.ndarray
    lat_accel: np.ndarray
    gps_heading: np.ndarray
    matched_segment: Sequence[str | None]
    segment_codes: np.ndarray = field(init=False, repr=False)
    segment_vocab: list[str] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise InvalidTrip("sample_rate must be > 0")
        for name in ("t", "speed", "yaw_rate", "lat_accel", "gps_heading"):
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))
        n = len(self.t)
        lengths = {len(self.speed), len(self.yaw_rate), len(self.lat_accel), len(self.gps_heading), len(self.matched_segment)}
        if lengths != {n}:
            raise InvalidTrip(f"{self.trip_id}: channel lengths differ")
        if n < 2:
            raise InvalidTrip(f"{self.trip_id}: need at least 2 samples")
        dt = np.diff(self.t)
        nominal = 1.0 / self.sample_rate
        if np.any(dt <= 0):
            raise InvalidTrip(f"{self.trip_id}: timestamps not strictly increasing")
        if np.any(np.abs(dt - nominal) > 0.1 * nominal):
            raise InvalidTrip(f"{self.trip_id}: sample spacing deviates >10% from 1/sample_rate")
        if np.any(self.speed < 0):
            raise InvalidTrip(f"{self.trip_id}: negative speed")
        if np.any((self.gps_heading < 0) | (self.gps_heading >= 360)):
            raise InvalidTrip(f"{self.trip_id}: gps_heading outside [0, 360)")
        vocab: dict[str, int] = {}
        codes = np.empty(n, dtype=np.int64)
        for i, s in enumerate(self.matched_segment):
            if s is None or s == "":
                codes[i] = -1
            else:
                codes[i] = vocab.setdefault(s, len(vocab))
        self.segment_codes = codes
        self.segment_vocab = list(vocab)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def map_coverage(self) -> float:
        return float(np.mean(self.segment_codes >= 0))


TRIP_COLUMNS = ("t", "speed", "yaw_rate", "lat_accel", "gps_heading", "matched_segment")


def write_trip(trip: Trip, dest) -> None:
    with open(os.fspath(dest), "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# trip_id={trip.trip_id} sample_rate={trip.sample_rate!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIP_COLUMNS)
        for row in zip(
            trip.t.tolist(),
            trip.speed.tolist(),
            trip.yaw_rate.tolist(),
            trip.lat_accel.tolist(),
            trip.gps_heading.tolist(),
            trip.matched_segment,
        ):
            w.writerow([repr(v) for v in row[:5]] + [row[5] or ""])


def read_trip(source) -> Trip:
    path = os.fspath(source)
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline()
        meta = {}
        if first.startswith("#"):
            for tok in first[1:].split():
                k, _, v = tok.partition("=")
                meta[k] = v
        else:
            fh.seek(0)
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InvalidTrip(f"{path}: empty trip file")
        header = [h.strip() for h in header]
        missing = [c for c in TRIP_COLUMNS if c not in header]
        if missing:
            raise InvalidTrip(f"{path}: missing channels {missing}")
        cols = {c: [] for c in TRIP_COLUMNS}
        pos = [header.index(c) for c in TRIP_COLUMNS]
        for rownum, row in enumerate(reader, start=3 if meta else 2):
            try:
                for c, p in zip(TRIP_COLUMNS[:5], pos[:5]):
                    cols[c].append(float(row[p]))
            except (ValueError, IndexError):
                raise InvalidTrip(f"{path}: row {rownum} is not numeric") from None
            cols["matched_segment"].append(row[pos[5]].strip() or None)
    t = np.asarray(cols["t"])
    if "sample_rate" in meta:
        rate = float(meta["sample_rate"])
    elif len(t) > 1:
        rate = 1.0 / float(np.median(np.diff(t)))
    else:
        raise InvalidTrip(f"{path}: cannot infer sample rate")
    trip_id = meta.get("trip_id") or os.path.splitext(os.path.basename(path))[0]
    return Trip(trip_id, rate, t, cols["speed"], cols["yaw_rate"], cols["lat_accel"], cols["gps_heading"], cols["matched_segment"])


# ---------------------------------------------------------------------------
# road graph


def _bearing(p: tuple[float, float], q: tuple[float, float]) -> float:
    """Compass bearing p -> q on a local equirectangular projection."""
    lat1, lon1 = p
    lat2, lon2 = q
    dx = (lon2 - lon1) * math.cos(math.radians(0.5 * (lat1 + lat2)))
    dy = lat2 - lat1
    if dx == 0 and dy == 0:
        raise ValueError("degenerate polyline step")
    return math.degrees(math.atan2(dx, dy)) % 360.0


@dataclass(frozen=True)
class Segment:
    id: str
    node_a: str
    node_b: str
    polyline: tuple[tuple[float, float], ...]
    heading_a: float  # bearing leaving node_a
    heading_b: float  # bearing arriving at node_b


class RoadGraph:
    def __init__(self, nodes: Mapping[str, tuple[float, float]], segments: Iterable[Segment]):
        self.nodes = dict(nodes)
        self.segments: dict[str, Segment] = {}
        self._incident: dict[str, list[str]] = {n: [] for n in self.nodes}
        for seg in segments:
            for end in (seg.node_a, seg.node_b):
                if end not in self.nodes:
                    raise ValueError(f"segment {seg.id} references unknown node {end}")
            if seg.id in self.segments:
                raise ValueError(f"duplicate segment id {seg.id}")
            self.segments[seg.id] = seg
            self._incident[seg.node_a].append(seg.id)
            if seg.node_b != seg.node_a:
                self._incident[seg.node_b].append(seg.id)

    @classmethod
    def from_polylines(cls, nodes, links) -> "RoadGraph":
        """``links``: iterable of (segment id, node_a, node_b, interior points)."""
        segs = []
        for sid, a, b, interior in links:
            pts = (tuple(nodes[a]),) + tuple(tuple(p) for p in interior) + (tuple(nodes[b]),)
            segs.append(Segment(sid, a, b, pts, _bearing(pts[0], pts[1]), _bearing(pts[-2], pts[-1])))
        return cls(nodes, segs)

    def degree(self, node: str) -> int:
        return len(self._incident[node])

    def incident(self, node: str) -> list[str]:
        return list(self._incident[node])

    def shared_node(self, seg1: str, seg2: str) -> str | None:
        a, b = self.segments[seg1], self.segments[seg2]
        ends2 = (b.node_a, b.node_b)
        for end in (a.node_b, a.node_a):
            if end in ends2:
                return end
        return None


def write_graph(graph: RoadGraph, nodes_dest, segments_dest) -> None:
    with open(os.fspath(nodes_dest), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("node_id", "lat", "lon"))
        for nid, (lat, lon) in graph.nodes.items():
            w.writerow((nid, repr(float(lat)), repr(float(lon))))
    with open(os.fspath(segments_dest), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("segment_id", "node_a", "node_b", "interior"))
        for seg in graph.segments.values():
            interior = ";".join(f"{lat!r} {lon!r}" for lat, lon in seg.polyline[1:-1])
            w.writerow((seg.id, seg.node_a, seg.node_b, interior))


def read_graph(nodes_src, segments_src) -> RoadGraph:
    nodes = {}
    with open(os.fspath(nodes_src), newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            nodes[row["node_id"]] = (float(row["lat"]), float(row["lon"]))
    links = []
    with open(os.fspath(segments_src), newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            interior = []
            for pt in (row.get("interior") or "").split(";"):
                if pt.strip():
                    lat, lon = pt.split()
                    interior.append((float(lat), float(lon)))
            links.append((row["segment_id"], row["node_a"], row["node_b"], interior))
    return RoadGraph.from_polylines(nodes, links)


def _wrap180(d):
    """Wrap degrees into (-180, 180]."""
    return d - 360.0 * np.ceil((d - 180.0) / 360.0)


def segment_angle(graph: RoadGraph, seg_in: str, seg_out: str, via: str) -> float:
    """Unsigned turn angle at ``via``: 0 is straight through, 180 a reversal."""
    s_in, s_out = graph.segments[seg_in], graph.segments[seg_out]
    if via == s_in.node_b:
        h_in = s_in.heading_b
    elif via == s_in.node_a:
        h_in = s_in.heading_a + 180.0
    else:
        raise NotIncident(f"segment {seg_in} is not incident to node {via}")
    if via == s_out.node_a:
        h_out = s_out.heading_a
    elif via == s_out.node_b:
        h_out = s_out.heading_b + 180.0
    else:
        raise NotIncident(f"segment {seg_out} is not incident to node {via}")
    return abs(float(_wrap180(h_out - h_in)))


# ---------------------------------------------------------------------------
# time-series metrics


def _check_window(trip: Trip, window: tuple[int, int]) -> tuple[int, int]:
    a, b = int(window[0]), int(window[1])
    if a < 0 or b >= len(trip) or b <= a:
        raise WindowOutOfBounds(f"window {window} invalid for trip of {len(trip)} samples")
    return a, b


def trapezoid(y: np.ndarray, t: np.ndarray) -> float:
    return float(np.trapezoid(y, t))


def integrate_yaw(trip: Trip, window: tuple[int, int]) -> float:
    """Net yaw (deg) over the inclusive sample window ``(start, end)``."""
    a, b = _check_window(trip, window)
    return trapezoid(trip.yaw_rate[a : b + 1], trip.t[a : b + 1])


def unwrap_heading(heading: np.ndarray) -> np.ndarray:
    steps = _wrap180(np.diff(heading))
    out = np.empty_like(heading)
    out[0] = heading[0]
    np.cumsum(steps, out=out[1:])
    out[1:] += heading[0]
    return out


def gps_heading_change(trip: Trip, window: tuple[int, int]) -> float:
    """Compass heading change end - start (deg, clockwise positive), unwrapped."""
    a, b = _check_window(trip, window)
    return float(np.sum(_wrap180(np.diff(trip.gps_heading[a : b + 1]))))


# ---------------------------------------------------------------------------
# detection


class Direction(str, enum.Enum):
    Left = "Left"
    Right = "Right"


@dataclass(frozen=True)
class DetectorParams:
    half_window_s: float = 8.0
    yaw_min_deg: float = 45.0
    yaw_max_deg: float = 135.0
    segment_angle_min_deg: float = 45.0
    max_yaw_gps_gap_deg: float = 30.0
    speed_floor_mps: float = 2.24
    min_map_coverage: float = 0.5
    remove_gyro_bias: bool = False


@dataclass(frozen=True)
class Passage:
    node: str
    index: int
    seg_in: str
    seg_out: str


@dataclass(frozen=True)
class TurnEvent:
    trip_id: str
    start_idx: int
    end_idx: int
    direction: Direction
    net_yaw: float
    gps_heading_change: float
    segment_angle: float
    junction_node: str
    max_abs_lat_accel: float
    mean_speed: float
    duration: float
    seg_in: str = ""
    seg_out: str = ""

    @property
    def abs_net_yaw(self) -> float:
        return abs(self.net_yaw)


def junction_passages(trip: Trip, graph: RoadGraph, min_coverage: float = 0.5) -> list[Passage]:
    """Transitions between matched segments that meet at a node of degree >= 3."""
    if trip.map_coverage < min_coverage:
        raise NoMapMatch(f"{trip.trip_id}: map-match coverage {trip.map_coverage:.2f} < {min_coverage}")
    codes = trip.segment_codes
    matched = np.flatnonzero(codes >= 0)
    seq = codes[matched]
    change = np.flatnonzero(seq[1:] != seq[:-1]) + 1
    vocab = trip.segment_vocab
    out = []
    for k in change:
        s_in, s_out = vocab[seq[k - 1]], vocab[seq[k]]
        if s_in not in graph.segments or s_out not in graph.segments:
            continue
        node = graph.shared_node(s_in, s_out)
        if node is None or graph.degree(node) < 3:
            continue
        out.append(Passage(node, int(matched[k]), s_in, s_out))
    return out


def gyro_bias(trip: Trip, still_speed: float = 0.5) -> float:
    still = trip.speed < still_speed
    return float(np.median(trip.yaw_rate[still])) if np.any(still) else 0.0


def _cumtrapz(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t), out=out[1:])
    return out


def detect_turns(trip: Trip, graph: RoadGraph, params: DetectorParams = DetectorParams()) -> list[TurnEvent]:
    passages = junction_passages(trip, graph, params.min_map_coverage)
    n = len(trip)
    yaw = trip.yaw_rate
    if params.remove_gyro_bias:
        yaw = yaw - gyro_bias(trip)
    cum_yaw = _cumtrapz(yaw, trip.t)
    heading = unwrap_heading(trip.gps_heading)
    cum_speed = np.concatenate(([0.0], np.cumsum(trip.speed)))
    half = int(round(params.half_window_s * trip.sample_rate))
    last_end: dict[str, int] = {}
    events = []
    for p in passages:
        a, b = max(0, p.index - half), min(n - 1, p.index + half)
        if b <= a or a <= last_end.get(p.node, -1):
            continue
        net = float(cum_yaw[b] - cum_yaw[a])
        if not params.yaw_min_deg <= abs(net) <= params.yaw_max_deg:
            continue
        angle = segment_angle(graph, p.seg_in, p.seg_out, p.node)
        if angle < params.segment_angle_min_deg:
            continue
        gps = float(heading[b] - heading[a])
        if abs(net + gps) > params.max_yaw_gps_gap_deg:
            continue
        mean_speed = float((cum_speed[b + 1] - cum_speed[a]) / (b - a + 1))
        if mean_speed < params.speed_floor_mps:
            continue
        events.append(
            TurnEvent(
                trip_id=trip.trip_id,
                start_idx=a,
                end_idx=b,
                direction=Direction.Left if net > 0 else Direction.Right,
                net_yaw=net,
                gps_heading_change=gps,
                segment_angle=angle,
                junction_node=p.node,
                max_abs_lat_accel=float(np.max(np.abs(trip.lat_accel[a : b + 1]))),
                mean_speed=mean_speed,
                duration=float(trip.t[b] - trip.t[a]),
                seg_in=p.seg_in,
                seg_out=p.seg_out,
            )
        )
        last_end[p.node] = b
    events.sort(key=lambda e: e.start_idx)
    return events


def detect_many(trips: Sequence[Trip], graph: RoadGraph, params: DetectorParams = DetectorParams(), jobs: int = 1) -> list[list[TurnEvent]]:
    """Per-trip event lists in input order; ``jobs`` only changes wall time."""
    if jobs <= 1:
        return [detect_turns(t, graph, params) for t in trips]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda t: detect_turns(t, graph, params), trips))


def audit_event(event: TurnEvent, trip: Trip, graph: RoadGraph, params: DetectorParams = DetectorParams(), tol: float = 1e-6) -> list[str]:
    """Re-check an event's gates from scratch; returns the names of failed gates."""
    window = (event.start_idx, event.end_idx)
    net = integrate_yaw(trip, window)
    if params.remove_gyro_bias:
        net -= gyro_bias(trip) * (trip.t[event.end_idx] - trip.t[event.start_idx])
    gps = gps_heading_change(trip, window)
    angle = segment_angle(graph, event.seg_in, event.seg_out, event.junction_node)
    speed = float(np.mean(trip.speed[event.start_idx : event.end_idx + 1]))
    failed = []
    if not params.yaw_min_deg - tol <= abs(net) <= params.yaw_max_deg + tol:
        failed.append("yaw_band")
    if angle < params.segment_angle_min_deg - tol:
        failed.append("segment_angle")
    if abs(net + gps) > params.max_yaw_gps_gap_deg + tol:
        failed.append("yaw_gps_consistency")
    if speed < params.speed_floor_mps - tol:
        failed.append("speed_floor")
    if graph.degree(event.junction_node) < 3:
        failed.append("junction_degree")
    if (event.direction is Direction.Left) != (net > 0):
        failed.append("direction")
    return failed


EVENT_COLUMNS = (
    "trip_id", "start_idx", "end_idx", "direction", "net_yaw", "gps_heading_change",
    "segment_angle", "junction_node", "max_abs_lat_accel", "mean_speed", "duration", "seg_in", "seg_out",
)


def write_events(events: Iterable[TurnEvent], dest) -> None:
    with open(os.fspath(dest), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for e in events:
            w.writerow([
                e.trip_id, e.start_idx, e.end_idx, e.direction.value, repr(e.net_yaw),
                repr(e.gps_heading_change), repr(e.segment_angle), e.junction_node,
                repr(e.max_abs_lat_accel), repr(e.mean_speed), repr(e.duration), e.seg_in, e.seg_out,
            ])


def read_events(source) -> list[TurnEvent]:
    out = []
    with open(os.fspath(source), newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(TurnEvent(
                trip_id=row["trip_id"], start_idx=int(row["start_idx"]), end_idx=int(row["end_idx"]),
                direction=Direction(row["direction"]), net_yaw=float(row["net_yaw"]),
                gps_heading_change=float(row["gps_heading_change"]), segment_angle=float(row["segment_angle"]),
                junction_node=row["junction_node"], max_abs_lat_accel=float(row["max_abs_lat_accel"]),
                mean_speed=float(row["mean_speed"]), duration=float(row["duration"]),
                seg_in=row.get("seg_in", ""), seg_out=row.get("seg_out", ""),
            ))
    return out
