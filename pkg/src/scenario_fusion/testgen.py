"""Logical -> concrete scenario sampling and scenario/road document emission.

The emitted XML is a small self-contained subset shaped after OpenSCENARIO
(``.xosc``) and OpenDRIVE (``.xodr``); it is not a conformant ASAM document.

Scenario document::

    OpenSCENARIO
      FileHeader(description, author, revMajor, revMinor)
      Metadata(logical, seed, index)
      ParameterDeclarations/ParameterDeclaration(name, parameterType, value)
      RoadNetwork/LogicFile(filepath), RoadNetwork/Environment(control, lighting)
      Entities/ScenarioObject(name, role)
      Storyboard/Init/Actions/Private(entityRef)
          SpeedAction(speed), LegPosition(leg, laneId, heading)
      Storyboard/Story/Act/ManeuverGroup(actor)/Maneuver(name, action)
          StartTrigger(type, value)

Attribute values starting with ``$`` reference a declared parameter.  Every
parameter value is written with Python's shortest round-trip float repr.

Road document: one ``road`` per junction leg plus one ``junction`` holding a
``connection`` (with ``laneLink`` children) for every ordered pair of distinct
legs; U-turns are not generated.
"""

from __future__ import annotations

import csv
import enum
import math
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    IncompatibleStrategy,
    NoEgoActor,
    UnboundParameter,
    UnsupportedTopology,
    ValidationError,
)
from .params import ParameterDistribution
from .rng import SplitMix64, derive_seed
from .synth import allocate


class Control(str, enum.Enum):
    Signal = "Signal"
    Stop = "Stop"
    Yield = "Yield"
    Uncontrolled = "Uncontrolled"


class Role(str, enum.Enum):
    Ego = "Ego"
    PrincipalOther = "PrincipalOther"


class Action(str, enum.Enum):
    TurnLeft = "TurnLeft"
    TurnRight = "TurnRight"
    Straight = "Straight"


class TriggerType(str, enum.Enum):
    AtDistance = "AtDistance"
    AtTime = "AtTime"


class Strategy(str, enum.Enum):
    IndependentMarginal = "IndependentMarginal"
    JointEmpirical = "JointEmpirical"
    StratifiedMarginal = "StratifiedMarginal"


LIGHTING = ("Daylight", "Dark - Lighted", "Dark - Not Lighted", "Dawn", "Dusk", "Unknown")

# outward compass bearing of each leg, by leg count
LEG_HEADINGS = {3: (0.0, 90.0, 270.0), 4: (0.0, 90.0, 180.0, 270.0)}
LEG_LENGTH_M = 100.0
LANE_WIDTH_M = 3.5

Value = float | str  # a number or "$parameter"


def _ref(v) -> str | None:
    return v[1:] if isinstance(v, str) and v.startswith("$") else None


@dataclass(frozen=True)
class StaticFeatures:
    legs: int = 4
    lanes_per_leg: tuple[int, ...] = (1, 1, 1, 1)
    control: Control = Control.Signal
    lighting: str = "Daylight"

    def __post_init__(self):
        object.__setattr__(self, "control", Control(self.control))
        if isinstance(self.lanes_per_leg, int):
            object.__setattr__(self, "lanes_per_leg", (self.lanes_per_leg,) * self.legs)
        if len(self.lanes_per_leg) != self.legs or min(self.lanes_per_leg, default=0) < 1:
            raise ValidationError("need one lane count >= 1 per leg")
        if self.lighting not in LIGHTING:
            raise ValidationError(f"lighting must be one of {LIGHTING}")


@dataclass(frozen=True)
class Actor:
    name: str
    role: Role
    approach_leg: int
    action: Action
    speed: Value
    trigger_type: TriggerType = TriggerType.AtDistance
    trigger_value: Value = 30.0
    heading: Value | None = None

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "action", Action(self.action))
        object.__setattr__(self, "trigger_type", TriggerType(self.trigger_type))

    def references(self) -> list[str]:
        return [r for r in (_ref(self.speed), _ref(self.trigger_value), _ref(self.heading)) if r]


@dataclass(frozen=True)
class ParameterBinding:
    name: str
    units: str = ""
    distribution: ParameterDistribution | None = None
    range: tuple[float, float] | None = None
    observations: np.ndarray | None = field(default=None, repr=False)

    @property
    def support(self) -> tuple[float, float]:
        if self.distribution is not None:
            return self.distribution.support
        return self.range


@dataclass(frozen=True)
class LogicalScenario:
    name: str
    static: StaticFeatures
    actors: tuple[Actor, ...]
    parameters: Mapping[str, ParameterBinding]

    @property
    def ego(self) -> Actor:
        return next(a for a in self.actors if a.role is Role.Ego)


def build_logical(name: str, static: StaticFeatures, actors: Sequence[Actor],
                  bindings: Mapping[str, object]) -> LogicalScenario:
    """Validate groupings and attach parameter bindings.

    A binding is a :class:`ParameterBinding`, a fitted
    :class:`ParameterDistribution`, a ``(low, high)`` range, or ``None``
    (which is rejected).
    """
    egos = [a for a in actors if a.role is Role.Ego]
    if not egos:
        raise NoEgoActor(f"logical scenario {name!r} has no Ego actor")
    if len(egos) > 1:
        raise ValidationError(f"logical scenario {name!r} has {len(egos)} Ego actors")
    for a in actors:
        if not 0 <= a.approach_leg < static.legs:
            raise ValidationError(f"actor {a.name}: approach leg {a.approach_leg} does not exist")
    params: dict[str, ParameterBinding] = {}
    for pname, b in bindings.items():
        if b is None:
            raise UnboundParameter(pname)
        if isinstance(b, ParameterBinding):
            pb = b
        elif isinstance(b, ParameterDistribution):
            pb = ParameterBinding(pname, b.units, distribution=b)
        else:
            lo, hi = b
            pb = ParameterBinding(pname, range=(float(lo), float(hi)))
        if pb.distribution is None and pb.range is None:
            raise UnboundParameter(pname)
        if pb.distribution is not None and pb.distribution.n < 1:
            raise ValidationError(f"parameter {pname!r}: empty distribution")
        if pb.range is not None and not pb.range[0] <= pb.range[1]:
            raise ValidationError(f"parameter {pname!r}: range low > high")
        params[pname] = pb
    for a in actors:
        for r in a.references():
            if r not in params:
                raise UnboundParameter(r)
    return LogicalScenario(name, static, tuple(actors), params)


@dataclass(frozen=True)
class ConcreteScenario:
    logical_name: str
    seed: int
    index: int
    values: Mapping[str, float]
    static: StaticFeatures
    actors: tuple[Actor, ...]

    def resolve(self, v: Value | None) -> float | None:
        if v is None:
            return None
        r = _ref(v)
        return self.values[r] if r else float(v)

    @property
    def stem(self) -> str:
        return f"{self.logical_name}/{self.seed}/{self.index:04d}"


def _marginal_bins(dist: ParameterDistribution):
    """Sampling intervals and weights, clipped to the observed min/max."""
    lows, highs, weights = [], [], []
    e = dist.bin_edges
    if dist.underflow:
        lows.append(dist.minimum); highs.append(min(e[0], dist.maximum)); weights.append(dist.underflow)
    for a, b, c in zip(e[:-1], e[1:], dist.counts):
        if c > 0:
            lows.append(max(a, dist.minimum)); highs.append(min(b, dist.maximum)); weights.append(c)
    if dist.overflow:
        lows.append(max(e[-1], dist.minimum)); highs.append(dist.maximum); weights.append(dist.overflow)
    return np.array(lows), np.array(highs), np.array(weights, dtype=float)


def _sample_binding(pb: ParameterBinding, n: int, strategy: Strategy, rng: SplitMix64) -> np.ndarray:
    if pb.distribution is not None:
        lows, highs, w = _marginal_bins(pb.distribution)
    else:
        lows, highs, w = np.array([pb.range[0]]), np.array([pb.range[1]]), np.array([1.0])
    if strategy is Strategy.StratifiedMarginal:
        if pb.distribution is None:
            # n equal strata across the range
            u = (np.arange(n) + rng.uniform(n)) / n
            out = lows[0] + (highs[0] - lows[0]) * u
        else:
            alloc = allocate(n, w)
            which = np.repeat(np.arange(len(w)), alloc)
            out = lows[which] + (highs[which] - lows[which]) * rng.uniform(n)
        return out[rng.permutation(n)]
    which = rng.choice(len(w), n, w)
    return lows[which] + (highs[which] - lows[which]) * rng.uniform(n)


def sample_concrete(logical: LogicalScenario, n: int, strategy: Strategy | str = Strategy.IndependentMarginal,
                    seed: int = 0) -> list[ConcreteScenario]:
    if n < 1:
        raise ValidationError("n must be >= 1")
    strategy = Strategy(strategy)
    names = sorted(logical.parameters)
    columns: dict[str, np.ndarray] = {}
    if strategy is Strategy.JointEmpirical:
        joint = [p for p in names if logical.parameters[p].distribution is not None]
        lengths = set()
        for p in joint:
            obs = logical.parameters[p].observations
            if obs is None:
                raise IncompatibleStrategy(f"JointEmpirical needs paired observations for {p!r}")
            lengths.add(len(obs))
        if len(lengths) > 1:
            raise IncompatibleStrategy("JointEmpirical observations differ in length")
        if joint:
            rng = SplitMix64(derive_seed(seed, logical.name, strategy.value, "rows"))
            rows = rng.integers(0, lengths.pop(), n)
            for p in joint:
                columns[p] = np.asarray(logical.parameters[p].observations, dtype=float)[rows]
    for p in names:
        if p in columns:
            continue
        rng = SplitMix64(derive_seed(seed, logical.name, strategy.value, p))
        marginal = Strategy.IndependentMarginal if strategy is Strategy.JointEmpirical else strategy
        columns[p] = _sample_binding(logical.parameters[p], n, marginal, rng)
    out = []
    for i in range(n):
        values = {p: float(columns[p][i]) for p in names}
        out.append(ConcreteScenario(logical.name, seed, i, values, logical.static, logical.actors))
    return out


def within_support(logical: LogicalScenario, concrete: ConcreteScenario) -> bool:
    for p, v in concrete.values.items():
        lo, hi = logical.parameters[p].support
        if not lo <= v <= hi:
            return False
    return True


# ---------------------------------------------------------------------------
# emission


def _fmt(v: float) -> str:
    return repr(float(v))


def _attr(v: Value | None) -> str:
    if v is None:
        return ""
    return v if _ref(v) else _fmt(v)


def _leg_heading(static: StaticFeatures, leg: int) -> float:
    # driving toward the junction: opposite of the leg's outward bearing
    return (LEG_HEADINGS[static.legs][leg] + 180.0) % 360.0


def emit_scenario(concrete: ConcreteScenario, road_file: str | None = None) -> str:
    root = ET.Element("OpenSCENARIO")
    ET.SubElement(root, "FileHeader", description=concrete.logical_name, author="scenario_fusion",
                  revMajor="1", revMinor="0")
    ET.SubElement(root, "Metadata", logical=concrete.logical_name, seed=str(concrete.seed), index=str(concrete.index))
    decls = ET.SubElement(root, "ParameterDeclarations")
    for name in sorted(concrete.values):
        ET.SubElement(decls, "ParameterDeclaration", name=name, parameterType="double", value=_fmt(concrete.values[name]))
    rn = ET.SubElement(root, "RoadNetwork")
    ET.SubElement(rn, "LogicFile", filepath=road_file or f"{concrete.logical_name}.xodr")
    ET.SubElement(rn, "Environment", control=concrete.static.control.value, lighting=concrete.static.lighting)
    ents = ET.SubElement(root, "Entities")
    for a in concrete.actors:
        ET.SubElement(ents, "ScenarioObject", name=a.name, role=a.role.value)
    sb = ET.SubElement(root, "Storyboard")
    actions = ET.SubElement(ET.SubElement(sb, "Init"), "Actions")
    for a in concrete.actors:
        priv = ET.SubElement(actions, "Private", entityRef=a.name)
        ET.SubElement(priv, "SpeedAction", speed=_attr(a.speed))
        heading = a.heading if a.heading is not None else _leg_heading(concrete.static, a.approach_leg)
        ET.SubElement(priv, "LegPosition", leg=f"leg{a.approach_leg}", laneId="-1", heading=_attr(heading))
    act = ET.SubElement(ET.SubElement(sb, "Story", name=concrete.logical_name), "Act", name="act")
    for a in sorted(concrete.actors, key=lambda a: a.role is not Role.Ego):
        mg = ET.SubElement(act, "ManeuverGroup", actor=a.name)
        man = ET.SubElement(mg, "Maneuver", name=f"{a.name}_{a.action.value}", action=a.action.value)
        ET.SubElement(man, "StartTrigger", type=a.trigger_type.value, value=_attr(a.trigger_value))
    ET.indent(root)
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(root, encoding="unicode") + "\n"


@dataclass
class ParsedScenario:
    logical: str
    seed: int
    index: int
    parameters: dict[str, float]
    actors: list[dict]
    control: str
    lighting: str


def parse_scenario(text: str) -> ParsedScenario:
    root = ET.fromstring(text.encode("utf-8"))
    meta = root.find("Metadata")
    params = {d.get("name"): float(d.get("value")) for d in root.iter("ParameterDeclaration")}

    def val(s):
        if s is None or s == "":
            return None
        return params[s[1:]] if s.startswith("$") else float(s)

    roles = {o.get("name"): o.get("role") for o in root.iter("ScenarioObject")}
    actors = {}
    for priv in root.iter("Private"):
        name = priv.get("entityRef")
        pos = priv.find("LegPosition")
        actors[name] = {
            "name": name,
            "role": roles.get(name),
            "speed": val(priv.find("SpeedAction").get("speed")),
            "leg": int(pos.get("leg").removeprefix("leg")),
            "heading": val(pos.get("heading")),
        }
    for mg in root.iter("ManeuverGroup"):
        man = mg.find("Maneuver")
        trig = man.find("StartTrigger")
        actors[mg.get("actor")].update(action=man.get("action"), trigger_type=trig.get("type"), trigger_value=val(trig.get("value")))
    env = root.find("RoadNetwork/Environment")
    return ParsedScenario(meta.get("logical"), int(meta.get("seed")), int(meta.get("index")), params,
                          list(actors.values()), env.get("control"), env.get("lighting"))


def maneuver_between(static: StaticFeatures, leg_in: int, leg_out: int) -> str:
    approach = _leg_heading(static, leg_in)
    exit_ = LEG_HEADINGS[static.legs][leg_out]
    rel = (exit_ - approach + 180.0) % 360.0 - 180.0
    if abs(rel) < 45.0:
        return "Straight"
    return "Right" if rel > 0 else "Left"


def emit_road(concrete: ConcreteScenario | StaticFeatures, name: str | None = None) -> str:
    static = concrete.static if isinstance(concrete, ConcreteScenario) else concrete
    name = name or (concrete.logical_name if isinstance(concrete, ConcreteScenario) else "junction")
    if static.legs not in LEG_HEADINGS:
        raise UnsupportedTopology(f"{static.legs} legs; only 3 or 4 are supported")
    root = ET.Element("OpenDRIVE")
    ET.SubElement(root, "header", revMajor="1", revMinor="6", name=name)
    junction_id = "100"
    for leg, hdg in enumerate(LEG_HEADINGS[static.legs]):
        road = ET.SubElement(root, "road", id=str(leg + 1), name=f"leg{leg}", length=_fmt(LEG_LENGTH_M), junction="-1")
        link = ET.SubElement(road, "link")
        ET.SubElement(link, "predecessor", elementType="junction", elementId=junction_id)
        # reference line starts at the junction centre and runs outward
        th = math.radians(90.0 - hdg)
        geo = ET.SubElement(ET.SubElement(road, "planView"), "geometry", s="0.0", x="0.0", y="0.0",
                            hdg=_fmt(round(th, 12)), length=_fmt(LEG_LENGTH_M))
        ET.SubElement(geo, "line")
        sec = ET.SubElement(ET.SubElement(road, "lanes"), "laneSection", s="0.0")
        nl = static.lanes_per_leg[leg]
        left = ET.SubElement(sec, "left")
        for k in range(nl, 0, -1):
            ET.SubElement(left, "lane", id=str(k), type="driving", width=_fmt(LANE_WIDTH_M))
        ET.SubElement(ET.SubElement(sec, "center"), "lane", id="0", type="none")
        right = ET.SubElement(sec, "right")
        for k in range(1, nl + 1):
            ET.SubElement(right, "lane", id=str(-k), type="driving", width=_fmt(LANE_WIDTH_M))
    junction = ET.SubElement(root, "junction", id=junction_id, name=f"{name}_junction", control=static.control.value)
    cid = 0
    for a in range(static.legs):
        for b in range(static.legs):
            if a == b:
                continue
            conn = ET.SubElement(junction, "connection", id=str(cid), incomingRoad=str(a + 1), outgoingRoad=str(b + 1),
                                 maneuver=maneuver_between(static, a, b), contactPoint="start")
            # inbound traffic uses left lanes (+) of the outward-running leg, outbound the right lanes (-)
            for k in range(1, min(static.lanes_per_leg[a], static.lanes_per_leg[b]) + 1):
                ET.SubElement(conn, "laneLink", **{"from": str(k), "to": str(-k)})
            cid += 1
    ET.indent(root)
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(root, encoding="unicode") + "\n"


def write_batch(logical: LogicalScenario, concretes: Sequence[ConcreteScenario], out_dir) -> list[str]:
    """Write ``<name>.xodr``, ``<name>/<seed>/<index>.xosc`` and a manifest per seed."""
    out = os.fspath(out_dir)
    os.makedirs(out, exist_ok=True)
    road_path = os.path.join(out, f"{logical.name}.xodr")
    with open(road_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(emit_road(logical.static, logical.name))
    written = [road_path]
    by_seed: dict[int, list[ConcreteScenario]] = {}
    for c in concretes:
        by_seed.setdefault(c.seed, []).append(c)
    names = sorted(logical.parameters)
    for seed, group in by_seed.items():
        d = os.path.join(out, logical.name, str(seed))
        os.makedirs(d, exist_ok=True)
        rows = []
        for c in group:
            path = os.path.join(d, f"{c.index:04d}.xosc")
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(emit_scenario(c, road_file=f"../../{logical.name}.xodr"))
            written.append(path)
            rows.append([os.path.relpath(path, out), c.index, seed] + [_fmt(c.values[p]) for p in names])
        manifest = os.path.join(d, "manifest.csv")
        with open(manifest, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["file", "index", "seed"] + names)
            w.writerows(rows)
        written.append(manifest)
    return written
