"""Parameter distributions: histograms with mean +/- 2 sigma, bivariate grids,
categorical breakdowns, outliers.

Bins are right-open ``[a, b)`` except the last, which is closed.  Sigma is the
population standard deviation (divide by n).
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from .errors import EmptyInput, LengthMismatch, NonFiniteValue, OutsideGrid, UndeclaredVariable
from .records import RecordSchema, schema_for
from .scenario import FlaggedRecord, Outcome, ScenarioDefinition, evaluate


@dataclass(frozen=True)
class Moments:
    """Count, mean and sum of squared deviations; mergeable across chunks."""

    n: int
    mean: float
    m2: float

    @classmethod
    def of(cls, values) -> "Moments":
        x = np.asarray(values, dtype=float)
        if x.size == 0:
            return cls(0, 0.0, 0.0)
        mean = float(np.sum(x) / x.size)
        return cls(int(x.size), mean, float(np.sum((x - mean) ** 2)))

    def merge(self, other: "Moments") -> "Moments":
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n / n
        m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / n
        return Moments(n, mean, m2)

    @property
    def sd(self) -> float:
        return math.sqrt(self.m2 / self.n) if self.n else 0.0


def _finite(values, name: str = "values") -> np.ndarray:
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise EmptyInput(f"{name} is empty")
    if not np.all(np.isfinite(x)):
        raise NonFiniteValue(f"{name} contains NaN or infinity")
    return x


def bin_index(x: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Bin of each value: -1 below range, len(edges)-1 above, last bin closed."""
    idx = np.searchsorted(edges, x, side="right") - 1
    idx[x == edges[-1]] = len(edges) - 2
    idx[x > edges[-1]] = len(edges) - 1
    return idx


MAX_RULE_BINS = 10_000


def _rule_bins(x: np.ndarray, rule: str):
    """A numpy bin rule, or Sturges when the rule would ask for absurdly many bins.

    The width-based rules ("auto", "fd") shrink with the IQR, so a sample that is
    mostly one value with a few far points can request billions of bins.
    """
    span = float(x.max() - x.min())
    if rule in ("auto", "fd") and span > 0:
        q75, q25 = np.percentile(x, [75, 25])
        width = 2.0 * (q75 - q25) * x.size ** (-1.0 / 3.0)
        if width > 0 and span / width > MAX_RULE_BINS:
            return "sturges"
    return rule


def resolve_edges(x: np.ndarray, binning) -> np.ndarray:
    if isinstance(binning, str):
        edges = np.histogram_bin_edges(x, bins=_rule_bins(x, binning))
    elif isinstance(binning, (int, np.integer)):
        edges = np.histogram_bin_edges(x, bins=binning)
    else:
        edges = np.asarray(binning, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly increasing with at least two entries")
    return edges


@dataclass(frozen=True)
class ParameterDistribution:
    variable: str
    units: str
    n: int
    mean: float
    sd: float
    bin_edges: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)
    underflow: int
    overflow: int
    minimum: float
    maximum: float

    @property
    def bounds_2sigma(self) -> tuple[float, float]:
        return (self.mean - 2 * self.sd, self.mean + 2 * self.sd)

    @property
    def support(self) -> tuple[float, float]:
        return (self.minimum, self.maximum)


def fit_histogram(values, binning="auto", variable: str = "value", units: str = "") -> ParameterDistribution:
    x = _finite(values)
    edges = resolve_edges(x, binning)
    idx = bin_index(x, edges)
    nb = len(edges) - 1
    inside = (idx >= 0) & (idx < nb)
    counts = np.bincount(idx[inside], minlength=nb).astype(np.int64)
    m = Moments.of(x)
    return ParameterDistribution(
        variable=variable,
        units=units,
        n=int(x.size),
        mean=m.mean,
        sd=m.sd,
        bin_edges=edges,
        counts=counts,
        underflow=int(np.sum(idx < 0)),
        overflow=int(np.sum(idx >= nb)),
        minimum=float(x.min()),
        maximum=float(x.max()),
    )


@dataclass(frozen=True)
class BivariateDensity:
    x_variable: str
    y_variable: str
    x_edges: np.ndarray = field(repr=False)
    y_edges: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)  # shape (len(x_edges)-1, len(y_edges)-1)
    density: np.ndarray | None = field(repr=False)
    n: int = 0
    x_units: str = ""
    y_units: str = ""


def fit_bivariate(x, y, grid=(10, 10), smoothing: float | None = None,
                  x_variable: str = "x", y_variable: str = "y",
                  x_units: str = "", y_units: str = "") -> BivariateDensity:
    """2-D counts on a grid; ``smoothing`` is a Gaussian kernel sd in cells.

    Every point must fall inside the grid; the outermost edges are closed.
    """
    xs, ys = _finite(x, "x"), _finite(y, "y")
    if xs.size != ys.size:
        raise LengthMismatch(f"x has {xs.size} values, y has {ys.size}")
    gx, gy = grid
    if isinstance(gx, (int, np.integer)) and xs.min() == xs.max():
        gx = np.linspace(xs.min() - 0.5, xs.max() + 0.5, int(gx) + 1)
    if isinstance(gy, (int, np.integer)) and ys.min() == ys.max():
        gy = np.linspace(ys.min() - 0.5, ys.max() + 0.5, int(gy) + 1)
    xe, ye = resolve_edges(xs, gx), resolve_edges(ys, gy)
    ix, iy = bin_index(xs, xe), bin_index(ys, ye)
    nx, ny = len(xe) - 1, len(ye) - 1
    if np.any((ix < 0) | (ix >= nx) | (iy < 0) | (iy >= ny)):
        raise OutsideGrid("points fall outside the grid")
    counts = np.zeros((nx, ny), dtype=np.int64)
    np.add.at(counts, (ix, iy), 1)
    density = counts / counts.sum()
    if smoothing is not None and smoothing > 0:
        smoothed = ndimage.gaussian_filter(density, sigma=smoothing, mode="constant")
        density = smoothed / smoothed.sum()
    return BivariateDensity(x_variable, y_variable, xe, ye, counts, density, int(xs.size), x_units, y_units)


@dataclass(frozen=True)
class CategoricalBreakdown:
    variable: str
    levels: tuple[str, ...]
    # dataset label -> {"match": {level: p} | None, "nonmatch": {...} | None}
    proportions: Mapping[str, Mapping[str, Mapping[str, float] | None]]


def categorical_breakdown(datasets: Mapping[str, Sequence[FlaggedRecord]], variable: str,
                          definition: ScenarioDefinition, weighted: bool = False,
                          level_map: Mapping[str, str] | None = None,
                          schemas: Mapping[str, RecordSchema] | None = None) -> CategoricalBreakdown:
    """Level proportions per dataset for matching vs non-matching records.

    ``variable`` is a coded variable name; ``level_map`` optionally maps raw
    codes onto shared levels.  Records whose scenario outcome is Unknown are
    left out of both subsets; a missing code counts as level ``"Unknown"``.
    An empty subset is reported as ``None``.
    """
    level_map = level_map or {}
    table: dict[str, dict[str, dict[str, float] | None]] = {}
    all_levels: list[str] = []
    for label, items in datasets.items():
        sums: dict[str, dict[str, list[float]]] = {"match": {}, "nonmatch": {}}
        for it in items:
            schema = (schemas or {}).get(label) or schema_for(it.record.dataset_id)
            if not schema.declares(variable):
                raise UndeclaredVariable(variable)
            outcome = evaluate(definition, it.record, it.flags, schema)
            if outcome is Outcome.Unknown:
                continue
            raw = it.record.code(variable)
            level = "Unknown" if raw is None else level_map.get(raw, raw)
            if level not in all_levels:
                all_levels.append(level)
            subset = "match" if outcome is Outcome.Match else "nonmatch"
            sums[subset].setdefault(level, []).append(it.record.sample_weight if weighted else 1.0)
        table[label] = {}
        for subset, by_level in sums.items():
            total = math.fsum(w for ws in by_level.values() for w in ws)
            if total == 0:
                table[label][subset] = None
            else:
                table[label][subset] = {lv: math.fsum(ws) / total for lv, ws in by_level.items()}
    return CategoricalBreakdown(variable, tuple(all_levels), table)


def select_outliers(values, k: float) -> list[int]:
    """Indices with |value - mean| > k * sigma, ascending."""
    if not k > 0:
        raise ValueError("k must be > 0")
    x = _finite(values)
    if x.size < 2:
        raise EmptyInput("outlier selection needs at least two values")
    m = Moments.of(x)
    return [int(i) for i in np.flatnonzero(np.abs(x - m.mean) > k * m.sd)]


# ---------------------------------------------------------------------------
# plot-ready outputs


def write_histogram(dist: ParameterDistribution, dest) -> None:
    with open(os.fspath(dest), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("# variable", dist.variable, "units", dist.units, "n", dist.n,
                    "mean", repr(dist.mean), "sd", repr(dist.sd),
                    "lower_2sigma", repr(dist.bounds_2sigma[0]), "upper_2sigma", repr(dist.bounds_2sigma[1]),
                    "min", repr(dist.minimum), "max", repr(dist.maximum)))
        w.writerow(("bin_low", "bin_high", "count"))
        w.writerow(("-inf", repr(float(dist.bin_edges[0])), dist.underflow))
        for lo, hi, c in zip(dist.bin_edges[:-1], dist.bin_edges[1:], dist.counts):
            w.writerow((repr(float(lo)), repr(float(hi)), int(c)))
        w.writerow((repr(float(dist.bin_edges[-1])), "inf", dist.overflow))


def read_histogram(source) -> ParameterDistribution:
    with open(os.fspath(source), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    meta = dict(zip(rows[0][2::2], rows[0][3::2]))
    meta["variable"] = rows[0][1]
    body = rows[2:]
    edges = [float(r[0]) for r in body[1:-1]] + [float(body[-2][1])]
    counts = np.array([int(r[2]) for r in body[1:-1]], dtype=np.int64)
    return ParameterDistribution(
        variable=meta["variable"], units=meta.get("units", ""), n=int(meta["n"]),
        mean=float(meta["mean"]), sd=float(meta["sd"]), bin_edges=np.array(edges), counts=counts,
        underflow=int(body[0][2]), overflow=int(body[-1][2]),
        minimum=float(meta["min"]), maximum=float(meta["max"]),
    )


def write_bivariate(bd: BivariateDensity, dest) -> None:
    with open(os.fspath(dest), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((f"{bd.x_variable}_low", f"{bd.x_variable}_high", f"{bd.y_variable}_low", f"{bd.y_variable}_high", "count", "density"))
        for i in range(bd.counts.shape[0]):
            for j in range(bd.counts.shape[1]):
                d = bd.density[i, j] if bd.density is not None else bd.counts[i, j] / bd.n
                w.writerow((repr(float(bd.x_edges[i])), repr(float(bd.x_edges[i + 1])),
                            repr(float(bd.y_edges[j])), repr(float(bd.y_edges[j + 1])),
                            int(bd.counts[i, j]), repr(float(d))))


def write_breakdown(cb: CategoricalBreakdown, dest) -> None:
    with open(os.fspath(dest), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("dataset", "subset", "level", "proportion"))
        for label, subsets in cb.proportions.items():
            for subset, props in subsets.items():
                if props is None:
                    w.writerow((label, subset, "", "absent"))
                    continue
                for lv in cb.levels:
                    if lv in props:
                        w.writerow((label, subset, lv, repr(props[lv])))
