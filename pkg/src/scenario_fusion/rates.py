"""Event counts and per-mileage rates."""

from __future__ import annotations

import csv
import enum
import math
import os
from dataclasses import dataclass
from typing import Iterable

from .errors import NonPositiveWeight, ValidationError, ZeroDenominator


class Scale(str, enum.Enum):
    Per100MVMT = "Per100MVMT"
    PerMVMT = "PerMVMT"

    @property
    def factor(self) -> float:
        return 1e8 if self is Scale.Per100MVMT else 1e6

    @property
    def label(self) -> str:
        return "per 100 MVMT" if self is Scale.Per100MVMT else "per MVMT"


@dataclass(frozen=True)
class RateEstimate:
    numerator: float
    denominator: float
    scale: Scale
    value: float

    def render(self, decimals: int = 2) -> str:
        return f"{self.value:.{decimals}f}"


def weighted_count(items: Iterable) -> float:
    """Sum of sample weights; items are weights or objects with ``sample_weight``."""
    weights = []
    for it in items:
        w = it if isinstance(it, (int, float)) else getattr(it, "sample_weight", 1.0)
        if not w > 0:
            raise NonPositiveWeight(f"weight {w} is not positive")
        weights.append(w)
    return math.fsum(weights)


def rate(numerator: float, denominator_miles: float, scale: Scale = Scale.Per100MVMT) -> RateEstimate:
    if numerator < 0:
        raise ValidationError("numerator must be >= 0")
    if not denominator_miles > 0:
        raise ZeroDenominator("mileage denominator must be > 0")
    scale = Scale(scale)
    return RateEstimate(numerator, denominator_miles, scale, numerator / denominator_miles * scale.factor)


@dataclass(frozen=True)
class RateRow:
    category: str
    mileage: float
    total_events: float
    scenario_events: float
    scale: Scale

    @property
    def overall(self) -> RateEstimate:
        return rate(self.total_events, self.mileage, self.scale)

    @property
    def scenario(self) -> RateEstimate:
        return rate(self.scenario_events, self.mileage, self.scale)


RATE_INPUT_COLUMNS = ("category", "mileage", "total_events", "scenario_events", "scale")
RATE_OUTPUT_COLUMNS = ("category", "mileage", "total_events", "scenario_events", "overall_rate", "scenario_rate", "units")


def read_rate_rows(source) -> list[RateRow]:
    rows = []
    with open(os.fspath(source), newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in RATE_INPUT_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValidationError(f"rate table missing columns {missing}")
        for row in reader:
            rows.append(RateRow(
                row["category"],
                float(row["mileage"]),
                float(row["total_events"]),
                float(row["scenario_events"]),
                Scale(row["scale"].strip()),
            ))
    return rows


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_rate_summary(rows: Iterable[RateRow], dest, decimals: int = 2) -> None:
    with open(os.fspath(dest), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RATE_OUTPUT_COLUMNS)
        for r in rows:
            w.writerow([r.category, _num(r.mileage), _num(r.total_events), _num(r.scenario_events),
                        r.overall.render(decimals), r.scenario.render(decimals), r.scale.label])
