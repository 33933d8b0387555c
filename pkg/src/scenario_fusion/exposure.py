"""National mileage denominators from vehicles-in-operation and mileage-by-age tables."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import InvalidRange, MissingAamAge, ValidationError


@dataclass(frozen=True)
class VioTable:
    """Registered vehicle counts keyed by (calendar year, model year)."""

    counts: Mapping[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self):
        for (cy, my), n in self.counts.items():
            if my > cy + 1:
                raise ValidationError(f"VIO entry ({cy}, {my}): model year exceeds calendar year + 1")
            if n < 0:
                raise ValidationError(f"VIO entry ({cy}, {my}): negative count")

    @classmethod
    def from_entries(cls, entries: Iterable[tuple[int, int, int]]) -> "VioTable":
        counts: dict[tuple[int, int], int] = {}
        for cy, my, n in entries:
            key = (int(cy), int(my))
            if key in counts:
                raise ValidationError(f"duplicate VIO entry {key}")
            counts[key] = n
        return cls(counts)

    def scaled(self, c: float) -> "VioTable":
        return VioTable({k: v * c for k, v in self.counts.items()})


@dataclass(frozen=True)
class AamTable:
    """Average annual miles by vehicle age 0..max_age, plus an optional terminal value."""

    miles: tuple[float, ...]
    terminal: float | None = None

    def __post_init__(self):
        if not self.miles:
            raise ValidationError("AAM table needs at least the age-0 entry")
        if any(m < 0 for m in self.miles) or (self.terminal is not None and self.terminal < 0):
            raise ValidationError("AAM values must be >= 0")

    @property
    def max_age(self) -> int:
        return len(self.miles) - 1

    @classmethod
    def from_mapping(cls, by_age: Mapping[int, float], terminal: float | None = None) -> "AamTable":
        ages = sorted(by_age)
        if ages != list(range(len(ages))):
            raise ValidationError("AAM ages must be contiguous from 0")
        return cls(tuple(by_age[a] for a in ages), terminal)

    def at(self, age: int) -> float:
        # next-model-year vehicles (age -1) use the age-0 mileage
        if age < 0:
            age = 0
        if age <= self.max_age:
            return self.miles[age]
        if self.terminal is None:
            raise MissingAamAge(age)
        return self.terminal


def vmt_estimate(vio: VioTable, aam: AamTable, cy_from: int, cy_to: int, my_min: int) -> float:
    """Sum of VIO(CY, MY) * AAM(CY - MY) for CY in [cy_from, cy_to], MY in [my_min, CY + 1].

    Pairs missing from ``vio`` contribute nothing.  Products are accumulated
    with ``math.fsum`` so the result is correctly rounded and independent of
    entry order.
    """
    if cy_from > cy_to:
        raise InvalidRange(f"cy_from {cy_from} > cy_to {cy_to}")
    terms = []
    for cy in range(cy_from, cy_to + 1):
        for my in range(my_min, cy + 2):
            n = vio.counts.get((cy, my))
            if n is None:
                continue
            terms.append(n * aam.at(cy - my))
    return math.fsum(terms)


def read_vio(source) -> VioTable:
    """Columns: calendar_year, model_year, count."""
    entries = []
    with open(os.fspath(source), newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            count = float(row["count"])
            entries.append((int(row["calendar_year"]), int(row["model_year"]), int(count) if count.is_integer() else count))
    return VioTable.from_entries(entries)


def read_aam(source, terminal: float | None = None) -> AamTable:
    """Columns: vehicle_age, miles.  A row with age ``+`` sets the terminal value."""
    by_age = {}
    with open(os.fspath(source), newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            age = row["vehicle_age"].strip()
            if age == "+":
                terminal = float(row["miles"])
            else:
                by_age[int(age)] = float(row["miles"])
    return AamTable.from_mapping(by_age, terminal)


def format_miles(miles: float) -> tuple[str, str]:
    """(plain miles, trillions with 3 decimals)."""
    return f"{miles:.1f}", f"{miles / 1e12:.3f}"
