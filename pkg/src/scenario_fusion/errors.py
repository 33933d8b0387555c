"""Exception hierarchy.

Everything a caller can fix by changing inputs derives from
:class:`ValidationError`; the CLI maps those to exit status 1 and
``OSError`` to exit status 2.
"""

from __future__ import annotations


class ValidationError(ValueError):
    pass


# records
class MissingColumn(ValidationError):
    def __init__(self, column: str, source: str = ""):
        self.column = column
        where = f" in {source}" if source else ""
        super().__init__(f"missing column {column!r}{where}")


class UnknownColumn(ValidationError):
    def __init__(self, column: str, source: str = ""):
        self.column = column
        where = f" in {source}" if source else ""
        super().__init__(f"column {column!r} is not declared by the schema{where}")


class TypeMismatch(ValidationError):
    def __init__(self, row: int, column: str, detail: str = ""):
        self.row = row
        self.column = column
        msg = f"row {row}, column {column!r}: type mismatch"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class EmptyFile(ValidationError):
    pass


class EmptyCase(ValidationError):
    pass


# exposure
class MissingAamAge(ValidationError):
    def __init__(self, age: int):
        self.age = age
        super().__init__(f"no average-annual-mileage entry for vehicle age {age}")


class InvalidRange(ValidationError):
    pass


# nds
class WindowOutOfBounds(ValidationError):
    pass


class NotIncident(ValidationError):
    pass


class NoMapMatch(ValidationError):
    pass


class InvalidTrip(ValidationError):
    pass


# scenario / params
class UndeclaredVariable(ValidationError):
    def __init__(self, variable: str):
        self.variable = variable
        super().__init__(f"variable {variable!r} is not declared")


class EmptyDataset(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class OutsideGrid(ValidationError):
    pass


# rates
class NonPositiveWeight(ValidationError):
    pass


class ZeroDenominator(ValidationError):
    pass


# testgen
class UnboundParameter(ValidationError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"parameter {name!r} has no distribution or range")


class NoEgoActor(ValidationError):
    pass


class IncompatibleStrategy(ValidationError):
    pass


class UnsupportedTopology(ValidationError):
    pass


# synth
class InvalidSpec(ValidationError):
    pass


class IllegalRoute(ValidationError):
    pass


# config
class ConfigError(ValidationError):
    pass
