"""Exception hierarchy shared by the library, the CLI and the HTTP service."""

from __future__ import annotations

from typing import Any


class GeogmmError(Exception):
    """Base class for every error raised by geogmm."""


class InvalidArgumentError(GeogmmError, ValueError):
    """An argument violates a documented precondition."""


class NumericalBreakdownError(GeogmmError, ArithmeticError):
    """A computation produced a non-finite value or left the SPD cone."""

    def __init__(self, message: str, sample_index: int | None = None) -> None:
        if sample_index is not None:
            message = f"{message} (sample {sample_index})"
        super().__init__(message)
        self.sample_index = sample_index


class DegenerateComponentError(GeogmmError):
    """A mixture component lost (almost) all of its responsibility mass."""

    def __init__(self, component: int, mass: float) -> None:
        super().__init__(
            f"Component {component} collapsed: effective sample count {mass:.3e}"
        )
        self.component = component
        self.mass = mass


class GenerationError(GeogmmError):
    """Synthetic mixture generation could not satisfy its constraints."""


class DataFormatError(GeogmmError, ValueError):
    """A data file could not be parsed."""

    def __init__(
        self, message: str, row: int | None = None, column: int | None = None
    ) -> None:
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column {column}")
        if location:
            message = f"{message} at {', '.join(location)}"
        super().__init__(message)
        self.row = row
        self.column = column


class LineSearchError(GeogmmError):
    """The Wolfe line-search exhausted its budget or its bracket collapsed."""

    def __init__(self, message: str, diagnostics: dict[str, Any]) -> None:
        super().__init__(message)
        self.diagnostics = diagnostics
