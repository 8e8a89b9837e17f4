# app/core/errors.py
from __future__ import annotations


class CorrelaError(ValueError):
    """Root of every input/domain error raised by the library (CLI exit 2, HTTP 400)."""


class StructureError(CorrelaError):
    """Malformed structure input (shapes, unknown sorts, duplicate labels)."""


class SignatureError(CorrelaError):
    """Two signatures (or a formula and a signature) do not fit together."""


class CorrelationError(CorrelaError):
    """Bad correlation input: dimension mismatch, structure mismatch, bad anchors."""


class FormulaError(CorrelaError):
    """Formula is ill-formed: unknown predicate, sort mismatch, unknown connective."""

    def __init__(self, message: str, position: int | None = None) -> None:
        self.position = position
        if position is not None:
            message = f"{message} (at char {position})"
        super().__init__(message)


class FormulaSyntaxError(FormulaError):
    """S-expression does not tokenize or nest."""


class EvaluationError(CorrelaError):
    """Assignment does not cover the free variables or points are in the wrong sort."""


class SearchTooLarge(CorrelaError):
    """A size guard refused the computation; pass force=True to override."""


class DepthCapError(CorrelaError):
    """Requested rounds exceed the back-and-forth depth cap."""


class BanachError(CorrelaError):
    """Sampled Banach space input is inconsistent (scalars, norms, singular maps)."""
