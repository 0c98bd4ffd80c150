"""
Exception hierarchy for the codec.

Shape and configuration problems subclass ``ValueError``; failures that only
show up while running (coding, parsing, missing artefacts) subclass
``RuntimeError``.  The CLI maps each family to a fixed exit code, see
``src.pipeline.cli``.
"""
from __future__ import annotations


class NeficError(Exception):
    """Root of every error raised by this package."""


# ---------------------------------------------------------------- contracts
class ShapeError(NeficError, ValueError):
    """A tensor or image does not have the geometry an operation requires."""


class ConditioningError(NeficError, ValueError):
    """The generative latent passed as a condition does not match the image."""


class ConfigurationError(NeficError, ValueError):
    """Invalid hyper-parameter, mode name or schedule request."""


class ContractError(NeficError, ValueError):
    """An input violates a structural contract (e.g. missing token segment)."""


# ------------------------------------------------------------------- coding
class CodingError(NeficError, RuntimeError):
    """A symbol could not be range-coded."""

    def __init__(self, message: str, *, index: int | None = None) -> None:
        super().__init__(message)
        self.index = index


class DecodeError(NeficError, RuntimeError):
    """A range-coded stream is truncated or corrupt."""


class ParseError(NeficError, RuntimeError):
    """A ``.nfic`` container could not be parsed."""


class BadMagicError(ParseError):
    pass


class UnsupportedVersionError(ParseError):
    pass


class LengthMismatchError(ParseError):
    pass


# ---------------------------------------------------------------- artefacts
class CheckpointError(NeficError, RuntimeError):
    """A checkpoint is missing, unreadable or of the wrong format version."""


class DependencyError(NeficError, RuntimeError):
    """A training stage was requested before its prerequisite stage ran."""

    def __init__(self, message: str, *, missing_stage: str) -> None:
        super().__init__(message)
        self.missing_stage = missing_stage


class ImageReadError(NeficError, RuntimeError):
    """An input image could not be decoded."""


class EvaluationError(NeficError, RuntimeError):
    """Rate-distortion evaluation preconditions are not met."""


class LambdaIdError(NeficError, ValueError):
    """A lambda_id is outside the ladder or disagrees with the checkpoint."""
