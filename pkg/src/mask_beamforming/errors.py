"""
Exceptions raised by the mask-beamforming package.

Every concrete error also derives from the builtin it specializes, so
callers may catch either the package type or e.g. ``ValueError``.
"""

from __future__ import annotations


class MaskBeamformingError(Exception):
    """Base class for all package errors."""


class AudioFormatError(MaskBeamformingError, ValueError):
    """Unreadable, unsupported, empty or out-of-range audio."""


class ShapeMismatchError(MaskBeamformingError, ValueError):
    """Tensor shapes that must agree do not."""


class StftConfigError(MaskBeamformingError, ValueError):
    """Window/hop/fft settings that cannot reconstruct a signal."""


class NotPositiveDefiniteError(MaskBeamformingError, ValueError):
    """A matrix expected to be Hermitian positive definite is not."""


class SingularMatrixError(MaskBeamformingError, ValueError):
    """Inversion requested for a matrix singular to machine precision."""


class DegenerateTargetError(MaskBeamformingError, ValueError):
    """The MVDR normalization trace vanished."""


class SilentReferenceError(MaskBeamformingError, ValueError):
    """A reference signal carries no energy."""


class IncompatibleMethodError(MaskBeamformingError, ValueError):
    """A mask method cannot drive the requested beamformer."""


class TrainingDivergedError(MaskBeamformingError, RuntimeError):
    """
    Training produced a non-finite loss.

    :ivar step: Step index at which the loss stopped being finite.
    :ivar last_finite: Last finite loss value, if any.
    """

    def __init__(self, step: int, last_finite: float | None) -> None:
        self.step = step
        self.last_finite = last_finite
        super().__init__(
            f"loss became non-finite at step {step} "
            f"(last finite value: {last_finite})"
        )


class ConfigError(MaskBeamformingError, ValueError):
    """
    Invalid experiment configuration.

    :ivar source: Name of the configuration file (or ``"<dict>"``).
    :ivar line: 1-based line of the offending key, when known.
    """

    def __init__(
        self, message: str, source: str = "<dict>", line: int | None = None
    ) -> None:
        self.message = message
        self.source = source
        self.line = line
        super().__init__(str(self))

    def __str__(self) -> str:
        where = self.source
        if self.line is not None:
            where = f"{where}:{self.line}"
        return f"{where}: {self.message}"


class NonFiniteGradientError(MaskBeamformingError, ArithmeticError):
    """A supplied or numerical gradient is NaN or Inf."""


class NoRunsFoundError(MaskBeamformingError, FileNotFoundError):
    """A report was requested for a directory without metric tables."""
