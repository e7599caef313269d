"""Exception types shared across the package."""


class TwinbeamError(Exception):
    """Base class for all package errors."""


class InvalidParameter(TwinbeamError):
    """A parameter value violates its documented domain."""


# ---- stack I/O and raster ops ----

class InvalidDimensions(TwinbeamError):
    """Stack dimensions are zero, inconsistent or exceed the header fields."""


class BadMagic(TwinbeamError):
    """Byte source does not start with the TBIM magic."""


class UnsupportedVersion(TwinbeamError):
    """TBIM header carries a version this reader does not understand."""


class UnknownDtype(TwinbeamError):
    """TBIM header carries an unknown dtype code."""


class TruncatedPayload(TwinbeamError):
    """Payload length does not match the header (short read or trailing bytes)."""


class RegionOutOfBounds(TwinbeamError):
    """Analysis region does not lie fully inside the frame."""


class InvalidBin(TwinbeamError):
    """Super-pixel bin size must be a positive integer."""


# ---- correlation / registration ----

class DegenerateInput(TwinbeamError):
    """Input has no variance (or no counts) where variance is required."""


class ZeroVariance(TwinbeamError):
    """A Pearson normalization hit a constant patch."""


# ---- fitting ----

class SingularNormalMatrix(TwinbeamError):
    """Normal matrix of the least-squares problem is numerically singular."""


class NonConvergedFit(TwinbeamError):
    """A downstream consumer required a converged fit."""


# ---- spectra ----

class NotPositiveSemidefinite(TwinbeamError):
    """Cross-spectral matrix fails S_p >= 0, S_c >= 0, S_p*S_c >= S_pc^2."""


class InsufficientGridCoverage(TwinbeamError):
    """Frequency grid misses too much of the filter mass."""


# ---- pipeline / CLI ----

class PipelineStageError(TwinbeamError):
    """Error surfaced from a named pipeline stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
