"""Exception taxonomy shared by every module in the package."""


class EigfreeError(Exception):
    """Base class for all package-specific errors."""


class InvalidInput(EigfreeError):
    """Malformed argument: bad shape, non-finite entries, unsupported variant."""


class InvalidState(EigfreeError):
    """Operation needs state (e.g. a forward cache) that is not present."""


class InvalidSpec(EigfreeError):
    """Unknown or inconsistent experiment specification."""


class DegenerateInput(EigfreeError):
    """Input is structurally valid but geometrically degenerate."""


class DegenerateWeights(DegenerateInput):
    """All weights vanish; the weighted mean / system is undefined."""


class DegenerateConic(DegenerateInput):
    """Conic has no finite center (B^2 - AC = 0 within tolerance)."""


class DegeneratePose(DegenerateInput):
    """DLT vector has a singular rotation block."""


class DegenerateGeometry(DegenerateInput):
    """No essential-matrix decomposition candidate has cheirality support."""


class DegenerateScene(DegenerateInput):
    """Synthetic scene generation could not place points in front of the camera."""


class DegenerateEigengap(EigfreeError):
    """Eigendecomposition derivative hit a vanishing eigenvalue gap with no guard."""


class NoConsensus(EigfreeError):
    """No RANSAC/LMedS sample reached the minimum consensus size."""


class AbortNonFinite(EigfreeError):
    """A gradient or parameter became NaN/Inf during optimization."""
