"""Eigendecomposition-free losses for linear least-square model fitting.

The library covers: the loss family and its analytic gradients (generic,
weighted model fitting, denoising/joint), the explicit-ED-differentiation
baseline it replaces, data-matrix builders and metrics for plane, ellipse,
PnP and essential-matrix fitting, seeded synthetic generators, direct-fit
optimizers with instability diagnostics, a small permutation-equivariant
weight network, classical RANSAC/LMedS/IRLS baselines, and a CLI harness.

Numeric hot kernels run on a compiled extension when available, with a
NumPy fallback (`eigfree.backend_name` tells which one is active).
"""

from ._backend import available_backends, backend_name
from .errors import (
    AbortNonFinite,
    DegenerateConic,
    DegenerateEigengap,
    DegenerateGeometry,
    DegenerateInput,
    DegeneratePose,
    DegenerateScene,
    DegenerateWeights,
    EigfreeError,
    InvalidInput,
    InvalidSpec,
    InvalidState,
    NoConsensus,
)
from .losses import (
    FitState,
    LossParams,
    LossTarget,
    LossValue,
    grad_denoise,
    grad_generic,
    grad_weighted,
    loss_denoise,
    loss_generic,
    loss_weighted,
)

__version__ = "0.1.0"

__all__ = [
    "available_backends",
    "backend_name",
    "AbortNonFinite",
    "DegenerateConic",
    "DegenerateEigengap",
    "DegenerateGeometry",
    "DegenerateInput",
    "DegeneratePose",
    "DegenerateScene",
    "DegenerateWeights",
    "EigfreeError",
    "InvalidInput",
    "InvalidSpec",
    "InvalidState",
    "NoConsensus",
    "FitState",
    "LossParams",
    "LossTarget",
    "LossValue",
    "grad_denoise",
    "grad_generic",
    "grad_weighted",
    "loss_denoise",
    "loss_generic",
    "loss_weighted",
    "__version__",
]
