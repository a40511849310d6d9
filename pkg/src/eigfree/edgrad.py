"""Baseline losses that differentiate through an explicit eigendecomposition.

The loss is ``min over signs ||e_min(w) -+ e_gt||^2`` where ``e_min`` is the
eigenvector of ``X^T W X`` with the smallest eigenvalue.  Its gradient
follows first-order perturbation of a simple eigenvalue, restricted to the
smallest column:

    d e0 = sum_{j>0}  (u_j^T dM e0) / (lambda_0 - lambda_j) * u_j

The ``1/(lambda_0 - lambda_j)`` factors are the instability under study:
near-crossing eigenvalues blow the gradient up, and which eigenvector is
"smallest" can switch between iterations.  SVD- and symmetric-ED-based
formulations of this baseline behave identically for ``X^T W X`` (the
singular vectors of the PSD matrix are its eigenvectors), so this single
implementation serves both labels.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateEigengap, InvalidInput
from .linalg import sym_eig

EPS = float(np.finfo(np.float64).eps)


@dataclass(frozen=True)
class EdGradConfig:
    """``denom_guard`` clamps |lambda_0 - lambda_j| away from zero (0 = off).

    ``weight_param`` selects how the baseline parameterizes weights:
    "sigmoid" shares the ED-free convention, "raw" optimizes the weights
    directly (unbounded), which is what lets the eigenvector-switching
    instability express itself the way the original experiments show.
    """

    denom_guard: float = 0.0
    record_switches: bool = True
    weight_param: str = "sigmoid"

    def __post_init__(self):
        if self.denom_guard < 0.0:
            raise InvalidInput("denom_guard must be >= 0")
        if self.weight_param not in ("sigmoid", "raw"):
            raise InvalidInput(f"unknown weight_param {self.weight_param!r}")


@dataclass(frozen=True)
class EdGradDiagnostics:
    """Per-evaluation instability indicators."""

    max_inv_gap: float       # largest |1/(lambda_0 - lambda_j)| used
    min_gap: float
    best_index: int          # eigenvector index closest to e_gt
    guard_hit: bool
    eigenvalues: np.ndarray


def _row_weights(x, state, rows_per_measurement):
    if x.shape[0] != state.n * rows_per_measurement:
        raise InvalidInput(
            f"{x.shape[0]} rows but {state.n} weights x {rows_per_measurement} rows each"
        )
    return np.repeat(state.weights, rows_per_measurement)


def eig_l2_loss(x, state, target, rows_per_measurement=1) -> float:
    """``min(||e0 - e_gt||^2, ||e0 + e_gt||^2)`` with e0 from sym_eig."""
    x = np.asarray(x, dtype=np.float64)
    w_rows = _row_weights(x, state, rows_per_measurement)
    m = x.T @ (w_rows[:, None] * x)
    res = sym_eig(m)
    e0 = res.vectors[:, 0]
    d_plus = e0 - target.e_gt
    d_minus = e0 + target.e_gt
    return float(min(d_plus @ d_plus, d_minus @ d_minus))


def eig_l2_grad(x, state, target, cfg: EdGradConfig = EdGradConfig(),
                rows_per_measurement=1):
    """Analytic logit gradient of :func:`eig_l2_loss` plus diagnostics.

    Raises :class:`DegenerateEigengap` when some gap |lambda_0 - lambda_j|
    falls below machine epsilon (scaled by ||M||_F) and no guard is set;
    with a positive guard the gap is clamped and flagged instead.
    """
    x = np.asarray(x, dtype=np.float64)
    w_rows = _row_weights(x, state, rows_per_measurement)
    m = x.T @ (w_rows[:, None] * x)
    res = sym_eig(m)
    lam = res.values
    u = res.vectors
    e0 = u[:, 0]
    e = target.e_gt
    sign = 1.0 if float(e0 @ e) >= 0.0 else -1.0
    g = 2.0 * (e0 - sign * e)

    gaps = lam[0] - lam[1:]                    # negative: lambda_0 is smallest
    floor = EPS * max(1.0, float(np.sqrt((m * m).sum())))
    guard_hit = False
    abs_gaps = np.abs(gaps)
    min_gap = float(abs_gaps.min()) if abs_gaps.size else np.inf
    if abs_gaps.size and min_gap < max(floor, cfg.denom_guard):
        if cfg.denom_guard <= 0.0:
            raise DegenerateEigengap(
                f"eigengap {min_gap:.3e} below machine tolerance {floor:.3e}"
            )
        guard_hit = True
        clamped = np.maximum(abs_gaps, cfg.denom_guard)
        # lambda_0 is the smallest, so ties (gap exactly 0) continue negative
        gaps = np.where(gaps > 0.0, clamped, -clamped)

    coeff = (g @ u[:, 1:]) / gaps              # (d-1,)
    b = np.outer(u[:, 1:] @ coeff, e0)
    s_mat = 0.5 * (b + b.T)
    # dM/dw_i = sum of x_r x_r^T over the measurement's rows.
    d_rows = np.einsum("ij,ij->i", x @ s_mat, x)
    d_w = d_rows.reshape(state.n, rows_per_measurement).sum(axis=1)
    d_logits = d_w * state.weight_chain

    diag = EdGradDiagnostics(
        max_inv_gap=float(np.max(1.0 / np.abs(gaps))) if gaps.size else 0.0,
        min_gap=min_gap,
        best_index=int(np.argmax(np.abs(e @ u))),
        guard_hit=guard_hit,
        eigenvalues=lam,
    )
    return d_logits, diag
