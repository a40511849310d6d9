"""Eigendecomposition-free loss family and its analytic gradients.

Three flavors share the same two ingredients.  The data term measures how
close the ground-truth unit vector ``e`` is to the null space of the
produced matrix, ``e^T A^T A e``; the auxiliary term
``alpha * exp(-beta * tr(Abar^T Abar))`` with ``Abar = A (I - e e^T)``
penalizes the trivial all-zero solution while staying bounded in
``(0, alpha]``.  The weighted flavor specializes ``A = W^(1/2) X`` so the
quadratic form becomes ``X^T W X``; the denoising flavor adds
per-measurement displacements on the noisy coordinates plus a
``gamma * mean ||dx_i||`` penalty, with the trace regularizer evaluated on
the *original* rows.

Because ``Abar e = 0`` identically, the exact gradient of the auxiliary
term with respect to ``A`` is ``-2 alpha beta exp(-beta tr) Abar``; all
gradients here are exact (they match central finite differences) and the
auxiliary gradient never pushes along ``e``.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from ._backend import weighted_terms
from .errors import InvalidInput

#: logit used for "all weights start at one" (sigmoid(4) ~ 0.982).
INIT_LOGIT = 4.0


@dataclass(frozen=True)
class LossParams:
    """Hyperparameters: data/regularizer balance and displacement penalty."""

    alpha: float
    beta: float
    gamma: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0.0:
                raise InvalidInput(f"LossParams.{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class LossTarget:
    """Ground-truth zero-eigenvalue unit vector."""

    e_gt: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.e_gt, dtype=np.float64)
        if e.ndim != 1:
            raise InvalidInput("LossTarget.e_gt must be a vector")
        if not np.all(np.isfinite(e)):
            raise InvalidInput("LossTarget.e_gt has non-finite entries")
        if abs(float(e @ e) - 1.0) > 1e-12:
            raise InvalidInput("LossTarget.e_gt must have unit norm within 1e-12")
        object.__setattr__(self, "e_gt", e)


@dataclass(frozen=True)
class LossValue:
    """Loss split into its three terms; ``total`` is their exact sum."""

    eig_term: float
    aux_term: float
    disp_term: float = 0.0

    @property
    def total(self) -> float:
        return self.eig_term + self.aux_term + self.disp_term


@dataclass
class FitState:
    """Directly optimized variables: weight logits and displacements.

    Weights are ``sigmoid(logits)`` so they stay strictly inside (0, 1).
    ``displacements`` is None for weights-only problems, else an (N, k)
    array of corrections to the designated noisy coordinates.

    ``param="raw"`` drops the sigmoid and treats the parameters as the
    weights themselves (then unbounded).  That mode exists only for the
    explicit-ED baseline, whose characteristic eigenvector-switching
    instability is suppressed by bounded weights; the ED-free losses
    always use the sigmoid parameterization.
    """

    logits: np.ndarray
    displacements: np.ndarray | None = None
    param: str = "sigmoid"

    def __post_init__(self):
        if self.param not in ("sigmoid", "raw"):
            raise InvalidInput(f"unknown weight parameterization {self.param!r}")
        self.logits = np.asarray(self.logits, dtype=np.float64).copy()
        if self.displacements is not None:
            self.displacements = np.asarray(self.displacements, dtype=np.float64).copy()

    @property
    def weights(self) -> np.ndarray:
        if self.param == "raw":
            return self.logits.copy()
        return sigmoid(self.logits)

    @property
    def weight_chain(self) -> np.ndarray:
        """d weights / d parameters, elementwise."""
        if self.param == "raw":
            return np.ones_like(self.logits)
        w = sigmoid(self.logits)
        return w * (1.0 - w)

    @property
    def n(self) -> int:
        return self.logits.shape[0]

    def copy(self) -> "FitState":
        disp = None if self.displacements is None else self.displacements.copy()
        return FitState(self.logits.copy(), disp, self.param)


def initial_state(n, noisy_dim=0) -> FitState:
    disp = np.zeros((n, noisy_dim)) if noisy_dim else None
    return FitState(np.full(n, INIT_LOGIT), disp)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_dims(a, target):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidInput(f"matrix must be 2-D, got shape {a.shape}")
    if a.shape[1] != target.e_gt.shape[0]:
        raise InvalidInput(
            f"matrix has {a.shape[1]} columns but target has dimension {target.e_gt.shape[0]}"
        )
    return a


# --- generic: network outputs the matrix directly ----------------------------

def loss_generic(a, target: LossTarget, params: LossParams) -> LossValue:
    """eig = e^T A^T A e, aux = alpha * exp(-beta tr(Abar^T Abar))."""
    a = _check_dims(a, target)
    eig, tr, _, _ = weighted_terms(a, target.e_gt, np.ones(a.shape[0]))
    aux = params.alpha * np.exp(-params.beta * tr)
    return LossValue(eig_term=eig, aux_term=float(aux))


def grad_generic(a, target: LossTarget, params: LossParams, split=False):
    """dL/dA; with ``split=True`` the (eig, aux) components come back separately.

    dL_eig/dA = 2 A e e^T and dL_aux/dA = -2 alpha beta exp(-beta tr) Abar.
    """
    a = _check_dims(a, target)
    e = target.e_gt
    r = a @ e
    abar = a - np.outer(r, e)
    tr = float((abar * abar).sum())
    g_eig = 2.0 * np.outer(r, e)
    g_aux = (-2.0 * params.alpha * params.beta * np.exp(-params.beta * tr)) * abar
    if split:
        return g_eig, g_aux
    return g_eig + g_aux


# --- weighted model fitting ---------------------------------------------------

def loss_weighted(x, state: FitState, target: LossTarget, params: LossParams) -> LossValue:
    """Weighted loss with a fixed data matrix: A^T A = X^T W X."""
    return loss_weighted_rows(x, state, target, params, 1)


def grad_weighted(x, state: FitState, target: LossTarget, params: LossParams) -> np.ndarray:
    """Gradient with respect to the logits.

    dL/dw_i = (x_i . e)^2 - alpha beta exp(-beta tr) ||xbar_i||^2, then the
    sigmoid chain w(1-w).
    """
    return grad_weighted_rows(x, state, target, params, 1)


def loss_weighted_rows(x, state, target, params, rows_per_measurement) -> LossValue:
    """Weighted loss when each measurement contributes a block of rows.

    All rows of measurement i share weight w_i (the PnP case has two).
    """
    x, rpm = _check_block(x, state, target, rows_per_measurement)
    if x.shape[0] < x.shape[1]:
        warnings.warn(
            f"underdetermined system: {x.shape[0]} rows for dimension {x.shape[1]}",
            stacklevel=2,
        )
    w_rows = np.repeat(state.weights, rpm)
    eig, tr, _, _ = weighted_terms(x, target.e_gt, w_rows)
    aux = params.alpha * np.exp(-params.beta * tr)
    return LossValue(eig_term=eig, aux_term=float(aux))


def grad_weighted_rows(x, state, target, params, rows_per_measurement) -> np.ndarray:
    x, rpm = _check_block(x, state, target, rows_per_measurement)
    w_rows = np.repeat(state.weights, rpm)
    _, tr, r, row_sq = weighted_terms(x, target.e_gt, w_rows)
    d_eig = (r * r).reshape(state.n, rpm).sum(axis=1)
    d_tr = row_sq.reshape(state.n, rpm).sum(axis=1)
    d_w = d_eig - params.alpha * params.beta * np.exp(-params.beta * tr) * d_tr
    return d_w * state.weight_chain


def _check_block(x, state, target, rpm):
    x = _check_dims(x, target)
    if x.shape[0] != state.n * rpm:
        raise InvalidInput(
            f"{x.shape[0]} rows but {state.n} weights x {rpm} rows each"
        )
    return x, rpm


# --- plane fitting: the data matrix depends on the weights --------------------

def plane_weighted_loss(points, state, target, params, through_mean=True):
    """Weighted loss for mean-subtracted 3D points.

    The weighted mean is recomputed from the current weights; rows of the
    data matrix are ``p_i - mu(w)``.
    """
    x, _ = _plane_matrix(points, state.weights)
    return loss_weighted(x, state, target, params)


def plane_weighted_grad(points, state, target, params, through_mean=True):
    """Logit gradient for the plane case.

    With ``through_mean=True`` the chain through mu(w) is evaluated
    explicitly; it vanishes analytically (sum_i w_i (p_i - mu) = 0), so
    both modes agree to rounding error.
    """
    points = np.asarray(points, dtype=np.float64)
    w = state.weights
    x, _ = _plane_matrix(points, w)
    e = target.e_gt
    sw = float(w.sum())
    _, tr, r, row_sq = weighted_terms(x, e, w)
    ew = np.exp(-params.beta * tr)
    d_eig = r * r
    d_tr = row_sq.copy()
    if through_mean:
        # d mu / d w_i = (p_i - mu)/sum(w); both sums below are ~0 exactly.
        swr = float(w @ r)
        d_eig = d_eig - 2.0 * swr * r / sw
        m_vec = w @ x                      # sum_j w_j xbar_j
        m_perp = m_vec - (m_vec @ e) * e
        d_tr = d_tr - 2.0 * (x @ m_perp - r * (e @ m_perp)) / sw
    d_w = d_eig - params.alpha * params.beta * ew * d_tr
    return d_w * state.weight_chain


def _plane_matrix(points, w):
    from .geometry import build_plane_matrix

    return build_plane_matrix(points, w)


# --- denoising / joint --------------------------------------------------------

def loss_denoise(inst, state: FitState, builder, target: LossTarget,
                 params: LossParams) -> LossValue:
    """Joint weighted + displacement loss.

    eig uses rows built from the displaced measurements, the trace
    regularizer uses rows built from the originals, and the displacement
    penalty is ``gamma * mean_i ||dx_i||``.
    """
    meas = builder.measurements(inst)
    disp = state.displacements
    if disp is None:
        disp = np.zeros((meas.shape[0], builder.noisy_dim))
    if meas.shape[0] != state.n or disp.shape != (meas.shape[0], builder.noisy_dim):
        raise InvalidInput("instance, state and builder shapes disagree")
    if not np.all(np.isfinite(disp)):
        raise InvalidInput("displacements must be finite")
    w_rows = np.repeat(state.weights, builder.rows_per_measurement)
    x_tilde = builder.build_matrix(builder.apply_displacements(meas, disp))
    eig, _, _, _ = weighted_terms(x_tilde, target.e_gt, w_rows)
    x_orig = builder.build_matrix(meas)
    _, tr, _, _ = weighted_terms(x_orig, target.e_gt, w_rows)
    aux = params.alpha * np.exp(-params.beta * tr)
    disp_norms = np.sqrt(np.einsum("ik,ik->i", disp, disp))
    disp_term = params.gamma * float(disp_norms.mean())
    return LossValue(eig_term=eig, aux_term=float(aux), disp_term=disp_term)


def grad_denoise(inst, state: FitState, builder, target: LossTarget,
                 params: LossParams):
    """Gradients (d logits, d displacements) of :func:`loss_denoise`.

    The displacement gradient chains through the builder Jacobian; the
    norm penalty uses subgradient 0 at dx_i = 0.
    """
    meas = builder.measurements(inst)
    disp = state.displacements
    if disp is None:
        disp = np.zeros((meas.shape[0], builder.noisy_dim))
    if meas.shape[0] != state.n or disp.shape != (meas.shape[0], builder.noisy_dim):
        raise InvalidInput("instance, state and builder shapes disagree")
    e = target.e_gt
    w = state.weights
    rpm = builder.rows_per_measurement
    n = meas.shape[0]
    w_rows = np.repeat(w, rpm)

    displaced = builder.apply_displacements(meas, disp)
    x_tilde = builder.build_matrix(displaced)
    _, _, r_tilde, _ = weighted_terms(x_tilde, e, w_rows)
    x_orig = builder.build_matrix(meas)
    _, tr, _, row_sq = weighted_terms(x_orig, e, w_rows)
    ew = np.exp(-params.beta * tr)

    r_blocks = r_tilde.reshape(n, rpm)
    d_eig_w = (r_blocks * r_blocks).sum(axis=1)
    d_tr_w = row_sq.reshape(n, rpm).sum(axis=1)
    d_w = d_eig_w - params.alpha * params.beta * ew * d_tr_w
    d_logits = d_w * state.weight_chain

    # d eig / d disp_{i,c} = w_i * sum_rows 2 r_row (J[i,row,:,c] . e)
    jac = builder.jacobians(displaced)          # (n, rpm, d, k)
    je = np.einsum("nrdk,d->nrk", jac, e)       # (n, rpm, k)
    d_disp = 2.0 * w[:, None] * np.einsum("nr,nrk->nk", r_blocks, je)
    norms = np.sqrt(np.einsum("ik,ik->i", disp, disp))
    nz = norms > 0.0
    d_disp[nz] += (params.gamma / n) * disp[nz] / norms[nz, None]
    return d_logits, d_disp
