"""Optimizers, the per-instance direct fitting driver, and run diagnostics.

``run_direct_fit`` drives the per-instance toy studies: starting from
all-ones weights (logit 4) and zero displacements, it optimizes a single
instance's fit variables under either the eigendecomposition-free loss or
the explicit-ED baseline, recording per-iteration loss terms, gradient
norms and (for the baseline) eigenvector-switch diagnostics.  Runs are
deterministic: no randomness is drawn anywhere in this module.
"""

import csv as _csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from . import losses as L
from .edgrad import EdGradConfig, eig_l2_grad, eig_l2_loss
from .errors import AbortNonFinite, EigfreeError, InvalidInput
from .geometry import (
    EllipseParams,
    EssentialMat,
    PlaneModel,
    build_ellipse_matrix,
    build_essential_matrix,
    build_plane_matrix,
    build_pnp_matrix,
    denormalize_pose,
    ellipse_builder,
    hartley_normalize,
    normalize_pnp_points,
    pnp_builder,
    pnp_target_vector,
    pose_from_dlt,
    refine_pose_procrustes,
    solve_dlt,
    transform_gt_essential,
)

#: logit giving weight exactly 1.0 in float64; used when weights are frozen.
FROZEN_LOGIT = 40.0


# --- optimizers --------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(n, lr) -> AdamState:
    return AdamState(m=np.zeros(n), v=np.zeros(n), t=0, lr=lr)


def adam_step(state: AdamState, params, grad):
    """One bias-corrected Adam update; returns new (state, params)."""
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise AbortNonFinite("non-finite gradient in adam_step")
    if grad.shape != state.m.shape or grad.shape != np.shape(params):
        raise InvalidInput("adam_step shape mismatch")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, t=t), new_params


def gd_step(params, grad, lr):
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise AbortNonFinite("non-finite gradient in gd_step")
    return np.asarray(params, dtype=np.float64) - lr * grad


# --- run log -----------------------------------------------------------------

@dataclass
class RunRecord:
    iter: int
    loss_total: float
    eig_term: float
    aux_term: float
    disp_term: float
    grad_norm: float
    switch_index: int | None = None
    max_inv_gap: float | None = None
    weights: np.ndarray | None = None


@dataclass
class RunLog:
    records: list = field(default_factory=list)
    aborted: bool = False
    abort_reason: str | None = None

    def append(self, rec: RunRecord):
        if self.records and rec.iter <= self.records[-1].iter:
            raise InvalidInput("RunLog iterations must be strictly increasing")
        self.records.append(rec)

    def grad_norms(self) -> np.ndarray:
        return np.array([r.grad_norm for r in self.records])

    def to_csv(self, fp) -> None:
        """Iteration table in the external schema (no snapshots)."""
        own = isinstance(fp, (str, bytes))
        fh = open(fp, "w", newline="") if own else fp
        try:
            writer = _csv.writer(fh)
            writer.writerow(["iter", "loss_total", "eig", "aux", "disp", "grad_norm"])
            for r in self.records:
                writer.writerow(
                    [r.iter, repr(float(r.loss_total)), repr(float(r.eig_term)),
                     repr(float(r.aux_term)), repr(float(r.disp_term)),
                     repr(float(r.grad_norm))]
                )
        finally:
            if own:
                fh.close()

    def to_text(self) -> str:
        """Lossless line format: every field of every record."""
        out = io.StringIO()
        out.write(f"# runlog v1 aborted={int(self.aborted)}\n")
        if self.abort_reason is not None:
            out.write(f"# reason={self.abort_reason}\n")
        for r in self.records:
            parts = [str(r.iter), repr(float(r.loss_total)), repr(float(r.eig_term)),
                     repr(float(r.aux_term)), repr(float(r.disp_term)),
                     repr(float(r.grad_norm)),
                     "-" if r.switch_index is None else str(r.switch_index),
                     "-" if r.max_inv_gap is None else repr(float(r.max_inv_gap))]
            if r.weights is not None:
                parts.append(",".join(repr(float(w)) for w in r.weights))
            out.write(" ".join(parts) + "\n")
        return out.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "RunLog":
        log = cls()
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "aborted=" in line:
                    log.aborted = bool(int(line.split("aborted=")[1].split()[0]))
                if "reason=" in line:
                    log.abort_reason = line.split("reason=", 1)[1]
                continue
            parts = line.split(" ")
            weights = None
            if len(parts) == 9:
                weights = np.array([float(v) for v in parts[8].split(",")])
            log.records.append(
                RunRecord(
                    iter=int(parts[0]), loss_total=float(parts[1]),
                    eig_term=float(parts[2]), aux_term=float(parts[3]),
                    disp_term=float(parts[4]), grad_norm=float(parts[5]),
                    switch_index=None if parts[6] == "-" else int(parts[6]),
                    max_inv_gap=None if parts[7] == "-" else float(parts[7]),
                    weights=weights,
                )
            )
        return log


@dataclass(frozen=True)
class JumpInfo:
    max_ratio: float
    iter: int


def detect_gradient_jump(log: RunLog) -> JumpInfo:
    """Largest consecutive-iteration gradient-norm ratio and where it happened."""
    if len(log.records) < 2:
        raise InvalidInput("detect_gradient_jump needs at least two records")
    best_ratio = 1.0
    best_iter = log.records[1].iter
    prev = log.records[0].grad_norm
    for rec in log.records[1:]:
        cur = rec.grad_norm
        lo, hi = (cur, prev) if cur < prev else (prev, cur)
        if hi == 0.0:
            ratio = 1.0
        elif lo == 0.0:
            ratio = np.inf
        else:
            ratio = hi / lo
        if ratio > best_ratio:
            best_ratio = ratio
            best_iter = rec.iter
        prev = cur
    return JumpInfo(max_ratio=float(best_ratio), iter=int(best_iter))


def switch_iters(log: RunLog) -> list:
    """Iterations at which the best-matching eigenvector index changed."""
    out = []
    prev = None
    for rec in log.records:
        if rec.switch_index is None:
            continue
        if prev is not None and rec.switch_index != prev:
            out.append(rec.iter)
        prev = rec.switch_index
    return out


# --- problem setup -------------------------------------------------------------

LOSS_KINDS = ("edfree", "edgrad")
MODES = ("weights", "displacements", "joint")


@dataclass
class FitProblem:
    """Prepared per-instance optimization problem.

    Holds the static data matrix (or raw points for the plane task, whose
    matrix depends on the weights), the transformed loss target, and
    whatever is needed to map a fitted state back to a task model.
    """

    instance: object
    loss_kind: str
    mode: str
    params: L.LossParams
    target: L.LossTarget
    x: np.ndarray | None = None
    points: np.ndarray | None = None
    builder: object | None = None
    pnp_norm: tuple | None = None
    stereo_t: tuple | None = None
    edgrad_cfg: EdGradConfig = field(default_factory=EdGradConfig)
    through_mean: bool = True

    @property
    def optimizes_weights(self) -> bool:
        return self.mode in ("weights", "joint")

    @property
    def optimizes_disp(self) -> bool:
        return self.mode in ("displacements", "joint")

    def initial_state(self) -> L.FitState:
        n = self.instance.n
        k = self.builder.noisy_dim if (self.optimizes_disp and self.builder) else 0
        disp = np.zeros((n, k)) if k else None
        if self.loss_kind == "edgrad" and self.edgrad_cfg.weight_param == "raw":
            # raw parameterization starts at weights exactly one
            return L.FitState(np.ones(n), disp, param="raw")
        logit = L.INIT_LOGIT if self.optimizes_weights else FROZEN_LOGIT
        return L.FitState(np.full(n, logit), disp)

    @property
    def rows_per_measurement(self) -> int:
        return self.builder.rows_per_measurement if self.builder else 1

    def loss_and_grad(self, state):
        rpm = self.rows_per_measurement
        if self.loss_kind == "edgrad":
            x = self._current_matrix(state)
            val = eig_l2_loss(x, state, self.target, rpm)
            d_logits, diag = eig_l2_grad(x, state, self.target, self.edgrad_cfg, rpm)
            loss = L.LossValue(eig_term=val, aux_term=0.0)
            return loss, self._flatten(state, d_logits, None), diag
        if self.mode == "weights":
            if self.points is not None:
                loss = L.plane_weighted_loss(self.points, state, self.target,
                                             self.params, self.through_mean)
                d_logits = L.plane_weighted_grad(self.points, state, self.target,
                                                 self.params, self.through_mean)
            else:
                loss = L.loss_weighted_rows(self.x, state, self.target, self.params, rpm)
                d_logits = L.grad_weighted_rows(self.x, state, self.target,
                                                self.params, rpm)
            return loss, self._flatten(state, d_logits, None), None
        loss = L.loss_denoise(self.instance, state, self.builder, self.target, self.params)
        d_logits, d_disp = L.grad_denoise(self.instance, state, self.builder,
                                          self.target, self.params)
        return loss, self._flatten(state, d_logits, d_disp), None

    def _current_matrix(self, state):
        if self.points is not None:
            x, _ = build_plane_matrix(self.points, state.weights)
            return x
        return self.x

    def _flatten(self, state, d_logits, d_disp):
        parts = []
        if self.optimizes_weights:
            parts.append(np.asarray(d_logits, dtype=np.float64))
        if self.optimizes_disp:
            parts.append(np.asarray(d_disp, dtype=np.float64).ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def pack(self, state):
        parts = []
        if self.optimizes_weights:
            parts.append(state.logits)
        if self.optimizes_disp:
            parts.append(state.displacements.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def unpack(self, state, flat):
        n = self.instance.n
        pos = 0
        logits = state.logits
        disp = state.displacements
        if self.optimizes_weights:
            logits = flat[pos:pos + n].copy()
            pos += n
        if self.optimizes_disp:
            k = self.builder.noisy_dim
            disp = flat[pos:pos + n * k].reshape(n, k).copy()
        return L.FitState(logits, disp, state.param)

    def model_from_state(self, state):
        """Task model implied by the fitted weights (and displacements)."""
        inst = self.instance
        w = state.weights
        if inst.variant == "plane":
            x, mu = build_plane_matrix(self.points, w)
            normal = solve_dlt(x, w)
            return PlaneModel(normal, mu)
        if inst.variant == "ellipse":
            meas = self._fitted_measurements(state)
            return EllipseParams(solve_dlt(build_ellipse_matrix(meas), w))
        if inst.variant == "pnp":
            meas = self._fitted_measurements(state)
            vec = solve_dlt(build_pnp_matrix(meas), np.repeat(w, 2))
            witness = meas[int(np.argmax(w))]
            center, scale = self.pnp_norm
            pose = denormalize_pose(pose_from_dlt(vec, witness), center, scale)
            # Procrustes refinement on the original-frame correspondences,
            # possibly with the fitted 2D corrections applied.
            corrs = inst.measurements.copy()
            if state.displacements is not None:
                corrs[:, 3:] += state.displacements
            return refine_pose_procrustes(corrs, w, pose)
        t1, t2 = self.stereo_t
        evec = solve_dlt(self.x, w)
        e_prime = evec.reshape(3, 3)
        return EssentialMat(t2.t.T @ e_prime @ t1.t)

    def _fitted_measurements(self, state):
        meas = self.builder.measurements(self.instance) if self.builder else None
        if meas is None:
            raise InvalidInput("no builder available for this problem")
        if state.displacements is not None:
            return self.builder.apply_displacements(meas, state.displacements)
        return meas


def make_problem(instance, loss_kind, mode, params, edgrad_cfg=None,
                 through_mean=True) -> FitProblem:
    if loss_kind not in LOSS_KINDS:
        raise InvalidInput(f"loss_kind must be one of {LOSS_KINDS}")
    if mode not in MODES:
        raise InvalidInput(f"mode must be one of {MODES}")
    if loss_kind == "edgrad" and mode != "weights":
        raise InvalidInput("the ED-gradient baseline only optimizes weights")
    if mode in ("displacements", "joint") and instance.variant not in ("ellipse", "pnp"):
        raise InvalidInput("displacement modes require an ellipse or pnp instance")
    kw = dict(
        instance=instance, loss_kind=loss_kind, mode=mode, params=params,
        edgrad_cfg=edgrad_cfg or EdGradConfig(), through_mean=through_mean,
    )
    if instance.variant == "plane":
        target = L.LossTarget(instance.ground_truth.normal)
        return FitProblem(points=instance.measurements, target=target, **kw)
    if instance.variant == "ellipse":
        target = L.LossTarget(instance.ground_truth.coeffs)
        return FitProblem(
            x=build_ellipse_matrix(instance.measurements),
            builder=ellipse_builder(), target=target, **kw,
        )
    if instance.variant == "pnp":
        pts_n, center, scale = normalize_pnp_points(instance.measurements[:, :3])
        builder = pnp_builder(center, scale)
        meas_n = builder.measurements(instance)
        target = L.LossTarget(pnp_target_vector(instance.ground_truth, center, scale))
        return FitProblem(
            x=build_pnp_matrix(meas_n), builder=builder,
            pnp_norm=(center, scale), target=target, **kw,
        )
    n1, t1 = hartley_normalize(instance.measurements[:, :2])
    n2, t2 = hartley_normalize(instance.measurements[:, 2:])
    target = L.LossTarget(transform_gt_essential(instance.ground_truth, t1, t2))
    return FitProblem(
        x=build_essential_matrix(np.column_stack([n1, n2])),
        stereo_t=(t1, t2), target=target, **kw,
    )


def run_direct_fit(instance, loss_kind, mode, params, opt="adam", lr=1e-4,
                   iters=1000, edgrad_cfg=None, snapshot_stride=0,
                   through_mean=True):
    """Optimize one instance's fit variables; returns (FitState, RunLog).

    The state at abort time is returned together with the abort reason in
    the log, so instability of the ED baseline stays observable.
    """
    problem = make_problem(instance, loss_kind, mode, params, edgrad_cfg, through_mean)
    state = problem.initial_state()
    log = RunLog()
    if iters == 0:
        return state, log
    flat = problem.pack(state)
    adam = adam_init(flat.shape[0], lr) if opt == "adam" else None
    if opt not in ("adam", "gd"):
        raise InvalidInput("opt must be 'adam' or 'gd'")
    for t in range(iters):
        try:
            loss, grad, diag = problem.loss_and_grad(state)
            rec = RunRecord(
                iter=t, loss_total=loss.total, eig_term=loss.eig_term,
                aux_term=loss.aux_term, disp_term=loss.disp_term,
                grad_norm=float(np.sqrt(grad @ grad)),
            )
            if diag is not None:
                rec.switch_index = diag.best_index
                rec.max_inv_gap = diag.max_inv_gap
            if snapshot_stride and t % snapshot_stride == 0:
                rec.weights = state.weights.copy()
            log.append(rec)
            if opt == "adam":
                adam, flat = adam_step(adam, flat, grad)
            else:
                flat = gd_step(flat, grad, lr)
            state = problem.unpack(state, flat)
        except EigfreeError as exc:
            log.aborted = True
            log.abort_reason = f"iter {t}: {type(exc).__name__}: {exc}"
            break
    return state, log
