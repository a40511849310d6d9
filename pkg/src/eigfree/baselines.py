"""Classical robust estimators: RANSAC, LMedS, and Cauchy-IRLS ellipse fit.

All of them ride on the same minimal DLT solvers as the rest of the
package and are deterministic functions of (instance, config, seed).
Residuals are task-specific: point-plane distance, gradient-normalized
algebraic conic residual, reprojection error in normalized image units,
and symmetric epipolar distance.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, EigfreeError, InvalidInput, NoConsensus
from .geometry import (
    MIN_SAMPLE,
    EllipseParams,
    EssentialMat,
    PlaneModel,
    build_ellipse_matrix,
    build_plane_matrix,
    build_pnp_matrix,
    build_essential_matrix,
    denormalize_pose,
    ellipse_residuals,
    epipolar_residuals,
    normalize_pnp_points,
    plane_residuals,
    pose_from_dlt,
    reprojection_residuals,
    solve_dlt,
)
from .synth import stream

DEFAULT_THRESHOLD = {"plane": 0.01, "ellipse": 0.02, "pnp": 0.01, "stereo": 0.01}


@dataclass(frozen=True)
class RansacConfig:
    threshold: float
    max_iters: int = 1000
    seed: int = 0
    min_sample: int | None = None   # None = task minimum

    def __post_init__(self):
        if self.threshold <= 0.0:
            raise InvalidInput("RANSAC threshold must be > 0")
        if self.max_iters < 1:
            raise InvalidInput("RANSAC max_iters must be >= 1")


def default_config(variant, seed=0, max_iters=1000) -> RansacConfig:
    return RansacConfig(threshold=DEFAULT_THRESHOLD[variant], max_iters=max_iters, seed=seed)


class _TaskAdapter:
    """Shared sampling/solve/residual plumbing for one instance."""

    def __init__(self, inst):
        self.inst = inst
        self.variant = inst.variant
        self.min_sample = MIN_SAMPLE[inst.variant]
        if self.variant == "pnp":
            pts_n, self.center, self.scale = normalize_pnp_points(inst.measurements[:, :3])
            self.work = np.column_stack([pts_n, inst.measurements[:, 3:]])
        else:
            self.work = inst.measurements

    def solve(self, idx):
        """Minimal (or consensus) DLT fit over the selected measurements."""
        sel = self.work[idx]
        if self.variant == "plane":
            x, mu = build_plane_matrix(sel, np.ones(len(sel)))
            return solve_dlt(x), mu
        if self.variant == "ellipse":
            return solve_dlt(build_ellipse_matrix(sel)), None
        if self.variant == "pnp":
            return solve_dlt(build_pnp_matrix(sel)), None
        return solve_dlt(build_essential_matrix(sel)), None

    def residuals(self, fit):
        vec, aux = fit
        if self.variant == "plane":
            return plane_residuals(self.work, PlaneModel(vec, aux))
        if self.variant == "ellipse":
            return ellipse_residuals(self.work, vec)
        if self.variant == "pnp":
            return reprojection_residuals(self.work, vec)
        return epipolar_residuals(self.work, vec)

    def to_model(self, fit):
        vec, aux = fit
        if self.variant == "plane":
            return PlaneModel(vec, aux)
        if self.variant == "ellipse":
            return EllipseParams(vec)
        if self.variant == "pnp":
            witness = self.work[0]
            pose_n = pose_from_dlt(vec, witness)
            return denormalize_pose(pose_n, self.center, self.scale)
        return EssentialMat(vec.reshape(3, 3))


def ransac_fit(instance, cfg: RansacConfig):
    """Plain RANSAC: best consensus wins (earliest sample on ties), then a
    uniform-weight DLT refit on the consensus set."""
    task = _TaskAdapter(instance)
    n = instance.n
    m = cfg.min_sample or task.min_sample
    if n < m:
        raise InvalidInput(f"need at least {m} measurements, got {n}")
    rng = stream(cfg.seed, 101)
    best_mask = None
    best_count = -1
    for _ in range(cfg.max_iters):
        idx = rng.choice(n, size=m, replace=False)
        try:
            fit = task.solve(idx)
        except (DegenerateInput, EigfreeError):
            continue
        mask = task.residuals(fit) <= cfg.threshold
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
    if best_mask is None or best_count < m:
        raise NoConsensus(f"no sample reached a consensus of {m}")
    refit = task.solve(np.flatnonzero(best_mask))
    return task.to_model(refit), best_mask


def lmeds_fit(instance, cfg: RansacConfig):
    """Least-median-of-squares over minimal samples.

    Returns the minimizing model plus inliers under the 2.5-sigma rule with
    the standard 1.4826 scale and small-sample correction.
    """
    task = _TaskAdapter(instance)
    n = instance.n
    m = cfg.min_sample or task.min_sample
    if n < m:
        raise InvalidInput(f"need at least {m} measurements, got {n}")
    rng = stream(cfg.seed, 202)
    best_fit = None
    best_med = np.inf
    best_res = None
    for _ in range(cfg.max_iters):
        idx = rng.choice(n, size=m, replace=False)
        try:
            fit = task.solve(idx)
        except (DegenerateInput, EigfreeError):
            continue
        res = task.residuals(fit)
        med = float(np.median(res * res))
        if med < best_med:
            best_med = med
            best_fit = fit
            best_res = res
    if best_fit is None:
        raise NoConsensus("no LMedS sample could be solved")
    sigma = 1.4826 * (1.0 + 5.0 / max(n - m, 1)) * np.sqrt(best_med)
    mask = best_res <= 2.5 * max(sigma, 1e-300)
    return task.to_model(best_fit), mask


def irls_cauchy_ellipse(points, iters=20) -> EllipseParams:
    """Iteratively reweighted DLT with Cauchy weights 1/(1 + (r/c)^2).

    The scale is c = 2.3849 x median(|r|) per iteration (95% efficiency
    tuning), floored so exact fits keep unit weights.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2 or points.shape[0] < 6:
        raise InvalidInput("irls_cauchy_ellipse needs at least six 2-D points")
    if iters < 1:
        raise InvalidInput("iters must be >= 1")
    x = build_ellipse_matrix(points)
    w = np.ones(points.shape[0])
    coeffs = None
    for _ in range(iters):
        if float(w.sum()) <= 0.0:
            raise DegenerateInput("irls weights collapsed to zero")
        coeffs = solve_dlt(x, w)
        r = ellipse_residuals(points, coeffs)
        c = 2.3849 * float(np.median(np.abs(r)))
        c = max(c, 1e-12)
        w = 1.0 / (1.0 + (r / c) ** 2)
    return EllipseParams(coeffs)
