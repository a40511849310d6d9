"""Central finite-difference verification of every analytic gradient.

Each check builds a random problem from a seeded stream, evaluates the
analytic gradient, and compares against central differences (h = 1e-6,
scaled by the parameter magnitude).  Agreement is measured as
``||g_a - g_fd|| / max(||g_a||, ||g_fd||)``, which is the quantity bounded
by 1e-5 in the acceptance gate.
"""

import numpy as np

from . import losses as L
from .edgrad import EdGradConfig, eig_l2_grad, eig_l2_loss
from .geometry import ellipse_builder, pnp_builder
from .synth import GenConfig, gen_ellipse, gen_pnp, gen_plane, stream

FD_H = 1e-6


def fd_gradient(f, x, h=FD_H):
    """Central finite differences of a scalar function of an array."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        step = h * max(1.0, abs(flat[i]))
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return g


def rel_err(analytic, fd):
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    fd = np.asarray(fd, dtype=np.float64).ravel()
    na = float(np.sqrt((analytic - fd) @ (analytic - fd)))
    scale = max(float(np.sqrt(analytic @ analytic)), float(np.sqrt(fd @ fd)), 1e-30)
    return na / scale


def check_generic(seed) -> float:
    rng = stream(seed, 11)
    m, d = 8, 4
    a = rng.standard_normal((m, d))
    e = rng.standard_normal(d)
    e /= np.sqrt(e @ e)
    target = L.LossTarget(e)
    params = L.LossParams(alpha=1.0, beta=0.01)
    g = L.grad_generic(a, target, params)
    g_fd = fd_gradient(lambda x: L.loss_generic(x, target, params).total, a.copy())
    return rel_err(g, g_fd)


def check_weighted(seed) -> float:
    rng = stream(seed, 12)
    n, d = 20, 5
    x = rng.standard_normal((n, d))
    e = rng.standard_normal(d)
    e /= np.sqrt(e @ e)
    target = L.LossTarget(e)
    params = L.LossParams(alpha=2.0, beta=0.05)
    logits = rng.standard_normal(n)
    g = L.grad_weighted(x, L.FitState(logits), target, params)
    g_fd = fd_gradient(
        lambda z: L.loss_weighted(x, L.FitState(z), target, params).total,
        logits.copy(),
    )
    return rel_err(g, g_fd)


def check_weighted_plane(seed, through_mean=True) -> float:
    rng = stream(seed, 13)
    inst = gen_plane(GenConfig(seed=seed, variant="plane", n_points=16, n_outliers=4))
    target = L.LossTarget(inst.ground_truth.normal)
    params = L.LossParams(alpha=1.0, beta=1e-3)
    logits = rng.standard_normal(inst.n)
    g = L.plane_weighted_grad(inst.measurements, L.FitState(logits), target,
                              params, through_mean)
    g_fd = fd_gradient(
        lambda z: L.plane_weighted_loss(
            inst.measurements, L.FitState(z), target, params, through_mean
        ).total,
        logits.copy(),
    )
    return rel_err(g, g_fd)


def _denoise_setup(seed, variant):
    rng = stream(seed, 14)
    if variant == "ellipse":
        inst = gen_ellipse(GenConfig(seed=seed, variant="ellipse", n_points=20,
                                     n_outliers=4, noise_sigma=1e-2))
        builder = ellipse_builder()
        target = L.LossTarget(inst.ground_truth.coeffs)
    else:
        inst = gen_pnp(GenConfig(seed=seed, variant="pnp", n_points=12,
                                 n_outliers=2, noise_sigma=2.0))
        from .geometry import normalize_pnp_points, pnp_target_vector

        _, center, scale = normalize_pnp_points(inst.measurements[:, :3])
        builder = pnp_builder(center, scale)
        target = L.LossTarget(pnp_target_vector(inst.ground_truth, center, scale))
    logits = rng.standard_normal(inst.n)
    disp = 0.05 * rng.standard_normal((inst.n, builder.noisy_dim))
    params = L.LossParams(alpha=1.5, beta=5e-3, gamma=1e-2)
    return inst, builder, target, params, logits, disp


def check_denoise(seed, variant="ellipse") -> float:
    inst, builder, target, params, logits, disp = _denoise_setup(seed, variant)
    g_logits, g_disp = L.grad_denoise(
        inst, L.FitState(logits, disp), builder, target, params
    )
    g_fd_logits = fd_gradient(
        lambda z: L.loss_denoise(inst, L.FitState(z, disp), builder, target, params).total,
        logits.copy(),
    )
    g_fd_disp = fd_gradient(
        lambda dd: L.loss_denoise(inst, L.FitState(logits, dd), builder, target, params).total,
        disp.copy(),
    )
    return max(rel_err(g_logits, g_fd_logits), rel_err(g_disp, g_fd_disp))


def check_edgrad(seed) -> float:
    from .linalg import sym_eig

    rng = stream(seed, 15)
    for attempt in range(64):
        inst = gen_plane(GenConfig(seed=split_mix(seed, attempt), variant="plane",
                                   n_points=16, n_outliers=4))
        logits = rng.standard_normal(inst.n)
        state = L.FitState(logits)
        x, _ = _plane_x(inst, state)
        target = L.LossTarget(inst.ground_truth.normal)
        m = x.T @ (state.weights[:, None] * x)
        gaps = np.diff(sym_eig(m).values)
        if gaps.min() > 1e-3 * np.sqrt((m * m).sum()):
            break
    g, _ = eig_l2_grad(x, state, target, EdGradConfig())
    g_fd = fd_gradient(
        lambda z: eig_l2_loss(x, L.FitState(z), target), logits.copy()
    )
    return rel_err(g, g_fd)


def split_mix(seed, salt):
    from .synth import split_seed

    return split_seed(seed, 9000 + salt) % (1 << 62)


def _plane_x(inst, state):
    from .geometry import build_plane_matrix

    return build_plane_matrix(inst.measurements, state.weights)


CHECKS = {
    "generic": check_generic,
    "weighted": check_weighted,
    "weighted_plane": check_weighted_plane,
    "denoise_ellipse": lambda s: check_denoise(s, "ellipse"),
    "denoise_pnp": lambda s: check_denoise(s, "pnp"),
    "edgrad": check_edgrad,
}


def run_gradcheck_suite(n_seeds=100, seed=0):
    """Worst relative FD error per gradient kind over ``n_seeds`` seeds."""
    out = {}
    for kidx, (kind, fn) in enumerate(CHECKS.items()):
        worst = 0.0
        for k in range(n_seeds):
            worst = max(worst, fn(split_mix(seed, 131 * k + kidx)))
        out[kind] = worst
    return out
