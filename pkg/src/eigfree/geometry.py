"""Task geometry: data-matrix builders, normalization, models and metrics.

Four tasks share the same machinery; each contributes a rule for turning a
measurement into data-matrix rows such that the ground-truth model vector
lies in the null space of the stacked rows:

* plane: mean-subtracted 3D points, d = 3 (null vector = plane normal);
* ellipse: conic monomials ``[x^2, 2xy, y^2, 2x, 2y, 1]``, d = 6;
* pnp: two rows per 3D-2D correspondence, d = 12 (null vector = vec [R|t]);
* stereo: one row per 2D-2D match, d = 9 (null vector = vec E).

The essential-matrix row ordering pairs with the row-major vec of the E
satisfying ``x2^T E x1 = 0`` (x1 from the first image); this is the
ordering that makes exact synthetic matches incident.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateConic,
    DegenerateGeometry,
    DegenerateInput,
    DegeneratePose,
    DegenerateWeights,
    InvalidInput,
)
from .linalg import det2, det3, fix_sign, procrustes_to_rotation, solve2, svd_small, sym_eig

VARIANTS = ("plane", "ellipse", "pnp", "stereo")
MIN_SAMPLE = {"plane": 3, "ellipse": 5, "pnp": 6, "stereo": 8}
MEASUREMENT_DIM = {"plane": 3, "ellipse": 2, "pnp": 5, "stereo": 4}


# --- model types ---------------------------------------------------------------

@dataclass(frozen=True)
class PlaneModel:
    """Plane through ``point`` with unit ``normal``."""

    normal: np.ndarray
    point: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        norm = float(np.sqrt(n @ n))
        if norm == 0.0 or not np.isfinite(norm):
            raise InvalidInput("plane normal must be nonzero and finite")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "point", np.asarray(self.point, dtype=np.float64))


@dataclass(frozen=True)
class EllipseParams:
    """Conic coefficients [A, B, C, D, E, F], stored unit-norm.

    The incidence form is ``A x^2 + 2B xy + C y^2 + 2D x + 2E y + F = 0``;
    ``is_ellipse`` checks ``B^2 - AC < 0``.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.shape != (6,) or not np.all(np.isfinite(c)):
            raise InvalidInput("EllipseParams needs 6 finite coefficients")
        norm = float(np.sqrt(c @ c))
        if norm == 0.0:
            raise InvalidInput("EllipseParams coefficients are all zero")
        object.__setattr__(self, "coeffs", c / norm)

    @property
    def is_ellipse(self) -> bool:
        a, b, cc = self.coeffs[0], self.coeffs[1], self.coeffs[2]
        return b * b - a * cc < 0.0


@dataclass(frozen=True)
class Pose:
    """Rigid camera pose: ``x_cam = r @ x_world + t``."""

    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64)
        t = np.asarray(self.t, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise InvalidInput("Pose needs a 3x3 rotation and length-3 translation")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-10 or abs(det3(r) - 1.0) > 1e-10:
            raise InvalidInput("Pose rotation is not orthonormal with det +1")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)


@dataclass(frozen=True)
class EssentialMat:
    """3x3 essential matrix, stored with unit Frobenius norm."""

    e: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.e, dtype=np.float64)
        if e.shape != (3, 3) or not np.all(np.isfinite(e)):
            raise InvalidInput("EssentialMat needs a finite 3x3 matrix")
        norm = float(np.sqrt((e * e).sum()))
        if norm == 0.0:
            raise InvalidInput("EssentialMat is all zero")
        object.__setattr__(self, "e", e / norm)

    @property
    def vec(self) -> np.ndarray:
        """Row-major 9-vector, sign-fixed."""
        return fix_sign(self.e.reshape(9))


@dataclass(frozen=True)
class NormTransform:
    """Homogeneous 2D similarity (isotropic scale, last row [0, 0, 1])."""

    t: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        if t.shape != (3, 3) or not np.all(np.isfinite(t)):
            raise InvalidInput("NormTransform needs a finite 3x3 matrix")
        if np.abs(t[2] - np.array([0.0, 0.0, 1.0])).max() > 1e-12:
            raise InvalidInput("NormTransform last row must be [0, 0, 1]")
        m = t[:2, :2]
        gram = m.T @ m
        s2 = 0.5 * (gram[0, 0] + gram[1, 1])
        if s2 <= 0.0 or np.abs(gram - s2 * np.eye(2)).max() > 1e-9 * max(s2, 1.0):
            raise InvalidInput("NormTransform upper block must be a positive similarity")
        object.__setattr__(self, "t", t)

    @property
    def scale(self) -> float:
        return float(np.sqrt(abs(det2(self.t[:2, :2]))))

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.t[:2, :2].T + self.t[:2, 2]

    def inverse(self) -> "NormTransform":
        m = self.t[:2, :2]
        d = det2(m)
        if abs(d) <= 1e-300:
            raise InvalidInput("NormTransform is singular")
        minv = np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / d
        out = np.eye(3)
        out[:2, :2] = minv
        out[:2, 2] = -minv @ self.t[:2, 2]
        return NormTransform(out)


@dataclass(frozen=True)
class Camera:
    """Pinhole intrinsics for the synthetic tasks."""

    f: float = 800.0
    cx: float = 320.0
    cy: float = 240.0
    width: float = 640.0
    height: float = 480.0

    def normalize(self, px):
        px = np.asarray(px, dtype=np.float64)
        return (px - np.array([self.cx, self.cy])) / self.f

    def denormalize(self, norm):
        norm = np.asarray(norm, dtype=np.float64)
        return norm * self.f + np.array([self.cx, self.cy])

    def in_bounds(self, px):
        px = np.asarray(px, dtype=np.float64)
        return (
            (px[..., 0] >= 0.0)
            & (px[..., 0] < self.width)
            & (px[..., 1] >= 0.0)
            & (px[..., 1] < self.height)
        )


@dataclass
class TaskInstance:
    """One synthetic problem: measurements, ground truth and inlier labels.

    ``measurements`` hold the working coordinates used by the data-matrix
    builders (intrinsics-normalized image coordinates for pnp/stereo);
    pixel coordinates are kept alongside when a camera is involved.
    """

    variant: str
    measurements: np.ndarray
    ground_truth: object
    inlier_mask: np.ndarray
    pixels: np.ndarray | None = None
    camera: Camera | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidInput(f"unknown variant {self.variant!r}")
        self.measurements = np.asarray(self.measurements, dtype=np.float64)
        self.inlier_mask = np.asarray(self.inlier_mask, dtype=bool)
        n, m = self.measurements.shape
        if m != MEASUREMENT_DIM[self.variant]:
            raise InvalidInput(
                f"{self.variant} measurements must have {MEASUREMENT_DIM[self.variant]} "
                f"columns, got {m}"
            )
        if n < MIN_SAMPLE[self.variant]:
            raise InvalidInput(
                f"{self.variant} needs at least {MIN_SAMPLE[self.variant]} measurements"
            )
        if self.inlier_mask.shape != (n,):
            raise InvalidInput("inlier_mask length must match measurements")

    @property
    def n(self) -> int:
        return self.measurements.shape[0]


# --- data-matrix builders ------------------------------------------------------

def build_plane_matrix(points, weights):
    """Weighted-mean-subtracted rows: row i = p_i - mu(w)."""
    points = np.asarray(points, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise InvalidInput("build_plane_matrix needs N x 3 points")
    if weights.shape != (points.shape[0],):
        raise InvalidInput("weights length must match points")
    sw = float(weights.sum())
    if sw <= 0.0:
        raise DegenerateWeights("all-zero weights: weighted mean undefined")
    mu = (weights @ points) / sw
    return points - mu, mu


def build_ellipse_row(p):
    x, y = float(p[0]), float(p[1])
    return np.array([x * x, 2.0 * x * y, y * y, 2.0 * x, 2.0 * y, 1.0])


def build_ellipse_matrix(points):
    points = np.asarray(points, dtype=np.float64)
    x = points[:, 0]
    y = points[:, 1]
    return np.column_stack(
        [x * x, 2.0 * x * y, y * y, 2.0 * x, 2.0 * y, np.ones_like(x)]
    )


def build_pnp_rows(q):
    """Two DLT rows for one (x, y, z, u, v) correspondence."""
    x, y, z, u, v = (float(c) for c in q)
    return np.array(
        [
            [x, y, z, 1.0, 0.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u * z, -u],
            [0.0, 0.0, 0.0, 0.0, x, y, z, 1.0, -v * x, -v * y, -v * z, -v],
        ]
    )


def build_pnp_matrix(corrs):
    corrs = np.asarray(corrs, dtype=np.float64)
    n = corrs.shape[0]
    x, y, z, u, v = (corrs[:, k] for k in range(5))
    one = np.ones(n)
    zero = np.zeros(n)
    odd = np.column_stack([x, y, z, one, zero, zero, zero, zero, -u * x, -u * y, -u * z, -u])
    even = np.column_stack([zero, zero, zero, zero, x, y, z, one, -v * x, -v * y, -v * z, -v])
    out = np.empty((2 * n, 12))
    out[0::2] = odd
    out[1::2] = even
    return out


def build_essential_row(q):
    """Coefficient row pairing with row-major vec(E), for x2^T E x1 = 0."""
    u, v, up, vp = (float(c) for c in q)
    return np.array([up * u, up * v, up, vp * u, vp * v, vp, u, v, 1.0])


def build_essential_matrix(matches):
    matches = np.asarray(matches, dtype=np.float64)
    u, v, up, vp = (matches[:, k] for k in range(4))
    return np.column_stack(
        [up * u, up * v, up, vp * u, vp * v, vp, u, v, np.ones_like(u)]
    )


def builder_jacobian(variant, measurement):
    """d(row block)/d(noisy coordinates): shape (rows, d, k)."""
    if variant == "ellipse":
        x, y = float(measurement[0]), float(measurement[1])
        jac = np.zeros((1, 6, 2))
        jac[0, :, 0] = [2.0 * x, 2.0 * y, 0.0, 2.0, 0.0, 0.0]
        jac[0, :, 1] = [0.0, 2.0 * x, 2.0 * y, 0.0, 2.0, 0.0]
        return jac
    if variant == "pnp":
        x, y, z = (float(c) for c in measurement[:3])
        jac = np.zeros((2, 12, 2))
        jac[0, 8:, 0] = [-x, -y, -z, -1.0]
        jac[1, 8:, 1] = [-x, -y, -z, -1.0]
        return jac
    raise InvalidInput(f"builder_jacobian supports ellipse and pnp, got {variant!r}")


@dataclass(frozen=True)
class DataMatrixBuilder:
    """Vectorized row construction plus the pieces denoising needs.

    ``measurements`` extracts the builder-frame measurement array from an
    instance (applying any stored normalization); displacements always act
    on the trailing ``noisy_dim`` coordinates of that array.
    """

    variant: str
    rows_per_measurement: int
    dim: int
    noisy_dim: int
    center3d: np.ndarray | None = None
    scale3d: float | None = None

    def measurements(self, inst) -> np.ndarray:
        meas = np.asarray(inst.measurements, dtype=np.float64)
        if self.variant == "ellipse":
            if inst.variant != "ellipse":
                raise InvalidInput("ellipse builder used with non-ellipse instance")
            return meas.copy()
        if inst.variant != "pnp":
            raise InvalidInput("pnp builder used with non-pnp instance")
        out = meas.copy()
        if self.center3d is not None:
            out[:, :3] = (out[:, :3] - self.center3d) / self.scale3d
        return out

    def build_matrix(self, meas) -> np.ndarray:
        if self.variant == "ellipse":
            return build_ellipse_matrix(meas)
        return build_pnp_matrix(meas)

    def jacobians(self, meas) -> np.ndarray:
        meas = np.asarray(meas, dtype=np.float64)
        n = meas.shape[0]
        if self.variant == "ellipse":
            x = meas[:, 0]
            y = meas[:, 1]
            jac = np.zeros((n, 1, 6, 2))
            jac[:, 0, 0, 0] = 2.0 * x
            jac[:, 0, 1, 0] = 2.0 * y
            jac[:, 0, 3, 0] = 2.0
            jac[:, 0, 1, 1] = 2.0 * x
            jac[:, 0, 2, 1] = 2.0 * y
            jac[:, 0, 4, 1] = 2.0
            return jac
        jac = np.zeros((n, 2, 12, 2))
        for col, coord in zip(range(8, 12), (meas[:, 0], meas[:, 1], meas[:, 2], None)):
            val = -np.ones(n) if coord is None else -coord
            jac[:, 0, col, 0] = val
            jac[:, 1, col, 1] = val
        return jac

    def apply_displacements(self, meas, disp) -> np.ndarray:
        meas = np.asarray(meas, dtype=np.float64)
        disp = np.asarray(disp, dtype=np.float64)
        if disp.shape != (meas.shape[0], self.noisy_dim):
            raise InvalidInput("displacement shape mismatch")
        out = meas.copy()
        out[:, -self.noisy_dim:] += disp
        return out


def ellipse_builder() -> DataMatrixBuilder:
    return DataMatrixBuilder("ellipse", rows_per_measurement=1, dim=6, noisy_dim=2)


def pnp_builder(center3d=None, scale3d=None) -> DataMatrixBuilder:
    center = None if center3d is None else np.asarray(center3d, dtype=np.float64)
    return DataMatrixBuilder(
        "pnp", rows_per_measurement=2, dim=12, noisy_dim=2,
        center3d=center, scale3d=scale3d,
    )


# --- normalization -------------------------------------------------------------

def hartley_normalize(points):
    """Similarity moving the centroid to 0 and the RMS radius to sqrt(2)."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2 or points.shape[0] < 2:
        raise InvalidInput("hartley_normalize needs at least two 2-D points")
    centroid = points.mean(axis=0)
    centered = points - centroid
    rms = float(np.sqrt(np.einsum("ij,ij->i", centered, centered).mean()))
    if rms <= 0.0:
        raise DegenerateInput("hartley_normalize: all points coincide")
    s = np.sqrt(2.0) / rms
    t = np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])
    return centered * s, NormTransform(t)


def transform_gt_essential(e_gt: EssentialMat, t1: NormTransform, t2: NormTransform):
    """Target 9-vector for Hartley-normalized matches: E' ~ T2^-T E T1^-1."""
    t1i = t1.inverse().t
    t2i = t2.inverse().t
    ep = t2i.T @ e_gt.e @ t1i
    norm = float(np.sqrt((ep * ep).sum()))
    if norm == 0.0 or not np.isfinite(norm):
        raise InvalidInput("transformed essential matrix is degenerate")
    return fix_sign(ep.reshape(9) / norm)


#: RMS radius of the normalized 3D point cloud.  Centering plus this scale
#: conditions the DLT and pins the data-matrix row magnitude, so the
#: weighted-loss hyperparameters act in the regime where the trace
#: regularizer retains inliers without reviving near-incident outliers.
PNP_NORM_RMS = 3.0


def normalize_pnp_points(points3d, target_rms=PNP_NORM_RMS):
    """Center the 3D points and scale their RMS radius to ``target_rms``."""
    points3d = np.asarray(points3d, dtype=np.float64)
    center = points3d.mean(axis=0)
    centered = points3d - center
    rms = float(np.sqrt(np.einsum("ij,ij->i", centered, centered).mean()))
    if rms <= 0.0:
        raise DegenerateInput("normalize_pnp_points: coincident 3D points")
    scale = rms / target_rms
    return centered / scale, center, scale


def pnp_target_vector(pose: Pose, center, scale):
    """Unit 12-vector: vec of the projection matrix acting on normalized 3D."""
    p = np.empty((3, 4))
    p[:, :3] = scale * pose.r
    p[:, 3] = pose.r @ np.asarray(center, dtype=np.float64) + pose.t
    vec = p.reshape(12)
    return fix_sign(vec / float(np.sqrt(vec @ vec)))


def denormalize_pose(pose_n: Pose, center, scale) -> Pose:
    """Invert :func:`normalize_pnp_points` on a recovered pose.

    A pose solved against normalized 3D points keeps the same rotation and
    maps back with ``t = scale * t_n - R @ center``.
    """
    center = np.asarray(center, dtype=np.float64)
    return Pose(pose_n.r, scale * pose_n.t - pose_n.r @ center)


# --- model extraction ----------------------------------------------------------

@dataclass(frozen=True)
class DltResult:
    vector: np.ndarray
    eigenvalues: np.ndarray
    unique: bool


def solve_dlt_details(x, weights=None) -> DltResult:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidInput("solve_dlt: non-finite rows")
    if weights is None:
        weights = np.ones(x.shape[0])
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (x.shape[0],):
        raise InvalidInput("weights length must match rows")
    if float(weights.sum()) <= 0.0:
        raise DegenerateWeights("solve_dlt: weights sum to zero")
    m = x.T @ (weights[:, None] * x)
    res = sym_eig(m)
    gap = float(res.values[1] - res.values[0]) if res.values.size > 1 else np.inf
    scale = max(float(abs(res.values[-1])), 1e-300)
    return DltResult(
        vector=res.vectors[:, 0].copy(),
        eigenvalues=res.values,
        unique=gap > 1e-9 * scale,
    )


def solve_dlt(x, weights=None) -> np.ndarray:
    return solve_dlt_details(x, weights).vector


def pose_from_dlt(p, sample) -> Pose:
    """Pose from a 12-vector: fix scale/sign, then project onto rotations.

    Scale makes |det| of the left 3x3 block one; the sign makes the witness
    correspondence's depth positive.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (12,):
        raise InvalidInput("pose_from_dlt needs a 12-vector")
    mat = p.reshape(3, 4)
    m = mat[:, :3]
    d = det3(m)
    scale = float(np.abs(m).max())
    if abs(d) <= 1e-12 * max(scale**3, 1e-300):
        raise DegeneratePose("pose_from_dlt: singular rotation block")
    sigma = 1.0 / abs(d) ** (1.0 / 3.0)
    xyz = np.asarray(sample, dtype=np.float64)[:3]
    depth = sigma * float(m[2] @ xyz + mat[2, 3])
    if depth == 0.0:
        raise DegeneratePose("pose_from_dlt: witness point has zero depth")
    sgn = 1.0 if depth > 0.0 else -1.0
    r = procrustes_to_rotation(sgn * sigma * m)
    t = sgn * sigma * mat[:, 3]
    return Pose(r, t)


def refine_pose_procrustes(corrs, weights, pose: Pose, iters=10) -> Pose:
    """Generalized-Procrustes pose refinement from a DLT initialization.

    Alternates between projective depths given the pose and a weighted
    orthogonal-Procrustes solve of (R, t) given the depths, minimizing the
    object-space error sum_i w_i ||R X_i + t - lam_i q_i||^2 with
    q_i = (u_i, v_i, 1).  Used only at evaluation time, never in losses.
    """
    corrs = np.asarray(corrs, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if corrs.ndim != 2 or corrs.shape[1] != 5:
        raise InvalidInput("refine_pose_procrustes needs (x, y, z, u, v) rows")
    sw = float(weights.sum())
    if sw <= 0.0:
        raise DegenerateWeights("refine_pose_procrustes: weights sum to zero")
    pts = corrs[:, :3]
    q = np.column_stack([corrs[:, 3], corrs[:, 4], np.ones(corrs.shape[0])])
    q_sq = np.einsum("ij,ij->i", q, q)
    r, t = pose.r, pose.t
    x_bar = (weights @ pts) / sw
    xc = pts - x_bar
    for _ in range(iters):
        cam = pts @ r.T + t
        lam = np.einsum("ij,ij->i", q, cam) / q_sq
        p = lam[:, None] * q
        p_bar = (weights @ p) / sw
        h = (p - p_bar).T @ (weights[:, None] * xc)
        r = procrustes_to_rotation(h)
        t = p_bar - r @ x_bar
    return Pose(r, t)


def ellipse_center(params) -> np.ndarray:
    """Conic center: solve [[A, B], [B, C]] c = -[D, E]."""
    coeffs = params.coeffs if isinstance(params, EllipseParams) else np.asarray(params, float)
    a, b, c, d, e = coeffs[0], coeffs[1], coeffs[2], coeffs[3], coeffs[4]
    det = a * c - b * b
    scale = max(a * a, b * b, c * c)
    if abs(det) <= 1e-12 * max(scale, 1e-300):
        raise DegenerateConic("conic has no finite center (B^2 - AC = 0)")
    try:
        return solve2(np.array([[a, b], [b, c]]), np.array([-d, -e]))
    except DegenerateInput as exc:  # pragma: no cover - guarded above
        raise DegenerateConic(str(exc))


def essential_from_pose(r, t) -> EssentialMat:
    """E = [t]_x R for cameras P1 = [I|0], P2 = [R|t]."""
    t = np.asarray(t, dtype=np.float64)
    tx = np.array(
        [[0.0, -t[2], t[1]], [t[2], 0.0, -t[0]], [-t[1], t[0], 0.0]]
    )
    return EssentialMat(tx @ np.asarray(r, dtype=np.float64))


def decompose_essential(e: EssentialMat, matches) -> Pose:
    """Pose from an essential matrix via the four-candidate decomposition.

    Candidates are scored by cheirality: the number of matches whose
    midpoint triangulation lands in front of both cameras.  The returned
    translation has unit norm (scale is unobservable).
    """
    matches = np.asarray(matches, dtype=np.float64)
    if matches.ndim != 2 or matches.shape[1] != 4 or matches.shape[0] < 1:
        raise InvalidInput("decompose_essential needs N x 4 matches, N >= 1")
    res = svd_small(e.e)
    u, v = res.u, res.v
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    ra = u @ w @ v.T
    rb = u @ w.T @ v.T
    ra = det3(ra) * ra
    rb = det3(rb) * rb
    tvec = u[:, 2].copy()
    candidates = [(ra, tvec), (ra, -tvec), (rb, tvec), (rb, -tvec)]
    best = None
    best_count = -1
    for r, t in candidates:
        count = _cheirality_count(r, t, matches)
        if count > best_count:
            best = (r, t)
            best_count = count
    if best_count <= 0:
        raise DegenerateGeometry("no essential decomposition candidate has support")
    r, t = best
    return Pose(r, t / float(np.sqrt(t @ t)))


def _cheirality_count(r, t, matches):
    o2 = -r.T @ t
    count = 0
    for u1, v1, u2, v2 in matches:
        d1 = np.array([u1, v1, 1.0])
        d1 /= np.sqrt(d1 @ d1)
        d2 = r.T @ np.array([u2, v2, 1.0])
        d2 /= np.sqrt(d2 @ d2)
        c = float(d1 @ d2)
        denom = c * c - 1.0
        if abs(denom) < 1e-12:
            continue
        s = (float(d1 @ o2) - c * float(d2 @ o2)) / denom * -1.0
        rr = (c * float(d1 @ o2) - float(d2 @ o2)) / denom * -1.0
        point = 0.5 * (s * d1 + o2 + rr * d2)
        z1 = point[2]
        z2 = float((r @ point + t)[2])
        if z1 > 0.0 and z2 > 0.0:
            count += 1
    return count


# --- residuals -------------------------------------------------------------

def plane_residuals(points, model: PlaneModel):
    points = np.asarray(points, dtype=np.float64)
    return np.abs((points - model.point) @ model.normal)


def ellipse_residuals(points, params):
    """Algebraic conic residual normalized by its spatial gradient."""
    coeffs = params.coeffs if isinstance(params, EllipseParams) else np.asarray(params, float)
    points = np.asarray(points, dtype=np.float64)
    rows = build_ellipse_matrix(points)
    alg = rows @ coeffs
    a, b, c, d, e = coeffs[0], coeffs[1], coeffs[2], coeffs[3], coeffs[4]
    gx = 2.0 * (a * points[:, 0] + b * points[:, 1] + d)
    gy = 2.0 * (b * points[:, 0] + c * points[:, 1] + e)
    grad = np.sqrt(gx * gx + gy * gy)
    return np.abs(alg) / np.maximum(grad, 1e-12)


def reprojection_residuals(corrs, p):
    """Distance between measured and reprojected image points.

    ``corrs`` are (x, y, z, u, v) rows in the frame the 12-vector ``p``
    was solved in; the residual is in the same image units as u, v.
    """
    corrs = np.asarray(corrs, dtype=np.float64)
    mat = np.asarray(p, dtype=np.float64).reshape(3, 4)
    homog = np.column_stack([corrs[:, :3], np.ones(corrs.shape[0])])
    proj = homog @ mat.T
    den = proj[:, 2]
    out = np.full(corrs.shape[0], np.inf)
    ok = np.abs(den) > 1e-12
    du = proj[ok, 0] / den[ok] - corrs[ok, 3]
    dv = proj[ok, 1] / den[ok] - corrs[ok, 4]
    out[ok] = np.sqrt(du * du + dv * dv)
    return out


def epipolar_residuals(matches, e):
    """Symmetric epipolar distance for x2^T E x1 = 0."""
    if isinstance(e, EssentialMat):
        mat = e.e
    else:
        e = np.asarray(e, dtype=np.float64)
        mat = e.reshape(3, 3)
    matches = np.asarray(matches, dtype=np.float64)
    x1 = np.column_stack([matches[:, 0], matches[:, 1], np.ones(matches.shape[0])])
    x2 = np.column_stack([matches[:, 2], matches[:, 3], np.ones(matches.shape[0])])
    l2 = x1 @ mat.T          # line in image 2
    l1 = x2 @ mat            # line in image 1
    alg = np.einsum("ij,ij->i", x2, l2)
    n2 = l2[:, 0] ** 2 + l2[:, 1] ** 2
    n1 = l1[:, 0] ** 2 + l1[:, 1] ** 2
    inv = 1.0 / np.maximum(n1, 1e-300) + 1.0 / np.maximum(n2, 1e-300)
    return np.abs(alg) * np.sqrt(inv)


# --- metrics ---------------------------------------------------------------

def rotation_err_deg(r_est, r_gt) -> float:
    """Relative rotation angle arccos((tr(Rg^T Re) - 1)/2) in degrees.

    Evaluated through arcsin of the Frobenius half-distance for small
    angles, where the arccos form loses half the significant digits.
    """
    r_est = np.asarray(r_est, dtype=np.float64)
    r_gt = np.asarray(r_gt, dtype=np.float64)
    cos = (float(np.trace(r_gt.T @ r_est)) - 1.0) / 2.0
    if cos > 0.7:
        diff = r_est - r_gt
        half_sin = float(np.sqrt((diff * diff).sum())) / (2.0 * np.sqrt(2.0))
        return float(np.degrees(2.0 * np.arcsin(np.clip(half_sin, 0.0, 1.0))))
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


def angular_err_deg(v_est, v_gt) -> float:
    """Angle between two vectors in degrees (scale-free), stable near zero."""
    v_est = np.asarray(v_est, dtype=np.float64)
    v_gt = np.asarray(v_gt, dtype=np.float64)
    ne = float(np.sqrt(v_est @ v_est))
    ng = float(np.sqrt(v_gt @ v_gt))
    if ne == 0.0 or ng == 0.0:
        raise InvalidInput("angular error of a zero vector")
    a = v_est / ne
    b = v_gt / ng
    cos = float(a @ b)
    if cos > 0.7:
        half = 0.5 * float(np.sqrt(((a - b) ** 2).sum()))
        return float(np.degrees(2.0 * np.arcsin(np.clip(half, 0.0, 1.0))))
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


def precision_recall(est_mask, true_mask):
    est_mask = np.asarray(est_mask, dtype=bool)
    true_mask = np.asarray(true_mask, dtype=bool)
    tp = int(np.sum(est_mask & true_mask))
    fp = int(np.sum(est_mask & ~true_mask))
    fn = int(np.sum(~est_mask & true_mask))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 1.0
    return precision, recall


def metrics(est, gt, variant, est_mask=None, true_mask=None) -> dict:
    """Task-appropriate error record; inapplicable entries are None.

    All entries are invariant to the sign of any estimated eigenvector:
    models are stored sign-normalized and angles use |cos| where a sign
    ambiguity exists (plane normals).
    """
    out = {
        "rotation_err_deg": None,
        "translation_err": None,
        "center_err": None,
        "normal_angle_deg": None,
        "precision": None,
        "recall": None,
    }
    if variant == "plane":
        if not isinstance(est, PlaneModel) or not isinstance(gt, PlaneModel):
            raise InvalidInput("plane metrics need PlaneModel est and gt")
        cos = abs(float(est.normal @ gt.normal))
        out["normal_angle_deg"] = float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
    elif variant == "ellipse":
        if not isinstance(est, EllipseParams) or not isinstance(gt, EllipseParams):
            raise InvalidInput("ellipse metrics need EllipseParams est and gt")
        diff = ellipse_center(est) - ellipse_center(gt)
        out["center_err"] = float(np.sqrt(diff @ diff))
    elif variant == "pnp":
        if not isinstance(est, Pose) or not isinstance(gt, Pose):
            raise InvalidInput("pnp metrics need Pose est and gt")
        out["rotation_err_deg"] = rotation_err_deg(est.r, gt.r)
        diff = est.t - gt.t
        out["translation_err"] = float(np.sqrt(diff @ diff))
    elif variant == "stereo":
        if not isinstance(est, Pose) or not isinstance(gt, Pose):
            raise InvalidInput("stereo metrics need Pose est and gt")
        out["rotation_err_deg"] = rotation_err_deg(est.r, gt.r)
        out["translation_err"] = angular_err_deg(est.t, gt.t)
    else:
        raise InvalidInput(f"unknown variant {variant!r}")
    if est_mask is not None and true_mask is not None:
        out["precision"], out["recall"] = precision_recall(est_mask, true_mask)
    return out


def map_score(errors, max_threshold, step) -> float:
    """Mean over thresholds (step, 2*step, ..., max) of the accuracy at each."""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise InvalidInput("map_score needs at least one error value")
    if not np.all(np.isfinite(errors)):
        raise InvalidInput("map_score errors must be finite")
    if step <= 0.0 or max_threshold < step:
        raise InvalidInput("map_score needs 0 < step <= max_threshold")
    thresholds = np.arange(step, max_threshold + 1e-12, step)
    return float(np.mean([(errors <= t).mean() for t in thresholds]))


# --- synthesis helpers shared with synth/tests ----------------------------------

def conic_from_geometry(center, angle, axes) -> EllipseParams:
    """Conic coefficients of the ellipse with the given center/angle/semi-axes."""
    cx, cy = float(center[0]), float(center[1])
    a, b = float(axes[0]), float(axes[1])
    if a <= 0.0 or b <= 0.0:
        raise InvalidInput("semi-axes must be positive")
    ca, sa = np.cos(angle), np.sin(angle)
    rot = np.array([[ca, -sa], [sa, ca]])
    q = rot @ np.diag([1.0 / (a * a), 1.0 / (b * b)]) @ rot.T
    c_vec = np.array([cx, cy])
    qc = q @ c_vec
    coeffs = np.array(
        [q[0, 0], q[0, 1], q[1, 1], -qc[0], -qc[1], float(c_vec @ qc) - 1.0]
    )
    if coeffs[0] < 0.0:
        coeffs = -coeffs
    return EllipseParams(coeffs)


def ellipse_points(center, angle, axes, ts) -> np.ndarray:
    """Points on the ellipse at the given parameter angles."""
    ts = np.asarray(ts, dtype=np.float64)
    ca, sa = np.cos(angle), np.sin(angle)
    rot = np.array([[ca, -sa], [sa, ca]])
    local = np.column_stack([axes[0] * np.cos(ts), axes[1] * np.sin(ts)])
    return local @ rot.T + np.asarray(center, dtype=np.float64)


def project_points(pose: Pose, points3d, camera: Camera):
    """Pixel projections and camera-frame depths of world points."""
    points3d = np.asarray(points3d, dtype=np.float64)
    cam = points3d @ pose.r.T + pose.t
    depths = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        norm = cam[:, :2] / depths[:, None]
    px = camera.denormalize(norm)
    return px, depths
