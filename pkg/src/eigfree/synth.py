"""Seeded synthetic instance generators for the four tasks.

Generation is a pure function of :class:`GenConfig`.  Randomness comes from
counter-based Philox streams keyed by (seed, role), so parallel trial
generation is order-independent and every instance is reproducible to the
byte.  Each generator asserts label consistency at build time: inliers
satisfy the task incidence equation within 5x the noise scale and outliers
violate it by at least a 10x margin (resampling until both hold).
"""

import io
import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateScene, InvalidInput
from .linalg import det3, solve3
from .geometry import (
    Camera,
    EllipseParams,
    EssentialMat,
    PlaneModel,
    Pose,
    TaskInstance,
    conic_from_geometry,
    ellipse_points,
    ellipse_residuals,
    epipolar_residuals,
    essential_from_pose,
)

MARGIN_FACTOR = 10.0
#: Stereo outlier pairings must violate the epipolar constraint by this many
#: noise scales.  Genuine keypoint mismatches sit far from the epipolar
#: line (hundreds of pixels), not just outside the noise band.
STEREO_MARGIN_FACTOR = 100.0
DEFAULT_POINTS = {"plane": 100, "ellipse": 200, "pnp": 200, "stereo": 100}
_RETRIES = 4096


@dataclass(frozen=True)
class GenConfig:
    """Recipe for one synthetic instance.

    ``noise_sigma`` is in world units for plane/ellipse and in pixels for
    pnp/stereo.  For the plane task ``n_points`` counts inliers and the
    outliers come on top (the classic 100-inliers-plus-outliers toy); for
    the other tasks ``n_outliers`` of the ``n_points`` are converted.
    """

    seed: int
    variant: str
    n_points: int = 0          # 0 = task default
    n_outliers: int = 0
    noise_sigma: float = -1.0  # negative = task default
    stereo_rot_deg: float = 10.0
    stereo_baseline: float = 1.0
    stereo_direction: tuple | None = None

    def __post_init__(self):
        if self.variant not in DEFAULT_POINTS:
            raise InvalidInput(f"unknown variant {self.variant!r}")
        n = self.n_points if self.n_points > 0 else DEFAULT_POINTS[self.variant]
        object.__setattr__(self, "n_points", int(n))
        sigma_defaults = {"plane": 1e-3, "ellipse": 1e-2, "pnp": 5.0, "stereo": 1.0}
        sigma = self.noise_sigma
        if sigma < 0.0:
            sigma = sigma_defaults[self.variant]
        object.__setattr__(self, "noise_sigma", float(sigma))
        if self.n_outliers < 0:
            raise InvalidInput("n_outliers must be >= 0")
        if self.variant != "plane" and self.n_outliers > self.n_points:
            raise InvalidInput("n_outliers cannot exceed n_points")


def split_seed(seed, *salts) -> int:
    """Deterministic 64-bit stream id from a seed and integer salts."""
    h = np.uint64(seed) ^ np.uint64(0x9E3779B97F4A7C15)
    with np.errstate(over="ignore"):
        for salt in salts:
            h = np.uint64(h) ^ (np.uint64(salt) + np.uint64(0x9E3779B97F4A7C15)
                                + (h << np.uint64(6)) + (h >> np.uint64(2)))
            h = h * np.uint64(0xBF58476D1CE4E5B9)
            h ^= h >> np.uint64(31)
    return int(h)


def stream(seed, *salts) -> np.random.Generator:
    key = np.array([np.uint64(seed), np.uint64(split_seed(seed, *salts))], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def random_rotation(rng) -> np.ndarray:
    """Uniform rotation from a normalized Gaussian quaternion."""
    q = rng.standard_normal(4)
    q /= np.sqrt(q @ q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def axis_angle_rotation(axis, angle_rad) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.sqrt(axis @ axis)
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    x, y, z = axis
    cross = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return c * np.eye(3) + s * cross + (1 - c) * np.outer(axis, axis)


def generate(cfg: GenConfig) -> TaskInstance:
    gen = {
        "plane": gen_plane,
        "ellipse": gen_ellipse,
        "pnp": gen_pnp,
        "stereo": gen_stereo,
    }[cfg.variant]
    return gen(cfg)


# --- plane -----------------------------------------------------------------

def gen_plane(cfg: GenConfig) -> TaskInstance:
    """Inliers on z = 1 (x in [0, 40], y in [0, 2]); outliers at z ~ N(50, 1)."""
    if cfg.variant != "plane":
        cfg = replace(cfg, variant="plane")
    rng_in = stream(cfg.seed, 1)
    rng_out = stream(cfg.seed, 2)
    n_in = cfg.n_points
    sigma = cfg.noise_sigma
    tol_in = 5.0 * max(sigma, 1e-12)

    xy = np.column_stack([rng_in.uniform(0.0, 40.0, n_in), rng_in.uniform(0.0, 2.0, n_in)])
    z = np.ones(n_in)
    if sigma > 0.0:
        noise = rng_in.normal(0.0, sigma, n_in)
        for _ in range(_RETRIES):
            bad = np.abs(noise) > tol_in
            if not bad.any():
                break
            noise[bad] = rng_in.normal(0.0, sigma, int(bad.sum()))
        z = z + noise
    inliers = np.column_stack([xy, z])

    out = np.empty((cfg.n_outliers, 3))
    for i in range(cfg.n_outliers):
        for _ in range(_RETRIES):
            x = rng_out.uniform(0.0, 40.0)
            y = rng_out.uniform(0.0, 2.0)
            zo = rng_out.normal(50.0, 1.0)
            if abs(zo - 1.0) >= MARGIN_FACTOR * max(sigma, 1e-12):
                out[i] = (x, y, zo)
                break
        else:  # pragma: no cover - z ~ N(50,1) practically never lands near 1
            raise DegenerateScene("could not place a plane outlier")

    points = np.vstack([inliers, out])
    mask = np.concatenate([np.ones(n_in, bool), np.zeros(cfg.n_outliers, bool)])
    gt = PlaneModel(normal=np.array([0.0, 0.0, 1.0]), point=np.array([0.0, 0.0, 1.0]))
    return TaskInstance("plane", points, gt, mask, meta={"config": cfg})


# --- ellipse ---------------------------------------------------------------

def gen_ellipse(cfg: GenConfig) -> TaskInstance:
    """Random ellipse (center [-0.5,0.5]^2, angle [0,pi], semi-axes [0.2,1])
    with uniform-in-angle samples; outliers uniform in [-1, 1]^2."""
    if cfg.variant != "ellipse":
        cfg = replace(cfg, variant="ellipse")
    rng_shape = stream(cfg.seed, 1)
    rng_pts = stream(cfg.seed, 2)
    rng_out = stream(cfg.seed, 3)
    rng_perm = stream(cfg.seed, 4)
    sigma = cfg.noise_sigma
    tol_in = 5.0 * max(sigma, 1e-9)
    tol_out = MARGIN_FACTOR * max(sigma, 1e-3)

    center = rng_shape.uniform(-0.5, 0.5, 2)
    angle = rng_shape.uniform(0.0, np.pi)
    axes = rng_shape.uniform(0.2, 1.0, 2)
    gt = conic_from_geometry(center, angle, axes)

    n_in = cfg.n_points - cfg.n_outliers
    pts = np.empty((n_in, 2))
    for i in range(n_in):
        for _ in range(_RETRIES):
            t = rng_pts.uniform(0.0, 2.0 * np.pi)
            p = ellipse_points(center, angle, axes, [t])[0]
            if sigma > 0.0:
                p = p + rng_pts.normal(0.0, sigma, 2)
            if ellipse_residuals(p[None, :], gt)[0] <= tol_in:
                pts[i] = p
                break
        else:  # pragma: no cover
            raise DegenerateScene("could not sample an ellipse inlier")

    outs = np.empty((cfg.n_outliers, 2))
    for i in range(cfg.n_outliers):
        for _ in range(_RETRIES):
            p = rng_out.uniform(-1.0, 1.0, 2)
            if ellipse_residuals(p[None, :], gt)[0] >= tol_out:
                outs[i] = p
                break
        else:  # pragma: no cover
            raise DegenerateScene("could not sample an ellipse outlier")

    points = np.vstack([pts, outs])
    mask = np.concatenate([np.ones(n_in, bool), np.zeros(cfg.n_outliers, bool)])
    perm = rng_perm.permutation(cfg.n_points)
    return TaskInstance(
        "ellipse", points[perm], gt, mask[perm],
        meta={"config": cfg, "center": center, "angle": float(angle), "axes": axes},
    )


# --- pnp -------------------------------------------------------------------

def gen_pnp(cfg: GenConfig) -> TaskInstance:
    """3D-2D correspondences with pixel noise; outliers get arbitrary valid
    image positions.  The ground-truth translation equals the centroid of
    the 3D points (solved via t = (R + I)^-1 c_cam).
    """
    if cfg.variant != "pnp":
        cfg = replace(cfg, variant="pnp")
    cam = Camera()
    rng_pts = stream(cfg.seed, 1)
    rng_rot = stream(cfg.seed, 2)
    rng_out = stream(cfg.seed, 3)
    rng_perm = stream(cfg.seed, 4)
    sigma = cfg.noise_sigma
    n = cfg.n_points

    cam_pts = np.empty((n, 3))
    pixels = np.empty((n, 2))
    for i in range(n):
        for _ in range(_RETRIES):
            p = np.array(
                [
                    rng_pts.uniform(-2.0, 2.0),
                    rng_pts.uniform(-2.0, 2.0),
                    rng_pts.uniform(4.0, 8.0),
                ]
            )
            proj = cam.denormalize(p[:2] / p[2])
            px = proj
            if sigma > 0.0:
                for _ in range(64):
                    noise = rng_pts.normal(0.0, sigma, 2)
                    if float(np.sqrt(noise @ noise)) <= 5.0 * sigma:
                        break
                px = proj + noise
            if cam.in_bounds(px) and cam.in_bounds(proj):
                cam_pts[i] = p
                pixels[i] = px
                break
        else:
            raise DegenerateScene("could not place pnp points inside the image")

    for _ in range(_RETRIES):
        r = random_rotation(rng_rot)
        ri = r + np.eye(3)
        # t = centroid of the world points requires solving (R + I) t = c_cam.
        if abs(det3(ri)) > 1e-6:
            break
    else:  # pragma: no cover
        raise DegenerateScene("could not draw a usable rotation")
    c_cam = cam_pts.mean(axis=0)
    t = solve3(ri, c_cam)
    world = (cam_pts - t) @ r
    pose = Pose(r, t)

    mask = np.ones(n, bool)
    order = rng_perm.permutation(n)
    outlier_idx = order[: cfg.n_outliers]
    margin_px = MARGIN_FACTOR * max(sigma, 1.0)
    for i in outlier_idx:
        true_proj = cam.denormalize(cam_pts[i, :2] / cam_pts[i, 2])
        for _ in range(_RETRIES):
            px = np.array(
                [rng_out.uniform(0.0, cam.width), rng_out.uniform(0.0, cam.height)]
            )
            if float(np.sqrt(((px - true_proj) ** 2).sum())) >= margin_px:
                pixels[i] = px
                mask[i] = False
                break
        else:  # pragma: no cover
            raise DegenerateScene("could not place a pnp outlier")

    meas = np.column_stack([world, cam.normalize(pixels)])
    meta = {"config": cfg, "scene_scale": float(cam_pts[:, 2].mean())}
    return TaskInstance("pnp", meas, pose, mask, pixels=pixels, camera=cam, meta=meta)


# --- stereo ----------------------------------------------------------------

def gen_stereo(cfg: GenConfig) -> TaskInstance:
    """Two-view matches with known essential matrix [t]_x R.

    Outlier matches re-pair the first-view point with another point's
    second-view observation, resampled until the pairing violates the
    epipolar constraint by the margin.
    """
    if cfg.variant != "stereo":
        cfg = replace(cfg, variant="stereo")
    cam = Camera()
    rng_pose = stream(cfg.seed, 1)
    rng_pts = stream(cfg.seed, 2)
    rng_out = stream(cfg.seed, 3)
    rng_perm = stream(cfg.seed, 4)
    sigma = cfg.noise_sigma
    n = cfg.n_points

    axis = rng_pose.standard_normal(3)
    r = axis_angle_rotation(axis, np.radians(cfg.stereo_rot_deg))
    if cfg.stereo_direction is None:
        direction = rng_pose.standard_normal(3)
    else:
        direction = np.asarray(cfg.stereo_direction, dtype=np.float64)
    direction = direction / np.sqrt(direction @ direction)
    c2 = cfg.stereo_baseline * direction
    t = -r @ c2
    e_gt = essential_from_pose(r, t)

    px1 = np.empty((n, 2))
    px2 = np.empty((n, 2))
    for i in range(n):
        for _ in range(_RETRIES):
            p = np.array(
                [
                    rng_pts.uniform(-2.0, 2.0),
                    rng_pts.uniform(-2.0, 2.0),
                    rng_pts.uniform(4.0, 8.0),
                ]
            )
            p2 = r @ p + t
            if p2[2] <= 0.1:
                continue
            proj1 = cam.denormalize(p[:2] / p[2])
            proj2 = cam.denormalize(p2[:2] / p2[2])
            a = proj1.copy()
            b = proj2.copy()
            if sigma > 0.0:
                for _ in range(64):
                    noise = rng_pts.normal(0.0, sigma, 4)
                    if float(np.sqrt(noise @ noise)) <= 5.0 * sigma:
                        break
                a = proj1 + noise[:2]
                b = proj2 + noise[2:]
            if cam.in_bounds(a) and cam.in_bounds(b) and cam.in_bounds(proj1) and cam.in_bounds(proj2):
                px1[i] = a
                px2[i] = b
                break
        else:
            raise DegenerateScene("could not place stereo points inside both images")

    mask = np.ones(n, bool)
    order = rng_perm.permutation(n)
    outlier_idx = order[: cfg.n_outliers]
    sigma_norm = max(sigma, 1.0) / cam.f
    tol_out = STEREO_MARGIN_FACTOR * sigma_norm
    for i in outlier_idx:
        for _ in range(_RETRIES):
            j = int(rng_out.integers(0, n))
            if j == i:
                continue
            cand = np.concatenate([cam.normalize(px1[i]), cam.normalize(px2[j])])
            if epipolar_residuals(cand[None, :], e_gt)[0] >= tol_out:
                px2[i] = px2[j]
                mask[i] = False
                break
        else:  # pragma: no cover
            raise DegenerateScene("could not create a stereo outlier pairing")

    meas = np.column_stack([cam.normalize(px1), cam.normalize(px2)])
    pixels = np.column_stack([px1, px2])
    meta = {"config": cfg, "pose": Pose(r, t)}
    return TaskInstance("stereo", meas, e_gt, mask, pixels=pixels, camera=cam, meta=meta)


# --- fixture serialization ---------------------------------------------------

def write_instance(inst: TaskInstance, fp) -> None:
    """Line-oriented text fixture: header comments, one measurement per line."""
    own = isinstance(fp, (str, bytes))
    fh = open(fp, "w") if own else fp
    try:
        fh.write("# eigfree-instance v1\n")
        fh.write(f"# variant={inst.variant}\n")
        cfg = inst.meta.get("config")
        if cfg is not None:
            fh.write("# config=" + json.dumps(_config_dict(cfg)) + "\n")
        fh.write("# gt=" + json.dumps(_gt_payload(inst)) + "\n")
        if inst.camera is not None:
            cam = inst.camera
            fh.write(
                f"# camera={cam.f!r} {cam.cx!r} {cam.cy!r} {cam.width!r} {cam.height!r}\n"
            )
        pose = inst.meta.get("pose")
        if isinstance(pose, Pose):
            fh.write("# pose=" + json.dumps(pose.r.reshape(9).tolist() + pose.t.tolist()) + "\n")
        for i in range(inst.n):
            fields = [repr(float(v)) for v in inst.measurements[i]]
            fields.append("1" if inst.inlier_mask[i] else "0")
            if inst.pixels is not None:
                fields.extend(repr(float(v)) for v in inst.pixels[i])
            fh.write(" ".join(fields) + "\n")
    finally:
        if own:
            fh.close()


def read_instance(fp) -> TaskInstance:
    own = isinstance(fp, (str, bytes))
    fh = open(fp, "r") if own else fp
    try:
        header = {}
        rows = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, val = body.split("=", 1)
                    header[key.strip()] = val.strip()
                continue
            rows.append(line.split())
        variant = header["variant"]
        mdim = {"plane": 3, "ellipse": 2, "pnp": 5, "stereo": 4}[variant]
        data = np.array([[float(v) for v in row] for row in rows])
        meas = data[:, :mdim]
        mask = data[:, mdim].astype(bool)
        pixels = data[:, mdim + 1:] if data.shape[1] > mdim + 1 else None
        camera = None
        if "camera" in header:
            vals = [float(v) for v in header["camera"].split()]
            camera = Camera(*vals)
        gt = _gt_from_payload(variant, json.loads(header["gt"]))
        meta = {}
        if "config" in header:
            meta["config"] = GenConfig(**json.loads(header["config"]))
        if "pose" in header:
            vals = json.loads(header["pose"])
            meta["pose"] = Pose(np.array(vals[:9]).reshape(3, 3), np.array(vals[9:]))
        return TaskInstance(variant, meas, gt, mask, pixels=pixels, camera=camera, meta=meta)
    finally:
        if own:
            fh.close()


def instance_to_text(inst: TaskInstance) -> str:
    buf = io.StringIO()
    write_instance(inst, buf)
    return buf.getvalue()


def instance_from_text(text: str) -> TaskInstance:
    return read_instance(io.StringIO(text))


def _config_dict(cfg: GenConfig) -> dict:
    out = {
        "seed": cfg.seed,
        "variant": cfg.variant,
        "n_points": cfg.n_points,
        "n_outliers": cfg.n_outliers,
        "noise_sigma": cfg.noise_sigma,
    }
    if cfg.variant == "stereo":
        out["stereo_rot_deg"] = cfg.stereo_rot_deg
        out["stereo_baseline"] = cfg.stereo_baseline
        if cfg.stereo_direction is not None:
            out["stereo_direction"] = list(cfg.stereo_direction)
    return out


def _gt_payload(inst: TaskInstance):
    gt = inst.ground_truth
    if inst.variant == "plane":
        return {"normal": gt.normal.tolist(), "point": gt.point.tolist()}
    if inst.variant == "ellipse":
        return {"coeffs": gt.coeffs.tolist()}
    if inst.variant == "pnp":
        return {"r": gt.r.reshape(9).tolist(), "t": gt.t.tolist()}
    return {"e": gt.e.reshape(9).tolist()}


def _gt_from_payload(variant, payload):
    if variant == "plane":
        return PlaneModel(np.array(payload["normal"]), np.array(payload["point"]))
    if variant == "ellipse":
        return EllipseParams(np.array(payload["coeffs"]))
    if variant == "pnp":
        return Pose(np.array(payload["r"]).reshape(3, 3), np.array(payload["t"]))
    return EssentialMat(np.array(payload["e"]).reshape(3, 3))
