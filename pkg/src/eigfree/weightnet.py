"""Reduced-scale permutation-equivariant weight network.

Per-point shared perceptrons with context normalization and ReLU inside
residual blocks; one output channel produces weight logits (sigmoid at the
consumer) and two optional channels produce displacement corrections,
scaled by 0.1 so training starts near zero displacement.  Forward and
reverse passes are hand-written on NumPy arrays; the forward pass is
bit-level permutation equivariant because the context-normalization
statistics are accumulated over sorted values.

Batch normalization is deliberately omitted: the quantity under study is
the loss, and context normalization plus ReLU keeps the architecture
permutation equivariant without train/inference statistics.
"""

import queue as _queue
import struct
import threading
from dataclasses import dataclass

import numpy as np

from . import losses as L
from .errors import EigfreeError, InvalidInput, InvalidState
from .optim import adam_init, adam_step, make_problem
from .geometry import metrics as geo_metrics
from .synth import stream

DISP_OUT_SCALE = 0.1
CN_EPS = 1e-8
IN_FEATURES = {"plane": 3, "ellipse": 2, "pnp": 5, "stereo": 4}
_VAL_INDEX_BASE = 1 << 40


@dataclass(frozen=True)
class NetConfig:
    blocks: int = 3
    channels: int = 32
    out_channels: int = 1
    in_features: int = 2
    lr: float = 1e-4
    batch: int = 32

    def __post_init__(self):
        if self.blocks < 1:
            raise InvalidInput("NetConfig.blocks must be >= 1")
        if self.out_channels not in (1, 3):
            raise InvalidInput("NetConfig.out_channels must be 1 or 3")
        if self.channels < 1 or self.in_features < 1:
            raise InvalidInput("NetConfig channels/in_features must be >= 1")


@dataclass
class NetParams:
    """Alternating weight/bias arrays, flat-indexable for Adam and checks."""

    arrays: list

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    def from_flat(self, vec) -> "NetParams":
        vec = np.asarray(vec, dtype=np.float64)
        out = []
        pos = 0
        for a in self.arrays:
            out.append(vec[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        if pos != vec.size:
            raise InvalidInput("flat parameter size mismatch")
        return NetParams(out)

    def copy(self) -> "NetParams":
        return NetParams([a.copy() for a in self.arrays])


def layer_shapes(config: NetConfig):
    shapes = [(config.in_features, config.channels), (config.channels,)]
    for _ in range(config.blocks):
        for _ in range(2):
            shapes.append((config.channels, config.channels))
            shapes.append((config.channels,))
    shapes.append((config.channels, config.out_channels))
    shapes.append((config.out_channels,))
    return shapes


def init_params(config: NetConfig, seed=0) -> NetParams:
    rng = stream(seed, 7001)
    arrays = []
    for shape in layer_shapes(config):
        if len(shape) == 2:
            scale = np.sqrt(2.0 / shape[0])
            arrays.append(rng.standard_normal(shape) * scale)
        else:
            arrays.append(np.zeros(shape))
    return NetParams(arrays)


def _stable_stat(v):
    """Permutation-invariant per-feature mean/variance across points.

    Sorting before summing makes the reduction independent of the input
    row order at the bit level.
    """
    n = v.shape[1]
    mu = np.sort(v, axis=1).sum(axis=1, keepdims=True) / n
    centered = v - mu
    var = np.sort(centered * centered, axis=1).sum(axis=1, keepdims=True) / n
    return mu, centered, var


def context_norm_forward(x):
    mu, centered, var = _stable_stat(x)
    inv_std = 1.0 / np.sqrt(var + CN_EPS)
    return centered * inv_std, (inv_std, centered)


def context_norm_backward(dy, cache):
    inv_std, centered = cache
    n = dy.shape[1]
    y = centered * inv_std
    mean_dy = dy.mean(axis=1, keepdims=True)
    mean_dyy = (dy * y).mean(axis=1, keepdims=True)
    return inv_std * (dy - mean_dy - y * mean_dyy)


def forward(params: NetParams, config: NetConfig, batch):
    """Per-point outputs for a (B, N, in_features) batch.

    Returns ``(outputs, cache)``; weights are ``sigmoid(outputs[..., 0])``
    and displacements ``DISP_OUT_SCALE * outputs[..., 1:]``.
    """
    x = _check_batch(batch, config)
    arrays = params.arrays
    if [a.shape for a in arrays] != layer_shapes(config):
        raise InvalidInput("parameter shapes do not match config")
    cache = {"x": x, "pre": [], "cn": [], "post": [], "h": []}
    h, pre_cache = _unit_forward(x, arrays[0], arrays[1])
    cache["pre"].append(pre_cache)
    cache["h"].append(h)
    idx = 2
    for _ in range(config.blocks):
        a, ca = _unit_forward(h, arrays[idx], arrays[idx + 1])
        b, cb = _unit_forward(a, arrays[idx + 2], arrays[idx + 3])
        cache["pre"].append(ca)
        cache["pre"].append(cb)
        h = h + b
        cache["h"].append(h)
        idx += 4
    out = h @ arrays[idx] + arrays[idx + 1]
    cache["out_in"] = h
    return out, cache


def _unit_forward(x, w, b):
    lin = x @ w + b
    normed, cn_cache = context_norm_forward(lin)
    act = np.maximum(normed, 0.0)
    return act, (x, w, normed, cn_cache)


def _unit_backward(dact, cache_unit):
    x, w, normed, cn_cache = cache_unit
    dnormed = dact * (normed > 0.0)
    dlin = context_norm_backward(dnormed, cn_cache)
    dw = np.einsum("bni,bnj->ij", x, dlin)
    db = dlin.sum(axis=(0, 1))
    dx = dlin @ w.T
    return dx, dw, db


def backward(params: NetParams, config: NetConfig, cache, d_out):
    """Exact reverse-mode gradient of the forward pass.

    ``d_out`` is the loss gradient at the raw network outputs (before the
    sigmoid/displacement scaling, which belong to the consumer).
    """
    if cache is None or "out_in" not in cache:
        raise InvalidState("backward needs the cache from forward")
    arrays = params.arrays
    d_out = np.asarray(d_out, dtype=np.float64)
    grads = [np.zeros_like(a) for a in arrays]
    idx = len(arrays) - 2
    grads[idx] = np.einsum("bni,bnj->ij", cache["out_in"], d_out)
    grads[idx + 1] = d_out.sum(axis=(0, 1))
    dh = d_out @ arrays[idx].T
    for blk in range(config.blocks - 1, -1, -1):
        idx -= 4
        ca = cache["pre"][1 + 2 * blk]
        cb = cache["pre"][2 + 2 * blk]
        da, dwb, dbb = _unit_backward(dh, cb)
        grads[idx + 2] = dwb
        grads[idx + 3] = dbb
        dh_unit, dwa, dba = _unit_backward(da, ca)
        grads[idx] = dwa
        grads[idx + 1] = dba
        dh = dh + dh_unit
    dx, dw0, db0 = _unit_backward(dh, cache["pre"][0])
    grads[0] = dw0
    grads[1] = db0
    return NetParams(grads)


def _check_batch(batch, config):
    if isinstance(batch, (list, tuple)):
        sizes = {np.asarray(b).shape for b in batch}
        if len(sizes) != 1:
            raise InvalidInput("ragged batch: all instances must share point count")
        batch = np.stack([np.asarray(b, dtype=np.float64) for b in batch])
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3 or batch.shape[2] != config.in_features:
        raise InvalidInput(
            f"batch must be (B, N, {config.in_features}), got {batch.shape}"
        )
    return batch


# --- training ------------------------------------------------------------------

@dataclass
class TrainResult:
    params: NetParams
    curve: list
    best_epoch: int
    aborted: bool = False
    abort_reason: str | None = None


class PrefetchQueue:
    """Single-producer bounded hand-off queue preserving stream order."""

    def __init__(self, produce, total, capacity=4):
        if capacity < 1:
            raise InvalidInput("queue capacity must be >= 1")
        self._queue = _queue.Queue(maxsize=capacity)
        self._total = total
        self._thread = threading.Thread(
            target=self._run, args=(produce,), daemon=True
        )
        self._thread.start()

    def _run(self, produce):
        for i in range(self._total):
            self._queue.put(produce(i))
        self._queue.put(None)

    def __iter__(self):
        while True:
            item = self._queue.get()
            if item is None:
                break
            yield item
        self._thread.join()


def instance_features(inst) -> np.ndarray:
    """Network input features: the builder-frame measurement rows."""
    if inst.variant == "pnp":
        from .geometry import normalize_pnp_points

        pts_n, _, _ = normalize_pnp_points(inst.measurements[:, :3])
        return np.column_stack([pts_n, inst.measurements[:, 3:]])
    return inst.measurements.copy()


def train(config: NetConfig, dataset_generator, epochs, seed,
          loss_params=None, mode=None, steps_per_epoch=6, n_val=16,
          prefetch=True) -> TrainResult:
    """Train on generated instances; keep the best-validation parameters.

    ``dataset_generator(index) -> TaskInstance`` must be a pure function of
    the index so runs are reproducible; validation uses a disjoint index
    range.  The per-instance loss comes from the same problem setup as the
    direct-fit driver; the batch loss is the mean over instances.
    """
    if epochs < 0:
        raise InvalidInput("epochs must be >= 0")
    if loss_params is None:
        loss_params = L.LossParams(alpha=1.0, beta=5e-3)
    if mode is None:
        mode = "weights" if config.out_channels == 1 else "joint"
    params = init_params(config, seed)
    curve = []
    best = TrainResult(params=params.copy(), curve=curve, best_epoch=-1)
    val_insts = [dataset_generator(_VAL_INDEX_BASE + i) for i in range(n_val)]
    best_metric = _validate(params, config, val_insts, mode)
    curve_entry = {"epoch": -1, "train_loss": float("nan"), "val_metric": best_metric}
    curve.append(curve_entry)

    flat = params.flat()
    adam = adam_init(flat.size, config.lr)
    counter = 0
    aborted = False
    reason = None
    for epoch in range(epochs):
        def produce(i, base=counter):
            idx = base + i * config.batch
            return [dataset_generator(idx + j) for j in range(config.batch)]

        batches = (
            PrefetchQueue(produce, steps_per_epoch) if prefetch
            else (produce(i) for i in range(steps_per_epoch))
        )
        epoch_losses = []
        for insts in batches:
            loss, gparams = _batch_loss_and_grad(params, config, insts, loss_params, mode)
            if not np.isfinite(loss):
                aborted = True
                reason = f"non-finite training loss at epoch {epoch}"
                break
            epoch_losses.append(loss)
            adam, flat = adam_step(adam, flat, gparams.flat())
            params = params.from_flat(flat)
        counter += steps_per_epoch * config.batch
        if aborted:
            break
        val_metric = _validate(params, config, val_insts, mode)
        curve.append(
            {"epoch": epoch, "train_loss": float(np.mean(epoch_losses)),
             "val_metric": val_metric}
        )
        if val_metric < best_metric:
            best_metric = val_metric
            best.params = params.copy()
            best.best_epoch = epoch
    best.curve = curve
    best.aborted = aborted
    best.abort_reason = reason
    return best


def _state_from_outputs(out, config, mode):
    if mode == "displacements":
        logits = np.full(out.shape[0], 40.0)  # weights exactly 1.0
    else:
        logits = out[:, 0]
    disp = DISP_OUT_SCALE * out[:, 1:3] if config.out_channels == 3 else None
    return L.FitState(logits, disp)


def _batch_loss_and_grad(params, config, insts, loss_params, mode):
    feats = np.stack([instance_features(inst) for inst in insts])
    out, cache = forward(params, config, feats)
    d_out = np.zeros_like(out)
    total = 0.0
    bsz = len(insts)
    for b, inst in enumerate(insts):
        problem = make_problem(inst, "edfree", mode, loss_params)
        state = _state_from_outputs(out[b], config, mode)
        loss, grad_flat, _ = problem.loss_and_grad(state)
        total += loss.total / bsz
        n = inst.n
        pos = 0
        if problem.optimizes_weights:
            d_out[b, :, 0] = grad_flat[:n] / bsz
            pos = n
        if problem.optimizes_disp:
            d_out[b, :, 1:3] = (
                DISP_OUT_SCALE * grad_flat[pos:].reshape(n, 2) / bsz
            )
    return total, backward(params, config, cache, d_out)


def _validate(params, config, insts, mode):
    errs = []
    for inst in insts:
        out, _ = forward(params, config, np.stack([instance_features(inst)]))
        state = _state_from_outputs(out[0], config, mode)
        problem = make_problem(inst, "edfree", mode, L.LossParams(0.0, 0.0))
        key = {
            "ellipse": "center_err",
            "plane": "normal_angle_deg",
            "pnp": "rotation_err_deg",
            "stereo": "rotation_err_deg",
        }[inst.variant]
        try:
            model = problem.model_from_state(state)
            rec = geo_metrics(model, inst.ground_truth, inst.variant)
            errs.append(rec[key])
        except EigfreeError:
            errs.append(np.inf)
    return float(np.mean(errs))


# --- checkpointing --------------------------------------------------------------

_MAGIC = b"EFWN"
_VERSION = 1


def save_checkpoint(path, config: NetConfig, params: NetParams) -> None:
    """Versioned little-endian binary checkpoint with a config header."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(
            struct.pack(
                "<IIIIdI", config.blocks, config.channels, config.out_channels,
                config.in_features, config.lr, config.batch,
            )
        )
        fh.write(struct.pack("<I", len(params.arrays)))
        for arr in params.arrays:
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise InvalidInput("not an eigfree checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise InvalidInput(f"unsupported checkpoint version {version}")
        blocks, channels, out_ch, in_feat, lr, batch = struct.unpack(
            "<IIIIdI", fh.read(28)
        )
        config = NetConfig(
            blocks=blocks, channels=channels, out_channels=out_ch,
            in_features=in_feat, lr=lr, batch=batch,
        )
        (count,) = struct.unpack("<I", fh.read(4))
        arrays = []
        for _ in range(count):
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            size = int(np.prod(shape))
            arrays.append(
                np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
            )
        params = NetParams(arrays)
        if [a.shape for a in arrays] != layer_shapes(config):
            raise InvalidInput("checkpoint arrays do not match its config")
        return config, params


def curve_to_csv(curve, fp) -> None:
    own = isinstance(fp, (str, bytes))
    fh = open(fp, "w") if own else fp
    try:
        fh.write("epoch,train_loss,val_metric\n")
        for row in curve:
            fh.write(f"{row['epoch']},{float(row['train_loss'])!r},{float(row['val_metric'])!r}\n")
    finally:
        if own:
            fh.close()
