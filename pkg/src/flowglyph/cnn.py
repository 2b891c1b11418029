"""From-scratch convolutional network over 28x28 glyphs.

Architecture: conv 5x5/pad 2 -> 32x28x28 -> pool -> 32x14x14 -> conv ->
64x14x14 -> pool -> 64x7x7 -> flatten 3136 -> FC 1024 -> dropout ->
FC K -> softmax. Plain numpy: convolutions run as im2col + GEMM, pooling
as a window reshape, training as seeded SGD with momentum. No framework.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

KERNEL = 5
PAD = 2
CONV1_FILTERS = 32
CONV2_FILTERS = 64
FLAT = 64 * 7 * 7
HIDDEN = 1024

MODEL_MAGIC = b"CNN1"
MODEL_VERSION = 1


class CnnError(ValueError):
    pass


class ShapeMismatch(CnnError):
    pass


class OddDimension(CnnError):
    pass


class NonFiniteActivation(CnnError):
    pass


class BadMagic(CnnError):
    pass


class SizeMismatch(CnnError):
    pass


@dataclass(eq=False)
class CnnModel:
    """All learnable tensors plus the dropout rate.

    Equality compares the persisted state (tensors, K, dropout rate)
    bitwise; rng_seed is bookkeeping and deliberately excluded.
    """

    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray
    dropout_rate: float = 0.5
    rng_seed: int = 0

    @property
    def k(self) -> int:
        return self.fc2_b.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        return {
            "conv1_w": self.conv1_w,
            "conv1_b": self.conv1_b,
            "conv2_w": self.conv2_w,
            "conv2_b": self.conv2_b,
            "fc1_w": self.fc1_w,
            "fc1_b": self.fc1_b,
            "fc2_w": self.fc2_w,
            "fc2_b": self.fc2_b,
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CnnModel):
            return NotImplemented
        if self.k != other.k:
            return False
        if np.float32(self.dropout_rate) != np.float32(other.dropout_rate):
            return False
        mine, theirs = self.tensors(), other.tensors()
        return all(
            mine[name].shape == theirs[name].shape
            and mine[name].tobytes() == theirs[name].tobytes()
            for name in mine
        )


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")


def init_model(seed: int, k: int = 2, dropout_rate: float = 0.5) -> CnnModel:
    """Glorot-uniform weights, zero biases, float32 throughout."""
    if k < 2:
        raise ValueError("K must be at least 2")
    if not 0 <= dropout_rate < 1:
        raise ValueError("dropout_rate must be in [0, 1)")
    rng = np.random.default_rng(seed)

    def glorot(shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
        s = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-s, s, size=shape).astype(np.float32)

    ksq = KERNEL * KERNEL
    return CnnModel(
        conv1_w=glorot((CONV1_FILTERS, 1, KERNEL, KERNEL), ksq, CONV1_FILTERS * ksq),
        conv1_b=np.zeros(CONV1_FILTERS, dtype=np.float32),
        conv2_w=glorot(
            (CONV2_FILTERS, CONV1_FILTERS, KERNEL, KERNEL),
            CONV1_FILTERS * ksq,
            CONV2_FILTERS * ksq,
        ),
        conv2_b=np.zeros(CONV2_FILTERS, dtype=np.float32),
        fc1_w=glorot((FLAT, HIDDEN), FLAT, HIDDEN),
        fc1_b=np.zeros(HIDDEN, dtype=np.float32),
        fc2_w=glorot((HIDDEN, k), HIDDEN, k),
        fc2_b=np.zeros(k, dtype=np.float32),
        dropout_rate=dropout_rate,
        rng_seed=seed,
    )


def _im2col(x: np.ndarray) -> np.ndarray:
    """(N, C, H, W) -> (N*H*W, C*25) patch matrix, zero-padded for 'same'."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (PAD, PAD), (PAD, PAD)))
    windows = sliding_window_view(xp, (KERNEL, KERNEL), axis=(2, 3))
    return (
        windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * KERNEL * KERNEL)
    )


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """ReLU(conv(x, w) + b) with the patch matrix cached for backprop."""
    n, c, h, width = x.shape
    f = w.shape[0]
    cols = _im2col(x)
    w2 = w.reshape(f, -1)
    z = cols @ w2.T + b
    a = np.maximum(z, 0)
    a = a.reshape(n, h, width, f).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(a), cols


def _conv_backward(da: np.ndarray, a: np.ndarray, cols: np.ndarray, w: np.ndarray,
                   x_shape: tuple):
    n, c, h, width = x_shape
    f = w.shape[0]
    dz = da * (a > 0)
    dz2 = dz.transpose(0, 2, 3, 1).reshape(n * h * width, f)
    w2 = w.reshape(f, -1)
    dw = (dz2.T @ cols).reshape(w.shape)
    db = dz2.sum(axis=0)
    dcols = (dz2 @ w2).reshape(n, h, width, c, KERNEL, KERNEL)
    dxp = np.zeros((n, c, h + 2 * PAD, width + 2 * PAD), dtype=da.dtype)
    for i in range(KERNEL):
        for j in range(KERNEL):
            dxp[:, :, i : i + h, j : j + width] += dcols[:, :, :, :, i, j].transpose(
                0, 3, 1, 2
            )
    dx = dxp[:, :, PAD : PAD + h, PAD : PAD + width]
    return dx, dw, db


def _pool_forward(x: np.ndarray):
    """2x2 max pool; argmax kept per window, first-in-row-major on ties."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise OddDimension(f"cannot 2x2-pool odd spatial size {h}x{w}")
    win = (
        x.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _pool_backward(dout: np.ndarray, arg: np.ndarray, x_shape: tuple) -> np.ndarray:
    n, c, h, w = x_shape
    dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    return (
        dwin.reshape(n, c, h // 2, w // 2, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h, w)
    )


def conv2d_same(x: np.ndarray, kernels: np.ndarray, biases: np.ndarray) -> np.ndarray:
    """Single-sample 'same' convolution + ReLU over a C x H x W input."""
    if x.ndim != 3 or kernels.ndim != 4 or biases.ndim != 1:
        raise ShapeMismatch("expected CxHxW input, FxCx5x5 kernels, F biases")
    if kernels.shape[1] != x.shape[0] or kernels.shape[2:] != (KERNEL, KERNEL):
        raise ShapeMismatch(
            f"kernels {kernels.shape} do not match input channels {x.shape[0]}"
        )
    if kernels.shape[0] != biases.shape[0]:
        raise ShapeMismatch("bias count must equal kernel count")
    if x.shape[1] != x.shape[2]:
        raise ShapeMismatch("input must be square")
    a, _ = _conv_forward(x[None], kernels, biases)
    return a[0]


def maxpool2x2(x: np.ndarray) -> np.ndarray:
    """Single-sample non-overlapping 2x2 max pool over a C x H x W input."""
    if x.ndim != 3:
        raise ShapeMismatch("expected CxHxW input")
    out, _ = _pool_forward(x[None])
    return out[0]


def _softmax64(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(
    model: CnnModel,
    batch: np.ndarray,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
):
    """Run the network; returns (N x K probabilities, activation cache).

    Probabilities are computed in float64 so every row sums to 1 within
    1e-9. In train_mode an inverted-dropout mask (drawn from rng, which
    is then required) scales the hidden layer; inference has no
    stochastic path.
    """
    x = np.asarray(batch)
    if x.ndim == 3:
        x = x[:, None, :, :]
    if x.ndim != 4 or x.shape[1:] != (1, 28, 28):
        raise ShapeMismatch(f"expected N x 28 x 28 input, got {np.asarray(batch).shape}")

    a1, cols1 = _conv_forward(x, model.conv1_w, model.conv1_b)
    _expect(a1, (x.shape[0], 32, 28, 28))
    p1, arg1 = _pool_forward(a1)
    _expect(p1, (x.shape[0], 32, 14, 14))
    a2, cols2 = _conv_forward(p1, model.conv2_w, model.conv2_b)
    _expect(a2, (x.shape[0], 64, 14, 14))
    p2, arg2 = _pool_forward(a2)
    _expect(p2, (x.shape[0], 64, 7, 7))
    flat = p2.reshape(x.shape[0], FLAT)
    f1 = np.maximum(flat @ model.fc1_w + model.fc1_b, 0)

    mask = None
    if train_mode and model.dropout_rate > 0:
        if rng is None:
            raise ValueError("train_mode dropout requires an rng")
        keep = 1.0 - model.dropout_rate
        mask = (rng.random(f1.shape) >= model.dropout_rate).astype(f1.dtype) / f1.dtype.type(keep)
        f1d = f1 * mask
    else:
        f1d = f1

    logits = f1d @ model.fc2_w + model.fc2_b
    if not np.isfinite(logits).all():
        raise NonFiniteActivation("non-finite logits in forward pass")
    probs = _softmax64(logits)
    cache = {
        "x": x,
        "a1": a1,
        "cols1": cols1,
        "arg1": arg1,
        "p1": p1,
        "a2": a2,
        "cols2": cols2,
        "arg2": arg2,
        "p2": p2,
        "flat": flat,
        "f1": f1,
        "mask": mask,
        "f1d": f1d,
    }
    return probs, cache


def _expect(arr: np.ndarray, shape: tuple) -> None:
    if arr.shape != shape:
        raise ShapeMismatch(f"expected {shape}, got {arr.shape}")


def _backward(model: CnnModel, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the mean loss w.r.t. every tensor, given dL/dlogits."""
    f1d, f1, mask, flat = cache["f1d"], cache["f1"], cache["mask"], cache["flat"]

    grads = {}
    grads["fc2_w"] = f1d.T @ dlogits
    grads["fc2_b"] = dlogits.sum(axis=0)
    df1d = dlogits @ model.fc2_w.T
    if mask is not None:
        df1d = df1d * mask
    df1 = df1d * (f1 > 0)
    grads["fc1_w"] = flat.T @ df1
    grads["fc1_b"] = df1.sum(axis=0)
    dflat = df1 @ model.fc1_w.T

    dp2 = dflat.reshape(cache["p2"].shape)
    da2 = _pool_backward(dp2, cache["arg2"], cache["a2"].shape)
    dp1, grads["conv2_w"], grads["conv2_b"] = _conv_backward(
        da2, cache["a2"], cache["cols2"], model.conv2_w, cache["p1"].shape
    )
    da1 = _pool_backward(dp1, cache["arg1"], cache["a1"].shape)
    _, grads["conv1_w"], grads["conv1_b"] = _conv_backward(
        da1, cache["a1"], cache["cols1"], model.conv1_w, cache["x"].shape
    )
    return grads


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood, reduced in float64."""
    n = probs.shape[0]
    picked = probs[np.arange(n), labels]
    return float(-np.mean(np.log(picked)))


def train_step(
    model: CnnModel,
    batch: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    velocity: dict[str, np.ndarray] | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[CnnModel, float]:
    """One momentum-SGD step; returns (updated model, mean loss).

    `velocity` is created on first use and updated in place so a caller
    can thread it through a training loop; `rng` feeds the dropout mask
    and defaults to a fresh generator seeded from config.seed.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.min(initial=0) < 0 or labels.max(initial=0) >= model.k:
        raise ShapeMismatch("labels must be a 1-D array of indices in [0, K)")
    if rng is None:
        rng = np.random.default_rng(config.seed)

    x = np.asarray(batch, dtype=np.float32)
    probs, cache = forward(model, x, train_mode=True, rng=rng)
    loss = cross_entropy(probs, labels)

    n = probs.shape[0]
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits = (dlogits / n).astype(np.float32)
    grads = _backward(model, cache, dlogits)

    tensors = model.tensors()
    if velocity is None:
        velocity = {name: np.zeros_like(t) for name, t in tensors.items()}
    updates = {}
    for name, tensor in tensors.items():
        velocity[name] = (
            config.momentum * velocity[name] - config.learning_rate * grads[name]
        ).astype(tensor.dtype)
        updates[name] = tensor + velocity[name]
    return replace(model, **updates), loss


def train(
    model: CnnModel,
    inputs: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
) -> tuple[CnnModel, list[float]]:
    """Mini-batch training loop; returns (model, per-epoch mean loss).

    One seeded generator drives both the per-epoch shuffles and the
    dropout masks, so identical (model, data, config) reproduce the
    same final tensors bit for bit.
    """
    inputs = np.asarray(inputs, dtype=np.float32)
    labels = np.asarray(labels)
    rng = np.random.default_rng(config.seed)
    velocity = {name: np.zeros_like(t) for name, t in model.tensors().items()}
    history = []
    n = inputs.shape[0]
    for _ in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            index = order[start : start + config.batch_size]
            model, loss = train_step(
                model, inputs[index], labels[index], config, velocity, rng
            )
            losses.append(loss * len(index))
        history.append(sum(losses) / n)
    return model, history


def predict(model: CnnModel, inputs: np.ndarray) -> list[tuple[int, float]]:
    """Inference-mode argmax per sample; ties break toward lower index."""
    inputs = np.asarray(inputs, dtype=np.float32)
    probs, _ = forward(model, inputs, train_mode=False)
    picks = probs.argmax(axis=1)
    return [(int(i), float(probs[row, i])) for row, i in enumerate(picks)]


def save_model(model: CnnModel) -> bytes:
    """Serialize to the CNN1 container: header, then tensors as f32 LE."""
    parts = [
        MODEL_MAGIC,
        struct.pack("<BHf", MODEL_VERSION, model.k, np.float32(model.dropout_rate)),
    ]
    for tensor in model.tensors().values():
        parts.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    return b"".join(parts)


def _tensor_shapes(k: int) -> dict[str, tuple]:
    return {
        "conv1_w": (CONV1_FILTERS, 1, KERNEL, KERNEL),
        "conv1_b": (CONV1_FILTERS,),
        "conv2_w": (CONV2_FILTERS, CONV1_FILTERS, KERNEL, KERNEL),
        "conv2_b": (CONV2_FILTERS,),
        "fc1_w": (FLAT, HIDDEN),
        "fc1_b": (HIDDEN,),
        "fc2_w": (HIDDEN, k),
        "fc2_b": (k,),
    }


def load_model(data: bytes) -> CnnModel:
    """Parse a CNN1 container; BadMagic / SizeMismatch on malformed input."""
    if len(data) < 4 or data[:4] != MODEL_MAGIC:
        raise BadMagic(f"bad model magic {data[:4]!r}")
    if len(data) < 11:
        raise SizeMismatch("truncated model header")
    version, k, dropout_rate = struct.unpack_from("<BHf", data, 4)
    if version != MODEL_VERSION:
        raise BadMagic(f"unsupported model version {version}")
    if k < 2:
        raise SizeMismatch(f"invalid class count {k}")
    shapes = _tensor_shapes(k)
    total = 11 + 4 * sum(int(np.prod(s)) for s in shapes.values())
    if len(data) != total:
        raise SizeMismatch(f"expected {total} bytes, got {len(data)}")
    offset = 11
    fields = {}
    for name, shape in shapes.items():
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        fields[name] = arr.reshape(shape).copy()
        offset += 4 * count
    return CnnModel(dropout_rate=float(np.float32(dropout_rate)), **fields)
