"""Dense float32 tensor kernel.

Linear and 1-D convolution layers with analytic gradients, the attention
primitives used by the cross-view relation blocks, scalar losses, a small
Adam optimizer, a central finite-difference gradient checker, and a flat
binary parameter file format.

Gradients are accumulated by explicit backward calls in reverse order of
the forward calls; there is no tape.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DataError, DimensionError, NumericError

DEFAULT_DTYPE = np.float32

# Parameter file layout: magic, u32 version, u32 entry count, then per entry
# u16 name length, utf-8 name, u8 ndim, u32 dims, little-endian f32 payload.
PARAM_MAGIC = b"ADNPARAM"
PARAM_VERSION = 1


def as_tensor(x, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Coerce to a contiguous row-major array of the kernel dtype."""
    return np.ascontiguousarray(x, dtype=dtype)


def assert_finite(name: str, x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{name} contains non-finite values")


# ---------------------------------------------------------------- layers


class LinearMap:
    """Affine map y = x W^T + b with gradient accumulators."""

    def __init__(self, in_dim: int, out_dim: int, *, rng=None, scale=None,
                 dtype=DEFAULT_DTYPE):
        if in_dim < 1 or out_dim < 1:
            raise DimensionError("LinearMap dimensions must be positive")
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        if rng is None:
            w = np.zeros((out_dim, in_dim))
        else:
            std = scale if scale is not None else np.sqrt(2.0 / in_dim)
            w = rng.normal(0.0, std, size=(out_dim, in_dim))
        self.weights = as_tensor(w, dtype)
        self.bias = np.zeros(out_dim, dtype=dtype)
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.shape[-1] != self.in_dim:
            raise DimensionError(
                f"expected trailing dim {self.in_dim}, got {x.shape[-1]}")
        return x @ self.weights.T + self.bias

    def backward(self, x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients, return gradient w.r.t. x."""
        x2 = np.asarray(x).reshape(-1, self.in_dim)
        g2 = np.asarray(grad_out).reshape(-1, self.out_dim)
        self.grad_weights += g2.T @ x2
        self.grad_bias += g2.sum(axis=0)
        return (g2 @ self.weights).reshape(np.asarray(x).shape)

    def parameters(self):
        return [("weights", self.weights, self.grad_weights),
                ("bias", self.bias, self.grad_bias)]

    def zero_grad(self):
        self.grad_weights[...] = 0
        self.grad_bias[...] = 0


class Conv1D:
    """Temporal convolution (cross-correlation) over (length, channels) maps.

    Kernel layout is (out_channels, in_channels, kernel_width).  Output
    length is floor((L + 2 * padding - kernel_width) / stride) + 1.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_width: int,
                 *, stride: int = 1, padding: int = 0, rng=None, scale=None,
                 dtype=DEFAULT_DTYPE):
        if min(in_channels, out_channels, kernel_width) < 1:
            raise DimensionError("Conv1D dimensions must be positive")
        if stride < 1 or padding < 0:
            raise DimensionError("Conv1D stride/padding out of range")
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_width = int(kernel_width)
        self.stride = int(stride)
        self.padding = int(padding)
        fan_in = in_channels * kernel_width
        if rng is None:
            k = np.zeros((out_channels, in_channels, kernel_width))
        else:
            std = scale if scale is not None else np.sqrt(2.0 / fan_in)
            k = rng.normal(0.0, std, size=(out_channels, in_channels, kernel_width))
        self.kernel = as_tensor(k, dtype)
        self.bias = np.zeros(out_channels, dtype=dtype)
        self.grad_kernel = np.zeros_like(self.kernel)
        self.grad_bias = np.zeros_like(self.bias)

    def output_length(self, length: int) -> int:
        out = (length + 2 * self.padding - self.kernel_width) // self.stride + 1
        if out < 1:
            raise DimensionError(
                f"conv output length {out} < 1 for input length {length}")
        return out

    def _patches(self, x: np.ndarray) -> np.ndarray:
        length = x.shape[0]
        out_len = self.output_length(length)
        if self.padding:
            pad = np.zeros((self.padding, x.shape[1]), dtype=x.dtype)
            xp = np.concatenate([pad, x, pad], axis=0)
        else:
            xp = x
        idx = (np.arange(out_len)[:, None] * self.stride
               + np.arange(self.kernel_width)[None, :])
        # (out_len, kw, C_in) -> (out_len, C_in * kw) matching kernel layout
        return xp[idx].transpose(0, 2, 1).reshape(out_len, -1), xp.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != self.in_channels:
            raise DimensionError(
                f"expected (L, {self.in_channels}) input, got {x.shape}")
        patches, _ = self._patches(x)
        kmat = self.kernel.reshape(self.out_channels, -1)
        return patches @ kmat.T + self.bias

    def backward(self, x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        patches, padded_len = self._patches(x)
        out_len = grad_out.shape[0]
        kmat = self.kernel.reshape(self.out_channels, -1)
        self.grad_kernel += (grad_out.T @ patches).reshape(self.kernel.shape)
        self.grad_bias += grad_out.sum(axis=0)
        grad_patches = (grad_out @ kmat).reshape(
            out_len, self.in_channels, self.kernel_width)
        grad_xp = np.zeros((padded_len, self.in_channels), dtype=grad_out.dtype)
        span = out_len * self.stride
        for j in range(self.kernel_width):
            grad_xp[j:j + span:self.stride] += grad_patches[:, :, j]
        if self.padding:
            return grad_xp[self.padding:padded_len - self.padding]
        return grad_xp

    def parameters(self):
        return [("kernel", self.kernel, self.grad_kernel),
                ("bias", self.bias, self.grad_bias)]

    def zero_grad(self):
        self.grad_kernel[...] = 0
        self.grad_bias[...] = 0


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return np.where(x > 0, grad_out, 0)


# ------------------------------------------------------- attention ops


def dot_similarity(fa: np.ndarray, fb: np.ndarray,
                   theta: LinearMap, phi: LinearMap) -> np.ndarray:
    """Pairwise similarity S(i, j) = <theta(fa_i), phi(fb_j)>."""
    fa = np.asarray(fa)
    fb = np.asarray(fb)
    if fa.ndim != 2 or fb.ndim != 2:
        raise DimensionError("dot_similarity expects 2-D feature maps")
    if fa.shape[1] != theta.in_dim or fb.shape[1] != phi.in_dim:
        raise DimensionError("feature width does not match embedding maps")
    return theta(fa) @ phi(fb).T


def row_softmax(s: np.ndarray) -> np.ndarray:
    """Row-normalized softmax, stabilized by the row maximum."""
    s = np.asarray(s)
    shifted = s - s.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def row_softmax_backward(attn: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    inner = (grad_out * attn).sum(axis=-1, keepdims=True)
    return attn * (grad_out - inner)


def attend(attn: np.ndarray, fa: np.ndarray, gamma: LinearMap) -> np.ndarray:
    """Aggregate rows of gamma(fa) with attention weights.

    Row i of the result is sum_j gamma(fa_j) * attn[i, j].
    """
    attn = np.asarray(attn)
    if attn.ndim != 2 or attn.shape[1] != np.asarray(fa).shape[0]:
        raise DimensionError("attention map does not match feature rows")
    return attn @ gamma(fa)


def conv1d_forward(x: np.ndarray, layer: Conv1D) -> np.ndarray:
    return layer.forward(x)


# ---------------------------------------------------------------- losses


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """Mean cross-entropy over rows; returns (loss, grad w.r.t. logits)."""
    logits = np.asarray(logits)
    targets = np.asarray(targets, dtype=np.intp)
    if logits.ndim != 2 or targets.shape != logits.shape[:1]:
        raise DimensionError("softmax_cross_entropy expects (N, C) and (N,)")
    n = logits.shape[0]
    if n == 0:
        raise DimensionError("empty batch")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(n), targets].mean()
    grad = np.exp(logp)
    grad[np.arange(n), targets] -= 1.0
    return float(loss), grad / n


def smooth_l1(pred: np.ndarray, target: np.ndarray):
    """Mean Huber loss at unit transition; returns (loss, grad w.r.t. pred)."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise DimensionError("smooth_l1 shape mismatch")
    d = pred - target
    a = np.abs(d)
    per = np.where(a < 1.0, 0.5 * d * d, a - 0.5)
    grad = np.where(a < 1.0, d, np.sign(d)) / max(d.size, 1)
    return float(per.mean()), grad


# ------------------------------------------------------------- optimizer


class Adam:
    """Adam over a flat list of (value, grad) array pairs, updated in place."""

    def __init__(self, params: Sequence[tuple[np.ndarray, np.ndarray]],
                 lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(v) for v, _ in self.params]
        self.v = [np.zeros_like(v) for v, _ in self.params]

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for i, (value, grad) in enumerate(self.params):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * grad
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * grad * grad
            mhat = self.m[i] / b1c
            vhat = self.v[i] / b2c
            value -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(value.dtype)

    def zero_grad(self):
        for _, grad in self.params:
            grad[...] = 0


def collect_parameters(named_layers: Iterable[tuple[str, object]]):
    """Flatten (prefix, layer) pairs into (name, value, grad) triples."""
    out = []
    for prefix, layer in named_layers:
        for name, value, grad in layer.parameters():
            out.append((f"{prefix}.{name}", value, grad))
    return out


def zero_gradients(layers: Iterable[object]):
    for layer in layers:
        layer.zero_grad()


# -------------------------------------------------------- gradient check


def backward_check(loss_fn: Callable[[], float], layers: Sequence[object],
                   *, eps: float = 1e-4, num_points: int = 100,
                   rng=None) -> float:
    """Compare analytic gradients against central finite differences.

    ``loss_fn`` must recompute the scalar loss from the layers' current
    parameters and accumulate analytic gradients into them.  Returns the
    maximum of |analytic - fd| / max(1, |fd|) over sampled coordinates.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    params = collect_parameters((f"layer{i}", l) for i, l in enumerate(layers))
    zero_gradients(layers)
    loss_fn()
    analytic = [grad.copy() for _, _, grad in params]
    for _, _, grad in params:
        assert_finite("gradient", grad)

    coords = []
    sizes = np.array([value.size for _, value, _ in params])
    total = int(sizes.sum())
    picks = rng.integers(0, total, size=min(num_points, total))
    bounds = np.cumsum(sizes)
    for flat in picks:
        pi = int(np.searchsorted(bounds, flat, side="right"))
        coords.append((pi, int(flat - (bounds[pi - 1] if pi else 0))))

    worst = 0.0
    for pi, offset in coords:
        value = params[pi][1].reshape(-1)
        saved = value[offset]
        value[offset] = saved + eps
        up = loss_fn()
        value[offset] = saved - eps
        down = loss_fn()
        value[offset] = saved
        fd = (up - down) / (2.0 * eps)
        ana = float(analytic[pi].reshape(-1)[offset])
        worst = max(worst, abs(ana - fd) / max(1.0, abs(fd)))
    zero_gradients(layers)
    return worst


# ----------------------------------------------------------- persistence


def save_parameters(path, entries: Sequence[tuple[str, np.ndarray]]) -> None:
    """Write named arrays as little-endian float32, order preserving."""
    with open(path, "wb") as f:
        f.write(PARAM_MAGIC)
        f.write(struct.pack("<II", PARAM_VERSION, len(entries)))
        for name, arr in entries:
            data = np.ascontiguousarray(arr, dtype="<f4")
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())


def load_parameters(path) -> "OrderedDict[str, np.ndarray]":
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:len(PARAM_MAGIC)] != PARAM_MAGIC:
        raise DataError(f"{path}: not a parameter file")
    pos = len(PARAM_MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise DataError(f"{path}: truncated parameter file")
        piece = blob[pos:pos + n]
        pos += n
        return piece

    version, count = struct.unpack("<II", take(8))
    if version != PARAM_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim)) if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape)
        out[name] = arr.astype(np.float32)
    if pos != len(blob):
        raise DataError(f"{path}: trailing bytes in parameter file")
    return out
