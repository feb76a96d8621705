"""Trainable network layers: 3-D convolution, 3-D max pooling, dense
layers, activations, and the softmax cross-entropy loss.

Layer inputs and outputs are fourth-order arrays shaped (X, Y, Z, channels).
Convolution is cross-correlation (no kernel flip) summed over input
channels; boundary handling is "valid" or "same", where "same" pads the two
spatial axes symmetrically and leaves the spectral axis valid.  Forward and
backward passes are deterministic given parameters and input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensor import Tensor4, tensor4

PAD_MODES = ("valid", "same")
ACTIVATIONS = ("identity", "relu")


@dataclass
class LayerParams:
    """One trainable array together with its Adam moment buffers."""

    values: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def create(cls, values: np.ndarray) -> "LayerParams":
        values = np.asarray(values, dtype=np.float64)
        return cls(values=values, m=np.zeros_like(values), v=np.zeros_like(values))


@dataclass
class Conv3DLayer:
    kernels: LayerParams  # (channels_out, kx, ky, kz, channels_in)
    biases: LayerParams  # (channels_out,)
    stride: tuple[int, int, int]
    padding: str = "valid"
    activation: str = "relu"

    def __post_init__(self):
        if self.padding not in PAD_MODES:
            raise ValueError(f"padding must be one of {PAD_MODES}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if any(s < 1 for s in self.stride):
            raise ValueError("stride components must be >= 1")

    @property
    def kernel_shape(self) -> tuple[int, int, int]:
        return self.kernels.values.shape[1:4]

    @property
    def channels_in(self) -> int:
        return self.kernels.values.shape[4]

    @property
    def channels_out(self) -> int:
        return self.kernels.values.shape[0]


@dataclass
class MaxPool3DLayer:
    window: tuple[int, int, int]
    stride: tuple[int, int, int]
    padding: str = "valid"

    def __post_init__(self):
        if self.padding not in PAD_MODES:
            raise ValueError(f"padding must be one of {PAD_MODES}")
        if any(w < 1 for w in self.window) or any(s < 1 for s in self.stride):
            raise ValueError("window and stride components must be >= 1")


@dataclass
class DenseLayer:
    weights: LayerParams  # (out, in)
    biases: LayerParams  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        out_w, in_w = self.weights.values.shape
        if self.biases.values.shape != (out_w,):
            raise ValueError("bias shape inconsistent with weights")


@dataclass
class PoolCache:
    """Argmax record from a pooling forward pass, consumed by backward."""

    indices: np.ndarray  # flat indices into the unpadded input
    input_shape: tuple[int, int, int, int]


@dataclass
class ConvCache:
    cols: np.ndarray  # (batch*positions, kx*ky*kz*channels_in)
    pre: np.ndarray  # pre-activation output, batch-leading
    padded_shape: tuple
    pads: tuple[int, int, int, int, int, int]  # before/after per axis
    out_sp: tuple[int, int, int]


def gaussian_init(shape, stddev: float, seed: int) -> np.ndarray:
    """Zero-mean Gaussian draw, deterministic for a fixed seed."""
    if stddev <= 0:
        raise ValueError("stddev must be positive")
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, stddev, size=shape)


def new_conv3d(
    kernel: tuple[int, int, int],
    channels_in: int,
    channels_out: int,
    stride: tuple[int, int, int],
    padding: str,
    activation: str,
    seed: int,
    stddev: float = 0.05,
) -> Conv3DLayer:
    kx, ky, kz = kernel
    seeds = np.random.SeedSequence(seed).generate_state(2)
    kernels = gaussian_init((channels_out, kx, ky, kz, channels_in), stddev, int(seeds[0]))
    biases = gaussian_init((channels_out,), stddev, int(seeds[1]))
    return Conv3DLayer(
        kernels=LayerParams.create(kernels),
        biases=LayerParams.create(biases),
        stride=tuple(int(s) for s in stride),
        padding=padding,
        activation=activation,
    )


def new_dense(width_in: int, width_out: int, activation: str, seed: int) -> DenseLayer:
    seeds = np.random.SeedSequence(seed).generate_state(2)
    stddev = 1.0 / np.sqrt(width_in)
    weights = gaussian_init((width_out, width_in), stddev, int(seeds[0]))
    biases = gaussian_init((width_out,), stddev, int(seeds[1]))
    return DenseLayer(
        weights=LayerParams.create(weights),
        biases=LayerParams.create(biases),
        activation=activation,
    )


def _same_pad(extent: int, k: int, s: int) -> tuple[int, int]:
    out = -(-extent // s)  # ceil
    total = max((out - 1) * s + k - extent, 0)
    before = total // 2
    return before, total - before


def _pad_amounts(shape, kernel, stride, padding) -> tuple[int, int, int, int, int, int]:
    if padding == "valid":
        return (0, 0, 0, 0, 0, 0)
    bx, ax = _same_pad(shape[0], kernel[0], stride[0])
    by, ay = _same_pad(shape[1], kernel[1], stride[1])
    return (bx, ax, by, ay, 0, 0)  # spectral axis stays valid


def output_extent(extent: int, k: int, s: int) -> int:
    """Valid output size along one axis: floor((extent - k) / s) + 1."""
    return (extent - k) // s + 1


def _check_window(shape, kernel, what: str) -> None:
    for axis in range(3):
        if kernel[axis] > shape[axis]:
            raise ValueError(
                f"{what} extent {kernel} exceeds input extents {shape[:3]}"
            )


def _im2col_batch(xp: np.ndarray, kernel, stride):
    """Gather strided windows of (batch, X, Y, Z, C) into a matrix.

    Output rows are positions (batch-major), columns are (kx, ky, kz, C)
    in row-major order, matching kernels.reshape(channels_out, -1).  The
    gather runs one contiguous 5-D slice copy per kernel offset, which is
    far cheaper than reshaping an 8-D sliding-window view.
    """
    kx, ky, kz = kernel
    sx, sy, sz = stride
    b = xp.shape[0]
    c = xp.shape[4]
    ox = output_extent(xp.shape[1], kx, sx)
    oy = output_extent(xp.shape[2], ky, sy)
    oz = output_extent(xp.shape[3], kz, sz)
    cols = np.empty((b, ox, oy, oz, kx * ky * kz, c), dtype=xp.dtype)
    slot = 0
    for p in range(kx):
        for q in range(ky):
            for r in range(kz):
                cols[:, :, :, :, slot, :] = xp[
                    :,
                    p : p + sx * ox : sx,
                    q : q + sy * oy : sy,
                    r : r + sz * oz : sz,
                    :,
                ]
                slot += 1
    return cols.reshape(b * ox * oy * oz, -1), (ox, oy, oz)


def _col2im_batch(grad_cols: np.ndarray, padded_shape, kernel, stride, out_sp):
    """Scatter-add the inverse of `_im2col_batch`."""
    kx, ky, kz = kernel
    sx, sy, sz = stride
    ox, oy, oz = out_sp
    b, _, _, _, c = padded_shape
    grad_cols = grad_cols.reshape(b, ox, oy, oz, kx * ky * kz, c)
    grad_xp = np.zeros(padded_shape, dtype=grad_cols.dtype)
    slot = 0
    for p in range(kx):
        for q in range(ky):
            for r in range(kz):
                grad_xp[
                    :,
                    p : p + sx * ox : sx,
                    q : q + sy * oy : sy,
                    r : r + sz * oz : sz,
                    :,
                ] += grad_cols[:, :, :, :, slot, :]
                slot += 1
    return grad_xp


def _apply_activation(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(pre, 0.0)
    return pre


def _activation_grad(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (pre > 0.0).astype(pre.dtype)
    return np.ones_like(pre)


def _conv3d_forward_batch(layer: Conv3DLayer, xb: np.ndarray, keep_cache: bool):
    """Batched convolution core: xb is (batch, X, Y, Z, C_in)."""
    if xb.shape[4] != layer.channels_in:
        raise ValueError(
            f"input has {xb.shape[4]} channels, layer expects {layer.channels_in}"
        )
    kernel = layer.kernel_shape
    pads = _pad_amounts(xb.shape[1:], kernel, layer.stride, layer.padding)
    xp = np.pad(
        xb,
        ((0, 0), (pads[0], pads[1]), (pads[2], pads[3]), (pads[4], pads[5]), (0, 0)),
    )
    _check_window(xp.shape[1:], kernel, "kernel")
    cols, out_sp = _im2col_batch(xp, kernel, layer.stride)
    w2 = layer.kernels.values.reshape(layer.channels_out, -1).T
    w2 = w2.astype(xb.dtype, copy=False)
    biases = layer.biases.values.astype(xb.dtype, copy=False)
    pre = (cols @ w2 + biases).reshape(
        (xb.shape[0],) + out_sp + (layer.channels_out,)
    )
    cache = None
    if keep_cache:
        cache = ConvCache(
            cols=cols, pre=pre, padded_shape=xp.shape, pads=pads, out_sp=out_sp
        )
    return _apply_activation(pre, layer.activation), cache


def _conv3d_backward_batch(layer: Conv3DLayer, cache: ConvCache, upstream: np.ndarray):
    """Batched gradients; parameter grads are sums over the batch."""
    g = upstream * _activation_grad(cache.pre, layer.activation)
    co = layer.channels_out
    g2 = g.reshape(-1, co)
    grad_b = g2.sum(axis=0)
    grad_w = (cache.cols.T @ g2).T.reshape(layer.kernels.values.shape)
    w_flat = layer.kernels.values.reshape(co, -1).astype(g2.dtype, copy=False)
    grad_cols = g2 @ w_flat
    grad_xp = _col2im_batch(
        grad_cols, cache.padded_shape, layer.kernel_shape, layer.stride, cache.out_sp
    )
    bx, ax, by, ay, bz, az = cache.pads
    grad_x = grad_xp[
        :,
        bx : grad_xp.shape[1] - ax,
        by : grad_xp.shape[2] - ay,
        bz : grad_xp.shape[3] - az,
    ]
    return np.ascontiguousarray(grad_x), {"kernels": grad_w, "biases": grad_b}


def conv3d_forward(
    layer: Conv3DLayer, x: Tensor4, cache: Optional[list] = None
) -> Tensor4:
    """Strided cross-correlation over (x, y, z) summed across input
    channels, plus per-channel bias, then the layer activation."""
    x = tensor4(x)
    keep = cache is not None
    out, batch_cache = _conv3d_forward_batch(layer, x[None], keep)
    if keep:
        cache.append(batch_cache)
    return out[0]


def conv3d_backward(
    layer: Conv3DLayer,
    x: Tensor4,
    upstream: Tensor4,
    cache: Optional[ConvCache] = None,
):
    """Gradients of a scalar loss w.r.t. the input and the parameters.

    Returns (grad_x, {"kernels": ..., "biases": ...}).
    """
    x = tensor4(x)
    if cache is None:
        scratch: list = []
        conv3d_forward(layer, x, cache=scratch)
        cache = scratch[0]
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != cache.pre.shape[1:]:
        raise ValueError(
            f"upstream gradient shape {upstream.shape} != output shape "
            f"{cache.pre.shape[1:]}"
        )
    grad_x, grads = _conv3d_backward_batch(layer, cache, upstream[None])
    return grad_x[0], grads


def _maxpool3d_forward_batch(layer: MaxPool3DLayer, xb: np.ndarray):
    """Batched pooling core; returns (out, (flat argmax indices, shape)).

    A running maximum is kept across window slots scanned in (wx, wy, wz)
    row-major order; only a strictly greater value replaces the incumbent,
    so argmax ties resolve to the first position in scan order.
    """
    pads = _pad_amounts(xb.shape[1:], layer.window, layer.stride, layer.padding)
    xp = np.pad(
        xb,
        ((0, 0), (pads[0], pads[1]), (pads[2], pads[3]), (pads[4], pads[5]), (0, 0)),
        constant_values=-np.inf,
    )
    _check_window(xp.shape[1:], layer.window, "pooling window")
    wx, wy, wz = layer.window
    sx, sy, sz = layer.stride
    ox = output_extent(xp.shape[1], wx, sx)
    oy = output_extent(xp.shape[2], wy, sy)
    oz = output_extent(xp.shape[3], wz, sz)
    best = None
    best_slot = None
    slot = 0
    for p in range(wx):
        for q in range(wy):
            for r in range(wz):
                view = xp[
                    :,
                    p : p + sx * ox : sx,
                    q : q + sy * oy : sy,
                    r : r + sz * oz : sz,
                    :,
                ]
                if slot == 0:
                    best = view.copy()
                    best_slot = np.zeros(best.shape, dtype=np.int64)
                else:
                    mask = view > best
                    np.copyto(best, view, where=mask)
                    best_slot[mask] = slot
                slot += 1
    lx, rem = np.divmod(best_slot, wy * wz)
    ly, lz = np.divmod(rem, wz)
    b, c = xb.shape[0], xb.shape[4]
    X, Y, Z = xb.shape[1:4]
    gx = np.arange(ox)[None, :, None, None, None] * sx + lx - pads[0]
    gy = np.arange(oy)[None, None, :, None, None] * sy + ly - pads[2]
    gz = np.arange(oz)[None, None, None, :, None] * sz + lz - pads[4]
    gb = np.arange(b)[:, None, None, None, None]
    gc = np.arange(c)[None, None, None, None, :]
    indices = ((gb * X + gx) * Y + gy) * Z * c + gz * c + gc
    return best, (indices, xb.shape)


def _maxpool3d_backward_batch(pool_record, upstream: np.ndarray) -> np.ndarray:
    indices, input_shape = pool_record
    grad = np.zeros(int(np.prod(input_shape)), dtype=upstream.dtype)
    np.add.at(grad, indices.ravel(), upstream.ravel())
    return grad.reshape(input_shape)


def maxpool3d_forward(layer: MaxPool3DLayer, x: Tensor4):
    """Per-window maximum; ties go to the first index in scan order.

    Returns (output, PoolCache); the cache records, per output cell, the
    flat index of the winning entry in the unpadded input.
    """
    x = tensor4(x)
    out, (indices, _) = _maxpool3d_forward_batch(layer, x[None])
    return out[0], PoolCache(indices=indices[0], input_shape=x.shape)


def maxpool3d_backward(cache: PoolCache, upstream: Tensor4) -> Tensor4:
    """Route each upstream entry to its recorded argmax location;
    overlapping windows accumulate."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != cache.indices.shape:
        raise ValueError(
            f"upstream shape {upstream.shape} does not match pooling output "
            f"shape {cache.indices.shape}"
        )
    grad = np.zeros(int(np.prod(cache.input_shape)))
    np.add.at(grad, cache.indices.ravel(), upstream.ravel())
    return grad.reshape(cache.input_shape)


def _dense_forward_batch(layer: DenseLayer, xb: np.ndarray, keep_cache: bool):
    w = layer.weights.values.astype(xb.dtype, copy=False)
    b = layer.biases.values.astype(xb.dtype, copy=False)
    pre = xb @ w.T + b
    return _apply_activation(pre, layer.activation), (pre if keep_cache else None)


def _dense_backward_batch(layer: DenseLayer, xb: np.ndarray, pre: np.ndarray, upstream):
    g = upstream * _activation_grad(pre, layer.activation)
    grad_w = g.T @ xb
    grad_b = g.sum(axis=0)
    grad_x = g @ layer.weights.values.astype(g.dtype, copy=False)
    return grad_x, {"weights": grad_w, "biases": grad_b}


def _softmax_cross_entropy_batch(logits: np.ndarray, labels: np.ndarray):
    """Row-wise loss and gradient; gradient rows are per-sample (unscaled)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(logits.shape[0])
    losses = log_z - shifted[rows, labels]
    grads = np.exp(shifted - log_z[:, None])
    grads[rows, labels] -= 1.0
    return losses, grads


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (layer.weights.values.shape[1],):
        raise ValueError(
            f"input length {x.shape} does not match weights "
            f"{layer.weights.values.shape}"
        )
    pre = layer.weights.values @ x + layer.biases.values
    return _apply_activation(pre, layer.activation)


def dense_backward(layer: DenseLayer, x: np.ndarray, upstream: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape != (layer.weights.values.shape[1],):
        raise ValueError("input shape mismatch")
    if upstream.shape != (layer.weights.values.shape[0],):
        raise ValueError("upstream shape mismatch")
    pre = layer.weights.values @ x + layer.biases.values
    g = upstream * _activation_grad(pre, layer.activation)
    grad_w = np.outer(g, x)
    grad_b = g
    grad_x = layer.weights.values.T @ g
    return grad_x, {"weights": grad_w, "biases": grad_b}


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    # Subgradient at exactly zero is fixed to 0.
    x = np.asarray(x, dtype=np.float64)
    return np.asarray(upstream, dtype=np.float64) * (x > 0.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_cross_entropy(logits: np.ndarray, label: int):
    """Stable negative log-likelihood of `label` under softmax(logits).

    Returns (loss, grad_logits) with grad = softmax(logits) - onehot(label).
    """
    logits = np.asarray(logits, dtype=np.float64)
    label = int(label)
    if not 0 <= label < logits.shape[0]:
        raise ValueError(f"label {label} out of range for {logits.shape[0]} classes")
    shifted = logits - logits.max()
    log_z = np.log(np.sum(np.exp(shifted)))
    loss = float(log_z - shifted[label])
    grad = np.exp(shifted - log_z)
    grad[label] -= 1.0
    return loss, grad
