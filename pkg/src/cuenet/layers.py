"""Hand-wired forward/backward passes for every layer type CueNet needs.

Each layer class keeps what it needs for the backward pass from its most
recent forward call. Parameters live in ``layer.params`` and gradients in
``layer.grads`` under the same keys; ``backward`` *adds* into ``grads`` so that
mini-batches can be accumulated, and ``zero_grad`` resets them.

Feature maps are single samples laid out as ``[channels, height, width]``.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, hadamard, matvec, require_same_dims, transpose2d


class CacheError(RuntimeError):
    """Backward was called without a matching forward."""


# ---------------------------------------------------------------------------
# activations


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid_prime(z: np.ndarray) -> np.ndarray:
    s = sigmoid(z)
    return s * (1.0 - s)


def relu_forward(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0)


def relu_backward(z: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    require_same_dims(z, upstream)
    return np.where(z > 0, upstream, 0).astype(upstream.dtype, copy=False)


def _relu_prime(z):
    return (z > 0).astype(z.dtype)


ACTIVATIONS = {
    "sigmoid": (sigmoid, sigmoid_prime),
    "relu": (relu_forward, _relu_prime),
    "identity": (lambda z: z.copy(), lambda z: np.ones_like(z)),
}


class Layer:
    """Base class: no parameters, identity shape."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0)

    def output_shape(self, shape):
        return tuple(shape)

    def forward(self, x, training=True):
        raise NotImplementedError

    def backward(self, upstream):
        raise NotImplementedError

    def _init_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self._z = None

    def forward(self, x, training=True):
        self._z = x
        return relu_forward(x)

    def backward(self, upstream):
        if self._z is None:
            raise CacheError("ReLU.backward called before forward")
        return relu_backward(self._z, upstream)


# ---------------------------------------------------------------------------
# dense layers (the backprop derivation in its original vector form)


class DenseLayer(Layer):
    """Fully connected layer ``a = act(w @ a_prev + b)``.

    ``w`` has dims [n_out, n_in] so that ``w[j, k]`` connects input neuron k
    to output neuron j.
    """

    def __init__(self, w: np.ndarray, b: np.ndarray, activation: str = "sigmoid"):
        super().__init__()
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ShapeError(f"weight rows must equal bias length: {w.shape} vs {b.shape}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.params = {"w": w, "b": b}
        self.activation = activation
        self.z = None
        self.a_prev = None
        self._init_grads()

    @classmethod
    def initialized(cls, n_in, n_out, rng, activation="sigmoid", dtype=np.float32):
        w = rng.standard_normal((n_out, n_in)) * np.sqrt(2.0 / n_in)
        return cls(w.astype(dtype), np.zeros(n_out, dtype), activation)

    @property
    def w(self):
        return self.params["w"]

    @property
    def b(self):
        return self.params["b"]

    def act(self, z):
        return ACTIVATIONS[self.activation][0](z)

    def act_prime(self, z):
        return ACTIVATIONS[self.activation][1](z)

    def output_shape(self, shape):
        return (self.w.shape[0],)

    def forward(self, x, training=True):
        return dense_forward(self, x)

    def backward(self, upstream):
        """Backward from dL/da of this layer's output; returns dL/da_prev."""
        if self.z is None:
            raise CacheError("DenseLayer.backward called before forward")
        delta = hadamard(upstream, self.act_prime(self.z))
        gw, gb = dense_param_grads(delta, self.a_prev)
        self.grads["w"] += gw
        self.grads["b"] += gb
        return matvec(transpose2d(self.w), delta)


def dense_forward(layer: DenseLayer, a_prev: np.ndarray) -> np.ndarray:
    """Compute ``a = act(z)`` with ``z = w @ a_prev + b``; caches ``z`` and ``a_prev``."""
    if a_prev.shape != (layer.w.shape[1],):
        raise ShapeError(f"expected input dims [{layer.w.shape[1]}], got {list(a_prev.shape)}")
    z = matvec(layer.w, a_prev) + layer.b
    layer.z = z
    layer.a_prev = a_prev
    return layer.act(z)


def dense_backward_output(layer: DenseLayer, a_out, label, loss_kind="quadratic"):
    """Output-layer error: dL/da elementwise-times act'(z).

    For the quadratic loss dL/da is ``a_out - label``.
    """
    if layer.z is None:
        raise CacheError("output error requested before forward")
    require_same_dims(a_out, label, "output/label")
    if loss_kind == "quadratic":
        grad_a = a_out - label
    elif loss_kind == "l1":
        grad_a = -np.sign(label - a_out)
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    return hadamard(grad_a, layer.act_prime(layer.z))


def dense_backward_hidden(w_next: np.ndarray, delta_next: np.ndarray, z_this: np.ndarray,
                          act_prime=sigmoid_prime) -> np.ndarray:
    """Move the error one layer back: ``(w_next.T @ delta_next) * act'(z_this)``."""
    return hadamard(matvec(transpose2d(w_next), delta_next), act_prime(z_this))


def dense_param_grads(delta: np.ndarray, a_prev: np.ndarray):
    """Return ``(dL/dw, dL/db)``; ``dL/dw[j, k] = a_prev[k] * delta[j]``."""
    if delta.ndim != 1 or a_prev.ndim != 1:
        raise ShapeError("delta and a_prev must be rank 1")
    return np.outer(delta, a_prev), delta.copy()


# ---------------------------------------------------------------------------
# convolution


def _pad(x, p):
    if p == 0:
        return x
    c, h, w = x.shape
    xp = np.zeros((c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    xp[:, p:p + h, p:p + w] = x
    return xp


def _im2col(xp, k, h, w):
    c = xp.shape[0]
    cols = np.empty((c, k, k, h, w), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, i:i + h, j:j + w]
    return cols.reshape(c * k * k, h * w)


def _conv_gemm(xp, kernels, bias, h, w):
    o, c, k, _ = kernels.shape
    cols = _im2col(xp, k, h, w)
    out = kernels.reshape(o, c * k * k) @ cols
    out += bias[:, None]
    return out.reshape(o, h, w), cols


def _conv_direct(xp, kernels, bias, h, w):
    # Accumulates products in (in_channel, row, col) tap order, then adds the
    # bias, which is the same order a naive nested loop uses.
    o, c, k, _ = kernels.shape
    out = np.zeros((o, h, w), dtype=xp.dtype)
    for ci in range(c):
        for i in range(k):
            for j in range(k):
                out += kernels[:, ci, i, j, None, None] * xp[None, ci, i:i + h, j:j + w]
    out += bias[:, None, None]
    return out


class Conv2D(Layer):
    """Same-size cross-correlation: odd square kernel, stride 1, zero padding k//2.

    ``method`` selects the forward kernel: ``"gemm"`` (im2col + matrix
    multiply), ``"direct"`` (ordered tap accumulation, bit-reproducible against
    a naive loop), or ``"auto"`` which uses direct for float64 and gemm
    otherwise.
    """

    def __init__(self, kernels: np.ndarray, bias: np.ndarray, method: str = "auto"):
        super().__init__()
        if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3] or kernels.shape[2] % 2 == 0:
            raise ShapeError(f"kernels must be [out, in, k, k] with odd k, got {kernels.shape}")
        if bias.shape != (kernels.shape[0],):
            raise ShapeError(f"bias dims {bias.shape} do not match {kernels.shape[0]} output channels")
        self.params = {"w": kernels, "b": bias}
        self.method = method
        self._xp = None
        self._cols = None
        self._in_shape = None
        self._init_grads()

    @classmethod
    def initialized(cls, in_ch, out_ch, rng, kernel_size=3, dtype=np.float32, method="auto"):
        fan_in = in_ch * kernel_size * kernel_size
        w = rng.standard_normal((out_ch, in_ch, kernel_size, kernel_size)) * np.sqrt(2.0 / fan_in)
        return cls(w.astype(dtype), np.zeros(out_ch, dtype), method)

    @property
    def in_channels(self):
        return self.params["w"].shape[1]

    @property
    def out_channels(self):
        return self.params["w"].shape[0]

    @property
    def kernel_size(self):
        return self.params["w"].shape[2]

    def output_shape(self, shape):
        if shape[0] != self.in_channels:
            raise ShapeError(f"conv expects {self.in_channels} input channels, got {shape[0]}")
        return (self.out_channels,) + tuple(shape[1:])

    def forward(self, x, training=True):
        if x.ndim != 3 or x.shape[0] != self.in_channels:
            raise ShapeError(f"conv expects [{self.in_channels}, H, W] input, got {list(x.shape)}")
        kern, bias = self.params["w"], self.params["b"]
        _, h, w = x.shape
        xp = _pad(x, self.kernel_size // 2)
        method = self.method
        if method == "auto":
            method = "direct" if x.dtype == np.float64 else "gemm"
        if method == "gemm":
            out, self._cols = _conv_gemm(xp, kern, bias, h, w)
        elif method == "direct":
            out, self._cols = _conv_direct(xp, kern, bias, h, w), None
        else:
            raise ValueError(f"unknown conv method {method!r}")
        self._xp = xp
        self._in_shape = x.shape
        return out

    def backward(self, upstream):
        if self._xp is None:
            raise CacheError("Conv2D.backward called before forward")
        c, h, w = self._in_shape
        o, _, k, _ = self.params["w"].shape
        if upstream.shape != (o, h, w):
            raise ShapeError(f"upstream dims {list(upstream.shape)} != output dims {[o, h, w]}")
        cols = self._cols if self._cols is not None else _im2col(self._xp, k, h, w)
        dy = upstream.reshape(o, h * w)
        self.grads["w"] += (dy @ cols.T).reshape(self.params["w"].shape)
        self.grads["b"] += dy.sum(axis=1)
        dcols = (self.params["w"].reshape(o, -1).T @ dy).reshape(c, k, k, h, w)
        p = k // 2
        dxp = np.zeros((c, h + 2 * p, w + 2 * p), dtype=upstream.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + h, j:j + w] += dcols[:, i, j]
        return dxp[:, p:p + h, p:p + w].copy()


def conv2d_forward(layer: Conv2D, x: np.ndarray) -> np.ndarray:
    return layer.forward(x)


def conv2d_backward(layer: Conv2D, upstream: np.ndarray):
    """Return ``(input_grad, {"w": dw, "b": db})`` for this upstream alone."""
    saved = {k: g.copy() for k, g in layer.grads.items()}
    layer.zero_grad()
    dx = layer.backward(upstream)
    grads = {k: g.copy() for k, g in layer.grads.items()}
    for k, g in saved.items():
        layer.grads[k] = g + grads[k]
    return dx, grads


# ---------------------------------------------------------------------------
# pooling and upsampling


def _check_even(x, op):
    if x.ndim != 3:
        raise ShapeError(f"{op} expects [C, H, W], got {list(x.shape)}")
    if x.shape[1] % 2 or x.shape[2] % 2:
        raise ShapeError(f"{op} needs even spatial dims, got {x.shape[1]}x{x.shape[2]}")


def _blocks(x):
    # [C, H, W] -> [C, H/2, W/2, 4], block elements in row-major order
    c, h, w = x.shape
    return x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)


def _unblocks(b):
    c, h2, w2, _ = b.shape
    return b.reshape(c, h2, w2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, 2 * h2, 2 * w2)


def maxpool2x2_forward(x: np.ndarray):
    """2x2/stride-2 max pooling. Returns ``(out, argmax)``.

    ``argmax`` holds, per output pixel, the position 0..3 inside its block in
    row-major order; ties go to the first position.
    """
    _check_even(x, "max pooling")
    blocks = _blocks(x)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2x2_backward(argmax: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    if argmax is None:
        raise CacheError("max-pool backward needs argmax indices from forward")
    if argmax.shape != upstream.shape:
        raise ShapeError(f"argmax dims {argmax.shape} do not match upstream {upstream.shape}")
    blocks = np.zeros(upstream.shape + (4,), dtype=upstream.dtype)
    np.put_along_axis(blocks, argmax[..., None], upstream[..., None], axis=-1)
    return _unblocks(blocks)


def avgpool2x2(x: np.ndarray) -> np.ndarray:
    _check_even(x, "average pooling")
    return _blocks(x).mean(axis=-1)


def upsample2x2_forward(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbour upsampling: each pixel becomes a 2x2 block."""
    return x.repeat(2, axis=1).repeat(2, axis=2)


def upsample2x2_backward(upstream: np.ndarray) -> np.ndarray:
    _check_even(upstream, "upsampling backward")
    return _blocks(upstream).sum(axis=-1)


class MaxPool2x2(Layer):
    def __init__(self):
        super().__init__()
        self._argmax = None

    def output_shape(self, shape):
        c, h, w = shape
        if h % 2 or w % 2:
            raise ShapeError(f"max pooling needs even spatial dims, got {h}x{w}")
        return (c, h // 2, w // 2)

    def forward(self, x, training=True):
        out, self._argmax = maxpool2x2_forward(x)
        return out

    def backward(self, upstream):
        return maxpool2x2_backward(self._argmax, upstream)


class Upsample2x2(Layer):
    def output_shape(self, shape):
        c, h, w = shape
        return (c, 2 * h, 2 * w)

    def forward(self, x, training=True):
        return upsample2x2_forward(x)

    def backward(self, upstream):
        return upsample2x2_backward(upstream)


# ---------------------------------------------------------------------------
# normalization


class BatchNorm(Layer):
    """Per-channel normalization with learned scale and shift.

    Training is done one sample at a time, so in training mode each channel is
    normalized with the mean and (biased) variance of its own H x W plane, and
    running estimates are updated with ``momentum``. Evaluation mode uses the
    running estimates.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1, dtype=np.float32):
        super().__init__()
        if channels <= 0:
            raise ShapeError("BatchNorm needs at least one channel")
        if not 0 < momentum < 1 or eps <= 0:
            raise ValueError("momentum must be in (0, 1) and eps positive")
        self.params = {"gamma": np.ones(channels, dtype), "beta": np.zeros(channels, dtype)}
        self.running_mean = np.zeros(channels, dtype)
        self.running_var = np.ones(channels, dtype)
        self.eps = eps
        self.momentum = momentum
        self._cache = None
        self._init_grads()

    @property
    def channels(self):
        return self.params["gamma"].shape[0]

    def output_shape(self, shape):
        if shape[0] != self.channels:
            raise ShapeError(f"BatchNorm expects {self.channels} channels, got {shape[0]}")
        return tuple(shape)

    def forward(self, x, training=True, update_stats=True):
        if x.ndim != 3 or x.shape[0] != self.channels:
            raise ShapeError(f"BatchNorm expects [{self.channels}, H, W], got {list(x.shape)}")
        gamma = self.params["gamma"][:, None, None]
        beta = self.params["beta"][:, None, None]
        if training:
            mean = x.mean(axis=(1, 2), keepdims=True)
            centered = x - mean
            var = (centered * centered).mean(axis=(1, 2), keepdims=True)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            if update_stats:
                m = self.momentum
                self.running_mean = ((1 - m) * self.running_mean + m * mean[:, 0, 0]).astype(x.dtype)
                self.running_var = ((1 - m) * self.running_var + m * var[:, 0, 0]).astype(x.dtype)
        else:
            centered = x - self.running_mean[:, None, None].astype(x.dtype)
            inv_std = (1.0 / np.sqrt(self.running_var + self.eps))[:, None, None].astype(x.dtype)
        xhat = centered * inv_std
        self._cache = (xhat, inv_std, training)
        return gamma * xhat + beta

    def backward(self, upstream):
        if self._cache is None:
            raise CacheError("BatchNorm.backward called before forward")
        xhat, inv_std, training = self._cache
        require_same_dims(xhat, upstream, "upstream/forward output")
        self.grads["gamma"] += (upstream * xhat).sum(axis=(1, 2))
        self.grads["beta"] += upstream.sum(axis=(1, 2))
        g = upstream * self.params["gamma"][:, None, None]
        if not training:
            return g * inv_std
        n = xhat.shape[1] * xhat.shape[2]
        sum_g = g.sum(axis=(1, 2), keepdims=True)
        sum_gx = (g * xhat).sum(axis=(1, 2), keepdims=True)
        return inv_std * (g - sum_g / n - xhat * (sum_gx / n))


def batchnorm_forward(params: BatchNorm, x, mode="train"):
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return params.forward(x, training=(mode == "train"))


def batchnorm_backward(params: BatchNorm, upstream):
    """Return ``(input_grad, {"gamma": ..., "beta": ...})`` for this upstream alone."""
    saved = {k: g.copy() for k, g in params.grads.items()}
    params.zero_grad()
    dx = params.backward(upstream)
    grads = {k: g.copy() for k, g in params.grads.items()}
    for k, g in saved.items():
        params.grads[k] = g + grads[k]
    return dx, grads


# ---------------------------------------------------------------------------
# spatial softmax


def spatial_softmax_forward(x: np.ndarray) -> np.ndarray:
    """Softmax jointly over every pixel of a single-channel map."""
    if x.ndim != 3 or x.shape[0] != 1:
        raise ShapeError(f"spatial softmax expects [1, H, W], got {list(x.shape)}")
    e = np.exp(x - x.max())
    return e / e.sum()


def spatial_softmax_backward(output: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    require_same_dims(output, upstream, "softmax output/upstream")
    return output * (upstream - (upstream * output).sum())


class SpatialSoftmax(Layer):
    def __init__(self):
        super().__init__()
        self._out = None

    def output_shape(self, shape):
        if shape[0] != 1:
            raise ShapeError(f"spatial softmax needs one channel, got {shape[0]}")
        return tuple(shape)

    def forward(self, x, training=True):
        self._out = spatial_softmax_forward(x)
        return self._out

    def backward(self, upstream):
        if self._out is None:
            raise CacheError("SpatialSoftmax.backward called before forward")
        return spatial_softmax_backward(self._out, upstream)
