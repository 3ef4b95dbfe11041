"""CueNet: a VGG-style encoder with a nearest-upsampling decoder and a
spatial-softmax head, plus a binary checkpoint format.

Stage layout (13 convolutions, 3x3, padding 1, each followed by ReLU and
BatchNorm)::

    conv1 conv2 | pool1 | conv3 conv4 | pool2 | conv5 conv6 conv7 |
    ups1 | conv8 conv9 conv10 | ups2 | conv11 conv12 conv13 |
    head (1x1 conv to one channel) | spatial softmax
"""

from __future__ import annotations

import dataclasses
import json
import struct
import zlib
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .layers import (
    BatchNorm,
    CacheError,
    Conv2D,
    DenseLayer,
    MaxPool2x2,
    ReLU,
    SpatialSoftmax,
    Upsample2x2,
    dense_backward_hidden,
    dense_backward_output,
    dense_forward,
    dense_param_grads,
)
from .tensor import ShapeError, Shape2D

DEFAULT_WIDTHS = (64, 64, 128, 128, 256, 256, 256, 128, 128, 128, 64, 64, 64)
# number of convolutions in each stage; a pool follows stages 0-1 and an
# upsample follows stages 2-3
STAGES = (2, 2, 3, 3, 3)

MAGIC = b"CUE1"
FORMAT_VERSION = 1


def scaled_widths(factor: float, widths=DEFAULT_WIDTHS) -> tuple[int, ...]:
    """Channel widths multiplied by ``factor`` (at least one channel each)."""
    return tuple(max(1, int(round(w * factor))) for w in widths)


@dataclass
class NetworkConfig:
    version: str = "v2"
    height: int = 180
    width: int = 240
    scale: float = 1.0
    widths: tuple = DEFAULT_WIDTHS
    dtype: str = "float32"
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        self.version = self.version.lower()
        if self.version not in ("v1", "v2"):
            raise ValueError(f"version must be v1 or v2, got {self.version!r}")
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) != sum(STAGES):
            raise ValueError(f"need {sum(STAGES)} channel widths, got {len(self.widths)}")
        if any(w <= 0 for w in self.widths):
            raise ValueError("channel widths must be positive")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        h, w = self.input_hw
        if h % 4 or w % 4:
            raise ShapeError(f"input {w}x{h} (WxH) is not divisible by 4 in both dims")

    @property
    def channels(self) -> int:
        return 1 if self.version == "v1" else 3

    @property
    def input_hw(self) -> tuple[int, int]:
        s = Fraction(self.scale).limit_denominator(1 << 16)
        h, w = self.height * s, self.width * s
        if h.denominator != 1 or w.denominator != 1:
            raise ShapeError(f"scale {self.scale} does not give integer input dims")
        return int(h), int(w)

    @property
    def input_shape(self) -> Shape2D:
        h, w = self.input_hw
        return Shape2D(h, w, self.channels)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)

    def compatible_with(self, other: "NetworkConfig") -> bool:
        a, b = self.to_dict(), other.to_dict()
        for d in (a, b):
            d.pop("dtype")
        return a == b


class Network:
    """Ordered list of named layers; owns parameters and their gradients."""

    def __init__(self, config: NetworkConfig, layers: list[tuple[str, object]]):
        self.config = config
        self.layers = layers
        self._fresh = False
        self.shape_trace()  # validates that layer dims chain end to end

    # -- structure -----------------------------------------------------------

    def shape_trace(self) -> list[tuple[str, tuple[int, ...]]]:
        shape = self.config.input_shape.dims
        trace = [("input", shape)]
        for name, layer in self.layers:
            shape = layer.output_shape(shape)
            trace.append((name, shape))
        return trace

    def named_parameters(self):
        for lname, layer in self.layers:
            for pname, p in layer.params.items():
                yield f"{lname}.{pname}", p, layer.grads[pname]

    def parameters(self) -> list[np.ndarray]:
        return [p for _, p, _ in self.named_parameters()]

    def gradients(self) -> list[np.ndarray]:
        return [g for _, _, g in self.named_parameters()]

    def buffers(self):
        for lname, layer in self.layers:
            if isinstance(layer, BatchNorm):
                yield f"{lname}.running_mean", layer, "running_mean"
                yield f"{lname}.running_var", layer, "running_var"

    def state(self) -> dict[str, np.ndarray]:
        """Copy of every parameter and running statistic, keyed by name."""
        out = {name: p.copy() for name, p, _ in self.named_parameters()}
        for name, layer, attr in self.buffers():
            out[name] = getattr(layer, attr).copy()
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p, _ in self.named_parameters():
            if state[name].shape != p.shape:
                raise ShapeError(f"{name}: stored dims {state[name].shape} != {p.shape}")
            p[...] = state[name]
        for name, layer, attr in self.buffers():
            setattr(layer, attr, state[name].astype(self.dtype).copy())

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def checksum(self) -> int:
        crc = 0
        for _, p, _ in self.named_parameters():
            crc = zlib.crc32(np.ascontiguousarray(p).tobytes(), crc)
        return crc

    def zero_grad(self):
        for _, layer in self.layers:
            layer.zero_grad()

    # -- passes ----------------------------------------------------------------

    def forward(self, x: np.ndarray, training: bool = False, update_stats: bool = True) -> np.ndarray:
        """Return the [1, H, W] probability heatmap for a [C, H, W] input.

        ``training`` selects per-sample normalization statistics; running
        statistics are only updated when ``update_stats`` is also true.
        """
        expected = self.config.input_shape.dims
        if tuple(x.shape) != expected:
            raise ShapeError(f"input dims {list(x.shape)} != expected {list(expected)}")
        x = np.asarray(x, dtype=self.dtype)
        for _, layer in self.layers:
            if isinstance(layer, BatchNorm):
                x = layer.forward(x, training=training, update_stats=update_stats)
            else:
                x = layer.forward(x, training=training)
        self._fresh = True
        return x

    def backward(self, heatmap_grad: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients for dL/d(heatmap); returns dL/d(input)."""
        if not self._fresh:
            raise CacheError("backward requires a forward pass since the last backward")
        g = np.asarray(heatmap_grad, dtype=self.dtype)
        for _, layer in reversed(self.layers):
            g = layer.backward(g)
        self._fresh = False
        return g


def build_network(cfg: NetworkConfig, seed: int = 0) -> Network:
    rng = np.random.default_rng(seed)
    dtype = np.dtype(cfg.dtype)
    layers: list[tuple[str, object]] = []
    in_ch = cfg.channels
    idx = 0
    for stage, n_conv in enumerate(STAGES):
        for _ in range(n_conv):
            out_ch = cfg.widths[idx]
            idx += 1
            name = f"conv{idx}"
            layers.append((name, Conv2D.initialized(in_ch, out_ch, rng, 3, dtype)))
            layers.append((f"{name}.relu", ReLU()))
            layers.append((f"{name}.bn", BatchNorm(out_ch, cfg.bn_eps, cfg.bn_momentum, dtype)))
            in_ch = out_ch
        if stage < 2:
            layers.append((f"pool{stage + 1}", MaxPool2x2()))
        elif stage < 4:
            layers.append((f"ups{stage - 1}", Upsample2x2()))
    layers.append(("head", Conv2D.initialized(in_ch, 1, rng, 1, dtype)))
    layers.append(("softmax", SpatialSoftmax()))
    return Network(cfg, layers)


# ---------------------------------------------------------------------------
# checkpoints


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


def checkpoint_bytes(net: Network) -> bytes:
    """Serialize ``net``: magic, u16 version, config JSON, tensors, CRC32.

    All integers and floats are little-endian; tensors are stored as float32.
    """
    parts = [MAGIC, struct.pack("<H", FORMAT_VERSION)]
    cfg = json.dumps(net.config.to_dict(), sort_keys=True).encode()
    parts.append(struct.pack("<I", len(cfg)) + cfg)
    state = net.state()
    parts.append(struct.pack("<I", len(state)))
    for name, arr in state.items():
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(net: Network, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(net))


def parse_checkpoint(data: bytes, config: NetworkConfig | None = None) -> Network:
    if len(data) < 10 or data[:4] != MAGIC:
        raise BadMagicError("not a CueNet checkpoint (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("checkpoint CRC32 mismatch")
    (version,) = struct.unpack_from("<H", body, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    pos = 6
    (n,) = struct.unpack_from("<I", body, pos)
    pos += 4
    stored = NetworkConfig.from_dict(json.loads(body[pos:pos + n].decode()))
    pos += n
    if config is not None and not stored.compatible_with(config):
        raise ConfigMismatchError(
            f"checkpoint holds a {stored.version} network with config {stored.to_dict()}, "
            f"incompatible with requested {config.to_dict()}")
    if config is not None:
        stored.dtype = config.dtype
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    state = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos:pos + ln].decode()
        pos += ln
        (rank,) = struct.unpack_from("<B", body, pos)
        pos += 1
        dims = struct.unpack_from(f"<{rank}I", body, pos)
        pos += 4 * rank
        size = int(np.prod(dims))
        state[name] = np.frombuffer(body, dtype="<f4", count=size, offset=pos).reshape(dims)
        pos += 4 * size
    if pos != len(body):
        raise CheckpointError("trailing bytes after checkpoint tensors")
    net = build_network(stored, seed=0)
    missing = {name for name in net.state()} - set(state)
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors: {sorted(missing)}")
    net.load_state(state)
    return net


def load_checkpoint(path, config: NetworkConfig | None = None) -> Network:
    return parse_checkpoint(Path(path).read_bytes(), config)


# ---------------------------------------------------------------------------
# fully connected toy networks


class DenseNetwork:
    """A stack of :class:`~cuenet.layers.DenseLayer` used to exercise the
    layer-by-layer error recursion on small problems."""

    def __init__(self, layers):
        self.layers = [(f"dense{i + 1}", layer) for i, layer in enumerate(layers)]
        self._fresh = False

    @classmethod
    def build(cls, sizes, seed=0, activation="sigmoid", dtype=np.float64):
        rng = np.random.default_rng(seed)
        return cls([DenseLayer.initialized(a, b, rng, activation, dtype)
                    for a, b in zip(sizes[:-1], sizes[1:])])

    named_parameters = Network.named_parameters
    parameters = Network.parameters
    gradients = Network.gradients
    zero_grad = Network.zero_grad

    def forward(self, x, training=True, update_stats=True):
        for _, layer in self.layers:
            x = dense_forward(layer, x)
        self._fresh = True
        return x

    def backward(self, grad_a):
        if not self._fresh:
            raise CacheError("backward requires a forward pass since the last backward")
        for _, layer in reversed(self.layers):
            grad_a = layer.backward(grad_a)
        self._fresh = False
        return grad_a

    def backprop(self, x, y):
        """Quadratic-loss gradients by the explicit error recursion.

        Feeds ``x`` forward, forms the output error, moves it back one layer at
        a time and returns ``[(dL/dw, dL/db), ...]`` per layer, first layer
        first. Does not touch ``grads``.
        """
        a = self.forward(x)
        self._fresh = False
        layers = [layer for _, layer in self.layers]
        delta = dense_backward_output(layers[-1], a, y, "quadratic")
        out = [dense_param_grads(delta, layers[-1].a_prev)]
        for nxt, this in zip(reversed(layers[1:]), reversed(layers[:-1])):
            delta = dense_backward_hidden(nxt.w, delta, this.z, this.act_prime)
            out.append(dense_param_grads(delta, this.a_prev))
        return out[::-1]
