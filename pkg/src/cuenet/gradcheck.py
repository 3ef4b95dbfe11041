"""Central-difference verification of analytic gradients."""

from __future__ import annotations

import math
import types
from dataclasses import dataclass

import numpy as np

from .layers import BatchNorm, Conv2D, DenseLayer, MaxPool2x2, ReLU, SpatialSoftmax, Upsample2x2
from .metrics import LOSSES
from .network import DenseNetwork, NetworkConfig, build_network


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    tolerance: float
    worst: str

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict}: max rel err {self.max_rel_error:.3e} over {self.checked} "
                f"parameters (tolerance {self.tolerance:g}, worst {self.worst})")


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """|a - n| / max(|a|, |n|, floor); the floor keeps gradients below the
    finite-difference noise level from dominating the report."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _loss(net, x, label, loss):
    out = net.forward(x, training=True, update_stats=False)
    value = LOSSES[loss][0](out, label)
    if not math.isfinite(value):
        raise FloatingPointError("non-finite loss during gradient check")
    return value, out


def grad_check(net, x, label, loss: str = "l1", h: float = 1e-5, tolerance: float = 1e-4,
               n_params: int = 50, seed: int = 0) -> GradCheckReport:
    """Compare backprop gradients against (L(p+h) - L(p-h)) / 2h.

    ``n_params`` scalar parameters are sampled uniformly (without replacement)
    across every parameter tensor of ``net``; all are checked when there are
    fewer.
    """
    net.zero_grad()
    _, out = _loss(net, x, label, loss)
    net.backward(LOSSES[loss][1](out, label))
    named = [(name, p, g.copy()) for name, p, g in net.named_parameters()]
    sizes = np.array([p.size for _, p, _ in named])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_params, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst, worst_name = 0.0, ""
    for flat in sorted(int(f) for f in picks):
        t = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, p, g = named[t]
        i = flat - offsets[t]
        pv = p.reshape(-1)
        orig = pv[i]
        pv[i] = orig + h
        lp, _ = _loss(net, x, label, loss)
        pv[i] = orig - h
        lm, _ = _loss(net, x, label, loss)
        pv[i] = orig
        numeric = (lp - lm) / (2 * h)
        err = relative_error(float(g.reshape(-1)[i]), numeric)
        if err > worst or not worst_name:
            worst, worst_name = err, f"{name}{[int(v) for v in np.unravel_index(i, p.shape)]}"
    return GradCheckReport(worst, len(picks), tolerance, worst_name)


def input_grad_check(net, x, label, loss="l1", h=1e-5, n_inputs=30, seed=0) -> float:
    """Max relative error of dL/d(input) over ``n_inputs`` sampled elements."""
    net.zero_grad()
    _, out = _loss(net, x, label, loss)
    dx = net.backward(LOSSES[loss][1](out, label))
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in rng.choice(x.size, size=min(n_inputs, x.size), replace=False):
        xp, xm = x.copy(), x.copy()
        xp.reshape(-1)[i] += h
        xm.reshape(-1)[i] -= h
        numeric = (_loss(net, xp, label, loss)[0] - _loss(net, xm, label, loss)[0]) / (2 * h)
        worst = max(worst, relative_error(float(dx.reshape(-1)[i]), numeric))
    return worst


# ---------------------------------------------------------------------------
# standard suites


def tiny_cuenet_config(version="v2", height=8, width=8, dtype="float64") -> NetworkConfig:
    return NetworkConfig(version=version, height=height, width=width,
                         widths=(2, 2, 4, 4, 4, 2, 2, 2, 2, 2, 2, 2, 2), dtype=dtype)


def dense_suite(precision="f64", seed=0, h=1e-5, tolerance=1e-6, corrupt=None) -> GradCheckReport:
    dtype = np.float64 if precision == "f64" else np.float32
    net = DenseNetwork.build([2, 3, 2], seed=seed, activation="sigmoid", dtype=dtype)
    if corrupt:
        corrupt_backward(net, corrupt)
    rng = np.random.default_rng(seed + 1)
    x = rng.uniform(-1, 1, 2).astype(dtype)
    y = rng.uniform(0, 1, 2).astype(dtype)
    return grad_check(net, x, y, "quadratic", h, tolerance, n_params=50, seed=seed)


def cuenet_suite(precision="f64", seed=0, h=1e-5, tolerance=1e-4, corrupt=None,
                 n_params=60) -> GradCheckReport:
    dtype = "float64" if precision == "f64" else "float32"
    cfg = tiny_cuenet_config(dtype=dtype)
    net = build_network(cfg, seed=seed)
    if corrupt:
        corrupt_backward(net, corrupt)
    rng = np.random.default_rng(seed + 1)
    x = rng.uniform(0, 1, cfg.input_shape.dims).astype(dtype)
    label = rng.uniform(0, 1, (1, cfg.height, cfg.width))
    label = (label / label.sum()).astype(dtype)
    return grad_check(net, x, label, "l1", h, tolerance, n_params=n_params, seed=seed)


_CORRUPTIBLE = {
    "relu": ReLU,
    "conv": Conv2D,
    "bn": BatchNorm,
    "pool": MaxPool2x2,
    "upsample": Upsample2x2,
    "softmax": SpatialSoftmax,
}


def corrupt_backward(net, kind: str) -> int:
    """Flip the sign of the input gradient returned by every layer of ``kind``.

    Test hook for checking that the harness notices a broken backward pass.
    ``"dense"`` targets dense layers. Returns the number of layers patched.
    """
    cls = DenseLayer if kind == "dense" else _CORRUPTIBLE.get(kind)
    if cls is None:
        raise ValueError(f"unknown layer kind {kind!r}")
    patched = 0
    for _, layer in net.layers:
        if isinstance(layer, cls):
            original = layer.backward

            def flipped(self, upstream, _orig=original):
                return -_orig(upstream)

            layer.backward = types.MethodType(flipped, layer)
            patched += 1
    return patched
