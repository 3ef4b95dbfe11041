"""Optimizers and the train / validate / early-stopping loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .data.augment import AugmentParams, AugmentRejected, augment
from .metrics import LOSSES
from .network import Network, checkpoint_bytes, parse_checkpoint
from .tensor import ShapeError

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 1
    max_epochs: int = 20
    patience: int = 3
    seed: int = 0
    augment: bool = False
    augment_params: AugmentParams = field(default_factory=AugmentParams)
    loss: str = "l1"

    def __post_init__(self):
        self.optimizer = self.optimizer.lower()
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be nonnegative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be at least 1")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")


# ---------------------------------------------------------------------------
# optimizers


def _check_pairs(params, grads):
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"parameter dims {p.shape} != gradient dims {g.shape}")


def sgd_step(params, grads, lr: float):
    """In place ``p -= lr * g`` for every parameter; returns ``params``."""
    _check_pairs(params, grads)
    for p, g in zip(params, grads):
        p -= p.dtype.type(lr) * g
    return params


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def for_params(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(state: AdamState, params, grads, config: TrainConfig, t: int | None = None):
    """One bias-corrected Adam update, in place; advances ``state.t``."""
    _check_pairs(params, grads)
    _check_pairs(state.m, grads)
    t = state.t + 1 if t is None else t
    if t < 1:
        raise ValueError("Adam step count starts at 1")
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        dt = p.dtype.type
        m *= dt(b1)
        m += dt(1 - b1) * g
        v *= dt(b2)
        v += dt(1 - b2) * (g * g)
        p -= dt(config.learning_rate) * (m / dt(c1)) / (np.sqrt(v / dt(c2)) + dt(config.eps))
    state.t = t
    return params


class Optimizer:
    def __init__(self, params, config: TrainConfig):
        self.params = params
        self.config = config
        self.state = AdamState.for_params(params) if config.optimizer == "adam" else None

    def step(self, grads):
        if self.state is None:
            sgd_step(self.params, grads, self.config.learning_rate)
        else:
            adam_step(self.state, self.params, grads, self.config)


# ---------------------------------------------------------------------------
# loops


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, 0x7A1])


def _check_sample(net: Network, s, i: int):
    if tuple(s.frames.shape) != net.config.input_shape.dims:
        raise ShapeError(f"sample {i}: input dims {list(s.frames.shape)} do not match the "
                         f"network input {list(net.config.input_shape.dims)}")


def train_epoch(net: Network, train_set, cfg: TrainConfig, rng: np.random.Generator | None = None,
                optimizer: Optimizer | None = None, shuffle: bool = True) -> float:
    """One pass over ``train_set``; returns the mean per-sample training loss.

    Gradients are averaged over each mini-batch before the optimizer step.
    """
    train_set = list(train_set)
    if not train_set:
        raise ValueError("training set is empty")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    optimizer = optimizer if optimizer is not None else Optimizer(net.parameters(), cfg)
    loss_fn, grad_fn = LOSSES[cfg.loss]
    order = rng.permutation(len(train_set)) if shuffle else np.arange(len(train_set))
    total = 0.0
    grads = net.gradients()
    for start in range(0, len(order), cfg.batch_size):
        batch = order[start:start + cfg.batch_size]
        net.zero_grad()
        for i in batch:
            s = train_set[i]
            _check_sample(net, s, int(i))
            if cfg.augment:
                try:
                    s = augment(s, cfg.augment_params, rng)
                except AugmentRejected:
                    pass
            out = net.forward(s.frames, training=True)
            loss = loss_fn(out, s.label)
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at sample {int(i)}")
            total += loss
            net.backward(grad_fn(out, s.label))
        if len(batch) > 1:
            for g in grads:
                g /= g.dtype.type(len(batch))
        optimizer.step(grads)
    return total / len(train_set)


def validate(net: Network, validation_set, loss: str = "l1", training: bool = False) -> float:
    """Mean loss over ``validation_set`` without touching parameters or running stats.

    ``training=True`` normalizes with per-sample statistics, exactly as a
    training forward pass does, but still leaves running statistics alone.
    """
    validation_set = list(validation_set)
    if not validation_set:
        raise ValueError("validation set is empty")
    loss_fn = LOSSES[loss][0]
    total = 0.0
    for i, s in enumerate(validation_set):
        _check_sample(net, s, i)
        out = net.forward(s.frames, training=training, update_stats=False)
        total += loss_fn(out, s.label)
    return total / len(validation_set)


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without a new best validation loss."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0
        self.epoch = 0

    def update(self, val_loss: float) -> bool:
        """Record one epoch; returns True when training should stop."""
        self.epoch += 1
        if val_loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = val_loss, self.epoch, 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience

    @property
    def improved(self) -> bool:
        return self.best_epoch == self.epoch


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""
    best_checkpoint: bytes = b""

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch - 1]

    def to_csv(self) -> str:
        rows = ["epoch,train_loss,val_loss"]
        rows += [f"{e},{t:.9g},{v:.9g}"
                 for e, (t, v) in enumerate(zip(self.train_loss, self.val_loss), start=1)]
        return "\n".join(rows) + "\n"


def fit(net: Network, train_set, validation_set, cfg: TrainConfig, restore_best: bool = True,
        on_epoch=None) -> TrainHistory:
    """Alternate training and validation epochs with early stopping.

    The best-validation parameters are kept as a checkpoint in the returned
    history and, with ``restore_best``, loaded back into ``net`` at the end.
    """
    train_set, validation_set = list(train_set), list(validation_set)
    if not train_set or not validation_set:
        raise ValueError("fit needs nonempty training and validation sets")
    optimizer = Optimizer(net.parameters(), cfg)
    stopper = EarlyStopping(cfg.patience)
    history = TrainHistory()
    for epoch in range(1, cfg.max_epochs + 1):
        tl = train_epoch(net, train_set, cfg, _epoch_rng(cfg.seed, epoch), optimizer)
        vl = validate(net, validation_set, cfg.loss)
        history.train_loss.append(tl)
        history.val_loss.append(vl)
        stop = stopper.update(vl)
        if stopper.improved:
            history.best_checkpoint = checkpoint_bytes(net)
        log.info("epoch %d: train %.6f  val %.6f%s", epoch, tl, vl, "  *" if stopper.improved else "")
        if on_epoch is not None:
            on_epoch(epoch, tl, vl)
        if stop:
            history.stop_reason = "early_stop"
            break
    else:
        history.stop_reason = "max_epochs"
    history.best_epoch = stopper.best_epoch
    if restore_best and history.best_checkpoint:
        net.load_state(parse_checkpoint(history.best_checkpoint, net.config).state())
    return history
