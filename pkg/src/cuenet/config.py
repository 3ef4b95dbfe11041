"""``key=value`` run configuration shared by every CLI command.

Values are layered: built-in defaults, then a config file, then command-line
overrides. Unknown keys are rejected at every layer.
"""

from __future__ import annotations

from pathlib import Path

from .data.augment import AugmentParams
from .data.synth import SynthConfig
from .network import NetworkConfig, scaled_widths
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


# key -> (default, description)
DEFAULTS: dict[str, tuple[str, str]] = {
    "seed": ("0", "master seed for network init, shuffling, splits and synthesis"),
    "network.version": ("v2", "v1 (one frame) or v2 (three stacked frames)"),
    "network.height": ("180", "input height before scaling"),
    "network.width": ("240", "input width before scaling"),
    "network.scale": ("1", "factor applied to height and width"),
    "network.width_factor": ("1", "multiplier on the default channel widths"),
    "data.path": ("", "dataset directory"),
    "data.sigma": ("2", "Gaussian label sigma in pixels"),
    "data.augment": ("false", "enable rotation/brightness/contrast augmentation"),
    "data.rotation": ("5", "max rotation in degrees"),
    "data.brightness": ("0.15", "max brightness offset"),
    "data.contrast_min": ("0.8", "min contrast factor"),
    "data.contrast_max": ("1.25", "max contrast factor"),
    "data.grid_rows": ("4", "location split grid rows"),
    "data.grid_cols": ("4", "location split grid cols"),
    "data.val_regions": ("4", "number of grid cells held out for validation"),
    "train.optimizer": ("adam", "adam or sgd"),
    "train.lr": ("1e-4", "learning rate"),
    "train.beta1": ("0.9", "Adam beta1"),
    "train.beta2": ("0.999", "Adam beta2"),
    "train.eps": ("1e-8", "Adam epsilon"),
    "train.batch_size": ("1", "mini-batch size"),
    "train.epochs": ("20", "maximum epochs"),
    "train.patience": ("3", "epochs without validation improvement before stopping"),
    "eval.tolerance": ("4", "PE tolerance in pixels"),
    "track.k": ("2", "peaks per frame"),
    "track.separation": ("6", "minimum peak separation in pixels"),
    "synth.width": ("240", "frame width"),
    "synth.height": ("180", "frame height"),
    "synth.ball_radius": ("4", "ball radius in pixels"),
    "synth.velocity_min": ("1", "minimum ball speed, px/frame"),
    "synth.velocity_max": ("4", "maximum ball speed, px/frame"),
    "synth.turn_probability": ("0.05", "per-frame probability of a new heading"),
    "synth.layout_seed": ("0", "board layout seed"),
    "synth.walls": ("6", "wall bars on the board"),
    "synth.holes": ("8", "holes on the board"),
    "synth.occluder_probability": ("0", "probability an occluder is shown"),
    "synth.occluders": ("2", "number of occluder rectangles"),
    "synth.shadow": ("false", "sweep a shading gradient around the board"),
    "synth.noise": ("0.02", "per-pixel noise standard deviation"),
    "synth.length": ("100", "number of frames"),
    "synth.two_balls": ("false", "render a second ball"),
    "gradcheck.h": ("1e-5", "central difference step"),
    "gradcheck.params": ("60", "parameters sampled per suite"),
}


def _bool(v: str) -> bool:
    v = v.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        out[key.strip()] = value.strip()
    return out


class RunConfig:
    def __init__(self, values: dict[str, str] | None = None):
        self.values = {k: d for k, (d, _) in DEFAULTS.items()}
        if values:
            self.update(values)

    def update(self, values: dict[str, str], source: str = "override"):
        unknown = sorted(set(values) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys from {source}: {', '.join(unknown)}")
        self.values.update({k: str(v) for k, v in values.items()})

    @classmethod
    def load(cls, path=None, overrides: dict[str, str] | None = None) -> "RunConfig":
        cfg = cls()
        if path:
            cfg.update(parse_config_text(Path(path).read_text(), str(path)), str(path))
        if overrides:
            cfg.update(overrides, "command line")
        return cfg

    def __getitem__(self, key):
        return self.values[key]

    def get_int(self, key) -> int:
        try:
            return int(self.values[key])
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {self.values[key]!r}") from None

    def get_float(self, key) -> float:
        try:
            return float(self.values[key])
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {self.values[key]!r}") from None

    def get_bool(self, key) -> bool:
        return _bool(self.values[key])

    def dump(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in sorted(self.values.items()))

    # -- typed views ---------------------------------------------------------

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(
            version=self["network.version"],
            height=self.get_int("network.height"),
            width=self.get_int("network.width"),
            scale=self.get_float("network.scale"),
            widths=scaled_widths(self.get_float("network.width_factor")),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            optimizer=self["train.optimizer"],
            learning_rate=self.get_float("train.lr"),
            beta1=self.get_float("train.beta1"),
            beta2=self.get_float("train.beta2"),
            eps=self.get_float("train.eps"),
            batch_size=self.get_int("train.batch_size"),
            max_epochs=self.get_int("train.epochs"),
            patience=self.get_int("train.patience"),
            seed=self.get_int("seed"),
            augment=self.get_bool("data.augment"),
            augment_params=AugmentParams(
                self.get_float("data.rotation"), self.get_float("data.brightness"),
                (self.get_float("data.contrast_min"), self.get_float("data.contrast_max"))),
        )

    def synth_config(self) -> SynthConfig:
        ints = ("width", "height", "ball_radius", "layout_seed", "walls", "holes", "occluders", "length")
        floats = ("velocity_min", "velocity_max", "turn_probability", "occluder_probability", "noise")
        kw = {k: self.get_int(f"synth.{k}") for k in ints}
        kw.update({k: self.get_float(f"synth.{k}") for k in floats})
        kw["shadow"] = self.get_bool("synth.shadow")
        kw["two_balls"] = self.get_bool("synth.two_balls")
        kw["seed"] = self.get_int("seed")
        kw["sigma"] = self.get_float("data.sigma")
        return SynthConfig(**kw)
