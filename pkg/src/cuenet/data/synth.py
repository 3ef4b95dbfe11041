"""Deterministic synthetic labyrinth scenes with exact ball positions.

A static board (textured floor, light wall bars, dark holes) is rendered once
per layout seed. Each frame draws one or two bright balls bouncing off the
frame border, then optionally moving occluder rectangles (never covering a
ball) and a lamp-like shading gradient that sweeps around the board. Frames
are quantized to 8 bits so they survive a PGM round trip unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .samples import DEFAULT_SIGMA, Sample


class InfeasibleConfig(ValueError):
    pass


@dataclass
class SynthConfig:
    width: int = 240
    height: int = 180
    ball_radius: int = 4
    velocity_min: float = 1.0
    velocity_max: float = 4.0
    turn_probability: float = 0.05
    layout_seed: int = 0
    walls: int = 6
    holes: int = 8
    occluder_probability: float = 0.0
    occluders: int = 2
    shadow: bool = False
    shadow_depth: float = 0.6
    shadow_period: int = 120
    noise: float = 0.02
    length: int = 100
    seed: int = 0
    two_balls: bool = False
    sigma: float = DEFAULT_SIGMA

    def validate(self):
        if self.ball_radius < 1:
            raise InfeasibleConfig("ball radius must be at least 1 px")
        if 2 * self.ball_radius + 1 > min(self.width, self.height):
            raise InfeasibleConfig(f"a ball of radius {self.ball_radius} does not fit a "
                                   f"{self.width}x{self.height} frame")
        if self.length < 1:
            raise InfeasibleConfig("sequence length must be positive")
        if not 0 <= self.velocity_min <= self.velocity_max:
            raise InfeasibleConfig("need 0 <= velocity_min <= velocity_max")
        if not 0 <= self.occluder_probability <= 1:
            raise InfeasibleConfig("occluder probability must be in [0, 1]")


def quantize(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def to_unit(u8: np.ndarray) -> np.ndarray:
    return u8.astype(np.float32) / np.float32(255.0)


def render_board(cfg: SynthConfig) -> np.ndarray:
    """Static background for ``cfg.layout_seed`` as an [H, W] float image."""
    rng = np.random.default_rng([cfg.layout_seed, 0xB0A2D])
    h, w = cfg.height, cfg.width
    board = 0.40 + 0.05 * rng.standard_normal((h, w))
    # low-frequency wood-grain-like variation
    ys, xs = np.mgrid[0:h, 0:w]
    board += 0.04 * np.sin(xs / max(w, 1) * 2 * math.pi * rng.uniform(1, 3) + rng.uniform(0, 6))
    thick = max(1, min(h, w) // 45)
    for _ in range(cfg.walls):
        if rng.random() < 0.5:
            y = rng.integers(0, h)
            x0 = rng.integers(0, w)
            x1 = min(w, x0 + rng.integers(w // 6, w // 2 + 1))
            board[y:y + thick, x0:x1] = 0.62
        else:
            x = rng.integers(0, w)
            y0 = rng.integers(0, h)
            y1 = min(h, y0 + rng.integers(h // 6, h // 2 + 1))
            board[y0:y1, x:x + thick] = 0.62
    hole_r = cfg.ball_radius + 1
    for _ in range(cfg.holes):
        cx, cy = rng.integers(0, w), rng.integers(0, h)
        board[(xs - cx) ** 2 + (ys - cy) ** 2 <= hole_r ** 2] = 0.08
    return board


def _random_velocity(rng, cfg):
    speed = rng.uniform(cfg.velocity_min, cfg.velocity_max)
    angle = rng.uniform(0, 2 * math.pi)
    v = np.array([speed * math.cos(angle), speed * math.sin(angle)])
    # integer steps keep recorded centers exact; rescale so |v| <= velocity_max
    vi = np.rint(v)
    norm = math.hypot(*vi)
    if norm > cfg.velocity_max:
        vi = np.trunc(v)
    return vi.astype(int)


def _reflect(p, v, lo, hi):
    p = p + v
    for k in range(2):
        if p[k] < lo[k]:
            p[k] = 2 * lo[k] - p[k]
            v[k] = -v[k]
        elif p[k] > hi[k]:
            p[k] = 2 * hi[k] - p[k]
            v[k] = -v[k]
    return p, v


def _trajectory(rng, cfg):
    r = cfg.ball_radius
    lo = np.array([r, r])
    hi = np.array([cfg.width - 1 - r, cfg.height - 1 - r])
    p = np.array([rng.integers(lo[0], hi[0] + 1), rng.integers(lo[1], hi[1] + 1)])
    v = _random_velocity(rng, cfg)
    out = []
    for _ in range(cfg.length):
        out.append((int(p[0]), int(p[1])))
        if rng.random() < cfg.turn_probability:
            v = _random_velocity(rng, cfg)
        p, v = _reflect(p, v, lo, hi)
        p = np.clip(p, lo, hi)
    return out


def draw_disc(img, center, radius, value):
    h, w = img.shape
    ys, xs = np.ogrid[0:h, 0:w]
    mask = (xs - center[0]) ** 2 + (ys - center[1]) ** 2 <= radius * radius
    img[mask] = value
    return mask


def synth_sequence(cfg: SynthConfig) -> list[Sample]:
    """Render ``cfg.length`` consecutive single-channel samples."""
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, 0x5EC])
    board = render_board(cfg)
    h, w = cfg.height, cfg.width
    trajectories = [_trajectory(rng, cfg)]
    if cfg.two_balls:
        trajectories.append(_trajectory(rng, cfg))
    r = cfg.ball_radius
    ys, xs = np.mgrid[0:h, 0:w]
    occ = [_Occluder(rng, cfg) for _ in range(cfg.occluders)]
    samples = []
    for t in range(cfg.length):
        img = board.copy()
        img += cfg.noise * rng.standard_normal((h, w))
        centers = [traj[t] for traj in trajectories]
        ball_mask = np.zeros((h, w), dtype=bool)
        for c in centers:
            ball_mask |= (xs - c[0]) ** 2 + (ys - c[1]) ** 2 <= (r + 1) ** 2
        if cfg.occluder_probability > 0:
            for o in occ:
                o.step(rng, cfg)
                if o.visible:
                    m = o.mask(xs, ys) & ~ball_mask
                    img[m] = o.value
        for c in centers:
            draw_disc(img, c, r, 0.92)
            draw_disc(img, c, max(1, r // 3), 1.0)  # specular highlight
        if cfg.shadow:
            theta = 2 * math.pi * t / max(1, cfg.shadow_period)
            proj = ((xs - (w - 1) / 2) * math.cos(theta) + (ys - (h - 1) / 2) * math.sin(theta))
            proj /= 0.5 * math.hypot(w, h)
            img *= 1.0 - cfg.shadow_depth * np.clip(0.5 + 0.5 * proj, 0, 1)
        frame = to_unit(quantize(img))[None]
        samples.append(Sample(frame, centers[0], frame_index=t,
                              extra_centers=tuple(centers[1:]), sigma=cfg.sigma))
    return samples


class _Occluder:
    """A hand-like rectangle drifting across the board, toggling on and off."""

    def __init__(self, rng, cfg):
        self.w = int(rng.integers(cfg.width // 8, cfg.width // 3 + 1))
        self.h = int(rng.integers(cfg.height // 6, cfg.height // 2 + 1))
        self.x = float(rng.uniform(-self.w, cfg.width))
        self.y = float(rng.uniform(-self.h, cfg.height))
        self.vx, self.vy = rng.uniform(-2, 2, size=2) * max(1.0, cfg.width / 120)
        self.value = float(rng.uniform(0.2, 0.85))
        self.visible = bool(rng.random() < cfg.occluder_probability)

    def step(self, rng, cfg):
        if rng.random() < 0.1:
            self.visible = rng.random() < cfg.occluder_probability
        self.x += self.vx
        self.y += self.vy
        if self.x < -self.w or self.x > cfg.width:
            self.vx = -self.vx
        if self.y < -self.h or self.y > cfg.height:
            self.vy = -self.vy

    def mask(self, xs, ys):
        return (xs >= self.x) & (xs < self.x + self.w) & (ys >= self.y) & (ys < self.y + self.h)
