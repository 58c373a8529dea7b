"""Deterministic synthetic video sequences with analytic flow and masks.

Each sequence renders anti-aliased shapes moving over a low-contrast value
noise background. The per-pixel displacement field between consecutive
frames is known in closed form, so flow renderings and ground-truth masks
are exact by construction. Scenario modes reproduce the classic flow
failure regimes: a stationary target, motion blur, a background moving with
the target, and a moving distractor that is not part of the target.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError
from .rng import Rng

SCENARIOS = ("normal", "stationary_object", "motion_blur",
             "comoving_background", "background_mover")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class ShapeSpec:
    kind: str                      # circle | rectangle | polygon
    start: tuple                   # (x, y) center at t=0
    velocity: tuple                # (vx, vy) pixels per frame
    size: float                    # radius / half-extent
    color: tuple                   # RGB in [0,1]
    aspect: float = 1.0            # rectangle height = size * aspect
    sides: int = 3                 # polygon vertex count
    scale_rate: float = 0.0        # relative size growth per frame
    is_target: bool = True         # distractors render but stay out of the mask

    def validate(self) -> None:
        if self.kind not in ("circle", "rectangle", "polygon"):
            raise ConfigError(f"unknown shape kind {self.kind!r}")
        if self.size <= 0:
            raise ConfigError("shape size must be positive")


@dataclass
class SceneConfig:
    height: int = 128
    width: int = 128
    frames: int = 8
    scenario: str = "normal"
    shapes: list = field(default_factory=list)
    background_velocity: tuple = (0, 0)
    texture_seed: int = 0
    blur_taps: int = 5

    def validate(self) -> None:
        if self.height % 32 or self.width % 32:
            raise ConfigError(f"scene extents {self.height}x{self.width} must be divisible by 32")
        if self.frames < 2:
            raise ConfigError("need at least two frames")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        for s in self.shapes:
            s.validate()

    def as_dict(self) -> dict:
        return {
            "height": self.height, "width": self.width, "frames": self.frames,
            "scenario": self.scenario,
            "background_velocity": list(self.background_velocity),
            "texture_seed": self.texture_seed, "blur_taps": self.blur_taps,
            "shapes": [{
                "kind": s.kind, "start": list(s.start), "velocity": list(s.velocity),
                "size": s.size, "color": list(s.color), "aspect": s.aspect,
                "sides": s.sides, "scale_rate": s.scale_rate, "is_target": s.is_target,
            } for s in self.shapes],
        }


@dataclass
class VideoSample:
    frames: list                   # T arrays [3,H,W] in [0,1]
    flow_fields: list              # T arrays [2,H,W], (dx,dy) from t to t+1
    flow_rgb: list                 # T arrays [3,H,W] in [0,1]
    masks: list                    # T binary arrays [H,W]
    tags: list


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def _shape_sdf(spec: ShapeSpec, cx: float, cy: float, size: float,
               xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Signed distance to the shape boundary (negative inside)."""
    dx = xs - cx
    dy = ys - cy
    if spec.kind == "circle":
        return np.sqrt(dx * dx + dy * dy) - size
    if spec.kind == "rectangle":
        qx = np.abs(dx) - size
        qy = np.abs(dy) - size * spec.aspect
        outside = np.sqrt(np.maximum(qx, 0) ** 2 + np.maximum(qy, 0) ** 2)
        inside = np.minimum(np.maximum(qx, qy), 0)
        return outside + inside
    # regular polygon: max signed distance over the edge half-planes
    angles = 2 * np.pi * np.arange(spec.sides) / spec.sides
    apothem = size * np.cos(np.pi / spec.sides)
    sdf = np.full(xs.shape, -np.inf)
    for a in angles:
        nx, ny = np.cos(a), np.sin(a)
        sdf = np.maximum(sdf, dx * nx + dy * ny - apothem)
    return sdf


def _shape_center(spec: ShapeSpec, t: int, stationary: bool) -> tuple[float, float]:
    vx, vy = (0.0, 0.0) if (stationary and spec.is_target) else spec.velocity
    return spec.start[0] + vx * t, spec.start[1] + vy * t


def _shape_size(spec: ShapeSpec, t: int) -> float:
    return spec.size * (1.0 + spec.scale_rate * t)


def _value_noise(rng: Rng, h: int, w: int) -> np.ndarray:
    """Two octaves of bilinear value noise in [0,1]."""
    out = np.zeros((h, w))
    for cell, amp in ((16, 0.7), (8, 0.3)):
        gh, gw = h // cell + 2, w // cell + 2
        grid = rng.uniform((gh, gw), dtype=np.float64)
        ys = np.arange(h) / cell
        xs = np.arange(w) / cell
        y0 = ys.astype(int)
        x0 = xs.astype(int)
        fy = (ys - y0)[:, None]
        fx = (xs - x0)[None, :]
        g00 = grid[y0][:, x0]
        g01 = grid[y0][:, x0 + 1]
        g10 = grid[y0 + 1][:, x0]
        g11 = grid[y0 + 1][:, x0 + 1]
        top = g00 + fx * (g01 - g00)
        bot = g10 + fx * (g11 - g10)
        out += amp * (top + fy * (bot - top))
    return out


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def generate_sequence(cfg: SceneConfig, seed: int) -> VideoSample:
    """Pure function of (cfg, seed): same inputs give bit-identical output."""
    cfg.validate()
    rng = Rng(seed, stream=cfg.texture_seed)
    h, w = cfg.height, cfg.width
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)

    shapes = list(cfg.shapes)
    if not shapes:
        shapes = default_shapes(cfg, rng.child(101))
    stationary = cfg.scenario == "stationary_object"
    comoving = cfg.scenario == "comoving_background"

    # background: wrapped value noise, squeezed to low contrast
    texture = _value_noise(rng.child(1), h, w)
    texture = 0.35 + 0.3 * (texture - texture.min()) / max(texture.ptp(), 1e-9)
    bg_tint = rng.child(2).uniform((3,), 0.8, 1.0, dtype=np.float64)
    bvx, bvy = cfg.background_velocity
    if comoving and shapes:
        # background drifts exactly with the target, so flow alone cannot
        # separate them
        bvx, bvy = int(round(shapes[0].velocity[0])), int(round(shapes[0].velocity[1]))

    frames, flows, masks = [], [], []
    for t in range(cfg.frames):
        shifted = np.roll(np.roll(texture, int(round(bvy)) * t, axis=0),
                          int(round(bvx)) * t, axis=1)
        frame = shifted[None, :, :] * bg_tint[:, None, None]

        flow = np.empty((2, h, w))
        flow[0].fill(bvx)
        flow[1].fill(bvy)
        mask = np.zeros((h, w), dtype=bool)
        for spec in shapes:
            cx, cy = _shape_center(spec, t, stationary)
            size = _shape_size(spec, t)
            sdf = _shape_sdf(spec, cx, cy, size, xs, ys)
            alpha = np.clip(0.5 - sdf, 0.0, 1.0)
            color = np.asarray(spec.color, dtype=np.float64)
            frame = frame * (1 - alpha[None]) + color[:, None, None] * alpha[None]
            inside = sdf <= 0
            nx, ny = _shape_center(spec, t + 1, stationary)
            nsize = _shape_size(spec, t + 1)
            ratio = nsize / size
            flow[0][inside] = (nx - cx) + (xs[inside] - cx) * (ratio - 1.0)
            flow[1][inside] = (ny - cy) + (ys[inside] - cy) * (ratio - 1.0)
            if spec.is_target:
                mask |= inside

        if cfg.scenario == "motion_blur":
            frame = _directional_blur(frame, shapes, cfg.blur_taps, t, stationary)

        frames.append(np.clip(frame, 0.0, 1.0).astype(np.float32))
        flows.append(flow.astype(np.float32))
        masks.append(mask)

    flows[-1] = flows[-2].copy()  # keep list lengths equal to the frame count
    flow_rgb = [flow_to_rgb(f) for f in flows]
    tags = [cfg.scenario] * cfg.frames
    return VideoSample(frames=frames, flow_fields=flows, flow_rgb=flow_rgb,
                       masks=masks, tags=tags)


def _directional_blur(frame: np.ndarray, shapes, taps: int, t: int,
                      stationary: bool) -> np.ndarray:
    vx, vy = shapes[0].velocity if shapes else (1.0, 0.0)
    if stationary:
        vx, vy = 1.0, 0.0
    norm = max(np.hypot(vx, vy), 1e-9)
    step = (vx / norm, vy / norm)
    acc = np.zeros_like(frame)
    for k in range(taps):
        off = k - taps // 2
        acc += np.roll(np.roll(frame, int(round(step[1] * off)), axis=1),
                       int(round(step[0] * off)), axis=2)
    return acc / taps


def default_shapes(cfg: SceneConfig, rng: Rng) -> list[ShapeSpec]:
    """A bright target on an integer-velocity trajectory that stays inside
    the frame, plus a distractor in the background_mover scenario."""
    h, w, t = cfg.height, cfg.width, cfg.frames
    kinds = ["circle", "rectangle", "polygon"]
    kind = kinds[int(rng.integers(0, 3))]
    size = float(rng.uniform((), h * 0.14, h * 0.2, dtype=np.float64))
    margin = size * 1.6
    vx = int(rng.integers(1, 4)) * (1 if float(rng.uniform(())) > 0.5 else -1)
    vy = int(rng.integers(-1, 2))
    x0 = margin if vx > 0 else w - margin
    max_dy = abs(vy) * t
    y0 = float(np.clip(h / 2 + rng.uniform((), -h * 0.15, h * 0.15, dtype=np.float64),
                       margin + max_dy, h - margin - max_dy))
    color = tuple(float(c) for c in
                  rng.uniform((3,), 0.7, 1.0, dtype=np.float64) * np.array([1.0, 0.35, 0.25]))
    shapes = [ShapeSpec(kind=kind, start=(float(x0), float(y0)), velocity=(vx, vy),
                        size=size, color=color, sides=3 + int(rng.integers(0, 3)))]
    if cfg.scenario == "background_mover":
        dsize = size * 0.7
        shapes.append(ShapeSpec(
            kind="rectangle", start=(float(w - x0), float(h - y0)), velocity=(-vx, -vy),
            size=dsize, color=(0.3, 0.4, 0.55), is_target=False))
    return shapes


# ---------------------------------------------------------------------------
# Flow rendering
# ---------------------------------------------------------------------------

def _color_wheel() -> np.ndarray:
    """55-entry hue wheel with perceptually tuned sector lengths."""
    ry, yg, gc, cb, bm, mr = 15, 6, 4, 11, 13, 6
    wheel = np.zeros((ry + yg + gc + cb + bm + mr, 3))
    col = 0
    wheel[col:col + ry, 0] = 1.0
    wheel[col:col + ry, 1] = np.arange(ry) / ry
    col += ry
    wheel[col:col + yg, 0] = 1.0 - np.arange(yg) / yg
    wheel[col:col + yg, 1] = 1.0
    col += yg
    wheel[col:col + gc, 1] = 1.0
    wheel[col:col + gc, 2] = np.arange(gc) / gc
    col += gc
    wheel[col:col + cb, 1] = 1.0 - np.arange(cb) / cb
    wheel[col:col + cb, 2] = 1.0
    col += cb
    wheel[col:col + bm, 2] = 1.0
    wheel[col:col + bm, 0] = np.arange(bm) / bm
    col += bm
    wheel[col:col + mr, 2] = 1.0 - np.arange(mr) / mr
    wheel[col:col + mr, 0] = 1.0
    return wheel


_WHEEL = _color_wheel()


def flow_to_rgb(flow_field: np.ndarray, max_magnitude: float | None = None) -> np.ndarray:
    """Hue encodes direction, saturation encodes normalized magnitude; zero
    flow renders near-white."""
    if not np.all(np.isfinite(flow_field)):
        raise ConfigError("flow field contains non-finite values")
    u = np.asarray(flow_field[0], dtype=np.float64)
    v = np.asarray(flow_field[1], dtype=np.float64)
    mag = np.sqrt(u * u + v * v)
    scale = max_magnitude if max_magnitude is not None else float(mag.max())
    if scale <= 0:
        scale = 1.0
    mag = np.clip(mag / scale, 0.0, 1.0)
    angle = np.arctan2(-v, -u) / np.pi
    n = _WHEEL.shape[0]
    idx = (angle + 1.0) / 2.0 * (n - 1)
    k0 = np.floor(idx).astype(int)
    k1 = (k0 + 1) % n
    f = idx - k0
    col = (1.0 - f)[..., None] * _WHEEL[k0] + f[..., None] * _WHEEL[k1]
    col = 1.0 - mag[..., None] * (1.0 - col)
    return np.ascontiguousarray(col.transpose(2, 0, 1)).astype(np.float32)


# ---------------------------------------------------------------------------
# PNG I/O
# ---------------------------------------------------------------------------

def write_rgb(path, tensor: np.ndarray) -> None:
    """[3,H,W] floats in [0,1] -> RGB-8 PNG, v = round(255*x)."""
    arr = np.rint(np.clip(tensor, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(arr, mode="RGB").save(path)


def read_rgb(path) -> np.ndarray:
    try:
        img = Image.open(path).convert("RGB")
    except Exception as e:
        raise IOError(f"cannot read image {path}: {e}") from e
    return (np.asarray(img, dtype=np.float32) / 255.0).transpose(2, 0, 1)


def write_gray(path, tensor: np.ndarray) -> None:
    """[H,W] floats in [0,1] -> gray-8 PNG."""
    arr = np.rint(np.clip(tensor, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def read_gray(path) -> np.ndarray:
    try:
        img = Image.open(path).convert("L")
    except Exception as e:
        raise IOError(f"cannot read image {path}: {e}") from e
    return np.asarray(img, dtype=np.float32) / 255.0


def write_mask(path, mask: np.ndarray) -> None:
    """Binary [H,W] -> {0,255} gray-8 PNG."""
    arr = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def read_mask(path) -> np.ndarray:
    return read_gray(path) > 0.5


# ---------------------------------------------------------------------------
# Dataset directory layout
# ---------------------------------------------------------------------------

def write_sequence(root, name: str, cfg: SceneConfig, seed: int,
                   sample: VideoSample | None = None) -> Path:
    """<root>/<name>/{frames,flows,masks}/%05d.png plus meta.json."""
    sample = sample or generate_sequence(cfg, seed)
    base = Path(root) / name
    for sub in ("frames", "flows", "masks"):
        (base / sub).mkdir(parents=True, exist_ok=True)
    for t in range(len(sample.frames)):
        write_rgb(base / "frames" / f"{t:05d}.png", sample.frames[t])
        write_rgb(base / "flows" / f"{t:05d}.png", sample.flow_rgb[t])
        write_mask(base / "masks" / f"{t:05d}.png", sample.masks[t])
    meta = {
        "seed": seed,
        "scenario": cfg.scenario,
        "flow_normalization": "per_frame_max",
        "flow_max_per_frame": [float(np.hypot(f[0], f[1]).max()) for f in sample.flow_fields],
        "scene": cfg.as_dict(),
    }
    (base / "meta.json").write_text(json.dumps(meta, indent=2))
    return base


def list_sequences(root) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise ConfigError(f"dataset root {root} is not a directory")
    seqs = sorted(p for p in root.iterdir() if (p / "frames").is_dir())
    return seqs


def load_sequence(seq_dir) -> dict:
    """Read one sequence directory back to float tensors."""
    seq_dir = Path(seq_dir)
    frames = sorted((seq_dir / "frames").glob("*.png"))
    flows = sorted((seq_dir / "flows").glob("*.png"))
    masks = sorted((seq_dir / "masks").glob("*.png")) if (seq_dir / "masks").is_dir() else []
    return {
        "name": seq_dir.name,
        "frames": [read_rgb(p) for p in frames],
        "flows": [read_rgb(p) for p in flows],
        "masks": [read_mask(p) for p in masks],
    }
