"""Synthetic camera-motion renders used as test fixtures and for demos.

A clip is rendered by moving a virtual camera over a large random color
texture with ``cv2.warpAffine``. Each render knows its ground-truth class.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import cv2
import numpy as np

from .media import rgb_to_luma, write_y4m

CLASSES = ("pan", "oscillate", "rotate", "track", "static", "crossfade")
EXPECTED_LABEL = {
    "pan": "C4",
    "oscillate": "C2",
    "rotate": "C1",
    "track": "C3",
    "static": "C5",
    "crossfade": "C6",
}


def _periodic_noise(rng: np.random.Generator, height: int, width: int, sigma: float) -> np.ndarray:
    """Gaussian-filtered white noise on a torus (tiles seamlessly), unit std."""
    n = rng.standard_normal((height, width))
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.rfftfreq(width)[None, :]
    g = np.exp(-2.0 * (math.pi * sigma) ** 2 * (fx ** 2 + fy ** 2))
    out = np.fft.irfft2(np.fft.rfft2(n) * g, s=(height, width))
    return out / (out.std() + 1e-12)


def texture(rng: np.random.Generator, height: int, width: int, brightness: float = 128.0,
            contrast: float = 1.0) -> np.ndarray:
    """Multi-scale smooth color noise, uint8 RGB, periodic in both axes."""
    img = np.zeros((height, width, 3))
    for sigma, weight in ((1.5, 1.0), (4.0, 0.8), (12.0, 0.6)):
        for ch in range(3):
            img[..., ch] += weight * _periodic_noise(rng, height, width, sigma)
    # mix channels so hue varies but luma keeps texture
    mix = np.array([[1.0, 0.35, 0.1], [0.3, 1.0, 0.3], [0.1, 0.35, 1.0]])
    img = img @ mix.T
    img = brightness + 45.0 * contrast * img / (img.std() + 1e-9)
    return np.clip(img, 0, 255).astype(np.uint8)


def _world_size(width: int, height: int) -> tuple[int, int]:
    side = 1 << int(math.ceil(math.log2(2 * max(width, height))))
    return side, side


def _camera(cx: float, cy: float, ox: float, oy: float, angle: float = 0.0, scale: float = 1.0) -> np.ndarray:
    """Map output pixel -> world pixel: rotate/scale about the frame center,
    then offset to world position (ox, oy)."""
    c, s = math.cos(angle) / scale, math.sin(angle) / scale
    return np.array([[c, -s, ox - c * cx + s * cy], [s, c, oy - s * cx - c * cy]], np.float64)


def _view(world: np.ndarray, M: np.ndarray, width: int, height: int) -> np.ndarray:
    return cv2.warpAffine(world, M, (width, height), flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                          borderMode=cv2.BORDER_WRAP)


@dataclass
class Render:
    kind: str
    frames: list  # RGB uint8 frames
    params: dict = field(default_factory=dict)

    @property
    def expected(self) -> str:
        return EXPECTED_LABEL[self.kind]

    @property
    def luma(self) -> list:
        return [rgb_to_luma(f) for f in self.frames]


def render_clip(kind: str, rng: np.random.Generator, n_frames: int = 48, width: int = 320,
                height: int = 180) -> Render:
    """Render one clip of the given motion ``kind`` (see :data:`CLASSES`)."""
    if kind not in CLASSES:
        raise ValueError(f"unknown kind {kind!r}")
    W, H = _world_size(width, height)
    world = texture(rng, H, W, brightness=float(rng.uniform(90, 160)))
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    ox0, oy0 = W / 2.0, H / 2.0
    frames = []
    params: dict = {}

    if kind == "pan":
        speed = rng.uniform(1.5, 4.0)
        ang = rng.uniform(0, 2 * math.pi)
        vx, vy = speed * math.cos(ang), speed * math.sin(ang)
        params.update(vx=vx, vy=vy)
        for t in range(n_frames):
            frames.append(_view(world, _camera(cx, cy, ox0 + vx * t, oy0 + vy * t), width, height))

    elif kind == "oscillate":
        amp = rng.uniform(2.0, 4.0)
        cycles = rng.uniform(1.5, 2.5)
        phase = rng.uniform(0, 2 * math.pi)
        horizontal = bool(rng.integers(0, 2))
        params.update(amp=amp, cycles=cycles, horizontal=horizontal)
        pos = 0.0
        for t in range(n_frames):
            d = (pos, 0.0) if horizontal else (0.0, pos)
            frames.append(_view(world, _camera(cx, cy, ox0 + d[0], oy0 + d[1]), width, height))
            pos += amp * math.sin(2 * math.pi * cycles * t / n_frames + phase)

    elif kind == "rotate":
        rate = rng.uniform(0.006, 0.012) * (1 if rng.integers(0, 2) else -1)
        drift = rng.uniform(-0.3, 0.3, 2)
        params.update(rate=rate)
        for t in range(n_frames):
            M = _camera(cx, cy, ox0 + drift[0] * t, oy0 + drift[1] * t, angle=rate * t)
            frames.append(_view(world, M, width, height))

    elif kind == "track":
        speed = rng.uniform(2.0, 4.0)
        ang = rng.uniform(0, 2 * math.pi)
        vx, vy = speed * math.cos(ang), speed * math.sin(ang)
        sw, sh = int(width * 0.5), int(height * 0.5)
        subject = texture(rng, sh, sw, brightness=float(rng.uniform(60, 200)), contrast=1.2)
        yy, xx = np.mgrid[0:sh, 0:sw]
        mask = (((xx - sw / 2) / (sw / 2)) ** 2 + ((yy - sh / 2) / (sh / 2)) ** 2) <= 1.0
        x0, y0 = (width - sw) // 2, (height - sh) // 2
        params.update(vx=vx, vy=vy)
        for t in range(n_frames):
            f = _view(world, _camera(cx, cy, ox0 + vx * t, oy0 + vy * t), width, height)
            region = f[y0 : y0 + sh, x0 : x0 + sw]
            region[mask] = subject[mask]
            frames.append(f)

    elif kind == "static":
        base = _view(world, _camera(cx, cy, ox0, oy0), width, height).astype(np.float32)
        sigma = rng.uniform(0.0, 1.5)
        params.update(noise=sigma)
        for _ in range(n_frames):
            f = base + rng.normal(0, sigma, base.shape).astype(np.float32)
            frames.append(np.clip(np.rint(f), 0, 255).astype(np.uint8))

    elif kind == "crossfade":
        # pan in scene A, short dissolve into a scene B of very different
        # brightness panning another way
        dark = rng.uniform(30, 55)
        bright = rng.uniform(190, 220)
        a_bright = bool(rng.integers(0, 2))
        world_b = texture(rng, H, W, brightness=dark if a_bright else bright)
        world = texture(rng, H, W, brightness=bright if a_bright else dark)
        va = rng.uniform(1.5, 3.5) * np.array([1.0, rng.uniform(-0.5, 0.5)])
        vb = -rng.uniform(1.5, 3.5) * np.array([rng.uniform(-0.5, 0.5), 1.0])
        fade = int(rng.integers(2, 4))
        start = int(rng.integers(n_frames // 3, n_frames // 2))
        params.update(fade_start=start, fade_len=fade)
        for t in range(n_frames):
            fa = _view(world, _camera(cx, cy, ox0 + va[0] * t, oy0 + va[1] * t), width, height)
            fb = _view(world_b, _camera(cx, cy, ox0 + vb[0] * t, oy0 + vb[1] * t), width, height)
            alpha = min(max((t - start) / fade, 0.0), 1.0)
            frames.append(np.clip(np.rint((1 - alpha) * fa + alpha * fb), 0, 255).astype(np.uint8))

    return Render(kind, frames, params)


def taxonomy_suite(per_class: int = 20, seed: int = 0, **kw):
    """Yield ``per_class`` renders of every class, deterministically."""
    for ci, kind in enumerate(CLASSES):
        for j in range(per_class):
            rng = np.random.default_rng([seed, ci, j])
            yield render_clip(kind, rng, **kw)


# --------------------------------------------------------------------------
# whole-video fixtures for the pipeline


@dataclass
class Segment:
    kind: str  # "pan", "static", "rotate", ...
    n_frames: int
    scene: int = 0  # segments with different scene ids are joined by a hard cut


def render_video(segments: list[Segment], seed: int, width: int = 320, height: int = 180) -> list:
    """Concatenate rendered segments; changing ``scene`` produces a hard cut."""
    frames: list = []
    for k, seg in enumerate(segments):
        rng = np.random.default_rng([seed, k, seg.scene])
        r = render_clip(seg.kind, rng, n_frames=seg.n_frames, width=width, height=height)
        frames.extend(r.frames)
    return frames


def corpus_layouts(fps: int = 30) -> list[list[Segment]]:
    """Five small source layouts mixing motion runs, static stretches and cuts."""
    s = fps
    return [
        [Segment("pan", 5 * s, 0), Segment("static", 2 * s, 1), Segment("pan", 4 * s, 2)],
        [Segment("static", 3 * s, 0)],
        [Segment("rotate", 4 * s, 0), Segment("pan", 4 * s, 1)],
        [Segment("track", 5 * s, 0), Segment("oscillate", 4 * s, 1)],
        [Segment("pan", 20 * s, 0)],
    ]


def write_corpus(directory: str | os.PathLike, fps: int = 30, width: int = 320, height: int = 180,
                 layouts: Optional[list] = None, seed: int = 7) -> list[str]:
    """Write the fixture corpus as Y4M files plus ``sources.txt``; returns paths."""
    os.makedirs(directory, exist_ok=True)
    layouts = corpus_layouts(fps) if layouts is None else layouts
    paths = []
    for i, layout in enumerate(layouts):
        p = os.path.join(directory, f"video_{i:02d}.y4m")
        write_y4m(p, render_video(layout, seed + i, width, height), Fraction(fps))
        paths.append(p)
    with open(os.path.join(directory, "sources.txt"), "w", encoding="utf-8") as f:
        f.write("# synthetic fixture corpus\n")
        for p in paths:
            f.write(p + "\n")
    return paths
