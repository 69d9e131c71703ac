"""Clip scoring (aesthetics, technical quality) and the retention rules."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

import cv2
import numpy as np

from .camera_motion import Label, MotionLabel
from .media import rgb_to_luma
from .services import MalformedResponse, ServiceClient, ServiceUnavailable, encode_frames


class NoFrames(ValueError):
    pass


class Provenance(str, Enum):
    builtin_proxy = "builtin_proxy"
    external = "external"


@dataclass(frozen=True)
class ScoreRecord:
    clip_id: str
    aesthetic: float
    quality: float
    scorer_provenance: Provenance = Provenance.builtin_proxy

    def __post_init__(self):
        for name in ("aesthetic", "quality"):
            v = getattr(self, name)
            if not 0.0 <= v <= 10.0:
                raise ValueError(f"{name}={v} outside [0, 10]")


@dataclass(frozen=True)
class FilterConfig:
    theta_aes: float = 3.5
    theta_qual: float = 4.0
    c5_quota: float = 0.05
    quota_seed: str = "clipcurate"

    def validate(self) -> "FilterConfig":
        if not (0 <= self.theta_aes <= 10 and 0 <= self.theta_qual <= 10):
            raise ValueError("thresholds must lie in [0, 10]")
        if not 0 <= self.c5_quota <= 1:
            raise ValueError("c5_quota must lie in [0, 1]")
        return self


class Reason(str, Enum):
    passed = "passed"
    static_quota = "static_quota"  # C5 kept inside the quota
    edited = "edited"  # C6, always dropped
    static = "static"  # C5 outside the quota
    low_aesthetic = "low_aesthetic"
    low_quality = "low_quality"
    insufficient_frames = "insufficient_frames"  # too short for the sampling plan


@dataclass(frozen=True)
class Decision:
    clip_id: str
    keep: bool
    reason: Reason


# --------------------------------------------------------------------------
# builtin proxy scorer


@lru_cache(maxsize=None)
def calibration() -> dict:
    return json.loads(resources.files("clipcurate").joinpath("data/calibration.json").read_text("utf-8"))


def piecewise(x: float, points: Sequence[Sequence[float]]) -> float:
    """Piecewise-linear lookup, clamped at both ends."""
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    return float(np.interp(x, xs, ys))


def colorfulness(rgb: np.ndarray) -> float:
    """Hasler-Susstrunk colorfulness statistic."""
    f = rgb.astype(np.float64)
    rg = f[..., 0] - f[..., 1]
    yb = 0.5 * (f[..., 0] + f[..., 1]) - f[..., 2]
    return float(np.hypot(rg.std(), yb.std()) + 0.3 * np.hypot(rg.mean(), yb.mean()))


def laplacian_variance(luma: np.ndarray) -> float:
    return float(cv2.Laplacian(luma.astype(np.float64), cv2.CV_64F, ksize=1).var())


def block_edge_ratio(luma: np.ndarray, block: int = 8) -> float:
    """Mean absolute step across block boundaries over the step inside blocks.

    1.0 means no blocking; compressed video with visible blocks is > 1.
    """
    f = luma.astype(np.float64)
    dx = np.abs(np.diff(f, axis=1))
    dy = np.abs(np.diff(f, axis=0))
    edge_x = (np.arange(dx.shape[1]) % block) == block - 1
    edge_y = (np.arange(dy.shape[0]) % block) == block - 1
    if not edge_x.any() or edge_x.all() or not edge_y.any() or edge_y.all():
        return 1.0
    edge = dx[:, edge_x].mean() + dy[edge_y, :].mean()
    inner = dx[:, ~edge_x].mean() + dy[~edge_y, :].mean()
    if inner < 1e-9:
        return 1.0 if edge < 1e-9 else float("inf")
    return float(edge / inner)


def frame_scores(rgb: np.ndarray) -> tuple[float, float]:
    cal = calibration()
    luma = rgb_to_luma(rgb)
    col = piecewise(colorfulness(rgb), cal["colorfulness"]["points"])
    con = piecewise(float(luma.std()), cal["contrast"]["points"])
    w = cal["aesthetic_weights"]
    aesthetic = w["colorfulness"] * col + w["contrast"] * con
    sharp = piecewise(laplacian_variance(luma), cal["sharpness"]["points"])
    bp = cal["blockiness_penalty"]
    ratio = block_edge_ratio(luma, bp["block"])
    penalty = piecewise(ratio if np.isfinite(ratio) else 1e9, bp["points"])
    quality = sharp - penalty
    return float(np.clip(aesthetic, 0, 10)), float(np.clip(quality, 0, 10))


def score_builtin(frames, clip_id: str = "") -> ScoreRecord:
    """Average per-frame proxy scores over the sampled color frames."""
    frames = list(frames)
    if not frames:
        raise NoFrames("no frames to score")
    scores = []
    for fb in frames:
        rgb = fb.rgb if fb.rgb is not None else np.repeat(fb.luma[..., None], 3, axis=2)
        scores.append(frame_scores(rgb))
    a, q = np.mean(scores, axis=0)
    return ScoreRecord(clip_id, float(a), float(q), Provenance.builtin_proxy)


# --------------------------------------------------------------------------
# external scorer


class ScorerClient(ServiceClient):
    """Client for an external scorer; response ``{"aesthetic": x, "quality": y}``."""

    def score(self, frames, clip_id: str = "") -> ScoreRecord:
        body = self.post_json(encode_frames(frames, color=True))
        vals = []
        for key in ("aesthetic", "quality"):
            v = body.get(key)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not 0.0 <= v <= 10.0:
                raise MalformedResponse(f"{key}={v!r} is not a score in [0, 10]")
            vals.append(float(v))
        return ScoreRecord(clip_id, vals[0], vals[1], Provenance.external)


def score_remote(frames, client: ScorerClient, clip_id: str = "") -> ScoreRecord:
    frames = list(frames)
    if not frames:
        raise NoFrames("no frames to score")
    try:
        return client.score(frames, clip_id)
    except ServiceUnavailable:
        if not client.fallback:
            raise
    return score_builtin(frames, clip_id)


# --------------------------------------------------------------------------
# retention rules


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def fmix64(h: int) -> int:
    """MurmurHash3 64-bit finalizer; spreads every input bit into the top bits."""
    h ^= h >> 33
    h = (h * 0xFF51AFD7ED558CCD) & 0xFFFFFFFFFFFFFFFF
    h ^= h >> 33
    h = (h * 0xC4CEB9FE1A85EC53) & 0xFFFFFFFFFFFFFFFF
    h ^= h >> 33
    return h


def quota_draw(clip_id: str, seed: str) -> float:
    """Unit fraction from FNV-1a of ``seed + clip_id``.

    Raw FNV-1a barely moves its high bits when only the last few bytes
    differ (ids like ``clip-0001``, ``clip-0002`` all land together), so the
    hash is finalized before scaling.
    """
    return fmix64(fnv1a64((seed + clip_id).encode("utf-8"))) / 2.0 ** 64


def in_quota(clip_id: str, cfg: FilterConfig) -> bool:
    return quota_draw(clip_id, cfg.quota_seed) < cfg.c5_quota


def decide(score: ScoreRecord, label: MotionLabel | Label | str, cfg: FilterConfig = FilterConfig()) -> Decision:
    lab = Label(label.label if isinstance(label, MotionLabel) else label)
    cid = score.clip_id
    if lab is Label.C6:
        return Decision(cid, False, Reason.edited)
    if lab is Label.C5 and not in_quota(cid, cfg):
        return Decision(cid, False, Reason.static)
    if score.aesthetic < cfg.theta_aes:
        return Decision(cid, False, Reason.low_aesthetic)
    if score.quality < cfg.theta_qual:
        return Decision(cid, False, Reason.low_quality)
    return Decision(cid, True, Reason.static_quota if lab is Label.C5 else Reason.passed)


def apply_filter(records: Iterable[tuple[ScoreRecord, MotionLabel | Label | str]],
                 cfg: FilterConfig = FilterConfig()) -> list[Decision]:
    cfg.validate()
    return [decide(s, lab, cfg) for s, lab in records]


# --------------------------------------------------------------------------
# histograms


def histogram(values: Iterable[float], bins: int = 20, lo: float = 0.0, hi: float = 10.0):
    """Equal-width bins over [lo, hi]; the last bin is closed. Out-of-range
    values are clamped into the end bins."""
    vals = np.clip(np.asarray(list(values), float), lo, hi)
    counts, edges = np.histogram(vals, bins=bins, range=(lo, hi))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]


def write_histogram_csv(path: str | os.PathLike, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "count"])
        for left, right, count in rows:
            w.writerow([f"{left:g}", f"{right:g}", count])
