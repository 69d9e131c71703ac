"""Motion-adaptive frame sampling.

Motion intensity ``M = N * FPS / clip_n`` is the number of sampled frames
per second of source video. Sampling trims a fixed fraction from both ends
of the clip and spreads ``N`` frames uniformly over what remains.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

DEFAULT_N = 85
DEFAULT_TRIM = 0.10
ROUNDING = "half_up"
DEDUP = "bump_forward"


class SamplingError(ValueError):
    pass


class NonPositiveInput(SamplingError):
    pass


class InsufficientFrames(SamplingError):
    pass


def motion_intensity(N: int, FPS: float, clip_n: int) -> float:
    if N <= 0 or FPS <= 0 or clip_n <= 0:
        raise NonPositiveInput(f"N={N}, FPS={FPS}, clip_n={clip_n} must all be positive")
    return float(Fraction(N) * Fraction(FPS) / Fraction(clip_n))


def trim_count(clip_n: int, trim_fraction: float) -> int:
    if not 0.0 <= trim_fraction < 0.5:
        raise SamplingError("trim_fraction must be in [0, 0.5)")
    # decimal value of the fraction, so 0.3 * 10 trims exactly 3
    return math.floor(Fraction(repr(float(trim_fraction))) * clip_n)


def _round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


@dataclass(frozen=True)
class SamplingPlan:
    N: int
    FPS: float
    clip_n: int
    M: float
    trim_fraction: float
    indices: tuple[int, ...]
    clip_n_trimmed: int = 0
    M_trimmed: float = 0.0
    rounding: str = ROUNDING
    dedup: str = DEDUP

    @property
    def first(self) -> int:
        return self.indices[0]

    @property
    def last(self) -> int:
        return self.indices[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["indices"] = list(self.indices)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingPlan":
        d = dict(d)
        d["indices"] = tuple(d["indices"])
        return cls(**d)


def sample_indices(clip_n: int, N: int, trim_fraction: float = DEFAULT_TRIM) -> list[int]:
    if clip_n <= 0 or N <= 0:
        raise NonPositiveInput("clip_n and N must be positive")
    t = trim_count(clip_n, trim_fraction)
    first, last = t, clip_n - 1 - t
    usable = last - first + 1
    if usable < N:
        raise InsufficientFrames(f"{usable} usable frames after trimming, need {N}")
    if N == 1:
        return [first + _round_half_up(Fraction(last - first, 2))]
    # round_half_up(k * span / (N - 1)) in exact integers
    span, den = last - first, 2 * (N - 1)
    k = np.arange(N, dtype=np.int64)
    idx = first + (2 * k * span + (N - 1)) // den
    if np.any(np.diff(idx) <= 0):
        for i in range(1, N):
            if idx[i] <= idx[i - 1]:
                idx[i] = idx[i - 1] + 1
    return idx.tolist()


def plan_samples(clip_n: int, N: int = DEFAULT_N, trim_fraction: float = DEFAULT_TRIM,
                 FPS: float = 30.0) -> SamplingPlan:
    """Trim ``floor(trim_fraction * clip_n)`` frames from each end and pick
    ``N`` uniformly spaced indices (round half up) over the rest.

    ``M`` uses the untrimmed ``clip_n``; the trimmed variant is recorded too.
    """
    idx = sample_indices(clip_n, N, trim_fraction)
    trimmed = clip_n - 2 * trim_count(clip_n, trim_fraction)
    return SamplingPlan(
        N=N,
        FPS=float(FPS),
        clip_n=clip_n,
        M=motion_intensity(N, FPS, clip_n),
        trim_fraction=trim_fraction,
        indices=tuple(idx),
        clip_n_trimmed=trimmed,
        M_trimmed=motion_intensity(N, FPS, trimmed),
    )


def fixed_stride_indices(clip_n: int, N: int, stride: int = 3, start: Optional[int] = None) -> list[int]:
    """Legacy sampler: a sub-clip at ``start`` read every ``stride`` frames.

    Defaults to the centered sub-clip; raises if the clip is too short.
    """
    span = (N - 1) * stride + 1
    if span > clip_n:
        raise InsufficientFrames(f"stride {stride} x {N} frames needs {span}, clip has {clip_n}")
    if start is None:
        start = (clip_n - span) // 2
    if start < 0 or start + span > clip_n:
        raise SamplingError("sub-clip outside the clip")
    return [start + k * stride for k in range(N)]


def subsample(indices, k: int) -> list[int]:
    """Pick ``k`` evenly spaced entries of ``indices`` (all of them if fewer)."""
    indices = list(indices)
    if k >= len(indices):
        return indices
    if k == 1:
        return [indices[len(indices) // 2]]
    return [indices[_round_half_up(Fraction(j * (len(indices) - 1), k - 1))] for j in range(k)]
