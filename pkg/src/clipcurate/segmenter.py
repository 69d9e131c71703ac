"""Split a source video's motion trace into camera-motion clip spans."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .camera_motion import GlobalMotion, try_fit_global_motion
from .flow import FlowConfig, estimate_flow, flow_stats
from .media import FrameBuffer, prefetch


class TooFewFrames(ValueError):
    pass


@dataclass
class PairStats:
    mean_magnitude: float
    mean_vector: tuple[float, float]
    mean_luma: float  # average of the two frames' mean luma
    fit_residual: float = 0.0
    p95_magnitude: float = 0.0
    valid_fraction: float = 0.0
    luma_delta: float = 0.0  # mean luma of frame i+1 minus frame i
    motion: Optional[GlobalMotion] = None


@dataclass
class MotionTrace:
    source_id: str
    fps: float
    pair_stats: list[PairStats] = field(default_factory=list)

    @property
    def frame_count(self) -> int:
        return len(self.pair_stats) + 1

    def magnitudes(self, statistic: str = "mean") -> np.ndarray:
        if statistic == "mean":
            return np.array([p.mean_magnitude for p in self.pair_stats], float)
        if statistic == "p95":
            return np.array([p.p95_magnitude for p in self.pair_stats], float)
        raise ValueError(f"unknown statistic {statistic!r}")

    @property
    def mean_luma(self) -> np.ndarray:
        return np.array([p.mean_luma for p in self.pair_stats], float)

    def motions(self, start: int = 0, stop: Optional[int] = None) -> list[GlobalMotion]:
        return [p.motion or GlobalMotion.missing() for p in self.pair_stats[start:stop]]

    def luma_deltas(self, start: int = 0, stop: Optional[int] = None) -> list[float]:
        return [p.luma_delta for p in self.pair_stats[start:stop]]


@dataclass(frozen=True)
class SegmenterConfig:
    theta_motion: float = 1.0  # px/frame at the analysis height
    theta_cut: float = 20.0
    luma_jump_max: float = 40.0
    min_len_s: float = 3.0
    max_len_s: float = 16.0
    statistic: str = "mean"  # or "p95"

    def validate(self) -> "SegmenterConfig":
        if not 0 < self.theta_motion < self.theta_cut:
            raise ValueError("need 0 < theta_motion < theta_cut")
        if not 0 < self.min_len_s < self.max_len_s:
            raise ValueError("need 0 < min_len_s < max_len_s")
        if self.luma_jump_max <= 0:
            raise ValueError("luma_jump_max must be positive")
        if self.statistic not in ("mean", "p95"):
            raise ValueError("statistic must be 'mean' or 'p95'")
        return self

    def pair_limits(self, fps: float) -> tuple[int, int]:
        """Span length limits in frame pairs for a given frame rate."""
        lo = max(1, math.ceil(self.min_len_s * fps - 1e-9))
        hi = max(lo, math.floor(self.max_len_s * fps + 1e-9))
        return lo, hi


@dataclass(frozen=True, order=True)
class ClipSpan:
    start_frame: int
    end_frame: int  # inclusive
    source_id: str = ""

    def __post_init__(self):
        if self.end_frame <= self.start_frame:
            raise ValueError("end_frame must exceed start_frame")

    @property
    def n_frames(self) -> int:
        return self.end_frame - self.start_frame + 1

    @property
    def n_pairs(self) -> int:
        return self.end_frame - self.start_frame


def pair_stats_for(prev: FrameBuffer, nxt: FrameBuffer, flow_cfg: FlowConfig) -> PairStats:
    field_ = estimate_flow(prev, nxt, flow_cfg)
    st = flow_stats(field_)
    motion = try_fit_global_motion(field_)
    l0, l1 = prev.mean_luma, nxt.mean_luma
    return PairStats(
        mean_magnitude=st.mean_magnitude,
        mean_vector=st.mean_vector,
        mean_luma=(l0 + l1) / 2.0,
        fit_residual=motion.rms_residual,
        p95_magnitude=st.p95_magnitude,
        valid_fraction=st.valid_fraction,
        luma_delta=l1 - l0,
        motion=motion,
    )


def build_trace(stream: Iterable[FrameBuffer], flow_cfg: FlowConfig = FlowConfig(), *,
                source_id: str = "", fps: Optional[float] = None, queue_size: int = 4) -> MotionTrace:
    """Flow statistics and global motion for every adjacent frame pair.

    Decoding runs in a producer thread behind a bounded queue of
    ``queue_size`` frames.
    """
    meta = getattr(stream, "meta", None)
    if meta is not None:
        source_id = source_id or meta.source_id
        fps = float(meta.fps) if fps is None else fps
    if fps is None:
        raise ValueError("fps is required when the stream carries no metadata")
    trace = MotionTrace(source_id, fps)
    prev = None
    frames = prefetch(stream, queue_size) if queue_size > 0 else iter(stream)
    for fb in frames:
        if prev is not None:
            trace.pair_stats.append(pair_stats_for(prev, fb, flow_cfg))
        prev = fb
    if not trace.pair_stats:
        raise TooFewFrames("need at least 2 frames")
    return trace


def detect_cuts(trace: MotionTrace, cfg: SegmenterConfig = SegmenterConfig()) -> list[int]:
    mags = trace.magnitudes(cfg.statistic)
    luma = trace.mean_luma
    return cut_indices(mags, luma, cfg.theta_cut, cfg.luma_jump_max)


def cut_indices(mags: Sequence[float], luma: Optional[Sequence[float]], theta_cut: float,
                luma_jump_max: float) -> list[int]:
    """Pair ``i`` is a cut when its flow exceeds ``theta_cut`` or the mean luma
    jumps by more than ``luma_jump_max`` from pair ``i`` to ``i + 1``."""
    mags = np.asarray(mags, float)
    cut = mags > theta_cut
    if luma is not None and len(luma) > 1:
        jumps = np.abs(np.diff(np.asarray(luma, float))) > luma_jump_max
        cut[:-1] |= jumps
    return [int(i) for i in np.nonzero(cut)[0]]


def find_runs(mags: Sequence[float], cuts: Iterable[int], theta_motion: float,
              min_pairs: int, max_pairs: int) -> list[tuple[int, int]]:
    """Inclusive pair ranges of qualifying motion, split to ``max_pairs``.

    A pair qualifies when its magnitude is at least ``theta_motion`` and it
    is not a cut. Maximal runs shorter than ``min_pairs`` are dropped; longer
    ones are cut greedily from the left, keeping a tail of ``min_pairs`` or
    more.
    """
    cut_set = set(cuts)
    out = []
    n = len(mags)
    i = 0
    while i < n:
        if mags[i] < theta_motion or i in cut_set:
            i += 1
            continue
        j = i
        while j + 1 < n and mags[j + 1] >= theta_motion and (j + 1) not in cut_set:
            j += 1
        a = i
        while j - a + 1 > max_pairs:
            out.append((a, a + max_pairs - 1))
            a += max_pairs
        if j - a + 1 >= min_pairs:
            out.append((a, j))
        i = j + 1
    return out


def extract_spans(trace: MotionTrace, cfg: SegmenterConfig = SegmenterConfig()) -> list[ClipSpan]:
    cfg.validate()
    mags = trace.magnitudes(cfg.statistic)
    cuts = detect_cuts(trace, cfg)
    lo, hi = cfg.pair_limits(trace.fps)
    return [ClipSpan(a, b + 1, trace.source_id) for a, b in find_runs(mags, cuts, cfg.theta_motion, lo, hi)]
