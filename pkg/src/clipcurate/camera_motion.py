"""Global affine motion per frame pair and the C1-C6 clip taxonomy.

Labels:

    C1  orbit / self-rotation        C4  linear motion (pan, dolly, zoom)
    C2  local pan/tilt oscillation   C5  static or near-static
    C3  tracking a frame-locked subject   C6  edited (transitions, effects)
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .flow import FlowField
from .services import MalformedResponse, ServiceClient, ServiceUnavailable, encode_frames


class InsufficientPoints(ValueError):
    pass


class EmptyClip(ValueError):
    pass


class Label(str, Enum):
    C1 = "C1"
    C2 = "C2"
    C3 = "C3"
    C4 = "C4"
    C5 = "C5"
    C6 = "C6"


LABEL_NAMES = {
    Label.C1: "orbit/self-rotation",
    Label.C2: "local tilt/pan oscillation",
    Label.C3: "tracking",
    Label.C4: "linear motion",
    Label.C5: "static",
    Label.C6: "edited",
}


@dataclass(frozen=True)
class GlobalMotion:
    # (x, y) -> (a x + b y + tx, c x + d y + ty), frame-centered coordinates
    affine: tuple[float, float, float, float, float, float]
    divergence: float
    curl: float
    translation: tuple[float, float]
    inlier_fraction: float
    rms_residual: float
    center_magnitude: float = 0.0
    border_magnitude: float = 0.0
    n_points: int = 0

    @property
    def degenerate(self) -> bool:
        return self.n_points == 0

    @property
    def translation_norm(self) -> float:
        return math.hypot(*self.translation)

    @classmethod
    def identity(cls) -> "GlobalMotion":
        return cls((1.0, 0.0, 0.0, 1.0, 0.0, 0.0), 0.0, 0.0, (0.0, 0.0), 1.0, 0.0, 0.0, 0.0, 1)

    @classmethod
    def missing(cls) -> "GlobalMotion":
        """Placeholder for a pair whose flow had too few valid points."""
        return cls((1.0, 0.0, 0.0, 1.0, 0.0, 0.0), 0.0, 0.0, (0.0, 0.0), 0.0, 0.0, 0.0, 0.0, 0)

    @classmethod
    def from_params(cls, a, b, c, d, tx, ty, **kw) -> "GlobalMotion":
        return cls((a, b, c, d, tx, ty), ((a - 1.0) + (d - 1.0)) / 2.0, (c - b) / 2.0, (tx, ty),
                   kw.pop("inlier_fraction", 1.0), kw.pop("rms_residual", 0.0), **kw)


@dataclass(frozen=True)
class MotionLabel:
    label: Label
    confidence: float
    provenance: str = "heuristic"  # heuristic | remote | fallback
    rule: str = ""

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class ClassifierConfig:
    static_mag: float = 0.5  # px/frame
    static_rate: float = 0.002  # 1/frame, divergence and curl
    rot_rate: float = 0.004  # 1/frame
    parallax_inlier: float = 0.6
    coherence_min: float = 0.8
    residual_spike: float = 5.0  # px
    luma_jump: float = 40.0  # gray levels
    edit_frac: float = 0.02
    track_center_mag: float = 0.5  # px/frame
    theta_motion: float = 1.0  # px/frame
    osc_min_crossings: int = 2
    osc_net_frac: float = 0.5


# --------------------------------------------------------------------------
# fitting


def _lstsq_affine(x: np.ndarray, y: np.ndarray, u: np.ndarray, v: np.ndarray):
    A = np.column_stack([x, y, np.ones_like(x)])
    pu, *_ = np.linalg.lstsq(A, u, rcond=None)
    pv, *_ = np.linalg.lstsq(A, v, rcond=None)
    return pu, pv


def _residuals(x, y, u, v, pu, pv) -> np.ndarray:
    ru = u - (pu[0] * x + pu[1] * y + pu[2])
    rv = v - (pv[0] * x + pv[1] * y + pv[2])
    return np.hypot(ru, rv)


def fit_global_motion(field: FlowField, rounds: int = 2, inlier_k: float = 3.0,
                      residual_floor: float = 1e-3) -> GlobalMotion:
    """Robust affine fit of the valid flow vectors in frame-centered coordinates.

    After the initial least-squares fit, each round keeps points whose
    residual is below ``inlier_k`` times the median residual (never below
    ``residual_floor`` px) and refits on them.
    """
    pts = field.valid_points
    vec = field.valid_vectors
    if len(pts) < 6:
        raise InsufficientPoints(f"{len(pts)} valid points, need >= 6")
    cx = (field.width - 1) / 2.0
    cy = (field.height - 1) / 2.0
    x = pts[:, 0] - cx
    y = pts[:, 1] - cy
    u = vec[:, 0]
    v = vec[:, 1]

    inl = np.ones(len(x), bool)
    pu, pv = _lstsq_affine(x, y, u, v)
    for _ in range(rounds):
        res = _residuals(x, y, u, v, pu, pv)
        thr = max(inlier_k * float(np.median(res)), residual_floor)
        cand = res <= thr
        if cand.sum() < 6:
            break
        inl = cand
        pu, pv = _lstsq_affine(x[inl], y[inl], u[inl], v[inl])
    res = _residuals(x[inl], y[inl], u[inl], v[inl], pu, pv)
    rms = float(np.sqrt(np.mean(res ** 2)))

    mag = np.hypot(u, v)
    in_center = (np.abs(x) <= field.width / 6.0) & (np.abs(y) <= field.height / 6.0)
    center = float(mag[in_center].mean()) if in_center.any() else 0.0
    border = float(mag[~in_center].mean()) if (~in_center).any() else 0.0
    return GlobalMotion.from_params(
        1.0 + pu[0], pu[1], pv[0], 1.0 + pv[1], pu[2], pv[2],
        inlier_fraction=float(inl.mean()), rms_residual=rms,
        center_magnitude=center, border_magnitude=border, n_points=int(len(x)),
    )


def try_fit_global_motion(field: FlowField) -> GlobalMotion:
    try:
        return fit_global_motion(field)
    except InsufficientPoints:
        return GlobalMotion.missing()


# --------------------------------------------------------------------------
# classification


def _squash(margin: float) -> float:
    """Map a non-negative relative margin to a confidence in [0.5, 1]."""
    margin = max(0.0, float(margin))
    return 0.5 + 0.5 * margin / (1.0 + margin)


def _rel(value: float, threshold: float) -> float:
    return abs(value - threshold) / max(abs(threshold), 1e-12)


def zero_crossings(signal: np.ndarray, deadband: float) -> int:
    """Sign changes of ``signal``, ignoring samples inside the deadband."""
    signs = np.sign(signal[np.abs(signal) >= deadband])
    if len(signs) < 2:
        return 0
    return int(np.count_nonzero(signs[1:] != signs[:-1]))


def clip_features(motions: Sequence[GlobalMotion], cfg: ClassifierConfig,
                  luma_deltas: Optional[Sequence[float]] = None) -> dict:
    if len(motions) == 0:
        raise EmptyClip("no frame-pair motions")
    spikes = np.array([m.rms_residual > cfg.residual_spike for m in motions])
    if luma_deltas is not None:
        if len(luma_deltas) != len(motions):
            raise ValueError("luma_deltas must align with motions")
        spikes |= np.abs(np.asarray(luma_deltas, float)) > cfg.luma_jump
    live = [m for m in motions if not m.degenerate]
    f = {"n": len(motions), "edit_frac": float(spikes.mean()), "n_live": len(live)}
    if not live:
        return f
    t = np.array([m.translation for m in live])
    tn = np.hypot(t[:, 0], t[:, 1])
    f["med_trans"] = float(np.median(tn))
    f["med_div"] = float(np.median([abs(m.divergence) for m in live]))
    f["med_curl"] = float(np.median([abs(m.curl) for m in live]))
    f["med_inlier"] = float(np.median([m.inlier_fraction for m in live]))
    f["med_center"] = float(np.median([m.center_magnitude for m in live]))
    f["med_border"] = float(np.median([m.border_magnitude for m in live]))
    moving = tn >= cfg.static_mag
    if moving.any():
        unit = t[moving] / tn[moving, None]
        f["coherence"] = float(np.hypot(*unit.mean(0)))
    else:
        f["coherence"] = 0.0
    axis = int(np.argmax(np.abs(t).sum(0)))
    s = t[:, axis]
    f["axis"] = "x" if axis == 0 else "y"
    f["crossings"] = zero_crossings(s, cfg.static_mag / 2.0)
    total = float(np.abs(s).sum())
    f["net_frac"] = abs(float(s.sum())) / total if total > 0 else 0.0
    return f


def classify_clip(motions: Sequence[GlobalMotion], cfg: ClassifierConfig = ClassifierConfig(),
                  luma_deltas: Optional[Sequence[float]] = None) -> MotionLabel:
    """Rule cascade over time-aggregated motion statistics.

    ``luma_deltas`` (frame-to-frame mean luma change per pair) feeds the
    edit detector alongside residual spikes.
    """
    f = clip_features(motions, cfg, luma_deltas)

    if f["edit_frac"] > cfg.edit_frac:
        return MotionLabel(Label.C6, _squash(_rel(f["edit_frac"], cfg.edit_frac)), rule="edit_spikes")
    if f["n_live"] == 0:
        return MotionLabel(Label.C5, 0.5, rule="no_trackable_points")

    mt, md, mc = f["med_trans"], f["med_div"], f["med_curl"]
    if mt < cfg.static_mag and md < cfg.static_rate and mc < cfg.static_rate:
        margin = min(_rel(mt, cfg.static_mag), _rel(md, cfg.static_rate), _rel(mc, cfg.static_rate))
        return MotionLabel(Label.C5, _squash(margin), rule="static")

    if mc >= cfg.rot_rate:
        return MotionLabel(Label.C1, _squash(_rel(mc, cfg.rot_rate)), rule="rotation")
    if (f["med_inlier"] < cfg.parallax_inlier and mt >= cfg.static_mag
            and f["coherence"] >= cfg.coherence_min):
        return MotionLabel(Label.C1, _squash(_rel(f["med_inlier"], cfg.parallax_inlier)), rule="parallax")

    if f["med_center"] < cfg.track_center_mag and f["med_border"] >= cfg.theta_motion:
        margin = min(_rel(f["med_center"], cfg.track_center_mag), _rel(f["med_border"], cfg.theta_motion))
        return MotionLabel(Label.C3, _squash(margin), rule="tracking")

    if f["crossings"] >= cfg.osc_min_crossings and f["net_frac"] < cfg.osc_net_frac:
        margin = _rel(f["net_frac"], cfg.osc_net_frac)
        return MotionLabel(Label.C2, _squash(margin), rule=f"oscillation_{f['axis']}")

    margin = max(_rel(mt, cfg.static_mag) if mt >= cfg.static_mag else 0.0,
                 _rel(md, cfg.static_rate) if md >= cfg.static_rate else 0.0)
    return MotionLabel(Label.C4, _squash(margin), rule="linear")


# --------------------------------------------------------------------------
# remote classifier


class ClassifierClient(ServiceClient):
    """Client for an external clip classifier.

    Request: frame-set payload of gray planes. Response:
    ``{"label": "C1".."C6", "confidence": float}``.
    """

    def classify(self, frames) -> MotionLabel:
        body = self.post_json(encode_frames(frames, color=False))
        label = body.get("label")
        conf = body.get("confidence")
        if label not in Label._value2member_map_:
            raise MalformedResponse(f"unknown label {label!r}")
        if isinstance(conf, bool) or not isinstance(conf, (int, float)) or not 0.0 <= conf <= 1.0:
            raise MalformedResponse(f"confidence {conf!r} not a number in [0, 1]")
        return MotionLabel(Label(label), float(conf), provenance="remote", rule="remote")


def classify_remote(clip_frames, client: ClassifierClient,
                    motions: Optional[Sequence[GlobalMotion]] = None,
                    cfg: ClassifierConfig = ClassifierConfig(),
                    luma_deltas: Optional[Sequence[float]] = None) -> MotionLabel:
    """Ask the external classifier; fall back to the heuristic cascade on
    service failure when ``client.fallback`` is set and motions are given."""
    try:
        return client.classify(clip_frames)
    except ServiceUnavailable:
        if not client.fallback or motions is None:
            raise
    lab = classify_clip(motions, cfg, luma_deltas)
    return MotionLabel(lab.label, lab.confidence, provenance="fallback", rule=lab.rule)


def motion_to_dict(m: GlobalMotion) -> dict:
    return asdict(m)
