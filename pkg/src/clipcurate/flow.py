"""Sparse pyramidal Lucas-Kanade flow on a regular grid."""
from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
from numba import njit

from .media import FrameBuffer


class FlowError(Exception):
    pass


class DimensionMismatch(FlowError):
    pass


@dataclass(frozen=True)
class FlowConfig:
    grid_spacing: int = 16
    pyramid_levels: int = 3
    window: int = 15
    max_iters: int = 20
    residual_max: float = 10.0
    min_eig: float = 1e-3
    epsilon: float = 0.01  # px, per-iteration convergence step

    def validate(self) -> "FlowConfig":
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 3")
        if self.grid_spacing < 1 or self.max_iters < 1:
            raise ValueError("grid_spacing and max_iters must be >= 1")
        if self.residual_max <= 0:
            raise ValueError("residual_max must be positive")
        return self


@dataclass
class FlowField:
    grid_spacing: int
    width: int
    height: int
    points: np.ndarray  # (P, 2) x, y
    vectors: np.ndarray  # (P, 2) u, v
    valid_mask: np.ndarray  # (P,) bool
    residuals: np.ndarray  # (P,) mean abs intensity error, gray levels

    def __post_init__(self):
        n = len(self.points)
        if len(self.vectors) != n or len(self.valid_mask) != n:
            raise ValueError("points, vectors and valid_mask must align")

    @property
    def valid_points(self) -> np.ndarray:
        return self.points[self.valid_mask]

    @property
    def valid_vectors(self) -> np.ndarray:
        return self.vectors[self.valid_mask]


@dataclass(frozen=True)
class FlowStats:
    mean_vector: tuple[float, float]
    mean_magnitude: float
    p95_magnitude: float
    median_magnitude: float
    valid_fraction: float


def grid_points(width: int, height: int, spacing: int, margin: int) -> np.ndarray:
    xs = np.arange(margin, width - margin, spacing, dtype=np.float64)
    ys = np.arange(margin, height - margin, spacing, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def _pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    pyr = [img.astype(np.float32)]
    for _ in range(levels - 1):
        pyr.append(cv2.pyrDown(pyr[-1]))
    return pyr


def _gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # central differences, one-sided at the border
    gy, gx = np.gradient(img.astype(np.float64))
    return gx, gy


def estimate_flow(prev: FrameBuffer, next: FrameBuffer, cfg: FlowConfig = FlowConfig()) -> FlowField:
    """Track grid points from ``prev`` into ``next``.

    Points are invalid when the structure tensor is degenerate, the final
    window residual exceeds ``cfg.residual_max`` or the track leaves the frame.
    A constant frame yields an all-invalid field rather than an error.
    """
    if (prev.width, prev.height) != (next.width, next.height) or prev.luma.shape != next.luma.shape:
        raise DimensionMismatch(
            f"frame sizes differ: {prev.width}x{prev.height} vs {next.width}x{next.height}"
        )
    return lk_grid(prev.luma, next.luma, cfg)


def lk_grid(img0: np.ndarray, img1: np.ndarray, cfg: FlowConfig = FlowConfig()) -> FlowField:
    cfg.validate()
    h, w = img0.shape
    r = cfg.window // 2
    pts = grid_points(w, h, cfg.grid_spacing, r)
    flow, valid, resid = lk_track(img0, img1, pts, cfg)
    return FlowField(cfg.grid_spacing, w, h, pts, flow, valid, resid)


@njit(cache=True)
def _bilinear(img, x, y):
    h, w = img.shape
    if x < 0.0:
        x = 0.0
    elif x > w - 1.0:
        x = w - 1.0
    if y < 0.0:
        y = 0.0
    elif y > h - 1.0:
        y = h - 1.0
    x0 = min(int(x), w - 2)
    y0 = min(int(y), h - 2)
    fx = x - x0
    fy = y - y0
    top = img[y0, x0] + (img[y0, x0 + 1] - img[y0, x0]) * fx
    bot = img[y0 + 1, x0] + (img[y0 + 1, x0 + 1] - img[y0 + 1, x0]) * fx
    return top + (bot - top) * fy


@njit(cache=True)
def _lk_level(I, gx, gy, J, pts, guess, r, max_iters, eps, min_eig, out_v, out_lam, ok):
    n = pts.shape[0]
    side = 2 * r + 1
    npix = side * side
    Ip = np.empty(npix)
    Ix = np.empty(npix)
    Iy = np.empty(npix)
    for k in range(n):
        px = pts[k, 0]
        py = pts[k, 1]
        gxx = 0.0
        gxy = 0.0
        gyy = 0.0
        m = 0
        for j in range(-r, r + 1):
            for i in range(-r, r + 1):
                a = _bilinear(gx, px + i, py + j)
                b = _bilinear(gy, px + i, py + j)
                Ip[m] = _bilinear(I, px + i, py + j)
                Ix[m] = a
                Iy[m] = b
                gxx += a * a
                gxy += a * b
                gyy += b * b
                m += 1
        det = gxx * gyy - gxy * gxy
        tr = gxx + gyy
        disc = tr * tr - 4.0 * det
        if disc < 0.0:
            disc = 0.0
        lam = (tr - np.sqrt(disc)) / 2.0 / npix
        out_lam[k] = lam
        vx = 0.0
        vy = 0.0
        if lam >= min_eig and det > 0.0:
            qx = px + guess[k, 0]
            qy = py + guess[k, 1]
            for _ in range(max_iters):
                bx = 0.0
                by = 0.0
                m = 0
                for j in range(-r, r + 1):
                    for i in range(-r, r + 1):
                        d = Ip[m] - _bilinear(J, qx + vx + i, qy + vy + j)
                        bx += d * Ix[m]
                        by += d * Iy[m]
                        m += 1
                ex = (gyy * bx - gxy * by) / det
                ey = (gxx * by - gxy * bx) / det
                if not (np.isfinite(ex) and np.isfinite(ey)):
                    ok[k] = False
                    vx = 0.0
                    vy = 0.0
                    break
                vx += ex
                vy += ey
                if np.sqrt(ex * ex + ey * ey) < eps:
                    break
        out_v[k, 0] = vx
        out_v[k, 1] = vy


@njit(cache=True)
def _window_residual(I0, I1, pts, flow, r):
    n = pts.shape[0]
    out = np.empty(n)
    for k in range(n):
        s = 0.0
        m = 0
        for j in range(-r, r + 1):
            for i in range(-r, r + 1):
                x = pts[k, 0] + i
                y = pts[k, 1] + j
                s += abs(_bilinear(I0, x, y) - _bilinear(I1, x + flow[k, 0], y + flow[k, 1]))
                m += 1
        out[k] = s / m
    return out


def lk_track(img0: np.ndarray, img1: np.ndarray, pts: np.ndarray, cfg: FlowConfig):
    """Pyramidal LK for arbitrary points; returns (flow, valid, residual)."""
    h, w = img0.shape
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    n = len(pts)
    if n == 0:
        return np.zeros((0, 2)), np.zeros(0, bool), np.zeros(0)
    r = cfg.window // 2
    levels = max(1, min(cfg.pyramid_levels, int(np.floor(np.log2(max(min(h, w), 2) / cfg.window))) + 1))
    pyr0 = [p.astype(np.float64) for p in _pyramid(img0, levels)]
    pyr1 = [p.astype(np.float64) for p in _pyramid(img1, levels)]

    guess = np.zeros((n, 2))
    ok = np.ones(n, np.bool_)
    lam = np.zeros(n)
    v = np.zeros((n, 2))
    for lvl in range(levels - 1, -1, -1):
        I, J = pyr0[lvl], pyr1[lvl]
        gx, gy = _gradients(I)
        _lk_level(I, gx, gy, J, pts * 0.5 ** lvl, guess, r, cfg.max_iters, cfg.epsilon,
                  cfg.min_eig, v, lam, ok)
        guess = 2.0 * (guess + v) if lvl > 0 else guess + v

    flow = guess
    resid = _window_residual(pyr0[0], pyr1[0], pts, flow, r)
    end = pts + flow
    inside = (end[:, 0] >= 0) & (end[:, 0] <= w - 1) & (end[:, 1] >= 0) & (end[:, 1] <= h - 1)
    valid = ok & (lam >= cfg.min_eig) & (resid <= cfg.residual_max) & inside & np.isfinite(flow).all(1)
    flow = np.where(valid[:, None], flow, 0.0)
    return flow, valid, resid


def flow_stats(field: FlowField) -> FlowStats:
    n = len(field.valid_mask)
    vec = field.valid_vectors
    if len(vec) == 0:
        return FlowStats((0.0, 0.0), 0.0, 0.0, 0.0, 0.0)
    mag = np.hypot(vec[:, 0], vec[:, 1])
    mean = vec.mean(0)
    return FlowStats(
        (float(mean[0]), float(mean[1])),
        float(mag.mean()),
        float(np.percentile(mag, 95)),
        float(np.median(mag)),
        len(vec) / n,
    )
