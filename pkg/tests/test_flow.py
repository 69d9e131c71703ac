import math

import cv2
import numpy as np
import pytest

from clipcurate.flow import (DimensionMismatch, FlowConfig, FlowField, estimate_flow, flow_stats,
                             lk_grid)
from conftest import fb, gray_texture


def shifted(rng, dx, dy, h=180, w=320):
    """A periodic texture and the same texture translated by (dx, dy)."""
    img = gray_texture(rng, h, w)
    return img, np.roll(img, (dy, dx), axis=(0, 1))


def field_of(vectors, valid=None):
    vectors = np.asarray(vectors, float)
    n = len(vectors)
    pts = np.column_stack([np.arange(n) * 16.0, np.zeros(n)])
    valid = np.ones(n, bool) if valid is None else np.asarray(valid)
    return FlowField(16, 320, 180, pts, vectors, valid, np.zeros(n))


def test_identity_is_zero(rng):
    img = gray_texture(rng)
    f = estimate_flow(fb(img), fb(img))
    st = flow_stats(f)
    assert st.mean_magnitude < 0.1
    assert np.abs(f.valid_vectors).max() < 0.1
    assert st.valid_fraction > 0.9


@pytest.mark.parametrize("d", [(3, 0), (-2, 1), (0, -5), (7, 6), (-8, -8)])
def test_shift_recovery(rng, d):
    a, b = shifted(rng, *d)
    st = flow_stats(estimate_flow(fb(a), fb(b)))
    assert math.hypot(st.mean_vector[0] - d[0], st.mean_vector[1] - d[1]) <= 0.5
    assert st.valid_fraction >= 0.8


def test_antisymmetry(rng):
    a, b = shifted(rng, 4, -3)
    fwd = flow_stats(estimate_flow(fb(a), fb(b))).mean_vector
    bwd = flow_stats(estimate_flow(fb(b), fb(a))).mean_vector
    assert abs(fwd[0] + bwd[0]) < 0.5 and abs(fwd[1] + bwd[1]) < 0.5


def test_grid_density_consistency(rng):
    a, b = shifted(rng, 3, 2)
    coarse = flow_stats(lk_grid(a, b, FlowConfig(grid_spacing=16))).mean_magnitude
    dense = flow_stats(lk_grid(a, b, FlowConfig(grid_spacing=8))).mean_magnitude
    assert abs(dense - coarse) / coarse < 0.05


def test_grid_layout(rng):
    img = gray_texture(rng)
    f = lk_grid(img, img)
    r = FlowConfig().window // 2
    assert len(f.points) == len(f.vectors) == len(f.valid_mask)
    assert f.points[:, 0].min() >= r and f.points[:, 0].max() <= 320 - 1 - r
    assert f.points[:, 1].min() >= r and f.points[:, 1].max() <= 180 - 1 - r
    assert np.all((f.points - r) % 16 == 0)


def test_constant_frame_is_all_invalid():
    flat = np.full((180, 320), 128, np.uint8)
    f = estimate_flow(fb(flat), fb(flat))
    st = flow_stats(f)
    assert not f.valid_mask.any()
    assert st.valid_fraction == 0 and st.mean_magnitude == 0


def test_dimension_mismatch(rng):
    with pytest.raises(DimensionMismatch):
        estimate_flow(fb(gray_texture(rng, 90, 160)), fb(gray_texture(rng, 100, 160)))


def test_config_validation():
    with pytest.raises(ValueError):
        FlowConfig(window=14).validate()
    with pytest.raises(ValueError):
        FlowConfig(pyramid_levels=0).validate()


def test_agrees_with_opencv_lk(rng):
    # OpenCV's pyramidal LK as an independent implementation of the same method
    a, b = shifted(rng, 5, -2)
    cfg = FlowConfig()
    f = lk_grid(a, b, cfg)
    p0 = f.points.astype(np.float32).reshape(-1, 1, 2)
    p1, status, _ = cv2.calcOpticalFlowPyrLK(
        a, b, p0, None, winSize=(cfg.window, cfg.window), maxLevel=cfg.pyramid_levels - 1,
        criteria=(cv2.TERM_CRITERIA_COUNT | cv2.TERM_CRITERIA_EPS, cfg.max_iters, cfg.epsilon))
    ok = status.ravel().astype(bool) & f.valid_mask
    theirs = (p1 - p0).reshape(-1, 2)[ok]
    ours = f.vectors[ok]
    assert ok.mean() > 0.9
    assert np.median(np.hypot(*(theirs - ours).T)) < 0.05


def test_stats_examples():
    assert flow_stats(field_of([(0, 0)] * 4)).mean_magnitude == 0
    assert flow_stats(field_of([(3, 4)] * 7)).mean_magnitude == pytest.approx(5.0)
    st = flow_stats(field_of([(1, 0), (-1, 0)]))
    assert st.mean_vector == (0.0, 0.0) and st.mean_magnitude == 1.0


def test_stats_ignore_invalid_points():
    st = flow_stats(field_of([(1, 0), (100, 100), (3, 0)], valid=[True, False, True]))
    assert st.mean_vector == (2.0, 0.0)
    assert st.valid_fraction == pytest.approx(2 / 3)


def test_stats_invariants(rng):
    for _ in range(50):
        n = int(rng.integers(1, 40))
        vec = rng.normal(0, 3, (n, 2))
        st = flow_stats(field_of(vec, rng.random(n) < 0.8))
        assert st.mean_magnitude >= math.hypot(*st.mean_vector) - 1e-9
        assert st.p95_magnitude >= st.median_magnitude
        assert 0 <= st.valid_fraction <= 1
