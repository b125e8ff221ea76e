"""Gait-structure checks on the default walking rollout (shared fixture)."""

import numpy as np
import pytest

from nmwalk.analysis import analyze_trace, gait_descriptors
from nmwalk.simulate import TERMINATION_COMPLETED, steady_stride


@pytest.fixture(scope="module")
def walk(default_walk):
    if default_walk.termination != TERMINATION_COMPLETED:
        pytest.fail(f"default gait did not complete: {default_walk.termination}")
    return default_walk


def test_walk_has_many_strides(walk):
    assert walk.stride_count() >= 8


def test_event_sanity_alternating(walk):
    """Exactly one ipsilateral toe-off between consecutive heel strikes."""
    for leg in range(2):
        hs = walk.events.heel_strikes[leg]
        to = walk.events.toe_offs[leg]
        for a, b in zip(hs[:-1], hs[1:]):
            assert np.sum((to > a) & (to < b)) == 1
    # heel strikes alternate between the legs
    merged = walk.events.merged_heel_strikes()
    sides = [0 if t in walk.events.heel_strikes[0] else 1 for t in merged]
    assert all(a != b for a, b in zip(sides[:-1], sides[1:]))


def test_stride_times_regular(walk):
    """Stride times of the last 6 strides vary by < 5 %."""
    for leg in range(2):
        hs = walk.events.heel_strikes[leg]
        periods = np.diff(hs)[-6:]
        assert periods.size >= 3
        assert (periods.max() - periods.min()) / periods.mean() < 0.05


def test_steady_stride_window_structure(walk):
    w = steady_stride(walk)
    assert w.i0 < w.ss0 < w.ss1 < w.i1          # single support strictly inside
    hs_c = walk.events.heel_strikes[1 - w.leg]
    inside = hs_c[(hs_c > w.t0) & (hs_c < w.t1)]
    assert inside.size == 1                      # exactly one contralateral step
    # stride duration ~ twice the step period (10 %)
    merged = walk.events.merged_heel_strikes()
    step = float(np.median(np.diff(merged)[-8:]))
    assert (w.t1 - w.t0) == pytest.approx(2 * step, rel=0.10)


def test_speed_cadence_consistency(walk):
    """speed ~ step length x steps per second within 5 %."""
    speed, step_len = gait_descriptors(walk)
    merged = walk.events.merged_heel_strikes()
    cadence = 1.0 / float(np.mean(np.diff(merged)[-12:]))
    assert speed == pytest.approx(step_len * cadence, rel=0.05)


def test_single_support_has_single_foot_loaded(walk):
    w = steady_stride(walk)
    thr = walk.meta["stance_threshold"]
    sl = slice(w.ss0 + 1, w.ss1 - 1)
    own = walk.grf[sl, w.leg, 1]
    other = walk.grf[sl, 1 - w.leg, 1]
    assert np.all(own > 0.0)
    assert np.median(other) < thr


def test_analysis_fields_populated(walk):
    an = analyze_trace(walk)
    assert np.isfinite(an.ip.height)
    assert an.ip.n_samples == 100
    assert 0.0 <= an.collision.fraction <= 1.0
    assert an.stability.margins.shape == (6,)
    assert an.speed > 0.5
    assert 0.3 < an.step_length < 1.2
