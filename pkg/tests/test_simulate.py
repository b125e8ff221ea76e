import math

import numpy as np
import pytest

from nmwalk.body import IDX_PITCH, IDX_Y, ModelState, NQ
from nmwalk.contact import Terrain
from nmwalk.control import ControlParams
from nmwalk.simulate import (GaitEvents, GaitTrace, SimulationError,
                             TERMINATION_COMPLETED, TERMINATION_FELL,
                             detect_events, fall_check, steady_stride,
                             step_down_robustness)


def synthetic_trace(grf_left_z, fs=1000.0, threshold=20.0):
    n = len(grf_left_z)
    t = np.arange(n) / fs
    grf = np.zeros((n, 2, 2))
    grf[:, 0, 1] = grf_left_z
    dummy14 = np.zeros((n, 14))
    return GaitTrace(t=t, q=np.zeros((n, 9)), qd=np.zeros((n, 9)),
                     act=dummy14, lce=dummy14, stim=dummy14,
                     muscle_force=dummy14, grf=grf,
                     cop=np.full((n, 2, 2), np.nan), com=np.zeros((n, 2)),
                     com_vel=np.zeros((n, 2)),
                     termination=TERMINATION_COMPLETED, fall_time=None,
                     terrain=Terrain.flat(), params=None,
                     events=GaitEvents((np.empty(0), np.empty(0)),
                                       (np.empty(0), np.empty(0))),
                     meta={"sample_rate": fs, "stance_threshold": threshold,
                           "hysteresis": 5.0})


def test_detect_events_ramp_crossing():
    """GRF ramps through 20 N at exactly t = 0.5 s: one heel strike there."""
    fs = 1000.0
    t = np.arange(0, 1.0, 1 / fs)
    fz = np.clip((t - 0.5) * 400.0, 0.0, None)   # crosses 20 N at t = 0.55
    trace = synthetic_trace(fz)
    ev = detect_events(trace)
    assert ev.heel_strikes[0].size == 1
    crossing = 0.5 + 20.0 / 400.0
    assert abs(ev.heel_strikes[0][0] - crossing) <= 1.5 / fs
    assert ev.toe_offs[0].size == 0
    assert ev.heel_strikes[1].size == 0


def test_detect_events_no_contact():
    trace = synthetic_trace(np.zeros(500))
    ev = detect_events(trace)
    assert all(a.size == 0 for a in ev.heel_strikes + ev.toe_offs)


def test_detect_events_hysteresis_chatter():
    fz = np.array([0.0] * 10 + [19.0, 21.0] * 40 + [0.0] * 10)
    ev = detect_events(synthetic_trace(fz))
    assert ev.heel_strikes[0].size == 1


def test_detect_events_alternating_steps():
    fs = 1000.0
    n = 3000
    fz = np.zeros(n)
    for k in range(3):
        fz[int((0.2 + k) * fs):int((0.8 + k / 1.0) * fs)] = 700.0
    ev = detect_events(synthetic_trace(fz))
    assert ev.heel_strikes[0].size == 3
    assert ev.toe_offs[0].size == 3
    # exactly one toe-off between consecutive heel strikes
    hs = ev.heel_strikes[0]
    to = ev.toe_offs[0]
    for a, b in zip(hs[:-1], hs[1:]):
        assert np.sum((to > a) & (to < b)) == 1


def test_fall_check_boundaries(model):
    standing = ModelState(model.standing_pose(), np.zeros(NQ))
    assert not fall_check(model, standing)

    tipped = standing.copy()
    tipped.q[IDX_PITCH] = math.pi / 2
    assert fall_check(model, tipped)

    ref = model.standing_com_height()
    low = standing.copy()
    pos, _ = model.com_state(low)
    low.q[IDX_Y] -= pos[1] - 0.6 * ref      # CoM exactly at the threshold
    pos2, _ = model.com_state(low)
    assert pos2[1] == pytest.approx(0.6 * ref, abs=1e-12)
    assert not fall_check(model, low)       # strict inequality
    low.q[IDX_Y] -= 1e-6
    assert fall_check(model, low)


def test_steady_stride_requires_eight_strides():
    fs = 1000.0
    n = 3000
    fz = np.zeros(n)
    fz[200:800] = 700.0
    fz[1200:1800] = 700.0
    fz[2200:2800] = 700.0
    trace = synthetic_trace(fz)
    trace.events = detect_events(trace)
    with pytest.raises(SimulationError):
        steady_stride(trace)


def test_rollout_rejects_bad_inputs(sim):
    with pytest.raises(ValueError):
        sim.rollout(sim.default_params(), t_max=0.0)
    lo = sim.param_space.lo
    bad = ControlParams.from_array(lo - 0.1)
    with pytest.raises(ValueError):
        sim.rollout(bad)


def test_rollout_deterministic_bit_identical(sim):
    a = sim.rollout(sim.default_params(), t_max=1.5)
    b = sim.rollout(sim.default_params(), t_max=1.5)
    assert a.termination == b.termination
    assert np.array_equal(a.q, b.q)
    assert np.array_equal(a.qd, b.qd)
    assert np.array_equal(a.stim, b.stim)
    assert np.array_equal(a.grf, b.grf)


def test_rollout_lower_bound_params_fall(sim):
    params, _ = sim.param_space.decode(np.zeros(12))
    trace = sim.rollout(params, t_max=6.0)
    assert trace.termination == TERMINATION_FELL
    assert trace.fall_time is not None
    assert trace.fall_time <= 6.0


def test_trace_time_ordered_and_friction_cone(sim):
    trace = sim.rollout(sim.default_params(), t_max=2.0)
    assert np.all(np.diff(trace.t) > 0)
    mu = sim.contact.mu
    fz = trace.grf[:, :, 1]
    fx = trace.grf[:, :, 0]
    assert np.all(fz >= 0.0)
    assert np.all(np.abs(fx) <= mu * fz + 1e-9)
    # events lie inside the time range
    for arr in trace.events.heel_strikes + trace.events.toe_offs:
        if arr.size:
            assert arr.min() >= trace.t[0] and arr.max() <= trace.t[-1]
    # CoP defined only while the foot is loaded
    loaded = fz > 0
    assert np.all(np.isnan(trace.cop[~loaded][:, 0]))
    assert not np.any(np.isnan(trace.cop[loaded][:, 0]))


def test_step_down_unstable_flat_detected(sim):
    params, _ = sim.param_space.decode(np.zeros(12))
    res = step_down_robustness(sim, params)
    assert not res.flat_stable
    assert res.max_height_cm == 0
    assert res.message == "unstable on flat ground"
