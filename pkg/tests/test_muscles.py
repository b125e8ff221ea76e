import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nmwalk.muscles import (MuscleParams, MuscleState, activation_step,
                            buffer_force, force_length, force_velocity,
                            mtu_force, parallel_force, tendon_force)


@pytest.fixture(scope="module")
def sol(muscles):
    return muscles.params[0]   # SOL_L


def test_activation_fixed_point(sol):
    assert activation_step(0.4, 0.4, 0.01, sol.tau) == pytest.approx(0.4)


def test_activation_closed_form_rate(sol):
    """First-order lag: with u=1, a=0, tau=0.01 the initial rate is 100/s.

    Oracle: a(dt) = 1 - exp(-dt/tau); the rate follows from small dt.
    """
    tau = 0.01
    for dt in (1e-5, 1e-6):
        a1 = activation_step(1.0, 0.0, dt, tau)
        assert a1 == pytest.approx(1.0 - math.exp(-dt / tau), rel=1e-12)
        assert a1 / dt == pytest.approx(100.0, rel=2e-3 if dt == 1e-5 else 2e-4)


def test_activation_decay_monotone(sol):
    a = 0.9
    prev = a
    for _ in range(200):
        a = activation_step(0.0, a, 0.005, sol.tau)
        assert 0.0 <= a <= prev
        prev = a
    assert a < 1e-3


@given(u=st.floats(-2, 3), a0=st.floats(0, 1),
       steps=st.integers(1, 50))
@settings(max_examples=200, deadline=None)
def test_activation_stays_in_unit_interval(u, a0, steps):
    a = a0
    for _ in range(steps):
        a = activation_step(u, a, 0.01, 0.01)
        assert 0.0 <= a <= 1.0


def test_hill_normalization_point(sol):
    """a=1, l_ce=l_opt, v_ce=0 gives exactly F_max of CE force."""
    f_ce = 1.0 * sol.f_max * force_length(sol.l_opt, sol) * force_velocity(0.0, sol)
    assert f_ce == pytest.approx(sol.f_max, rel=1e-12)


def test_fv_boundaries(sol):
    assert force_velocity(-sol.v_max, sol) == pytest.approx(0.0, abs=1e-12)
    assert force_velocity(0.0, sol) == pytest.approx(1.0)
    assert force_velocity(50 * sol.v_max, sol) < sol.n_ecc + 0.05


def test_fl_unimodal_peak_at_lopt(sol):
    ls = np.linspace(0.4, 1.6, 241) * sol.l_opt
    fl = force_length(ls, sol)
    i_peak = int(np.argmax(fl))
    assert ls[i_peak] == pytest.approx(sol.l_opt, rel=0.01)
    assert fl[i_peak] == pytest.approx(1.0)
    # decays away from the peak on both sides
    assert np.all(np.diff(fl[:i_peak + 1]) >= -1e-15)
    assert np.all(np.diff(fl[i_peak:]) <= 1e-15)


def test_fv_monotone_increasing(sol):
    vs = np.linspace(-sol.v_max, sol.v_max, 401)
    fv = force_velocity(vs, sol)
    assert np.all(np.diff(fv) > -1e-12)


def test_slack_mtu_zero_force(sol):
    state = MuscleState(activation=0.0, l_ce=sol.l_opt)
    f, _ = mtu_force(0.0, sol.l_opt + sol.l_slack * 0.999, state, sol)
    assert f == 0.0


@given(l_mtu=st.floats(0.25, 0.40), l_ce=st.floats(0.02, 0.07),
       a=st.floats(0, 1))
@settings(max_examples=300, deadline=None)
def test_tendon_force_never_negative(muscles, l_mtu, l_ce, a):
    sol = muscles.params[0]
    f, dlce = mtu_force(a, l_mtu, MuscleState(a, l_ce), sol)
    assert f >= 0.0
    assert np.isfinite(dlce)


def test_moment_arm_matches_length_gradient(muscles):
    """r = -dl/dphi checked against central differences at 100 random poses."""
    rng = np.random.default_rng(0)
    eps = 1e-7
    worst = 0.0
    for _ in range(100):
        q = np.zeros(9)
        q[3:] = rng.uniform([0.5, 0.5, 1.3] * 2, [3.8, 3.0, 2.2] * 2)
        arms = muscles.attachment_arms(q)
        for ai in range(len(muscles.att_q)):
            qp, qm = q.copy(), q.copy()
            qp[muscles.att_q[ai]] += eps
            qm[muscles.att_q[ai]] -= eps
            mi = muscles.att_muscle[ai]
            grad = (muscles.lengths(qp)[mi] - muscles.lengths(qm)[mi]) / (2 * eps)
            worst = max(worst, abs(-grad - arms[ai]))
    assert worst < 1e-6


def test_zero_force_zero_torque(muscles):
    q = np.zeros(9)
    q[3:] = [2.8, 2.8, 1.6] * 2
    tau = muscles.torques(q, np.zeros(14))
    assert np.allclose(tau, 0.0)


def test_constant_arm_torque_exact(muscles):
    """HFL crosses the hip with a constant arm: torque = -F * rho * r0 exactly."""
    q = np.zeros(9)
    q[3:] = [math.pi, math.pi, math.pi / 2] * 2
    forces = np.zeros(14)
    forces[6] = 500.0   # HFL_L
    tau = muscles.torques(q, forces)
    hfl = muscles.params[6]
    att = hfl.attachments[0]
    expected = 500.0 * (-att.direction * att.rho * att.r0)
    assert tau[0] == pytest.approx(expected, rel=1e-12)
    assert np.allclose(tau[1:], 0.0)


def test_passive_equilibrium_tracks_geometry(muscles):
    """With tiny activation the CE settles so the tendon carries ~zero force."""
    q = np.zeros(9)
    q[3:] = [math.pi, math.pi, math.pi / 2] * 2
    act = np.full(14, 0.01)
    lce = muscles.lengths(q) - muscles.l_slack
    da, dlce, f = muscles.derivatives(q, act, lce, np.full(14, 0.01))
    # forces are already near zero and CE rates stay bounded
    assert np.all(f >= 0.0)
    assert np.all(np.abs(dlce) <= muscles.v_max * muscles.l_opt + 1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        MuscleParams(name="bad", f_max=0.0, l_opt=0.1, v_max=10, l_slack=0.2)
