import math

import numpy as np
import pytest

from nmwalk.body import ModelState, NQ
from nmwalk.integrate import IntegratorSettings, integrate_model, integrate_ode


def test_ballistic_point_mass_closed_form():
    g = 9.81

    def rhs(t, y):
        return np.array([y[1], -g])

    res = integrate_ode(rhs, np.array([2.0, 0.0]), 0.0, 1.0)
    assert res.success
    exact = 2.0 - 0.5 * g * res.t ** 2
    assert np.max(np.abs(res.y[:, 0] - exact)) < 1e-4


def test_stiff_system_stable_and_accurate():
    """x' = -1e4 (x - cos t): stiff; reference is the exact solution."""
    lam = 1e4

    def rhs(t, y):
        return np.array([-lam * (y[0] - math.cos(t))])

    res = integrate_ode(rhs, np.array([0.0]), 0.0, 2.0)
    assert res.success

    def exact(t):
        # particular + transient solution of the linear ODE
        a = lam ** 2 / (1 + lam ** 2)
        b = lam / (1 + lam ** 2)
        return a * np.cos(t) + b * np.sin(t) - a * np.exp(-lam * t)

    assert np.max(np.abs(res.y[:, 0] - exact(res.t))) < 5e-4


def test_zero_length_span_returns_initial_state():
    res = integrate_ode(lambda t, y: -y, np.array([1.0, 2.0]), 3.0, 3.0)
    assert res.success
    assert res.t.size == 0
    assert np.array_equal(res.y_end, [1.0, 2.0])
    assert res.t_end == 3.0


def test_failure_reported_with_partial_trajectory():
    def rhs(t, y):
        if t > 0.5:
            return np.array([math.nan])
        return np.array([1.0])

    res = integrate_ode(rhs, np.array([0.0]), 0.0, 1.0)
    assert not res.success
    assert "failure" in res.message
    assert res.t_end <= 1.0


def test_max_step_respected():
    seen = []

    def rhs(t, y):
        seen.append(t)
        return np.array([1.0])

    settings = IntegratorSettings(max_step=0.01)
    res = integrate_ode(rhs, np.array([0.0]), 0.0, 1.0, settings)
    assert res.success
    ts = np.unique(np.asarray(seen))
    assert np.max(np.diff(ts)) <= 0.010 + 1e-12


def test_pendulum_energy_drift_bound():
    """Pinned frictionless pendulum: energy oracle E = T + V per sample."""
    m, L, g = 1.0, 1.0, 9.81

    def rhs(t, y):
        return np.array([y[1], -(g / L) * math.sin(y[0])])

    y0 = np.array([1.0, 0.0])
    res = integrate_ode(rhs, y0, 0.0, 5.0)
    assert res.success
    E = 0.5 * m * L ** 2 * res.y[:, 1] ** 2 + m * g * L * (1 - np.cos(res.y[:, 0]))
    E0 = m * g * L * (1 - math.cos(1.0))
    assert np.max(np.abs(E - E0)) / E0 < 1e-3


def test_pendulum_zero_acceleration_at_equilibrium():
    def rhs(t, y):
        return np.array([y[1], -9.81 * math.sin(y[0])])

    assert np.allclose(rhs(0.0, np.zeros(2)), 0.0)


def test_integrate_model_airborne_momentum(model):
    """Airborne interval: horizontal CoM velocity stays constant."""
    q = model.standing_pose()
    q[1] += 0.5
    qd = np.zeros(NQ)
    qd[0] = 1.2
    qd[3] = 0.5   # some internal motion
    res = integrate_model(model, ModelState(q, qd), lambda t, s: np.zeros(6),
                          t_span=0.25)
    assert res.success
    vxs = []
    for i in range(res.t.size):
        st = ModelState(res.y[i, :NQ], res.y[i, NQ:])
        _, v = model.com_state(st)
        vxs.append(v[0])
    vxs = np.asarray(vxs)
    assert np.max(np.abs(vxs - vxs[0])) < 2e-3


def test_passive_energy_nonincreasing_during_fall(sim):
    """Whole model dropped with zero stimulation: mechanical plus stored
    elastic energy never rises. The elastic terms are integrated here
    independently from the force laws (cubic antiderivatives)."""
    from nmwalk._kernel import RolloutKernel
    from nmwalk.contact import Terrain
    from scipy.integrate import ode as sp_ode

    mus = sim.muscles

    def elastic_energy(y):
        l_mtu = mus.lengths(y[:NQ])
        l_ce = y[2 * NQ + 14:]
        eps = np.maximum((l_mtu - l_ce) / mus.l_slack - 1.0, 0.0)
        e_se = mus.f_max * mus.l_slack / (3 * mus.eref ** 2) * eps ** 3
        rel = l_ce / mus.l_opt
        over = np.maximum(rel - 1.0, 0.0)
        e_pe = mus.f_max * mus.l_opt / (3 * mus.width ** 2) * over ** 3
        under = np.maximum((1.0 - mus.width) - rel, 0.0)
        e_be = mus.f_max * mus.l_opt / (3 * (0.5 * mus.width) ** 2) * under ** 3
        return float(np.sum(e_se + e_pe + e_be))

    def total_energy(y):
        mech = sim.model.mechanical_energy(ModelState(y[:NQ], y[NQ:2 * NQ]))
        return mech + elastic_energy(y)

    y0 = sim.initial_packed_state()
    y0[:NQ] = sim.model.standing_pose()
    y0[1] += 0.3
    y0[NQ:2 * NQ] = 0.0
    # keep every joint strictly inside its soft stops (no stored stop energy)
    y0[[4, 7]] = math.radians(170.0)
    y0[[3, 6]] = math.radians(200.0)
    y0[2 * NQ:2 * NQ + 14] = 0.0          # zero activation
    y0[2 * NQ + 14:] = mus.lengths(y0[:NQ]) - mus.l_slack   # force-free CEs
    kern = RolloutKernel(sim.model, sim.muscles, sim.contact, Terrain.flat())
    kern.stim[:] = 0.0
    r = sp_ode(kern.rhs).set_integrator("lsoda", rtol=1e-5, atol=1e-7,
                                        max_step=0.005, nsteps=10000)
    r.set_initial_value(y0, 0.0)
    E0 = total_energy(y0)
    t = 0.0
    while t < 0.18:   # until just before ground impact
        t += 0.01
        y = r.integrate(t)
        assert r.successful()
        assert total_energy(y) <= E0 + 1e-4 * abs(E0)
