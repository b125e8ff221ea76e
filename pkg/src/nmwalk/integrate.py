"""Time integration: adaptive, stiff-capable, with dense output at a fixed rate.

Backed by scipy's LSODA (Adams/BDF with automatic stiffness switching), run
with a hard cap on the step size and the error tolerances used throughout the
project (rel 1e-3, abs 1e-4). Step-size underflow or any other solver failure
is reported through the result object together with the partial trajectory,
never as an exception.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .body import BipedModel, ModelState, NQ
from .contact import ContactParams, Terrain, contact_forces_raw


@dataclass(frozen=True)
class IntegratorSettings:
    rtol: float = 1e-3
    atol: float = 1e-4
    max_step: float = 0.01
    method: str = "LSODA"
    sample_rate: float = 1000.0

    @classmethod
    def from_config(cls, sim_cfg: dict) -> "IntegratorSettings":
        return cls(rtol=sim_cfg["rtol"], atol=sim_cfg["atol"],
                   max_step=sim_cfg["max_step"], sample_rate=sim_cfg["sample_rate"])


@dataclass
class IntegrationResult:
    t: np.ndarray            # sample times actually reached
    y: np.ndarray            # (len(t), dim) samples
    success: bool
    message: str
    t_end: float             # last time the solver reached
    y_end: np.ndarray        # state at t_end


def integrate_ode(rhs: Callable[[float, np.ndarray], np.ndarray],
                  y0: np.ndarray, t0: float, t1: float,
                  settings: IntegratorSettings = IntegratorSettings(),
                  t_eval: Sequence[float] | None = None) -> IntegrationResult:
    """Integrate dy/dt = rhs(t, y) over [t0, t1] with dense sampling.

    A zero-length span returns the initial state with no samples.
    """
    y0 = np.asarray(y0, dtype=float)
    if t1 <= t0:
        return IntegrationResult(np.empty(0), np.empty((0, y0.size)), True,
                                 "zero-length span", t0, y0.copy())
    if t_eval is None:
        dt = 1.0 / settings.sample_rate
        n = int(np.floor((t1 - t0) / dt + 1e-9))
        t_eval = t0 + dt * np.arange(1, n + 1)
    t_eval = np.asarray(t_eval, dtype=float)
    sol = solve_ivp(rhs, (t0, t1), y0, method=settings.method,
                    rtol=settings.rtol, atol=settings.atol,
                    max_step=settings.max_step,
                    t_eval=t_eval if t_eval.size else None,
                    dense_output=False)
    y = sol.y.T if t_eval.size else np.empty((0, y0.size))
    t = sol.t if t_eval.size else np.empty(0)
    if sol.status != 0 or (t_eval.size and sol.t.size < t_eval.size):
        # keep whatever was reached; report the failure
        t_end = float(sol.t[-1]) if sol.t.size else t0
        y_end = sol.y[:, -1].copy() if sol.t.size else y0.copy()
        return IntegrationResult(t, y, False, f"integration failure: {sol.message}",
                                 t_end, y_end)
    if t_eval.size:
        t_end, y_end = float(sol.t[-1]), sol.y[:, -1].copy()
    else:
        # integrate without samples: do a single-shot solve for the endpoint
        sol2 = solve_ivp(rhs, (t0, t1), y0, method=settings.method,
                         rtol=settings.rtol, atol=settings.atol,
                         max_step=settings.max_step)
        ok = sol2.status == 0
        t_end = float(sol2.t[-1])
        y_end = sol2.y[:, -1].copy()
        if not ok:
            return IntegrationResult(t, y, False,
                                     f"integration failure: {sol2.message}", t_end, y_end)
    return IntegrationResult(t, y, True, "ok", t_end, y_end)


def integrate_model(model: BipedModel, state: ModelState,
                    torques_fn: Callable[[float, ModelState], np.ndarray],
                    t_span: float,
                    terrain: Terrain | None = None,
                    contact: ContactParams | None = None,
                    settings: IntegratorSettings = IntegratorSettings()) -> IntegrationResult:
    """Integrate the rigid-body model under a torque callback.

    The callback receives (t, ModelState) and returns the six joint torques;
    ground contact is applied when a terrain is given. This is the plain
    skeleton integrator -- muscular closed-loop rollouts live in simulate.py.
    """
    cp = contact or ContactParams()

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        q, qd = y[:NQ], y[NQ:]
        st = ModelState(q, qd, t)
        k = model.kinematics(q, qd)
        tau = np.asarray(torques_fn(t, st), dtype=float)
        tau = tau + model.limit_torques(q, qd)
        if terrain is not None:
            gh = terrain.heights(k.points[:, 0])
            forces = contact_forces_raw(k.points, k.pointv, gh, cp)
        else:
            forces = np.zeros((4, 2))
        qdd = model.generalized_accel(k, tau, forces)
        return np.concatenate((qd, qdd))

    y0 = np.concatenate((state.q, state.qd))
    return integrate_ode(rhs, y0, state.t, state.t + t_span, settings)
