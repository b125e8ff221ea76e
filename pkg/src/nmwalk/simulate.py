"""Closed-loop rollouts and the gait protocols built on top of them.

A rollout advances the coupled rigid-body + muscle state with the stiff
adaptive integrator in control-tick chunks (stimulations are held between
ticks, which also realizes the neural transport delays at tick resolution),
samples everything at a fixed 1 kHz reporting rate and post-processes the
sampled states into a GaitTrace with forces, centre-of-mass data and gait
events. Rollouts are pure: identical inputs give identical traces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.integrate import ode

from ._kernel import RolloutKernel
from .body import (IDX_ANKLE_L, IDX_ANKLE_R, IDX_HIP_L, IDX_HIP_R, IDX_KNEE_L,
                   IDX_KNEE_R, IDX_PITCH, IDX_X, IDX_Y, NQ, BipedModel,
                   ModelState, build_model, Anthropometry)
from .config import RunConfig
from .contact import ContactParams, Terrain, contact_forces_raw
from .control import (ControlParams, ControllerObservation, ParamSpace,
                      PhaseDetector, ReflexController)
from .integrate import IntegratorSettings
from .muscles import MuscleGroup, N_MUSCLES

TERMINATION_COMPLETED = "completed"
TERMINATION_FELL = "fell"
TERMINATION_FAILURE = "integration_failure"

FALL_PITCH_LIMIT = math.pi / 3.0     # trunk more than 60 deg from vertical
FALL_COM_FRACTION = 0.6              # CoM below 60 % of standing height


@dataclass
class GaitEvents:
    heel_strikes: tuple[np.ndarray, np.ndarray]   # times per leg (L, R)
    toe_offs: tuple[np.ndarray, np.ndarray]

    def merged_heel_strikes(self) -> np.ndarray:
        """All heel strikes of both legs, time ordered."""
        return np.sort(np.concatenate(self.heel_strikes))


@dataclass
class GaitTrace:
    """Uniformly sampled record of one rollout plus its events and metadata."""

    t: np.ndarray                    # (T,)
    q: np.ndarray                    # (T, 9)
    qd: np.ndarray                   # (T, 9)
    act: np.ndarray                  # (T, 14)
    lce: np.ndarray                  # (T, 14)
    stim: np.ndarray                 # (T, 14)
    muscle_force: np.ndarray         # (T, 14)
    grf: np.ndarray                  # (T, 2, 2) per leg [fx, fz]
    cop: np.ndarray                  # (T, 2, 2) per leg [x, y], NaN when unloaded
    com: np.ndarray                  # (T, 2)
    com_vel: np.ndarray              # (T, 2)
    termination: str
    fall_time: float | None
    terrain: Terrain
    params: ControlParams
    events: GaitEvents
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return int(self.t.size)

    def grf_total(self) -> np.ndarray:
        return self.grf.sum(axis=1)

    def stride_count(self, leg: int | None = None) -> int:
        if leg is None:
            return min(self.stride_count(0), self.stride_count(1))
        return max(len(self.events.heel_strikes[leg]) - 1, 0)


@dataclass
class StrideWindow:
    """Index range of one stride plus its single-support sub-range."""

    leg: int
    i0: int
    i1: int
    ss0: int
    ss1: int
    t0: float
    t1: float


class SimulationError(RuntimeError):
    pass


class WalkerSim:
    """Bundles model, muscles and contact law; owns no mutable state itself."""

    def __init__(self, config: RunConfig):
        self.config = config
        data = config.data
        self.anthro = Anthropometry.from_config(data["anthropometry"])
        self.model = build_model(self.anthro, gravity=data["gravity"],
                                 joints_cfg=data["joints"])
        self.muscles = MuscleGroup.from_config(data["muscles"])
        self.contact = ContactParams.from_config(data["contact"])
        self.param_space = ParamSpace.from_config(data["controller"])
        sim = data["simulation"]
        self.control_dt = float(sim["control_dt"])
        self.sample_rate = float(sim["sample_rate"])
        self.settings = IntegratorSettings.from_config(sim)
        self.t_max_default = float(sim["t_max"])
        self.body_weight = self.model.total_mass * self.model.g
        self.standing_com_height = self.model.standing_com_height()

    # ------------------------------------------------------------------ setup

    def default_params(self) -> ControlParams:
        return ControlParams.from_dict(self.config.data["controller"]["params_default"])

    def initial_packed_state(self) -> np.ndarray:
        """Initial [q, qd, activations, CE lengths] from the configured pose."""
        ic = self.config.data["initial_state"]
        d2r = math.pi / 180.0
        q = np.zeros(NQ)
        q[IDX_PITCH] = -float(ic["trunk_lean"])
        q[IDX_HIP_L] = ic["front"]["hip_deg"] * d2r
        q[IDX_KNEE_L] = ic["front"]["knee_deg"] * d2r
        q[IDX_ANKLE_L] = ic["front"]["ankle_deg"] * d2r
        q[IDX_HIP_R] = ic["back"]["hip_deg"] * d2r
        q[IDX_KNEE_R] = ic["back"]["knee_deg"] * d2r
        q[IDX_ANKLE_R] = ic["back"]["ankle_deg"] * d2r
        # drop the model so its lowest contact point sits at the clearance height
        k = self.model.kinematics(q)
        lowest = float(np.min(k.points[:, 1]))
        q[IDX_Y] -= lowest - float(ic.get("clearance", 0.0))
        qd = np.zeros(NQ)
        qd[IDX_X] = float(ic["trunk_forward_velocity"])
        a0 = ic.get("activations", 0.01)
        if isinstance(a0, dict):
            from .muscles import MUSCLE_NAMES
            per_leg = np.array([float(a0.get(n, 0.01)) for n in MUSCLE_NAMES])
            a0 = np.concatenate([per_leg, per_leg])
        act, lce = self.muscles.initial_states(q, a0)
        return np.concatenate((q, qd, act, lce))

    # ------------------------------------------------------------------ dynamics

    def rhs(self, t: float, y: np.ndarray, stim: np.ndarray,
            terrain: Terrain) -> np.ndarray:
        q = y[:NQ]
        qd = y[NQ:2 * NQ]
        act = y[2 * NQ:2 * NQ + N_MUSCLES]
        lce = y[2 * NQ + N_MUSCLES:]
        k = self.model.kinematics(q, qd)
        da, dlce, f_se = self.muscles.derivatives(q, act, lce, stim)
        tau = self.muscles.torques(q, f_se) + self.model.limit_torques(q, qd)
        gh = terrain.heights(k.points[:, 0])
        pf = contact_forces_raw(k.points, k.pointv, gh, self.contact)
        qdd = self.model.generalized_accel(k, tau, pf)
        return np.concatenate((qd, qdd, da, dlce))

    def _observe(self, t: float, y: np.ndarray, terrain: Terrain) -> ControllerObservation:
        q = y[:NQ]
        qd = y[NQ:2 * NQ]
        lce = y[2 * NQ + N_MUSCLES:]
        k = self.model.kinematics(q, qd)
        l_mtu = self.muscles.lengths(q)
        f_norm = self.muscles.se_force(l_mtu, lce) / self.muscles.f_max
        gh = terrain.heights(k.points[:, 0])
        pf = contact_forces_raw(k.points, k.pointv, gh, self.contact)
        loads = np.array([pf[0, 1] + pf[1, 1], pf[2, 1] + pf[3, 1]])
        return ControllerObservation(
            forces_norm=f_norm, lce_norm=lce / self.muscles.l_opt,
            lean=-q[IDX_PITCH], lean_rate=-qd[IDX_PITCH], loads=loads,
            knee_angle=np.array([q[IDX_KNEE_L], q[IDX_KNEE_R]]),
            knee_rate=np.array([qd[IDX_KNEE_L], qd[IDX_KNEE_R]]))

    def _fallen(self, y: np.ndarray) -> bool:
        q = y[:NQ]
        if abs(q[IDX_PITCH]) > FALL_PITCH_LIMIT:
            return True
        k = self.model.kinematics(q)
        com_y = float(self.model.masses @ k.com[:, 1]) / self.model.total_mass
        return com_y < FALL_COM_FRACTION * self.standing_com_height

    # ------------------------------------------------------------------ rollout

    def rollout(self, params: ControlParams, terrain: Terrain | None = None,
                t_max: float | None = None) -> GaitTrace:
        """Run the closed loop until t_max, a fall or an integration failure.

        One persistent stiff solver instance carries its step history across
        control ticks; stimulations are held between ticks (they take effect
        within at most one internal solver step, which is capped at the
        control interval).
        """
        if not self.param_space.contains(params):
            raise ValueError("control parameters outside their bounds")
        terrain = terrain or Terrain.flat()
        t_max = self.t_max_default if t_max is None else float(t_max)
        if t_max <= 0:
            raise ValueError("t_max must be > 0")
        dt_c = self.control_dt
        fs = self.sample_rate
        per_tick = int(round(dt_c * fs))
        n_ticks = int(round(t_max / dt_c))
        n_samples = n_ticks * per_tick + 1

        controller = ReflexController(params, self.config.data["controller"],
                                      body_weight=self.body_weight, dt=dt_c)
        kernel = RolloutKernel(self.model, self.muscles, self.contact, terrain)
        y = self.initial_packed_state()

        ys = np.empty((n_samples, y.size))
        stim_trace = np.empty((n_samples, N_MUSCLES))
        ys[0] = y
        stim_trace[0] = controller.s0
        termination = TERMINATION_COMPLETED
        fall_time: float | None = None
        filled = 1

        solver = ode(kernel.rhs)
        solver.set_integrator("lsoda", rtol=self.settings.rtol,
                              atol=self.settings.atol,
                              max_step=min(self.settings.max_step, dt_c),
                              nsteps=100000)
        solver.set_initial_value(y, 0.0)
        controller.reset(self._kernel_observation(kernel, 0.0, y))

        for tick in range(n_ticks):
            t0 = tick * dt_c
            obs = self._kernel_observation(kernel, t0, solver.y)
            kernel.stim[:] = controller.update(t0, obs)
            failed = False
            for k in range(1, per_tick + 1):
                yk = solver.integrate(t0 + k / fs)
                if not solver.successful():
                    failed = True
                    break
                ys[filled] = yk
                stim_trace[filled] = kernel.stim
                filled += 1
            if failed:
                termination = TERMINATION_FAILURE
                break
            q_now = solver.y
            if (abs(q_now[IDX_PITCH]) > FALL_PITCH_LIMIT
                    or kernel.snapshot(t0 + dt_c, q_now)[2]
                    < FALL_COM_FRACTION * self.standing_com_height):
                termination = TERMINATION_FELL
                fall_time = t0 + dt_c
                break

        ys = ys[:filled]
        stim_trace = stim_trace[:filled]
        t = np.arange(filled) / fs
        return self._build_trace(t, ys, stim_trace, termination, fall_time,
                                 terrain, params)

    def _kernel_observation(self, kernel: RolloutKernel, t: float,
                            y: np.ndarray) -> ControllerObservation:
        loads, f_norm, _ = kernel.snapshot(t, y)
        lce = y[2 * NQ + N_MUSCLES:]
        return ControllerObservation(
            forces_norm=f_norm, lce_norm=lce / self.muscles.l_opt,
            lean=-y[IDX_PITCH], lean_rate=-y[NQ + IDX_PITCH], loads=loads,
            knee_angle=np.array([y[IDX_KNEE_L], y[IDX_KNEE_R]]),
            knee_rate=np.array([y[NQ + IDX_KNEE_L], y[NQ + IDX_KNEE_R]]))

    # ------------------------------------------------------------------ trace assembly

    def _batch_channels(self, Q: np.ndarray, QD: np.ndarray, terrain: Terrain):
        """Vectorized kinematics/contact across a whole trajectory."""
        a = self.anthro
        T = Q.shape[0]
        pitch = Q[:, IDX_PITCH]
        hip = np.stack([Q[:, IDX_X] + a.trunk_com_above_hip * np.sin(pitch),
                        Q[:, IDX_Y] - a.trunk_com_above_hip * np.cos(pitch)], axis=1)
        alphad = QD @ self.model.W.T          # (T, 7)
        com = np.zeros((T, 2))
        comv = np.zeros((T, 2))
        com += self.model.masses[0] * Q[:, :2]
        comv += self.model.masses[0] * QD[:, :2]
        hip_v = QD[:, :2] + alphad[:, 0:1] * _perp_batch(hip - Q[:, :2])
        points = np.zeros((T, 4, 2))
        pointv = np.zeros((T, 4, 2))
        for leg, (j0, seg0) in enumerate(((IDX_HIP_L, 1), (IDX_HIP_R, 4))):
            a_th = pitch + math.pi - Q[:, j0]
            a_sh = a_th - math.pi + Q[:, j0 + 1]
            a_ft = a_sh + 0.5 * math.pi - Q[:, j0 + 2]
            e_th = np.stack([np.sin(a_th), -np.cos(a_th)], axis=1)
            e_sh = np.stack([np.sin(a_sh), -np.cos(a_sh)], axis=1)
            knee = hip + a.l_thigh * e_th
            ankle = knee + a.l_shank * e_sh
            cf, sf = np.cos(a_ft), np.sin(a_ft)
            def rot(v):
                return np.stack([cf * v[0] - sf * v[1], sf * v[0] + cf * v[1]], axis=1)
            com_th = hip + a.thigh_com_below_hip * e_th
            com_sh = knee + a.shank_com_below_knee * e_sh
            com_ft = ankle + rot(a.foot_com)
            heel = ankle + rot(a.heel)
            ball = ankle + rot(a.ball)
            points[:, 2 * leg] = heel
            points[:, 2 * leg + 1] = ball
            m_th, m_sh, m_ft = self.model.masses[seg0:seg0 + 3]
            com += m_th * com_th + m_sh * com_sh + m_ft * com_ft
            knee_v = hip_v + alphad[:, seg0:seg0 + 1] * _perp_batch(knee - hip)
            ankle_v = knee_v + alphad[:, seg0 + 1:seg0 + 2] * _perp_batch(ankle - knee)
            comv += m_th * (hip_v + alphad[:, seg0:seg0 + 1] * _perp_batch(com_th - hip))
            comv += m_sh * (knee_v + alphad[:, seg0 + 1:seg0 + 2] * _perp_batch(com_sh - knee))
            comv += m_ft * (ankle_v + alphad[:, seg0 + 2:seg0 + 3] * _perp_batch(com_ft - ankle))
            pointv[:, 2 * leg] = ankle_v + alphad[:, seg0 + 2:seg0 + 3] * _perp_batch(heel - ankle)
            pointv[:, 2 * leg + 1] = ankle_v + alphad[:, seg0 + 2:seg0 + 3] * _perp_batch(ball - ankle)
        com /= self.model.total_mass
        comv /= self.model.total_mass

        flat_p = points.reshape(-1, 2)
        gh = terrain.heights(flat_p[:, 0])
        forces = contact_forces_raw(flat_p, pointv.reshape(-1, 2), gh, self.contact)
        forces = forces.reshape(T, 4, 2)
        gh = gh.reshape(T, 4)
        grf = np.stack([forces[:, 0] + forces[:, 1], forces[:, 2] + forces[:, 3]], axis=1)
        cop = np.full((T, 2, 2), np.nan)
        for leg in range(2):
            fz = forces[:, 2 * leg:2 * leg + 2, 1]
            tot = fz.sum(axis=1)
            loaded = tot > 0.0
            px = points[:, 2 * leg:2 * leg + 2, 0]
            gz = gh[:, 2 * leg:2 * leg + 2]
            with np.errstate(invalid="ignore", divide="ignore"):
                cop[loaded, leg, 0] = (px * fz)[loaded].sum(axis=1) / tot[loaded]
                cop[loaded, leg, 1] = (gz * fz)[loaded].sum(axis=1) / tot[loaded]
        return com, comv, grf, cop

    def _build_trace(self, t, ys, stim_trace, termination, fall_time,
                     terrain, params) -> GaitTrace:
        Q = ys[:, :NQ]
        QD = ys[:, NQ:2 * NQ]
        act = ys[:, 2 * NQ:2 * NQ + N_MUSCLES]
        lce = ys[:, 2 * NQ + N_MUSCLES:]
        l_mtu = self.muscles.lengths(Q)
        forces = self.muscles.se_force(l_mtu, lce)
        com, comv, grf, cop = self._batch_channels(Q, QD, terrain)
        trace = GaitTrace(
            t=t, q=Q, qd=QD, act=act, lce=lce, stim=stim_trace,
            muscle_force=forces, grf=grf, cop=cop, com=com, com_vel=comv,
            termination=termination, fall_time=fall_time, terrain=terrain,
            params=params,
            events=GaitEvents((np.empty(0), np.empty(0)), (np.empty(0), np.empty(0))),
            meta={"control_dt": self.control_dt, "sample_rate": self.sample_rate,
                  "stance_threshold": params.stance_threshold,
                  "hysteresis": float(self.config.data["controller"]["hysteresis_n"]),
                  "standing_com_height": self.standing_com_height,
                  "body_weight": self.body_weight,
                  "gravity": self.model.g,
                  "anthro": {"trunk_above_hip": self.anthro.trunk_com_above_hip,
                             "l_thigh": self.anthro.l_thigh,
                             "l_shank": self.anthro.l_shank,
                             "heel": list(self.anthro.heel),
                             "ball": list(self.anthro.ball)}})
        trace.events = detect_events(trace)
        return trace


def _perp_batch(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


# ---------------------------------------------------------------------- events


def detect_events(trace: GaitTrace, threshold: float | None = None,
                  hysteresis: float | None = None) -> GaitEvents:
    """Heel strikes (upward threshold crossings of the vertical GRF) and
    toe-offs (downward crossings below threshold - hysteresis), per leg."""
    thr = trace.meta.get("stance_threshold", 20.0) if threshold is None else threshold
    hys = trace.meta.get("hysteresis", 5.0) if hysteresis is None else hysteresis
    hs: list[np.ndarray] = []
    to: list[np.ndarray] = []
    for leg in range(2):
        fz = trace.grf[:, leg, 1]
        det = PhaseDetector(thr, hys, initial_stance=(fz[0] > thr, False))
        strikes, offs = [], []
        for i in range(1, fz.size):
            was = det.stance[0]
            det.update(fz[i], 0.0, float(trace.t[i]))
            if det.stance[0] and not was:
                strikes.append(trace.t[i])
            elif was and not det.stance[0]:
                offs.append(trace.t[i])
        hs.append(np.asarray(strikes))
        to.append(np.asarray(offs))
    return GaitEvents((hs[0], hs[1]), (to[0], to[1]))


def fall_check(model: BipedModel, state: ModelState,
               standing_com_height: float | None = None) -> bool:
    """True iff the trunk passed +/-60 deg or the CoM dropped below 60 % of
    standing height (strict inequalities)."""
    if abs(state.q[IDX_PITCH]) > FALL_PITCH_LIMIT:
        return True
    ref = standing_com_height if standing_com_height is not None else model.standing_com_height()
    pos, _ = model.com_state(state)
    return bool(pos[1] < FALL_COM_FRACTION * ref)


# ---------------------------------------------------------------------- strides


def steady_stride(trace: GaitTrace) -> StrideWindow:
    """Last complete stride (ipsilateral heel strike to heel strike) with its
    single-support sub-range. Requires at least 8 strides."""
    if trace.stride_count() < 8:
        raise SimulationError(
            f"need >= 8 strides for a steady stride, have {trace.stride_count()}")
    fs = trace.meta.get("sample_rate", 1000.0)
    best: StrideWindow | None = None
    for leg in range(2):
        hs = trace.events.heel_strikes[leg]
        if hs.size < 2:
            continue
        t0, t1 = float(hs[-2]), float(hs[-1])
        contra = 1 - leg
        to_c = trace.events.toe_offs[contra]
        hs_c = trace.events.heel_strikes[contra]
        to_in = to_c[(to_c > t0) & (to_c < t1)]
        hs_in = hs_c[(hs_c > t0) & (hs_c < t1)]
        if to_in.size != 1 or hs_in.size != 1:
            continue
        i0, i1 = int(round(t0 * fs)), int(round(t1 * fs))
        ss0, ss1 = int(round(float(to_in[0]) * fs)), int(round(float(hs_in[0]) * fs))
        win = StrideWindow(leg, i0, i1, ss0, ss1, t0, t1)
        if best is None or win.t1 > best.t1:
            best = win
    if best is None:
        raise SimulationError("no clean stride with a single contralateral step found")
    return best


# ---------------------------------------------------------------------- robustness


@dataclass
class RobustnessResult:
    max_height_cm: int
    flat_stable: bool
    tested: list[tuple[int, bool]]
    message: str = ""


def step_down_robustness(sim: WalkerSim, params: ControlParams, *,
                         settle_strides: int | None = None,
                         success_strides: int | None = None,
                         max_height_cm: int | None = None) -> RobustnessResult:
    """Largest single step-down height (1 cm increments) the gait recovers from.

    The drop edge is placed between the support foot's ball and the next heel
    strike position of an unperturbed rollout, after the gait has settled;
    success means walking on for the configured number of strides. Returns 0 cm
    when the 1 cm drop already fails, and flags gaits that cannot even walk on
    flat ground.
    """
    rcfg = sim.config.data["robustness"]
    settle = int(rcfg["settle_strides"] if settle_strides is None else settle_strides)
    horizon = int(rcfg["success_strides"] if success_strides is None else success_strides)
    h_cap = int(rcfg["max_height_cm"] if max_height_cm is None else max_height_cm)

    flat = sim.rollout(params, Terrain.flat(), t_max=sim.t_max_default)
    if flat.termination != TERMINATION_COMPLETED or flat.stride_count() < settle + 1:
        return RobustnessResult(0, False, [], "unstable on flat ground")

    merged = flat.events.merged_heel_strikes()
    k_pert = 2 * settle          # heel-strike count: two steps per stride
    if merged.size <= k_pert + 1:
        return RobustnessResult(0, False, [], "unstable on flat ground")
    t_support = float(merged[k_pert])
    t_land = float(merged[k_pert + 1])
    fs = sim.sample_rate
    i_land = int(round(t_land * fs))
    i_sup = int(round(t_support * fs))
    land_leg = 0 if np.any(np.isclose(flat.events.heel_strikes[0], t_land)) else 1
    sup_leg = 1 - land_leg
    kin_land = sim.model.kinematics(flat.q[i_land])
    kin_sup = sim.model.kinematics(flat.q[i_sup])
    x_land_heel = float(kin_land.points[2 * land_leg, 0])
    x_sup_ball = float(kin_sup.points[2 * sup_leg + 1, 0])
    x_drop = 0.5 * (x_sup_ball + x_land_heel)

    # time budget: perturbation time plus the success horizon with slack
    stride_period = float(np.median(np.diff(flat.events.heel_strikes[land_leg])))
    t_budget = t_land + (horizon + 3) * stride_period

    tested: list[tuple[int, bool]] = []
    best = 0
    for h_cm in range(1, h_cap + 1):
        terrain = Terrain.with_drop(x_drop, h_cm / 100.0)
        tr = sim.rollout(params, terrain, t_max=t_budget)
        hs_after = trace_strides_after(tr, land_leg, t_land)
        ok = tr.termination == TERMINATION_COMPLETED and hs_after >= horizon
        tested.append((h_cm, ok))
        if ok:
            best = h_cm
        else:
            break
    return RobustnessResult(best, True, tested)


def trace_strides_after(trace: GaitTrace, leg: int, t_after: float) -> int:
    hs = trace.events.heel_strikes[leg]
    return max(int(np.sum(hs > t_after + 1e-9)) - 1, 0)
