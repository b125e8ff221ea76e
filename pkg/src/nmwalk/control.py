"""Reflex-based stimulation generator.

The controller turns proprioceptive signals (muscle forces and CE lengths),
trunk orientation and leg loading into per-muscle stimulations in [0, 1]:

* stance leg: positive force feedback on the extensors (SOL, GAS, VAS), ankle
  dorsiflexor length feedback with plantarflexor inhibition, and a trunk
  PD balance term blended into HAM/GLU/HFL in proportion to the load the leg
  carries;
* swing leg: hip-flexor length feedback (inhibited by a stretched HAM) plus a
  lean-dependent boost sampled at takeoff, and force feedback on HAM/GLU that
  decelerates the leg at the end of swing;
* double support: the trailing leg's VAS is suppressed and its HFL boosted,
  which initiates the swing.

Signals reach the spinal level with pathway transport delays (hip 5 ms,
knee 10 ms, ankle 20 ms) realized with ring buffers at the control tick rate.
Twelve of the gains are exposed as the optimization vector (ControlParams);
everything else is a fixed circuit constant from the configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any

import numpy as np

from .muscles import MUSCLE_NAMES, N_MUSCLES, N_PER_LEG

PARAM_NAMES = (
    "gain_sol", "gain_gas", "gain_vas",          # stance force-feedback gains
    "gain_ta", "gain_hfl",                       # length-feedback gains
    "bal_ham", "bal_glu", "bal_hfl",             # trunk-balance channel gains
    "lean_ref",                                  # trunk reference lean [rad]
    "bal_kp", "bal_kd",                          # trunk PD gains
    "stance_threshold",                          # stance detection threshold [N]
)
N_PARAMS = len(PARAM_NAMES)

_MU = {name: i for i, name in enumerate(MUSCLE_NAMES)}


@dataclass(frozen=True)
class ControlParams:
    """The 12 scalars the optimizer tunes."""

    gain_sol: float
    gain_gas: float
    gain_vas: float
    gain_ta: float
    gain_hfl: float
    bal_ham: float
    bal_glu: float
    bal_hfl: float
    lean_ref: float
    bal_kp: float
    bal_kd: float
    stance_threshold: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES])

    @classmethod
    def from_array(cls, x: np.ndarray) -> "ControlParams":
        x = np.asarray(x, dtype=float)
        if x.shape != (N_PARAMS,):
            raise ValueError(f"parameter vector must have length {N_PARAMS}")
        return cls(**{n: float(v) for n, v in zip(PARAM_NAMES, x)})

    @classmethod
    def from_dict(cls, d: dict[str, float]) -> "ControlParams":
        missing = [n for n in PARAM_NAMES if n not in d]
        if missing:
            raise ValueError("missing control parameters: " + ", ".join(missing))
        return cls(**{n: float(d[n]) for n in PARAM_NAMES})

    def to_dict(self) -> dict[str, float]:
        return {n: float(getattr(self, n)) for n in PARAM_NAMES}


class ParamSpace:
    """Per-coordinate affine map between named parameters and [0, 1]^12."""

    def __init__(self, bounds: dict[str, tuple[float, float]]):
        missing = [n for n in PARAM_NAMES if n not in bounds]
        if missing:
            raise ValueError("missing parameter bounds: " + ", ".join(missing))
        self.lo = np.array([bounds[n][0] for n in PARAM_NAMES])
        self.hi = np.array([bounds[n][1] for n in PARAM_NAMES])
        if not np.all(self.hi > self.lo):
            raise ValueError("each upper bound must exceed its lower bound")

    @classmethod
    def from_config(cls, controller_cfg: dict[str, Any]) -> "ParamSpace":
        return cls({k: tuple(v) for k, v in controller_cfg["params_bounds"].items()})

    def contains(self, p: ControlParams) -> bool:
        x = p.as_array()
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def encode(self, p: ControlParams) -> np.ndarray:
        return (p.as_array() - self.lo) / (self.hi - self.lo)

    def decode(self, x: np.ndarray) -> tuple[ControlParams, bool]:
        """Map a normalized vector to parameters; out-of-range input is clamped
        and flagged via the second return value."""
        x = np.asarray(x, dtype=float)
        clamped = bool(np.any(x < 0.0) or np.any(x > 1.0))
        xc = np.clip(x, 0.0, 1.0)
        return ControlParams.from_array(self.lo + xc * (self.hi - self.lo)), clamped


class Phase(Enum):
    STANCE = "stance"
    SWING = "swing"


@dataclass
class LegPhase:
    phase: Phase
    since: float            # time of the latest transition
    transitions: list[tuple[float, Phase]]


class PhaseDetector:
    """Stance/swing from vertical GRF with a hysteresis band.

    A leg enters stance when its load rises above the threshold and leaves
    stance only when the load falls below threshold minus the hysteresis,
    which suppresses chattering on a noisy load signal.
    """

    def __init__(self, threshold: float, hysteresis: float = 5.0,
                 initial_stance: tuple[bool, bool] = (False, False)):
        self.threshold = float(threshold)
        self.hysteresis = float(hysteresis)
        self.stance = [bool(initial_stance[0]), bool(initial_stance[1])]
        self.since = [0.0, 0.0]
        self.transitions: list[list[tuple[float, Phase]]] = [[], []]

    def update(self, load_left: float, load_right: float, t: float = 0.0) -> tuple[Phase, Phase]:
        for leg, load in ((0, load_left), (1, load_right)):
            if self.stance[leg]:
                if load < self.threshold - self.hysteresis:
                    self.stance[leg] = False
                    self.since[leg] = t
                    self.transitions[leg].append((t, Phase.SWING))
            elif load > self.threshold:
                self.stance[leg] = True
                self.since[leg] = t
                self.transitions[leg].append((t, Phase.STANCE))
        return self.phases()

    def phases(self) -> tuple[Phase, Phase]:
        return tuple(Phase.STANCE if s else Phase.SWING for s in self.stance)

    def leg_phase(self, leg: int) -> LegPhase:
        return LegPhase(Phase.STANCE if self.stance[leg] else Phase.SWING,
                        self.since[leg], list(self.transitions[leg]))


def detect_phase(grf_left: float, grf_right: float, threshold: float = 20.0,
                 detector: PhaseDetector | None = None,
                 t: float = 0.0) -> tuple[Phase, Phase]:
    """One-shot phase classification; pass a PhaseDetector to get hysteresis."""
    if detector is None:
        detector = PhaseDetector(threshold)
    return detector.update(grf_left, grf_right, t)


@dataclass
class ControllerObservation:
    """Signals the spinal circuits read at one control tick (undelayed)."""

    forces_norm: np.ndarray     # (14,) tendon force / f_max
    lce_norm: np.ndarray        # (14,) CE length / l_opt
    lean: float                 # trunk forward lean [rad]
    lean_rate: float
    loads: np.ndarray           # (2,) vertical GRF per leg [N]
    knee_angle: np.ndarray      # (2,) [rad]
    knee_rate: np.ndarray       # (2,) [rad/s]


class ReflexController:
    """Stateful but deterministic: output depends only on the observation
    history inside the delay horizon and the parameters."""

    def __init__(self, params: ControlParams, cfg: dict[str, Any], *,
                 body_weight: float, dt: float):
        self.p = params
        self.dt = float(dt)
        self.body_weight = float(body_weight)
        c = cfg
        s0 = c["pre_stimulation"]
        if isinstance(s0, dict):
            per_leg = np.array([float(s0[n]) for n in MUSCLE_NAMES])
            self.s0 = np.concatenate([per_leg, per_leg])
        else:
            self.s0 = np.full(N_MUSCLES, float(s0))
        self.hysteresis = float(c["hysteresis_n"])
        self.load_norm = float(c["load_normalization_bw_fraction"]) * body_weight
        self.ta_off = float(c["ta_length_offset"])
        self.k_solta = float(c["sol_ta_inhibition"])
        self.knee_guard_gain = float(c["knee_guard_gain"])
        self.knee_guard_angle = float(c["knee_guard_angle_deg"]) * math.pi / 180.0
        self.vas_presw = float(c["vas_preswing_suppression"])
        self.dS_hfl = float(c["swing_boost_hfl"])
        self.dS_glu = float(c["swing_suppress_glu"])
        self.hfl_off = float(c["hfl_length_offset"])
        self.k_hamhfl = float(c["ham_hfl_suppression_gain"])
        self.hamhfl_off = float(c["ham_hfl_suppression_offset"])
        self.g_ham_sw = float(c["ham_swing_force_gain"])
        self.g_glu_sw = float(c["glu_swing_force_gain"])
        self.k_lean_sw = float(c["swing_lean_gain"])

        delays = c["delays"]
        self.d_hip = max(1, round(delays["hip"] / dt))
        self.d_knee = max(1, round(delays["knee"] / dt))
        self.d_ankle = max(1, round(delays["ankle"] / dt))
        self.d_load = max(1, round(delays["load"] / dt))
        self._maxlag = max(self.d_hip, self.d_knee, self.d_ankle, self.d_load)

        # per-muscle signal delays (same for force and length pathways)
        lag = np.empty(N_PER_LEG, dtype=np.intp)
        lag[_MU["SOL"]] = lag[_MU["TA"]] = lag[_MU["GAS"]] = self.d_ankle
        lag[_MU["VAS"]] = self.d_knee
        lag[_MU["HAM"]] = lag[_MU["GLU"]] = lag[_MU["HFL"]] = self.d_hip
        self.muscle_lag = np.concatenate([lag, lag])

        self.detector = PhaseDetector(params.stance_threshold, self.hysteresis)
        self._held_lean = [params.lean_ref, params.lean_ref]
        self._buf_len = self._maxlag + 1
        self._ptr = 0
        self._count = 0
        self._b_force = np.zeros((self._buf_len, N_MUSCLES))
        self._b_lce = np.zeros((self._buf_len, N_MUSCLES))
        self._b_lean = np.zeros(self._buf_len)
        self._b_leanrate = np.zeros(self._buf_len)
        self._b_loads = np.zeros((self._buf_len, 2))
        self._b_knee = np.zeros((self._buf_len, 2))
        self._b_kneerate = np.zeros((self._buf_len, 2))

    def reset(self, obs: ControllerObservation) -> None:
        """Prime every delay buffer with the initial observation."""
        self._ptr = 0
        self._count = self._buf_len
        self._b_force[:] = obs.forces_norm
        self._b_lce[:] = obs.lce_norm
        self._b_lean[:] = obs.lean
        self._b_leanrate[:] = obs.lean_rate
        self._b_loads[:] = obs.loads
        self._b_knee[:] = obs.knee_angle
        self._b_kneerate[:] = obs.knee_rate
        self.detector = PhaseDetector(self.p.stance_threshold, self.hysteresis)
        self.detector.update(obs.loads[0], obs.loads[1], 0.0)
        self._held_lean = [obs.lean, obs.lean]

    def _lagged(self, buf: np.ndarray, lag) -> np.ndarray | float:
        idx = (self._ptr - lag) % self._buf_len
        if np.isscalar(lag):
            return buf[idx]
        return buf[idx, np.arange(buf.shape[1])] if buf.ndim == 2 else buf[idx]

    def update(self, t: float, obs: ControllerObservation) -> np.ndarray:
        """Push one observation, advance phase logic, return stimulations (14,)."""
        self._ptr = (self._ptr + 1) % self._buf_len
        self._b_force[self._ptr] = obs.forces_norm
        self._b_lce[self._ptr] = obs.lce_norm
        self._b_lean[self._ptr] = obs.lean
        self._b_leanrate[self._ptr] = obs.lean_rate
        self._b_loads[self._ptr] = obs.loads
        self._b_knee[self._ptr] = obs.knee_angle
        self._b_kneerate[self._ptr] = obs.knee_rate

        f_d = self._lagged(self._b_force, self.muscle_lag)
        lce_d = self._lagged(self._b_lce, self.muscle_lag)
        lean_d = float(self._lagged(self._b_lean, self.d_hip))
        leanrate_d = float(self._lagged(self._b_leanrate, self.d_hip))
        loads_d = self._b_loads[(self._ptr - self.d_load) % self._buf_len]
        knee_d = self._b_knee[(self._ptr - self.d_knee) % self._buf_len]
        kneerate_d = self._b_kneerate[(self._ptr - self.d_knee) % self._buf_len]

        was_stance = list(self.detector.stance)
        self.detector.update(loads_d[0], loads_d[1], t)
        stance = self.detector.stance
        for leg in range(2):
            if was_stance[leg] and not stance[leg]:
                self._held_lean[leg] = lean_d

        p = self.p
        pd_term = p.bal_kp * (lean_d - p.lean_ref) + p.bal_kd * leanrate_d
        stim = self.s0.copy()
        for leg in range(2):
            contra = 1 - leg
            o = N_PER_LEG * leg
            chi = min(max(loads_d[leg] / self.load_norm, 0.0), 1.0)
            chi_c = min(max(loads_d[contra] / self.load_norm, 0.0), 1.0)
            trailing = (stance[leg] and stance[contra]
                        and self.detector.since[leg] < self.detector.since[contra])
            if stance[leg]:
                stim[o + _MU["SOL"]] += p.gain_sol * f_d[o + _MU["SOL"]]
                stim[o + _MU["GAS"]] += p.gain_gas * f_d[o + _MU["GAS"]]
                stim[o + _MU["TA"]] += (p.gain_ta * max(lce_d[o + _MU["TA"]] - self.ta_off, 0.0)
                                        - self.k_solta * f_d[o + _MU["SOL"]])
                u_vas = p.gain_vas * f_d[o + _MU["VAS"]]
                if knee_d[leg] > self.knee_guard_angle and kneerate_d[leg] > 0.0:
                    u_vas -= self.knee_guard_gain * (knee_d[leg] - self.knee_guard_angle)
                if trailing:
                    u_vas -= self.vas_presw * chi_c
                stim[o + _MU["VAS"]] += u_vas
                stim[o + _MU["HAM"]] += p.bal_ham * chi * max(pd_term, 0.0)
                stim[o + _MU["GLU"]] += (p.bal_glu * chi * max(pd_term, 0.0)
                                         - (self.dS_glu if trailing else 0.0))
                stim[o + _MU["HFL"]] += (p.bal_hfl * chi * max(-pd_term, 0.0)
                                         + (self.dS_hfl if trailing else 0.0))
            else:
                stim[o + _MU["TA"]] += p.gain_ta * max(lce_d[o + _MU["TA"]] - self.ta_off, 0.0)
                stim[o + _MU["HFL"]] += (p.gain_hfl * max(lce_d[o + _MU["HFL"]] - self.hfl_off, 0.0)
                                         - self.k_hamhfl * max(lce_d[o + _MU["HAM"]] - self.hamhfl_off, 0.0)
                                         + self.k_lean_sw * (self._held_lean[leg] - p.lean_ref))
                stim[o + _MU["HAM"]] += self.g_ham_sw * f_d[o + _MU["HAM"]]
                stim[o + _MU["GLU"]] += self.g_glu_sw * f_d[o + _MU["GLU"]]
        return np.clip(stim, 0.0, 1.0)
