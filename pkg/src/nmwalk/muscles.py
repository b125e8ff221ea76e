"""Hill-type muscle-tendon units and their mapping onto the biped's joints.

Each unit is a contractile element (force-length/velocity), a series elastic
tendon and passive parallel/buffer elasticities. The CE length is carried as a
state variable: its rate follows from the series-element force balance by
inverting the force-velocity curve, which keeps the formulation robust under
stiff integration. Seven units per leg: SOL, TA, GAS, VAS, HAM, GLU, HFL.

Muscle paths are reduced to per-joint attachment records. A record maps joint
angle phi to an MTU length contribution; the moment arm is the exact negative
derivative of that contribution, so joint torque F * r never creates or
destroys energy relative to the fiber work.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

MUSCLE_NAMES = ("SOL", "TA", "GAS", "VAS", "HAM", "GLU", "HFL")
N_PER_LEG = len(MUSCLE_NAMES)
N_MUSCLES = 2 * N_PER_LEG          # left leg first, then right

# joint angle slots inside q: hip, knee, ankle per leg (see body.py)
_JOINT_SLOT = {"hip": 0, "knee": 1, "ankle": 2}

_ECC_SLOPE = 7.56                  # eccentric branch shape factor
_A_GUARD = 1e-3                    # activation floor inside the fv inversion only
_FL_GUARD = 1e-3


@dataclass(frozen=True)
class Attachment:
    """One joint crossing of a muscle path.

    For a variable arm the length contribution is
    ``dir * rho * r0 * (sin(phi - phi_max) - sin(phi_ref - phi_max))`` and the
    arm r0*cos(phi - phi_max) peaks at phi_max; for a constant arm it is linear
    in (phi - phi_ref). ``dir`` is +1 when a growing angle stretches the MTU.
    """

    joint: str
    r0: float
    phi_max: float
    phi_ref: float
    rho: float
    direction: float
    variable_arm: bool


@dataclass(frozen=True)
class MuscleParams:
    name: str
    f_max: float          # maximum isometric force [N]
    l_opt: float          # optimal CE length [m]
    v_max: float          # maximum shortening velocity [l_opt/s]
    l_slack: float        # tendon slack length [m]
    tau: float = 0.01     # activation time constant [s]
    width: float = 0.56   # force-length width
    c_shape: float = math.log(0.05)
    n_ecc: float = 1.5    # eccentric force enhancement
    k_shape: float = 5.0  # force-velocity curvature
    eref: float = 0.04    # tendon reference strain
    attachments: tuple[Attachment, ...] = ()

    def __post_init__(self) -> None:
        for field_name in ("f_max", "l_opt", "v_max", "l_slack", "tau"):
            if not getattr(self, field_name) > 0:
                raise ValueError(f"{self.name}: {field_name} must be > 0")

    @property
    def l_ref(self) -> float:
        """MTU length at the reference joint angles (slack tendon, optimal CE)."""
        return self.l_opt + self.l_slack


@dataclass
class MuscleState:
    activation: float
    l_ce: float


def activation_step(u: float, a: float, dt: float, tau: float) -> float:
    """Exact first-order lag update toward the clamped stimulation."""
    u = min(max(u, 0.0), 1.0)
    a_new = u + (a - u) * math.exp(-dt / tau)
    return min(max(a_new, 0.0), 1.0)


# ---------------------------------------------------------------------- curves


def force_length(l_ce, p: MuscleParams):
    """Bell curve, 1 at l_opt, ~0.05 at l_opt*(1 +/- width)."""
    x = np.abs((np.asarray(l_ce, dtype=float) - p.l_opt) / (p.l_opt * p.width))
    return np.exp(p.c_shape * x ** 3)


def force_velocity(v_ce, p: MuscleParams):
    """Hill hyperbola; v_ce in l_opt/s, negative = shortening.

    Zero at -v_max, 1 at rest, saturates near n_ecc for fast lengthening.
    """
    v = np.asarray(v_ce, dtype=float)
    conc = np.maximum(p.v_max + v, 0.0) / (p.v_max - p.k_shape * np.minimum(v, 0.0))
    ecc = p.n_ecc - (p.n_ecc - 1.0) * (p.v_max - v) / (p.v_max + _ECC_SLOPE * p.k_shape * v)
    return np.where(v <= 0.0, conc, ecc)


def tendon_force(l_se, p: MuscleParams):
    """Series element: quadratic in strain beyond slack, zero otherwise."""
    strain = np.maximum(np.asarray(l_se, dtype=float) / p.l_slack - 1.0, 0.0)
    return p.f_max * (strain / p.eref) ** 2


def parallel_force(l_ce, p: MuscleParams):
    """High-length parallel elasticity, engages above l_opt."""
    x = np.maximum(np.asarray(l_ce, dtype=float) / p.l_opt - 1.0, 0.0)
    return p.f_max * (x / p.width) ** 2


def buffer_force(l_ce, p: MuscleParams):
    """Low-length buffer that keeps the CE from collapsing below (1-w)*l_opt."""
    x = np.maximum((1.0 - p.width) - np.asarray(l_ce, dtype=float) / p.l_opt, 0.0)
    return p.f_max * (x / (0.5 * p.width)) ** 2


def _fv_inverse(fv_req, p: MuscleParams):
    """CE velocity (l_opt/s) that realizes a required normalized fv value.

    Input is clamped to [0, n_ecc); beyond the eccentric plateau the velocity
    saturates at +v_max (slight modelling simplification, see config docs).
    """
    f = np.clip(np.asarray(fv_req, dtype=float), 0.0, p.n_ecc - 1e-9)
    conc = p.v_max * (f - 1.0) / (1.0 + p.k_shape * f)
    ecc = p.v_max * (f - 1.0) / (_ECC_SLOPE * p.k_shape * (p.n_ecc - f) + (p.n_ecc - 1.0))
    v = np.where(f <= 1.0, conc, np.minimum(ecc, p.v_max))
    return v


def mtu_force(a: float, l_mtu: float, state: MuscleState,
              p: MuscleParams) -> tuple[float, float]:
    """Resolve one MTU: returns (tendon force [N], CE length rate [m/s]).

    The tendon transmits the whole MTU force; the CE rate is whatever velocity
    makes the active+passive fiber force balance the tendon force.
    """
    l_se = l_mtu - state.l_ce
    f_se = float(tendon_force(l_se, p))
    f_req = f_se - float(parallel_force(state.l_ce, p)) + float(buffer_force(state.l_ce, p))
    fl = max(float(force_length(state.l_ce, p)), _FL_GUARD)
    fv_req = max(f_req, 0.0) / (max(a, _A_GUARD) * p.f_max * fl)
    v_norm = float(_fv_inverse(fv_req, p))
    return f_se, v_norm * p.l_opt


# ---------------------------------------------------------------- muscle group


class MuscleGroup:
    """All 14 MTUs of the biped, vectorized for the simulation hot path."""

    def __init__(self, params: list[MuscleParams]):
        if len(params) != N_MUSCLES:
            raise ValueError(f"expected {N_MUSCLES} muscles, got {len(params)}")
        self.params = params
        self.names = [p.name for p in params]
        self.f_max = np.array([p.f_max for p in params])
        self.l_opt = np.array([p.l_opt for p in params])
        self.v_max = np.array([p.v_max for p in params])
        self.l_slack = np.array([p.l_slack for p in params])
        self.tau = np.array([p.tau for p in params])
        self.width = np.array([p.width for p in params])
        self.c_shape = np.array([p.c_shape for p in params])
        self.n_ecc = np.array([p.n_ecc for p in params])
        self.k_shape = np.array([p.k_shape for p in params])
        self.eref = np.array([p.eref for p in params])
        self.l_ref = self.l_opt + self.l_slack

        att_m, att_q, r0, pmax, pref, rho, adir, var = [], [], [], [], [], [], [], []
        for mi, p in enumerate(params):
            leg = 0 if mi < N_PER_LEG else 1
            for att in p.attachments:
                att_m.append(mi)
                att_q.append(3 + 3 * leg + _JOINT_SLOT[att.joint])
                r0.append(att.r0)
                pmax.append(att.phi_max)
                pref.append(att.phi_ref)
                rho.append(att.rho)
                adir.append(att.direction)
                var.append(att.variable_arm)
        self.att_muscle = np.array(att_m, dtype=np.intp)
        self.att_q = np.array(att_q, dtype=np.intp)
        self.att_r0 = np.array(r0)
        self.att_phi_max = np.array(pmax)
        self.att_phi_ref = np.array(pref)
        self.att_rho = np.array(rho)
        self.att_dir = np.array(adir)
        self.att_var = np.array(var, dtype=bool)
        self._att_gain = self.att_dir * self.att_rho * self.att_r0
        self._att_sin_ref = np.sin(self.att_phi_ref - self.att_phi_max)

    @classmethod
    def from_config(cls, muscles_cfg: dict[str, Any]) -> "MuscleGroup":
        shared = muscles_cfg["shared"]
        d2r = math.pi / 180.0
        per_leg: list[MuscleParams] = []
        for name in MUSCLE_NAMES:
            u = muscles_cfg["units"][name]
            atts = tuple(
                Attachment(joint=j["joint"], r0=j["r0"],
                           phi_max=j["phi_max_deg"] * d2r,
                           phi_ref=j["phi_ref_deg"] * d2r,
                           rho=j["rho"], direction=float(j["dir"]),
                           variable_arm=bool(j["variable_arm"]))
                for j in u["joints"])
            per_leg.append(MuscleParams(
                name=name, f_max=u["f_max"], l_opt=u["l_opt"], v_max=u["v_max"],
                l_slack=u["l_slack"], tau=shared["tau"], width=shared["width"],
                c_shape=shared["c"], n_ecc=shared["N"], k_shape=shared["K"],
                eref=shared["eref"], attachments=atts))
        both = [MuscleParams(**{**vars(p), "name": p.name + "_L"}) for p in per_leg]
        both += [MuscleParams(**{**vars(p), "name": p.name + "_R"}) for p in per_leg]
        return cls(both)

    # ---------------------------------------------------------- geometry

    def lengths(self, q: np.ndarray) -> np.ndarray:
        """MTU lengths (N_MUSCLES,) for joint angles q; supports (T, NQ) input."""
        phi = np.asarray(q)[..., self.att_q]
        dl = np.where(self.att_var,
                      self._att_gain * (np.sin(phi - self.att_phi_max) - self._att_sin_ref),
                      self._att_gain * (phi - self.att_phi_ref))
        if dl.ndim == 1:
            return self.l_ref + np.bincount(self.att_muscle, weights=dl,
                                            minlength=N_MUSCLES)
        out = np.zeros(dl.shape[:-1] + (N_MUSCLES,))
        np.add.at(out, (..., self.att_muscle), dl)
        return self.l_ref + out

    def attachment_arms(self, q: np.ndarray) -> np.ndarray:
        """Moment arm r = -d(l_mtu)/d(phi) per attachment, at angles q."""
        phi = np.asarray(q)[..., self.att_q]
        slope = np.where(self.att_var,
                         self._att_gain * np.cos(phi - self.att_phi_max),
                         self._att_gain)
        return -slope

    def torques(self, q: np.ndarray, forces: np.ndarray) -> np.ndarray:
        """Joint torques (6,) from MTU tensions, positive toward growing angles."""
        arms = self.attachment_arms(q)
        contrib = forces[self.att_muscle] * arms
        return np.bincount(self.att_q - 3, weights=contrib, minlength=6)

    # ---------------------------------------------------------- dynamics

    def initial_states(self, q: np.ndarray,
                       activation: np.ndarray | float = 0.01) -> tuple[np.ndarray, np.ndarray]:
        """Activations and CE lengths for a fresh rollout (slack tendons)."""
        l_ce = np.clip(self.lengths(q) - self.l_slack,
                       0.45 * self.l_opt, 1.5 * self.l_opt)
        act = np.broadcast_to(np.asarray(activation, dtype=float),
                              (N_MUSCLES,)).copy()
        return act, l_ce

    def se_force(self, l_mtu: np.ndarray, l_ce: np.ndarray) -> np.ndarray:
        strain = np.maximum((l_mtu - l_ce) / self.l_slack - 1.0, 0.0)
        return self.f_max * (strain / self.eref) ** 2

    def derivatives(self, q: np.ndarray, act: np.ndarray, l_ce: np.ndarray,
                    stim: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(da/dt, dl_ce/dt, tendon forces) for the whole group."""
        l_mtu = self.lengths(q)
        f_se = self.se_force(l_mtu, l_ce)

        rel = l_ce / self.l_opt
        f_pe = self.f_max * (np.maximum(rel - 1.0, 0.0) / self.width) ** 2
        f_be = self.f_max * (np.maximum((1.0 - self.width) - rel, 0.0)
                             / (0.5 * self.width)) ** 2
        fl = np.maximum(np.exp(self.c_shape * (np.abs(rel - 1.0) / self.width) ** 3),
                        _FL_GUARD)
        fv_req = np.maximum(f_se - f_pe + f_be, 0.0) / (
            np.maximum(act, _A_GUARD) * self.f_max * fl)
        fv_req = np.clip(fv_req, 0.0, self.n_ecc - 1e-9)
        conc = self.v_max * (fv_req - 1.0) / (1.0 + self.k_shape * fv_req)
        ecc = self.v_max * (fv_req - 1.0) / (
            _ECC_SLOPE * self.k_shape * (self.n_ecc - fv_req) + (self.n_ecc - 1.0))
        v_norm = np.where(fv_req <= 1.0, conc, np.minimum(ecc, self.v_max))

        da = (np.clip(stim, 0.0, 1.0) - act) / self.tau
        return da, v_norm * self.l_opt, f_se
