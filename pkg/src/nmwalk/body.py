"""Planar rigid-body dynamics of the seven-segment biped.

Segments: trunk (head-arms-trunk lump) and thigh/shank/foot per leg, connected
by hinge joints at hip, knee and ankle. Generalized coordinates::

    q = [x, y, pitch, hipL, kneeL, ankleL, hipR, kneeR, ankleR]

``x, y`` locate the trunk centre of mass; ``pitch`` is the trunk absolute
angle (CCW positive, zero upright, so forward lean is ``-pitch``). Joint
angles follow the usual sagittal-model convention: hip and knee are the inner
angles between adjacent segments (180 deg = fully extended), the ankle is
90 deg with the sole perpendicular to the shank and larger values mean
plantarflexion.

The chain structure makes point Jacobians telescope: for any material point P,
d(P)/d(pitch) = perp(P - trunk_com), d(P)/d(hip) = -perp(P - hip_joint), and so
on, where perp rotates a vector by +90 deg. Angular velocities are constant
combinations of the joint rates, so the rotational part of the mass matrix is
constant and velocity-product terms are pure centripetal ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

# generalized-coordinate indices
IDX_X, IDX_Y, IDX_PITCH = 0, 1, 2
IDX_HIP_L, IDX_KNEE_L, IDX_ANKLE_L = 3, 4, 5
IDX_HIP_R, IDX_KNEE_R, IDX_ANKLE_R = 6, 7, 8
NQ = 9

# segment order used throughout
SEG_TRUNK, SEG_THIGH_L, SEG_SHANK_L, SEG_FOOT_L = 0, 1, 2, 3
SEG_THIGH_R, SEG_SHANK_R, SEG_FOOT_R = 4, 5, 6
NSEG = 7

JOINT_NAMES = ("hipL", "kneeL", "ankleL", "hipR", "kneeR", "ankleR")
CONTACT_POINT_NAMES = ("heelL", "ballL", "heelR", "ballR")


class ModelError(ValueError):
    """Invalid anthropometry or a state the dynamics cannot evaluate."""


@dataclass(frozen=True)
class Anthropometry:
    """Segment masses, lengths, inertias and attachment geometry.

    ``foot_com``, ``heel`` and ``ball`` are offsets from the ankle joint in the
    foot frame (x toward the toes, y up, both zero when the sole is flat).
    """

    m_trunk: float
    m_thigh: float
    m_shank: float
    m_foot: float
    l_trunk: float
    l_thigh: float
    l_shank: float
    l_foot: float
    i_trunk: float
    i_thigh: float
    i_shank: float
    i_foot: float
    trunk_com_above_hip: float
    thigh_com_below_hip: float
    shank_com_below_knee: float
    foot_com: tuple[float, float]
    heel: tuple[float, float]
    ball: tuple[float, float]

    @classmethod
    def from_config(cls, anthro: dict[str, Any]) -> "Anthropometry":
        m = anthro["masses"]
        l = anthro["lengths"]
        i = anthro["inertias"]
        c = anthro["com_offsets"]
        fp = anthro["foot_points"]
        return cls(
            m_trunk=m["trunk"], m_thigh=m["thigh"], m_shank=m["shank"], m_foot=m["foot"],
            l_trunk=l["trunk"], l_thigh=l["thigh"], l_shank=l["shank"], l_foot=l["foot"],
            i_trunk=i["trunk"], i_thigh=i["thigh"], i_shank=i["shank"], i_foot=i["foot"],
            trunk_com_above_hip=c["trunk_above_hip"],
            thigh_com_below_hip=c["thigh_below_hip"],
            shank_com_below_knee=c["shank_below_knee"],
            foot_com=tuple(c["foot_from_ankle"]),
            heel=tuple(fp["heel_from_ankle"]),
            ball=tuple(fp["ball_from_ankle"]),
        )

    def validate(self) -> None:
        for name in ("m_trunk", "m_thigh", "m_shank", "m_foot",
                     "l_trunk", "l_thigh", "l_shank", "l_foot",
                     "i_trunk", "i_thigh", "i_shank", "i_foot"):
            if not getattr(self, name) > 0:
                raise ModelError(f"anthropometry field {name} must be > 0")

    @property
    def total_mass(self) -> float:
        return self.m_trunk + 2.0 * (self.m_thigh + self.m_shank + self.m_foot)


@dataclass
class ModelState:
    """Generalized coordinates/velocities of the biped at time t."""

    q: np.ndarray
    qd: np.ndarray
    t: float = 0.0

    def copy(self) -> "ModelState":
        return ModelState(self.q.copy(), self.qd.copy(), self.t)


@dataclass(frozen=True)
class ContactForce:
    """World-frame force applied at a named foot contact point."""

    point: str                 # one of CONTACT_POINT_NAMES
    position: np.ndarray       # (2,) world frame
    force: np.ndarray          # (2,) world frame, [fx, fz]


def _perp(v: np.ndarray) -> np.ndarray:
    """Rotate a stack of 2-vectors by +90 degrees: (x, y) -> (-y, x)."""
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


class Kinematics:
    """Scratch result of one forward-kinematics pass (world-frame quantities)."""

    __slots__ = ("alpha", "alphad", "com", "comv", "hip", "knee", "ankle",
                 "points", "pointv", "trunk_com")

    def __init__(self) -> None:
        self.alpha = np.zeros(NSEG)
        self.alphad = np.zeros(NSEG)
        self.com = np.zeros((NSEG, 2))
        self.comv = np.zeros((NSEG, 2))
        self.hip = np.zeros(2)
        self.knee = np.zeros((2, 2))      # per leg
        self.ankle = np.zeros((2, 2))
        self.points = np.zeros((4, 2))    # heelL, ballL, heelR, ballR
        self.pointv = np.zeros((4, 2))
        self.trunk_com = np.zeros(2)


class BipedModel:
    """Immutable planar biped; all dynamics entry points are pure functions of state."""

    def __init__(self, anthro: Anthropometry, *, gravity: float = 9.81,
                 joints_cfg: dict[str, Any] | None = None):
        anthro.validate()
        self.anthro = anthro
        self.g = float(gravity)
        self.masses = np.array([anthro.m_trunk,
                                anthro.m_thigh, anthro.m_shank, anthro.m_foot,
                                anthro.m_thigh, anthro.m_shank, anthro.m_foot])
        self.inertias = np.array([anthro.i_trunk,
                                  anthro.i_thigh, anthro.i_shank, anthro.i_foot,
                                  anthro.i_thigh, anthro.i_shank, anthro.i_foot])
        self.total_mass = anthro.total_mass

        # angular velocity rows (constant): alphad = W @ qd
        W = np.zeros((NSEG, NQ))
        W[SEG_TRUNK, IDX_PITCH] = 1.0
        for seg0, j0 in ((SEG_THIGH_L, IDX_HIP_L), (SEG_THIGH_R, IDX_HIP_R)):
            W[seg0, IDX_PITCH] = 1.0
            W[seg0, j0] = -1.0
            W[seg0 + 1] = W[seg0]
            W[seg0 + 1, j0 + 1] = 1.0
            W[seg0 + 2] = W[seg0 + 1]
            W[seg0 + 2, j0 + 2] = -1.0
        self.W = W
        # rotational contribution to the mass matrix never changes
        self._M_rot = (W.T * self.inertias) @ W

        jc = joints_cfg or {}
        lim = jc.get("limits_deg", {"hip": [20.0, 230.0],
                                    "knee": [10.0, 175.0],
                                    "ankle": [70.0, 130.0]})
        d2r = math.pi / 180.0
        self.joint_lo = np.array([lim["hip"][0], lim["knee"][0], lim["ankle"][0]] * 2) * d2r
        self.joint_hi = np.array([lim["hip"][1], lim["knee"][1], lim["ankle"][1]] * 2) * d2r
        self.stop_torque = float(jc.get("stop_torque_scale", 2.0))
        self.stop_angle = float(jc.get("stop_angle_scale_deg", 2.0)) * d2r
        self.stop_max_exp = float(jc.get("stop_max_exponent", 8.0))
        self.stop_vref = float(jc.get("stop_velocity_ref", 0.5))
        self.joint_damping = float(jc.get("viscous_damping", 0.3))

    # ------------------------------------------------------------------ kinematics

    def kinematics(self, q: np.ndarray, qd: np.ndarray | None = None) -> Kinematics:
        """Forward kinematics; velocities are filled only when qd is given."""
        a = self.anthro
        k = Kinematics()
        x, y, pitch = q[0], q[1], q[2]
        k.trunk_com[:] = (x, y)

        alpha = k.alpha
        alpha[SEG_TRUNK] = pitch
        for seg0, j0 in ((SEG_THIGH_L, IDX_HIP_L), (SEG_THIGH_R, IDX_HIP_R)):
            alpha[seg0] = pitch + math.pi - q[j0]
            alpha[seg0 + 1] = alpha[seg0] - math.pi + q[j0 + 1]
            alpha[seg0 + 2] = alpha[seg0 + 1] + 0.5 * math.pi - q[j0 + 2]

        sp, cp = math.sin(pitch), math.cos(pitch)
        k.hip[:] = (x + a.trunk_com_above_hip * sp, y - a.trunk_com_above_hip * cp)
        k.com[SEG_TRUNK] = (x, y)

        for leg, seg0 in ((0, SEG_THIGH_L), (1, SEG_THIGH_R)):
            s_t, c_t = math.sin(alpha[seg0]), math.cos(alpha[seg0])
            s_s, c_s = math.sin(alpha[seg0 + 1]), math.cos(alpha[seg0 + 1])
            s_f, c_f = math.sin(alpha[seg0 + 2]), math.cos(alpha[seg0 + 2])
            et = np.array((s_t, -c_t))          # thigh axis hip->knee
            es = np.array((s_s, -c_s))          # shank axis knee->ankle
            k.com[seg0] = k.hip + a.thigh_com_below_hip * et
            k.knee[leg] = k.hip + a.l_thigh * et
            k.com[seg0 + 1] = k.knee[leg] + a.shank_com_below_knee * es
            k.ankle[leg] = k.knee[leg] + a.l_shank * es
            # foot frame: x toward toes, rotated by alpha_foot
            rot = np.array(((c_f, -s_f), (s_f, c_f)))
            k.com[seg0 + 2] = k.ankle[leg] + rot @ np.asarray(a.foot_com)
            k.points[2 * leg] = k.ankle[leg] + rot @ np.asarray(a.heel)
            k.points[2 * leg + 1] = k.ankle[leg] + rot @ np.asarray(a.ball)

        if qd is not None:
            k.alphad[:] = self.W @ qd
            base_v = qd[:2]
            k.comv[SEG_TRUNK] = base_v
            hip_v = base_v + k.alphad[SEG_TRUNK] * _perp(k.hip - k.trunk_com)
            for leg, seg0 in ((0, SEG_THIGH_L), (1, SEG_THIGH_R)):
                knee_v = hip_v + k.alphad[seg0] * _perp(k.knee[leg] - k.hip)
                ankle_v = knee_v + k.alphad[seg0 + 1] * _perp(k.ankle[leg] - k.knee[leg])
                k.comv[seg0] = hip_v + k.alphad[seg0] * _perp(k.com[seg0] - k.hip)
                k.comv[seg0 + 1] = knee_v + k.alphad[seg0 + 1] * _perp(k.com[seg0 + 1] - k.knee[leg])
                k.comv[seg0 + 2] = ankle_v + k.alphad[seg0 + 2] * _perp(k.com[seg0 + 2] - k.ankle[leg])
                k.pointv[2 * leg] = ankle_v + k.alphad[seg0 + 2] * _perp(k.points[2 * leg] - k.ankle[leg])
                k.pointv[2 * leg + 1] = ankle_v + k.alphad[seg0 + 2] * _perp(k.points[2 * leg + 1] - k.ankle[leg])
        return k

    def point_jacobian(self, k: Kinematics, p: np.ndarray, leg: int | None,
                       distal_of: int = 0) -> np.ndarray:
        """Jacobian (2, NQ) of a material point.

        ``leg`` is None for trunk points; ``distal_of`` counts how many leg
        joints lie between the trunk and the point (1 hip, 2 +knee, 3 +ankle).
        """
        J = np.zeros((2, NQ))
        J[0, IDX_X] = 1.0
        J[1, IDX_Y] = 1.0
        J[:, IDX_PITCH] = _perp(p - k.trunk_com)
        if leg is not None:
            j0 = IDX_HIP_L if leg == 0 else IDX_HIP_R
            if distal_of >= 1:
                J[:, j0] = -_perp(p - k.hip)
            if distal_of >= 2:
                J[:, j0 + 1] = _perp(p - k.knee[leg])
            if distal_of >= 3:
                J[:, j0 + 2] = -_perp(p - k.ankle[leg])
        return J

    def _com_jacobians(self, k: Kinematics) -> np.ndarray:
        """Stack (NSEG, 2, NQ) of segment-CoM Jacobians."""
        J = np.zeros((NSEG, 2, NQ))
        J[:, 0, IDX_X] = 1.0
        J[:, 1, IDX_Y] = 1.0
        J[:, :, IDX_PITCH] = _perp(k.com - k.trunk_com)
        for leg, seg0 in ((0, SEG_THIGH_L), (1, SEG_THIGH_R)):
            j0 = IDX_HIP_L if leg == 0 else IDX_HIP_R
            for d in range(3):
                seg = seg0 + d
                J[seg, :, j0] = -_perp(k.com[seg] - k.hip)
                if d >= 1:
                    J[seg, :, j0 + 1] = _perp(k.com[seg] - k.knee[leg])
                if d >= 2:
                    J[seg, :, j0 + 2] = -_perp(k.com[seg] - k.ankle[leg])
        return J

    def _com_bias(self, k: Kinematics) -> np.ndarray:
        """Centripetal CoM accelerations (NSEG, 2) for qdd = 0."""
        b = np.zeros((NSEG, 2))
        wT2 = k.alphad[SEG_TRUNK] ** 2
        arm_hip = k.hip - k.trunk_com
        for leg, seg0 in ((0, SEG_THIGH_L), (1, SEG_THIGH_R)):
            w_t2 = k.alphad[seg0] ** 2
            w_s2 = k.alphad[seg0 + 1] ** 2
            w_f2 = k.alphad[seg0 + 2] ** 2
            arm_knee = k.knee[leg] - k.hip
            arm_ankle = k.ankle[leg] - k.knee[leg]
            b[seg0] = -wT2 * arm_hip - w_t2 * (k.com[seg0] - k.hip)
            b[seg0 + 1] = -wT2 * arm_hip - w_t2 * arm_knee - w_s2 * (k.com[seg0 + 1] - k.knee[leg])
            b[seg0 + 2] = (-wT2 * arm_hip - w_t2 * arm_knee - w_s2 * arm_ankle
                           - w_f2 * (k.com[seg0 + 2] - k.ankle[leg]))
        return b

    # ------------------------------------------------------------------ dynamics

    def mass_matrix(self, q: np.ndarray) -> np.ndarray:
        k = self.kinematics(q)
        J = self._com_jacobians(k)
        M = np.einsum("sai,saj->ij", J * self.masses[:, None, None], J)
        M += self._M_rot
        return M

    def forward_dynamics(self, state: ModelState, joint_torques: np.ndarray,
                         contacts: list[ContactForce]) -> np.ndarray:
        """Generalized accelerations for given joint torques and contact forces.

        ``joint_torques`` has one entry per JOINT_NAMES, positive in the
        direction of the increasing joint angle.
        """
        tau = np.asarray(joint_torques, dtype=float)
        if tau.shape != (6,) or not np.all(np.isfinite(tau)):
            raise ModelError("joint_torques must be 6 finite values")
        k = self.kinematics(state.q, state.qd)
        J = self._com_jacobians(k)
        Jm = J * self.masses[:, None, None]
        M = np.einsum("sai,saj->ij", Jm, J) + self._M_rot

        Q = np.einsum("sa,sai->i", self._com_bias(k), -Jm)   # -J^T m b
        Q += np.einsum("s,si->i", -self.masses * self.g, J[:, 1, :])
        Q[3:9] += tau
        point_index = {n: i for i, n in enumerate(CONTACT_POINT_NAMES)}
        for c in contacts:
            i = point_index[c.point]
            leg = i // 2
            Jp = self.point_jacobian(k, np.asarray(c.position, dtype=float),
                                     leg, distal_of=3)
            Q += Jp.T @ np.asarray(c.force, dtype=float)

        try:
            qdd = np.linalg.solve(M, Q)
        except np.linalg.LinAlgError as e:  # pragma: no cover - must never happen
            raise ModelError(f"singular mass matrix: {e}") from e
        return qdd

    def generalized_accel(self, k: Kinematics, tau: np.ndarray,
                          point_forces: np.ndarray) -> np.ndarray:
        """Hot-path accelerations from a finished kinematics pass.

        ``point_forces`` is (4, 2) aligned with CONTACT_POINT_NAMES; zero rows
        are skipped. ``tau`` are the six joint torques.
        """
        J = self._com_jacobians(k)
        Jm = J * self.masses[:, None, None]
        M = np.einsum("sai,saj->ij", Jm, J) + self._M_rot

        Q = np.einsum("sa,sai->i", self._com_bias(k), -Jm)
        Q += np.einsum("s,si->i", -self.masses * self.g, J[:, 1, :])
        Q[3:9] += tau
        for i in range(4):
            f = point_forces[i]
            if f[0] == 0.0 and f[1] == 0.0:
                continue
            leg = i // 2
            j0 = IDX_HIP_L if leg == 0 else IDX_HIP_R
            p = k.points[i]
            Q[IDX_X] += f[0]
            Q[IDX_Y] += f[1]
            Q[IDX_PITCH] += f @ _perp(p - k.trunk_com)
            Q[j0] -= f @ _perp(p - k.hip)
            Q[j0 + 1] += f @ _perp(p - k.knee[leg])
            Q[j0 + 2] -= f @ _perp(p - k.ankle[leg])
        return np.linalg.solve(M, Q)

    def limit_torques(self, q: np.ndarray, qd: np.ndarray) -> np.ndarray:
        """Soft exponential joint stops plus light viscous damping (6 joints)."""
        phi = q[3:9]
        phid = qd[3:9]
        tau = -self.joint_damping * phid
        over = np.minimum((phi - self.joint_hi) / self.stop_angle, self.stop_max_exp)
        under = np.minimum((self.joint_lo - phi) / self.stop_angle, self.stop_max_exp)
        hi = over > 0.0
        lo = under > 0.0
        if np.any(hi):
            tau[hi] -= (self.stop_torque * np.expm1(over[hi])
                        * (1.0 + np.maximum(phid[hi], 0.0) / self.stop_vref))
        if np.any(lo):
            tau[lo] += (self.stop_torque * np.expm1(under[lo])
                        * (1.0 + np.maximum(-phid[lo], 0.0) / self.stop_vref))
        return tau

    def com_state(self, state: ModelState) -> tuple[np.ndarray, np.ndarray]:
        """Whole-body centre of mass position and velocity (mass-weighted)."""
        k = self.kinematics(state.q, state.qd)
        w = self.masses / self.total_mass
        return w @ k.com, w @ k.comv

    def mechanical_energy(self, state: ModelState) -> float:
        """Kinetic plus gravitational potential energy of the linkage."""
        k = self.kinematics(state.q, state.qd)
        T = 0.5 * float(self.masses @ np.einsum("sa,sa->s", k.comv, k.comv))
        T += 0.5 * float(self.inertias @ (k.alphad ** 2))
        V = self.g * float(self.masses @ k.com[:, 1])
        return T + V

    # ------------------------------------------------------------------ reference poses

    def standing_pose(self) -> np.ndarray:
        """Upright reference pose: legs vertical, soles flat on the ground."""
        a = self.anthro
        q = np.zeros(NQ)
        q[IDX_PITCH] = 0.0
        q[[IDX_HIP_L, IDX_HIP_R]] = math.pi
        q[[IDX_KNEE_L, IDX_KNEE_R]] = math.pi
        q[[IDX_ANKLE_L, IDX_ANKLE_R]] = 0.5 * math.pi
        sole_below_ankle = -a.heel[1]
        ankle_y = sole_below_ankle
        hip_y = ankle_y + a.l_shank + a.l_thigh
        q[IDX_Y] = hip_y + a.trunk_com_above_hip
        return q

    def standing_com_height(self) -> float:
        q = self.standing_pose()
        pos, _ = self.com_state(ModelState(q, np.zeros(NQ)))
        return float(pos[1])


def build_model(anthro: Anthropometry, *, gravity: float = 9.81,
                joints_cfg: dict[str, Any] | None = None) -> BipedModel:
    """Construct the biped; rejects non-positive masses, lengths or inertias."""
    return BipedModel(anthro, gravity=gravity, joints_cfg=joints_cfg)
