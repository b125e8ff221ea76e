"""Scalarized hot path for closed-loop rollouts.

Functionally identical to composing BipedModel/MuscleGroup/contact (the test
suite asserts this), but written with scalar chain math and preallocated
buffers so the stiff solver's many derivative evaluations stay cheap. One
kernel instance belongs to one rollout; nothing here is shared.
"""

from __future__ import annotations

import math

import numpy as np

from .body import BipedModel, NQ
from .contact import ContactParams, Terrain
from .muscles import MuscleGroup, N_MUSCLES, _ECC_SLOPE, _A_GUARD, _FL_GUARD

try:
    from . import _fastpath as _fp
    _HAVE_FASTPATH = True
except ImportError:          # numba not installed: pure-numpy path only
    _fp = None
    _HAVE_FASTPATH = False


class RolloutKernel:
    def __init__(self, model: BipedModel, muscles: MuscleGroup,
                 contact: ContactParams, terrain: Terrain,
                 use_fastpath: bool | None = None):
        self.model = model
        self.mus = muscles
        self.cp = contact
        a = model.anthro
        self._dT = a.trunk_com_above_hip
        self._lth = a.l_thigh
        self._lsh = a.l_shank
        self._d_thigh = a.thigh_com_below_hip
        self._d_shank = a.shank_com_below_knee
        self._foot_com = a.foot_com
        self._heel = a.heel
        self._ball = a.ball
        self._g = model.g
        self.terrain_x = np.array([b[0] for b in terrain.breakpoints])
        self.terrain_h = np.array([b[1] for b in terrain.breakpoints])
        self._flat_h = float(self.terrain_h[0]) if len(self.terrain_h) == 1 else None

        self.J = np.zeros((7, 2, NQ))
        self.J[:, 0, 0] = 1.0
        self.J[:, 1, 1] = 1.0
        self.bias = np.zeros((7, 2))
        self.com = np.zeros((7, 2))
        self.points = np.zeros((4, 2))
        self.pointv = np.zeros((4, 2))
        self.Q = np.zeros(NQ)
        self.dy = np.zeros(2 * NQ + 2 * N_MUSCLES)
        self.stim = np.full(N_MUSCLES, 0.01)
        self._knee_xy = np.zeros((2, 2))     # per leg
        self._ankle_xy = np.zeros((2, 2))
        self.point_forces = np.zeros((4, 2))
        self._last_l_mtu = np.zeros(N_MUSCLES)
        self._last_f_se = np.zeros(N_MUSCLES)

        m = muscles
        self._att_m = m.att_muscle
        self._att_q = m.att_q
        self._att_gain = m._att_gain
        self._att_pm = m.att_phi_max
        self._att_pr = m.att_phi_ref
        self._att_sinref = m._att_sin_ref
        self._att_var = m.att_var
        self._n_att = len(m.att_muscle)

        self.use_fastpath = _HAVE_FASTPATH if use_fastpath is None else use_fastpath
        if self.use_fastpath and not _HAVE_FASTPATH:
            raise RuntimeError("numba fast path requested but unavailable")
        if self.use_fastpath:
            cst = np.zeros(_fp.N_CONST)
            cst[_fp.C_DT] = self._dT
            cst[_fp.C_LTH] = self._lth
            cst[_fp.C_LSH] = self._lsh
            cst[_fp.C_DTHIGH] = self._d_thigh
            cst[_fp.C_DSHANK] = self._d_shank
            cst[_fp.C_FCX], cst[_fp.C_FCZ] = self._foot_com
            cst[_fp.C_HX], cst[_fp.C_HZ] = self._heel
            cst[_fp.C_BX], cst[_fp.C_BZ] = self._ball
            cst[_fp.C_G] = self._g
            cst[_fp.C_KZ] = contact.stiffness_z
            cst[_fp.C_VRELAX] = contact.max_relax_vz
            cst[_fp.C_MU] = contact.mu
            cst[_fp.C_VSLIP] = contact.v_slip
            cst[_fp.C_STOPK] = model.stop_torque
            cst[_fp.C_STOPSCALE] = model.stop_angle
            cst[_fp.C_STOPMAX] = model.stop_max_exp
            cst[_fp.C_STOPVREF] = model.stop_vref
            cst[_fp.C_DAMP] = model.joint_damping
            cst[_fp.C_NECC] = float(m.n_ecc[0])
            cst[_fp.C_KSHAPE] = float(m.k_shape[0])
            cst[_fp.C_ECCSLOPE] = _ECC_SLOPE
            cst[_fp.C_AGUARD] = _A_GUARD
            cst[_fp.C_FLGUARD] = _FL_GUARD
            self._cst = cst
            self._misc = np.zeros(2)

    def ground_height(self, x: float) -> float:
        if self._flat_h is not None:
            return self._flat_h
        i = int(np.searchsorted(self.terrain_x, x, side="right")) - 1
        return float(self.terrain_h[max(i, 0)])

    def rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        if self.use_fastpath:
            mus = self.mus
            return _fp.rhs_walker(
                t, y, self.stim, self._cst, self.model.masses, self.model._M_rot,
                self.model.joint_lo, self.model.joint_hi,
                mus.f_max, mus.l_opt, mus.v_max, mus.l_slack, mus.tau,
                mus.width, mus.c_shape, mus.eref, mus.l_ref,
                self._att_m, self._att_q, self._att_gain, self._att_pm,
                self._att_sinref, self._att_pr, self._att_var,
                self.terrain_x, self.terrain_h,
                self.dy, self.point_forces, self._last_f_se, self._misc)
        return self._rhs_numpy(t, y)

    def _rhs_numpy(self, t: float, y: np.ndarray) -> np.ndarray:
        if not np.all(np.isfinite(y)):
            self.dy.fill(1e10)
            return self.dy
        mdl = self.model
        mus = self.mus
        q = y[:NQ]
        qd = y[NQ:2 * NQ]
        act = y[2 * NQ:2 * NQ + N_MUSCLES]
        lce = y[2 * NQ + N_MUSCLES:]

        x, z, pitch = y[0], y[1], y[2]
        xd, zd, pitchd = y[9], y[10], y[11]
        sp, cp = math.sin(pitch), math.cos(pitch)
        hip_x = x + self._dT * sp
        hip_z = z - self._dT * cp
        hip_vx = xd + pitchd * (self._dT * cp)
        hip_vz = zd + pitchd * (self._dT * sp)

        com = self.com
        com[0, 0] = x
        com[0, 1] = z
        J = self.J
        bias = self.bias
        points = self.points
        pointv = self.pointv
        phi_all = np.empty(6)

        for leg in range(2):
            j0 = 3 + 3 * leg
            seg0 = 1 + 3 * leg
            q_h, q_k, q_a = y[j0], y[j0 + 1], y[j0 + 2]
            qd_h, qd_k, qd_a = y[NQ + j0], y[NQ + j0 + 1], y[NQ + j0 + 2]
            phi_all[3 * leg] = q_h
            phi_all[3 * leg + 1] = q_k
            phi_all[3 * leg + 2] = q_a
            a_th = pitch + math.pi - q_h
            a_sh = a_th - math.pi + q_k
            a_ft = a_sh + 0.5 * math.pi - q_a
            w_th = pitchd - qd_h
            w_sh = w_th + qd_k
            w_ft = w_sh - qd_a
            s_t, c_t = math.sin(a_th), math.cos(a_th)
            s_s, c_s = math.sin(a_sh), math.cos(a_sh)
            s_f, c_f = math.sin(a_ft), math.cos(a_ft)

            knee_x = hip_x + self._lth * s_t
            knee_z = hip_z - self._lth * c_t
            ankle_x = knee_x + self._lsh * s_s
            ankle_z = knee_z - self._lsh * c_s
            self._knee_xy[leg, 0] = knee_x
            self._knee_xy[leg, 1] = knee_z
            self._ankle_xy[leg, 0] = ankle_x
            self._ankle_xy[leg, 1] = ankle_z
            com[seg0, 0] = hip_x + self._d_thigh * s_t
            com[seg0, 1] = hip_z - self._d_thigh * c_t
            com[seg0 + 1, 0] = knee_x + self._d_shank * s_s
            com[seg0 + 1, 1] = knee_z - self._d_shank * c_s
            fcx, fcz = self._foot_com
            com[seg0 + 2, 0] = ankle_x + c_f * fcx - s_f * fcz
            com[seg0 + 2, 1] = ankle_z + s_f * fcx + c_f * fcz
            hx, hz = self._heel
            bx, bz = self._ball
            pi0 = 2 * leg
            points[pi0, 0] = ankle_x + c_f * hx - s_f * hz
            points[pi0, 1] = ankle_z + s_f * hx + c_f * hz
            points[pi0 + 1, 0] = ankle_x + c_f * bx - s_f * bz
            points[pi0 + 1, 1] = ankle_z + s_f * bx + c_f * bz

            knee_vx = hip_vx + w_th * (knee_z - hip_z) * -1.0
            knee_vz = hip_vz + w_th * (knee_x - hip_x)
            ankle_vx = knee_vx - w_sh * (ankle_z - knee_z)
            ankle_vz = knee_vz + w_sh * (ankle_x - knee_x)
            pointv[pi0, 0] = ankle_vx - w_ft * (points[pi0, 1] - ankle_z)
            pointv[pi0, 1] = ankle_vz + w_ft * (points[pi0, 0] - ankle_x)
            pointv[pi0 + 1, 0] = ankle_vx - w_ft * (points[pi0 + 1, 1] - ankle_z)
            pointv[pi0 + 1, 1] = ankle_vz + w_ft * (points[pi0 + 1, 0] - ankle_x)

            # jacobian columns for this leg (trunk row untouched = 0)
            sl = slice(seg0, seg0 + 3)
            rel = com[sl]
            J[sl, 0, j0] = rel[:, 1] - hip_z
            J[sl, 1, j0] = -(rel[:, 0] - hip_x)
            sl2 = slice(seg0 + 1, seg0 + 3)
            J[sl2, 0, j0 + 1] = -(com[sl2, 1] - knee_z)
            J[sl2, 1, j0 + 1] = com[sl2, 0] - knee_x
            J[seg0 + 2, 0, j0 + 2] = com[seg0 + 2, 1] - ankle_z
            J[seg0 + 2, 1, j0 + 2] = -(com[seg0 + 2, 0] - ankle_x)

            # centripetal bias of each segment CoM
            wT2 = pitchd * pitchd
            ah_x = hip_x - x
            ah_z = hip_z - z
            w_t2 = w_th * w_th
            w_s2 = w_sh * w_sh
            w_f2 = w_ft * w_ft
            ak_x = knee_x - hip_x
            ak_z = knee_z - hip_z
            aa_x = ankle_x - knee_x
            aa_z = ankle_z - knee_z
            bias[seg0, 0] = -wT2 * ah_x - w_t2 * (com[seg0, 0] - hip_x)
            bias[seg0, 1] = -wT2 * ah_z - w_t2 * (com[seg0, 1] - hip_z)
            bias[seg0 + 1, 0] = -wT2 * ah_x - w_t2 * ak_x - w_s2 * (com[seg0 + 1, 0] - knee_x)
            bias[seg0 + 1, 1] = -wT2 * ah_z - w_t2 * ak_z - w_s2 * (com[seg0 + 1, 1] - knee_z)
            bias[seg0 + 2, 0] = (-wT2 * ah_x - w_t2 * ak_x - w_s2 * aa_x
                                 - w_f2 * (com[seg0 + 2, 0] - ankle_x))
            bias[seg0 + 2, 1] = (-wT2 * ah_z - w_t2 * ak_z - w_s2 * aa_z
                                 - w_f2 * (com[seg0 + 2, 1] - ankle_z))

        # pitch column (telescoped): perp(com - trunk_com)
        J[:, 0, 2] = -(com[:, 1] - z)
        J[:, 1, 2] = com[:, 0] - x

        # ---- muscles (vectorized over the 14 units / 18 attachments)
        phi = phi_all[self._att_q - 3]
        dl = np.where(self._att_var,
                      self._att_gain * (np.sin(phi - self._att_pm) - self._att_sinref),
                      self._att_gain * (phi - self._att_pr))
        l_mtu = mus.l_ref + np.bincount(self._att_m, weights=dl, minlength=N_MUSCLES)
        strain = (l_mtu - lce) / mus.l_slack - 1.0
        np.maximum(strain, 0.0, out=strain)
        f_se = mus.f_max * (strain / mus.eref) ** 2
        rel_l = lce / mus.l_opt
        f_pe = mus.f_max * (np.maximum(rel_l - 1.0, 0.0) / mus.width) ** 2
        f_be = mus.f_max * (np.maximum((1.0 - mus.width) - rel_l, 0.0) / (0.5 * mus.width)) ** 2
        fl = np.exp(mus.c_shape * (np.abs(rel_l - 1.0) / mus.width) ** 3)
        np.maximum(fl, _FL_GUARD, out=fl)
        fv_req = np.maximum(f_se - f_pe + f_be, 0.0) / (np.maximum(act, _A_GUARD) * mus.f_max * fl)
        np.clip(fv_req, 0.0, mus.n_ecc - 1e-9, out=fv_req)
        conc = mus.v_max * (fv_req - 1.0) / (1.0 + mus.k_shape * fv_req)
        ecc = mus.v_max * (fv_req - 1.0) / (
            _ECC_SLOPE * mus.k_shape * (mus.n_ecc - fv_req) + (mus.n_ecc - 1.0))
        v_norm = np.where(fv_req <= 1.0, conc, np.minimum(ecc, mus.v_max))

        arms = np.where(self._att_var,
                        -self._att_gain * np.cos(phi - self._att_pm),
                        -self._att_gain)
        tau = np.bincount(self._att_q - 3, weights=f_se[self._att_m] * arms, minlength=6)
        tau += mdl.limit_torques(q, qd)

        # ---- contact forces at the four points
        Q = self.Q
        Q.fill(0.0)
        self.point_forces.fill(0.0)
        cpz = self.cp
        for i in range(4):
            px, pz = points[i]
            gh = self.ground_height(px)
            depth = gh - pz
            if depth <= 0.0:
                continue
            fz = cpz.stiffness_z * depth * (1.0 - pointv[i, 1] / cpz.max_relax_vz)
            if fz <= 0.0:
                continue
            fx = -cpz.mu * fz * math.tanh(pointv[i, 0] / cpz.v_slip)
            self.point_forces[i, 0] = fx
            self.point_forces[i, 1] = fz
            leg = i // 2
            j0 = 3 + 3 * leg
            kx, kz = self._knee_xy[leg]
            ax, az = self._ankle_xy[leg]
            Q[0] += fx
            Q[1] += fz
            Q[2] += -fx * (pz - z) + fz * (px - x)
            Q[j0] -= -fx * (pz - hip_z) + fz * (px - hip_x)
            Q[j0 + 1] += -fx * (pz - kz) + fz * (px - kx)
            Q[j0 + 2] -= -fx * (pz - az) + fz * (px - ax)

        # ---- assemble and solve
        Jm = J * mdl.masses[:, None, None]
        M = np.einsum("sai,saj->ij", Jm, J)
        M += mdl._M_rot
        V = bias.copy()
        V[:, 1] += self._g
        Q -= np.einsum("sa,sai->i", V * mdl.masses[:, None], J)
        Q[3:9] += tau
        qdd = np.linalg.solve(M, Q)

        dy = self.dy
        dy[:NQ] = qd
        dy[NQ:2 * NQ] = qdd
        dy[2 * NQ:2 * NQ + N_MUSCLES] = (self.stim - act) / mus.tau
        dy[2 * NQ + N_MUSCLES:] = v_norm * mus.l_opt
        if not np.all(np.isfinite(dy)):
            dy.fill(1e10)
        self._last_l_mtu[:] = l_mtu
        self._last_f_se[:] = f_se
        return dy

    def snapshot(self, t: float, y: np.ndarray):
        """Evaluate the RHS at (t, y) and return (loads, f_norm, com_y).

        Used at control ticks: fills every buffer at exactly this state.
        """
        self.rhs(t, y)
        pf = self.point_forces
        loads = np.array([pf[0, 1] + pf[1, 1], pf[2, 1] + pf[3, 1]])
        f_norm = self._last_f_se / self.mus.f_max
        if self.use_fastpath:
            com_y = float(self._misc[1])
        else:
            m = self.model.masses
            com_y = float(m @ self.com[:, 1]) / self.model.total_mass
        return loads, f_norm, com_y
