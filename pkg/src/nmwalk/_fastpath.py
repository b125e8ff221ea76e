"""Numba-compiled rollout derivative. Optional: imported lazily by the kernel
and skipped (pure numpy fallback) when numba is unavailable.

This is a line-for-line translation of RolloutKernel.rhs into scalar loops;
the test suite asserts both paths agree to machine precision.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# layout of the scalar-constant vector
(C_DT, C_LTH, C_LSH, C_DTHIGH, C_DSHANK, C_FCX, C_FCZ, C_HX, C_HZ, C_BX, C_BZ,
 C_G, C_KZ, C_VRELAX, C_MU, C_VSLIP, C_STOPK, C_STOPSCALE, C_STOPMAX, C_STOPVREF,
 C_DAMP, C_NECC, C_KSHAPE, C_ECCSLOPE, C_AGUARD, C_FLGUARD, N_CONST) = range(27)


@njit(cache=True, fastmath=False)
def rhs_walker(t, y, stim, cst, masses, m_rot, joint_lo, joint_hi,
               f_max, l_opt, v_max, l_slack, tau_act, width, c_shape, eref, l_ref,
               att_m, att_q, att_gain, att_pm, att_sinref, att_pr, att_var,
               terrain_x, terrain_h,
               out_dy, out_pf, out_fse, out_misc):
    """out_misc returns [com_x, com_y] of the whole body."""
    n_mus = f_max.shape[0]
    n_att = att_m.shape[0]

    # non-finite trial states (solver overshoot) must reject the step: return
    # a huge smooth derivative instead of propagating NaN into the solver
    ok = True
    for i in range(y.shape[0]):
        if not math.isfinite(y[i]):
            ok = False
            break
    if not ok:
        for i in range(out_dy.shape[0]):
            out_dy[i] = 1e10
        return out_dy

    x = y[0]
    z = y[1]
    pitch = y[2]
    xd = y[9]
    zd = y[10]
    pitchd = y[11]
    sp = math.sin(pitch)
    cp = math.cos(pitch)
    dT = cst[C_DT]
    hip_x = x + dT * sp
    hip_z = z - dT * cp
    hip_vx = xd + pitchd * dT * cp
    hip_vz = zd + pitchd * dT * sp

    com = np.zeros((7, 2))
    com[0, 0] = x
    com[0, 1] = z
    J = np.zeros((7, 2, 9))
    for s in range(7):
        J[s, 0, 0] = 1.0
        J[s, 1, 1] = 1.0
    bias = np.zeros((7, 2))
    points = np.zeros((4, 2))
    pointv = np.zeros((4, 2))
    knee_xy = np.zeros((2, 2))
    ankle_xy = np.zeros((2, 2))
    phi_all = np.zeros(6)

    lth = cst[C_LTH]
    lsh = cst[C_LSH]
    d_th = cst[C_DTHIGH]
    d_sh = cst[C_DSHANK]

    for leg in range(2):
        j0 = 3 + 3 * leg
        seg0 = 1 + 3 * leg
        q_h = y[j0]
        q_k = y[j0 + 1]
        q_a = y[j0 + 2]
        qd_h = y[9 + j0]
        qd_k = y[9 + j0 + 1]
        qd_a = y[9 + j0 + 2]
        phi_all[3 * leg] = q_h
        phi_all[3 * leg + 1] = q_k
        phi_all[3 * leg + 2] = q_a
        a_th = pitch + math.pi - q_h
        a_sh = a_th - math.pi + q_k
        a_ft = a_sh + 0.5 * math.pi - q_a
        w_th = pitchd - qd_h
        w_sh = w_th + qd_k
        w_ft = w_sh - qd_a
        s_t = math.sin(a_th)
        c_t = math.cos(a_th)
        s_s = math.sin(a_sh)
        c_s = math.cos(a_sh)
        s_f = math.sin(a_ft)
        c_f = math.cos(a_ft)

        knee_x = hip_x + lth * s_t
        knee_z = hip_z - lth * c_t
        ankle_x = knee_x + lsh * s_s
        ankle_z = knee_z - lsh * c_s
        knee_xy[leg, 0] = knee_x
        knee_xy[leg, 1] = knee_z
        ankle_xy[leg, 0] = ankle_x
        ankle_xy[leg, 1] = ankle_z
        com[seg0, 0] = hip_x + d_th * s_t
        com[seg0, 1] = hip_z - d_th * c_t
        com[seg0 + 1, 0] = knee_x + d_sh * s_s
        com[seg0 + 1, 1] = knee_z - d_sh * c_s
        com[seg0 + 2, 0] = ankle_x + c_f * cst[C_FCX] - s_f * cst[C_FCZ]
        com[seg0 + 2, 1] = ankle_z + s_f * cst[C_FCX] + c_f * cst[C_FCZ]
        pi0 = 2 * leg
        points[pi0, 0] = ankle_x + c_f * cst[C_HX] - s_f * cst[C_HZ]
        points[pi0, 1] = ankle_z + s_f * cst[C_HX] + c_f * cst[C_HZ]
        points[pi0 + 1, 0] = ankle_x + c_f * cst[C_BX] - s_f * cst[C_BZ]
        points[pi0 + 1, 1] = ankle_z + s_f * cst[C_BX] + c_f * cst[C_BZ]

        knee_vx = hip_vx - w_th * (knee_z - hip_z)
        knee_vz = hip_vz + w_th * (knee_x - hip_x)
        ankle_vx = knee_vx - w_sh * (ankle_z - knee_z)
        ankle_vz = knee_vz + w_sh * (ankle_x - knee_x)
        pointv[pi0, 0] = ankle_vx - w_ft * (points[pi0, 1] - ankle_z)
        pointv[pi0, 1] = ankle_vz + w_ft * (points[pi0, 0] - ankle_x)
        pointv[pi0 + 1, 0] = ankle_vx - w_ft * (points[pi0 + 1, 1] - ankle_z)
        pointv[pi0 + 1, 1] = ankle_vz + w_ft * (points[pi0 + 1, 0] - ankle_x)

        for d in range(3):
            seg = seg0 + d
            J[seg, 0, j0] = com[seg, 1] - hip_z
            J[seg, 1, j0] = -(com[seg, 0] - hip_x)
            if d >= 1:
                J[seg, 0, j0 + 1] = -(com[seg, 1] - knee_z)
                J[seg, 1, j0 + 1] = com[seg, 0] - knee_x
            if d >= 2:
                J[seg, 0, j0 + 2] = com[seg, 1] - ankle_z
                J[seg, 1, j0 + 2] = -(com[seg, 0] - ankle_x)

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

    for s in range(7):
        J[s, 0, 2] = -(com[s, 1] - z)
        J[s, 1, 2] = com[s, 0] - x

    # whole-body CoM (for fall checks, reported through out_misc)
    total_m = 0.0
    cx = 0.0
    cy = 0.0
    for s in range(7):
        total_m += masses[s]
        cx += masses[s] * com[s, 0]
        cy += masses[s] * com[s, 1]
    out_misc[0] = cx / total_m
    out_misc[1] = cy / total_m

    # ---- muscles
    l_mtu = l_ref.copy()
    for a in range(n_att):
        phi = phi_all[att_q[a] - 3]
        if att_var[a]:
            l_mtu[att_m[a]] += att_gain[a] * (math.sin(phi - att_pm[a]) - att_sinref[a])
        else:
            l_mtu[att_m[a]] += att_gain[a] * (phi - att_pr[a])

    n_ecc = cst[C_NECC]
    k_shape = cst[C_KSHAPE]
    ecc_slope = cst[C_ECCSLOPE]
    for m in range(n_mus):
        act = y[18 + m]
        lce = y[32 + m]
        strain = (l_mtu[m] - lce) / l_slack[m] - 1.0
        f_se = f_max[m] * (strain / eref[m]) ** 2 if strain > 0.0 else 0.0
        out_fse[m] = f_se
        rel_l = lce / l_opt[m]
        w = width[m]
        over = rel_l - 1.0
        f_pe = f_max[m] * (over / w) ** 2 if over > 0.0 else 0.0
        under = (1.0 - w) - rel_l
        f_be = f_max[m] * (under / (0.5 * w)) ** 2 if under > 0.0 else 0.0
        fl = math.exp(c_shape[m] * (abs(rel_l - 1.0) / w) ** 3)
        if fl < cst[C_FLGUARD]:
            fl = cst[C_FLGUARD]
        a_eff = act if act > cst[C_AGUARD] else cst[C_AGUARD]
        f_req = f_se - f_pe + f_be
        if f_req < 0.0:
            f_req = 0.0
        fv_req = f_req / (a_eff * f_max[m] * fl)
        if fv_req > n_ecc - 1e-9:
            fv_req = n_ecc - 1e-9
        if fv_req <= 1.0:
            v_norm = v_max[m] * (fv_req - 1.0) / (1.0 + k_shape * fv_req)
        else:
            v_norm = v_max[m] * (fv_req - 1.0) / (
                ecc_slope * k_shape * (n_ecc - fv_req) + (n_ecc - 1.0))
            if v_norm > v_max[m]:
                v_norm = v_max[m]
        s_m = stim[m]
        if s_m < 0.0:
            s_m = 0.0
        elif s_m > 1.0:
            s_m = 1.0
        out_dy[18 + m] = (s_m - act) / tau_act[m]
        out_dy[32 + m] = v_norm * l_opt[m]

    # ---- joint torques: muscle + limits + damping
    tau = np.zeros(6)
    for a in range(n_att):
        phi = phi_all[att_q[a] - 3]
        if att_var[a]:
            arm = -att_gain[a] * math.cos(phi - att_pm[a])
        else:
            arm = -att_gain[a]
        tau[att_q[a] - 3] += out_fse[att_m[a]] * arm

    stop_k = cst[C_STOPK]
    stop_s = cst[C_STOPSCALE]
    stop_cap = cst[C_STOPMAX]
    stop_vref = cst[C_STOPVREF]
    damp = cst[C_DAMP]
    for j in range(6):
        phi = y[3 + j]
        phid = y[12 + j]
        tq = -damp * phid
        over = (phi - joint_hi[j]) / stop_s
        if over > 0.0:
            if over > stop_cap:
                over = stop_cap
            gate = 1.0 + (phid if phid > 0.0 else 0.0) / stop_vref
            tq -= stop_k * math.expm1(over) * gate
        under = (joint_lo[j] - phi) / stop_s
        if under > 0.0:
            if under > stop_cap:
                under = stop_cap
            gate = 1.0 + (-phid if phid < 0.0 else 0.0) / stop_vref
            tq += stop_k * math.expm1(under) * gate
        tau[j] = tau[j] + tq

    # ---- contact
    Q = np.zeros(9)
    for i in range(4):
        out_pf[i, 0] = 0.0
        out_pf[i, 1] = 0.0
        px = points[i, 0]
        pz = points[i, 1]
        gh = terrain_h[0]
        for b in range(terrain_x.shape[0] - 1, -1, -1):
            if px >= terrain_x[b]:
                gh = terrain_h[b]
                break
        depth = gh - pz
        if depth <= 0.0:
            continue
        fz = cst[C_KZ] * depth * (1.0 - pointv[i, 1] / cst[C_VRELAX])
        if fz <= 0.0:
            continue
        fx = -cst[C_MU] * fz * math.tanh(pointv[i, 0] / cst[C_VSLIP])
        out_pf[i, 0] = fx
        out_pf[i, 1] = fz
        leg = i // 2
        j0 = 3 + 3 * leg
        Q[0] += fx
        Q[1] += fz
        Q[2] += -fx * (pz - z) + fz * (px - x)
        Q[j0] -= -fx * (pz - hip_z) + fz * (px - hip_x)
        Q[j0 + 1] += -fx * (pz - knee_xy[leg, 1]) + fz * (px - knee_xy[leg, 0])
        Q[j0 + 2] -= -fx * (pz - ankle_xy[leg, 1]) + fz * (px - ankle_xy[leg, 0])

    # ---- assemble M qdd = Q and solve
    M = np.zeros((9, 9))
    for s in range(7):
        ms = masses[s]
        for i in range(9):
            Ji0 = J[s, 0, i]
            Ji1 = J[s, 1, i]
            if Ji0 == 0.0 and Ji1 == 0.0:
                continue
            for jj in range(i, 9):
                M[i, jj] += ms * (Ji0 * J[s, 0, jj] + Ji1 * J[s, 1, jj])
    for i in range(9):
        for jj in range(i, 9):
            M[i, jj] += m_rot[i, jj]
            if jj > i:
                M[jj, i] = M[i, jj]

    g = cst[C_G]
    for s in range(7):
        vx = bias[s, 0] * masses[s]
        vz = (bias[s, 1] + g) * masses[s]
        for i in range(9):
            Q[i] -= vx * J[s, 0, i] + vz * J[s, 1, i]
    for j in range(6):
        Q[3 + j] += tau[j]

    qdd = np.linalg.solve(M, Q)
    for i in range(9):
        out_dy[i] = y[9 + i]
        out_dy[9 + i] = qdd[i]
    for i in range(out_dy.shape[0]):
        if not math.isfinite(out_dy[i]):
            for j in range(out_dy.shape[0]):
                out_dy[j] = 1e10
            return out_dy
    return out_dy
