"""Gait analysis: force-line intersection, collision geometry, stability margins
and scalar gait descriptors.

The intersection point is sought on the gravity-aligned vertical axis through
the centre of mass. For a candidate height h, each sample's predicted force
direction points from the centre of pressure toward (0, h) in the CoM-centred
frame; the coefficient of determination compares measured and predicted force
angles. It is 1 when all force lines meet in one point on the axis, has no
lower bound, and degenerates to -inf when all force vectors are parallel
(the angle variance in the denominator vanishes).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .simulate import GaitTrace, StrideWindow, steady_stride

R2_IP_THRESHOLD = 0.6
STEADINESS_LIMIT = 0.0075         # max spread of 6 margins of stability [m]
MIN_WINDOW_SAMPLES = 10
IP_SEARCH_RANGE = (-2.0, 5.0)     # candidate heights above the CoM [m]
IP_RESOLUTION = 1e-4
IP_RESAMPLE = 100


class AnalysisError(ValueError):
    pass


@dataclass
class IPResult:
    height: float                 # intersection height above the CoM [m]
    r2: float                     # -inf sentinel in the degenerate case
    n_samples: int
    degenerate_parallel: bool


@dataclass
class CollisionResult:
    fraction: float
    phi: np.ndarray               # signed collision angle per sample [rad]
    theta: np.ndarray             # |GRF angle from vertical|
    lam: np.ndarray               # |velocity angle from horizontal|
    violations: int               # samples with |phi| > theta + lam (tolerance)


@dataclass
class StabilityResult:
    margins: np.ndarray           # margin of stability per heel strike [m]
    spread: float                 # max - min over the 6 values
    steady: bool


@dataclass
class GaitAnalysis:
    ip: IPResult
    collision: CollisionResult
    stability: StabilityResult
    speed: float
    step_length: float
    stride_window: StrideWindow

    def to_dict(self) -> dict[str, Any]:
        return {
            "ip_height": self.ip.height,
            "r2": self.ip.r2 if np.isfinite(self.ip.r2) else "-inf",
            "ip_degenerate": self.ip.degenerate_parallel,
            "classification": classify_ip(self.ip.r2),
            "collision_fraction": self.collision.fraction,
            "margins_of_stability": [float(m) for m in self.stability.margins],
            "mos_spread": self.stability.spread,
            "steady": self.stability.steady,
            "speed": self.speed,
            "step_length": self.step_length,
        }


# ------------------------------------------------------------------ IP / R^2


def _force_angles(forces: np.ndarray) -> np.ndarray:
    """Angle of each force from the vertical, positive tilting forward."""
    return np.arctan2(forces[:, 0], forces[:, 1])


def _predicted_angles(rel_cop: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Angles of lines from each CoP to the axis point (0, h); h may be a grid."""
    h = np.atleast_1d(np.asarray(h, dtype=float))
    vx = -rel_cop[None, :, 0]
    vy = h[:, None] - rel_cop[None, :, 1]
    return np.arctan2(vx, vy)


def _r2_for(theta: np.ndarray, theta_hat: np.ndarray, ss_tot: float) -> np.ndarray:
    ss_res = np.sum((theta[None, :] - theta_hat) ** 2, axis=1)
    return 1.0 - ss_res / ss_tot


def resample_uniform(arr: np.ndarray, n: int) -> np.ndarray:
    """Linear resampling of (T, ...) samples onto n uniform positions."""
    T = arr.shape[0]
    if T == n:
        return arr.copy()
    x_old = np.linspace(0.0, 1.0, T)
    x_new = np.linspace(0.0, 1.0, n)
    flat = arr.reshape(T, -1)
    out = np.empty((n, flat.shape[1]))
    for j in range(flat.shape[1]):
        out[:, j] = np.interp(x_new, x_old, flat[:, j])
    return out.reshape((n,) + arr.shape[1:])


def ip_regression(forces: np.ndarray, cop: np.ndarray, com: np.ndarray,
                  *, resample: int = IP_RESAMPLE) -> IPResult:
    """Best-focus intersection height and its R^2 for one single-support window.

    ``forces``, ``cop`` and ``com`` are (n, 2) arrays over the window; the CoP
    is shifted into the CoM-centred, gravity-aligned frame internally.
    """
    forces = np.asarray(forces, dtype=float)
    cop = np.asarray(cop, dtype=float)
    com = np.asarray(com, dtype=float)
    if forces.ndim != 2 or forces.shape[0] < MIN_WINDOW_SAMPLES:
        raise AnalysisError(f"need at least {MIN_WINDOW_SAMPLES} samples")
    if not (forces.shape == cop.shape == com.shape):
        raise AnalysisError("forces, cop and com must share shape (n, 2)")

    stacked = np.concatenate([forces, cop - com], axis=1)
    stacked = resample_uniform(stacked, resample)
    f = stacked[:, :2]
    rel = stacked[:, 2:]

    theta = _force_angles(f)
    ss_tot = float(np.sum((theta - theta.mean()) ** 2))
    if ss_tot == 0.0:
        return IPResult(height=math.nan, r2=-math.inf,
                        n_samples=resample, degenerate_parallel=True)

    lo, hi = IP_SEARCH_RANGE
    grid = np.linspace(lo, hi, 701)
    r2 = _r2_for(theta, _predicted_angles(rel, grid), ss_tot)
    i = int(np.argmax(r2))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, grid.size - 1)]

    # golden-section refinement of the (locally unimodal) grid optimum
    gr = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - gr * (b - a)
    d = a + gr * (b - a)
    fc = float(_r2_for(theta, _predicted_angles(rel, c), ss_tot)[0])
    fd = float(_r2_for(theta, _predicted_angles(rel, d), ss_tot)[0])
    while (b - a) > IP_RESOLUTION:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - gr * (b - a)
            fc = float(_r2_for(theta, _predicted_angles(rel, c), ss_tot)[0])
        else:
            a, c, fc = c, d, fd
            d = a + gr * (b - a)
            fd = float(_r2_for(theta, _predicted_angles(rel, d), ss_tot)[0])
    h_best = 0.5 * (a + b)
    r2_best = float(_r2_for(theta, _predicted_angles(rel, np.array([h_best])), ss_tot)[0])
    return IPResult(height=float(h_best), r2=r2_best, n_samples=resample,
                    degenerate_parallel=False)


def classify_ip(r2: float) -> str:
    """'ip' strictly above the 0.6 threshold, 'non_ip' otherwise (incl. -inf)."""
    return "ip" if r2 > R2_IP_THRESHOLD else "non_ip"


# ------------------------------------------------------------------ collision


def collision_angle(force: np.ndarray, velocity: np.ndarray) -> float:
    """Signed angle between velocity and the perpendicular of the force.

    Zero for the rolling-wheel geometry (force orthogonal to the CoM motion),
    +/- pi/2 when force and velocity are collinear.
    """
    f = np.asarray(force, dtype=float)
    v = np.asarray(velocity, dtype=float)
    nf = float(np.hypot(f[0], f[1]))
    nv = float(np.hypot(v[0], v[1]))
    if nf == 0.0 or nv == 0.0:
        raise AnalysisError("collision angle undefined for zero-magnitude inputs")
    dot = float(f @ v)
    cross = abs(float(f[0] * v[1] - f[1] * v[0]))
    # pi/2 - arccos equals arcsin(dot/(|f||v|)) but stays exact at the
    # perpendicular and collinear boundaries
    return 0.5 * math.pi - math.atan2(cross, dot)


def collision_fraction(forces: np.ndarray, velocities: np.ndarray,
                       *, eps: float = 1e-9) -> CollisionResult:
    """Magnitude-weighted ratio of actual to potential collision over stance.

    Weights are |F||v| per sample; potential collision is the force angle from
    vertical plus the velocity angle from horizontal. Samples with vanishing
    force or velocity are excluded.
    """
    F = np.asarray(forces, dtype=float)
    V = np.asarray(velocities, dtype=float)
    if F.shape != V.shape or F.ndim != 2:
        raise AnalysisError("forces and velocities must share shape (n, 2)")
    nf = np.hypot(F[:, 0], F[:, 1])
    nv = np.hypot(V[:, 0], V[:, 1])
    keep = (nf > eps) & (nv > eps)
    if int(keep.sum()) < MIN_WINDOW_SAMPLES:
        raise AnalysisError(f"need at least {MIN_WINDOW_SAMPLES} loaded samples")
    F, V, nf, nv = F[keep], V[keep], nf[keep], nv[keep]
    dot = np.einsum("ij,ij->i", F, V)
    cross = np.abs(F[:, 0] * V[:, 1] - F[:, 1] * V[:, 0])
    phi = 0.5 * np.pi - np.arctan2(cross, dot)
    # angles to the vertical/horizontal LINE, so they stay in [0, pi/2]
    theta = np.arctan2(np.abs(F[:, 0]), np.abs(F[:, 1]))
    lam = np.arctan2(np.abs(V[:, 1]), np.abs(V[:, 0]))
    w = nf * nv
    denom = float(np.sum(w * (theta + lam)))
    if denom == 0.0:
        raise AnalysisError("potential collision is zero everywhere")
    cf = float(np.sum(w * np.abs(phi)) / denom)
    violations = int(np.sum(np.abs(phi) > theta + lam + 1e-9))
    return CollisionResult(fraction=cf, phi=phi, theta=theta, lam=lam,
                           violations=violations)


# ------------------------------------------------------------------ stability


def margin_of_stability(com_pos: np.ndarray, com_vel: np.ndarray,
                        boundary_x: float, *, ground_height: float = 0.0,
                        g: float = 9.81) -> float:
    """Extrapolated-CoM margin: boundary minus (x + vx/omega0).

    omega0 = sqrt(g / l) with l the CoM height above the ground at the event.
    Positive margins mean the extrapolated CoM lies inside the base of support.
    """
    l = float(com_pos[1]) - ground_height
    if l <= 0.0:
        raise AnalysisError("CoM height above ground must be positive")
    omega0 = math.sqrt(g / l)
    xcom = float(com_pos[0]) + float(com_vel[0]) / omega0
    return float(boundary_x) - xcom


def steadiness(margins: np.ndarray) -> StabilityResult:
    """Spread of exactly 6 consecutive heel-strike margins; steady iff < 7.5 mm."""
    m = np.asarray(margins, dtype=float)
    if m.shape != (6,):
        raise AnalysisError("steadiness is defined on exactly 6 margins")
    spread = float(m.max() - m.min())
    return StabilityResult(margins=m, spread=spread, steady=spread < STEADINESS_LIMIT)


# ------------------------------------------------------------------ descriptors


def gait_descriptors(trace: GaitTrace, *, n_strides: int = 6) -> tuple[float, float]:
    """(mean speed, mean step length) over the last ``n_strides`` strides."""
    if trace.stride_count() < n_strides:
        raise AnalysisError(f"need >= {n_strides} strides, have {trace.stride_count()}")
    merged = trace.events.merged_heel_strikes()
    n_steps = 2 * n_strides
    window = merged[-(n_steps + 1):]
    fs = trace.meta.get("sample_rate", 1000.0)
    i0 = int(round(float(window[0]) * fs))
    i1 = int(round(float(window[-1]) * fs))
    speed = (trace.com[i1, 0] - trace.com[i0, 0]) / (trace.t[i1] - trace.t[i0])

    # step length: distance between successive (contralateral) heel positions
    heel_x = []
    for t_ev in window:
        leg = 0 if np.any(np.isclose(trace.events.heel_strikes[0], t_ev)) else 1
        i = int(round(float(t_ev) * fs))
        heel_x.append(_heel_x(trace, i, leg))
    steps = np.diff(np.asarray(heel_x))
    return float(speed), float(np.mean(np.abs(steps)))


def _heel_x(trace: GaitTrace, i: int, leg: int) -> float:
    """Heel x of one leg at sample i, recomputed from the state."""
    q = trace.q[i]
    import math as _m
    pitch = q[2]
    meta = trace.meta
    # geometry comes from the attached meta when exported; recompute via model-free
    # chain using the standard segment table lengths stored in meta if present.
    a = meta.get("anthro")
    if a is None:
        raise AnalysisError("trace lacks anthropometry metadata for heel positions")
    j0 = 3 if leg == 0 else 6
    a_th = pitch + _m.pi - q[j0]
    a_sh = a_th - _m.pi + q[j0 + 1]
    a_ft = a_sh + 0.5 * _m.pi - q[j0 + 2]
    hip_x = q[0] + a["trunk_above_hip"] * _m.sin(pitch)
    knee_x = hip_x + a["l_thigh"] * _m.sin(a_th)
    ankle_x = knee_x + a["l_shank"] * _m.sin(a_sh)
    return ankle_x + a["heel"][0] * _m.cos(a_ft) - a["heel"][1] * _m.sin(a_ft)


# ------------------------------------------------------------------ trace-level


def stride_margins(trace: GaitTrace, n_events: int = 6) -> np.ndarray:
    """Margins of stability at the last ``n_events`` heel strikes."""
    merged = trace.events.merged_heel_strikes()
    if merged.size < n_events:
        raise AnalysisError(f"need >= {n_events} heel strikes")
    fs = trace.meta.get("sample_rate", 1000.0)
    g = trace.meta.get("gravity", 9.81)
    a = trace.meta.get("anthro")
    out = []
    for t_ev in merged[-n_events:]:
        i = int(round(float(t_ev) * fs))
        leg = 0 if np.any(np.isclose(trace.events.heel_strikes[0], t_ev)) else 1
        ball_x = _ball_x(trace, i, leg)
        gh = trace.terrain.height_at(ball_x)    # ground under the landing foot
        out.append(margin_of_stability(trace.com[i], trace.com_vel[i], ball_x,
                                       ground_height=gh, g=g))
    return np.asarray(out)


def _ball_x(trace: GaitTrace, i: int, leg: int) -> float:
    q = trace.q[i]
    import math as _m
    a = trace.meta.get("anthro")
    if a is None:
        raise AnalysisError("trace lacks anthropometry metadata")
    pitch = q[2]
    j0 = 3 if leg == 0 else 6
    a_th = pitch + _m.pi - q[j0]
    a_sh = a_th - _m.pi + q[j0 + 1]
    a_ft = a_sh + 0.5 * _m.pi - q[j0 + 2]
    hip_x = q[0] + a["trunk_above_hip"] * _m.sin(pitch)
    knee_x = hip_x + a["l_thigh"] * _m.sin(a_th)
    ankle_x = knee_x + a["l_shank"] * _m.sin(a_sh)
    return ankle_x + a["ball"][0] * _m.cos(a_ft) - a["ball"][1] * _m.sin(a_ft)


def analyze_trace(trace: GaitTrace) -> GaitAnalysis:
    """Full per-gait analysis on a completed trace.

    Uses the last steady stride: IP regression over its single-support
    sub-range, collision fraction over the stride's loaded samples, margins of
    stability and the steadiness flag over the last six heel strikes, and the
    scalar descriptors over the last six strides.
    """
    window = steady_stride(trace)
    leg = window.leg
    sl = slice(window.ss0, window.ss1 + 1)
    forces = trace.grf[sl, leg, :]
    cop = trace.cop[sl, leg, :]
    com = trace.com[sl]
    ok = ~np.isnan(cop[:, 0])
    ip = ip_regression(forces[ok], cop[ok], com[ok])

    stride_sl = slice(window.i0, window.i1 + 1)
    cf = collision_fraction(trace.grf_total()[stride_sl], trace.com_vel[stride_sl])

    margins = stride_margins(trace, 6)
    stab = steadiness(margins)
    speed, step_len = gait_descriptors(trace)
    return GaitAnalysis(ip=ip, collision=cf, stability=stab, speed=speed,
                        step_length=step_len, stride_window=window)
