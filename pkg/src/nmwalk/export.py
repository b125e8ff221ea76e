"""Data export and figure generation.

Every figure the toolkit emits is backed by a plain data file (CSV or JSON)
written next to it; plots are derivable artifacts, never the only record.
Trace CSVs use 17 significant digits so binary doubles round-trip exactly.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

import numpy as np

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .analysis import GaitAnalysis
from .body import NQ
from .contact import Terrain
from .control import ControlParams
from .muscles import MUSCLE_NAMES
from .simulate import GaitEvents, GaitTrace

_FMT = "%.17g"

Q_COLS = ["q_x", "q_y", "q_pitch",
          "q_hip_l", "q_knee_l", "q_ankle_l",
          "q_hip_r", "q_knee_r", "q_ankle_r"]
_MUSCLE_COLS = [f"{n.lower()}_{s}" for s in ("l", "r") for n in MUSCLE_NAMES]


def trace_columns() -> list[str]:
    """Fixed, documented column order of a trace CSV."""
    cols = ["t"]
    cols += Q_COLS
    cols += ["d" + c for c in Q_COLS]
    for prefix in ("act", "lce", "stim", "fmus"):
        cols += [f"{prefix}_{m}" for m in _MUSCLE_COLS]
    cols += ["grf_l_x", "grf_l_z", "grf_r_x", "grf_r_z",
             "cop_l_x", "cop_l_y", "cop_r_x", "cop_r_y",
             "com_x", "com_y", "comv_x", "comv_y"]
    return cols


def trace_matrix(trace: GaitTrace) -> np.ndarray:
    n = trace.n_samples
    blocks = [trace.t[:, None], trace.q, trace.qd,
              trace.act, trace.lce, trace.stim, trace.muscle_force,
              trace.grf.reshape(n, 4), trace.cop.reshape(n, 4),
              trace.com, trace.com_vel]
    return np.hstack(blocks)


def write_trace_csv(trace: GaitTrace, path: str | Path) -> None:
    header = ",".join(trace_columns())
    np.savetxt(path, trace_matrix(trace), fmt=_FMT, delimiter=",",
               header=header, comments="")


def write_trace_sidecar(trace: GaitTrace, path: str | Path) -> None:
    """Events and metadata that the CSV cannot carry."""
    doc = {
        "termination": trace.termination,
        "fall_time": trace.fall_time,
        "heel_strikes": [trace.events.heel_strikes[0].tolist(),
                         trace.events.heel_strikes[1].tolist()],
        "toe_offs": [trace.events.toe_offs[0].tolist(),
                     trace.events.toe_offs[1].tolist()],
        "params": trace.params.to_dict() if trace.params else None,
        "terrain": list(map(list, trace.terrain.breakpoints)),
        "meta": trace.meta,
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def read_trace(csv_path: str | Path, sidecar_path: str | Path) -> GaitTrace:
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    doc = json.loads(Path(sidecar_path).read_text())
    n = data.shape[0]
    i = 1
    q = data[:, i:i + NQ]; i += NQ
    qd = data[:, i:i + NQ]; i += NQ
    act = data[:, i:i + 14]; i += 14
    lce = data[:, i:i + 14]; i += 14
    stim = data[:, i:i + 14]; i += 14
    fmus = data[:, i:i + 14]; i += 14
    grf = data[:, i:i + 4].reshape(n, 2, 2); i += 4
    cop = data[:, i:i + 4].reshape(n, 2, 2); i += 4
    com = data[:, i:i + 2]; i += 2
    comv = data[:, i:i + 2]; i += 2
    events = GaitEvents(
        (np.asarray(doc["heel_strikes"][0]), np.asarray(doc["heel_strikes"][1])),
        (np.asarray(doc["toe_offs"][0]), np.asarray(doc["toe_offs"][1])))
    params = ControlParams.from_dict(doc["params"]) if doc.get("params") else None
    return GaitTrace(t=data[:, 0], q=q, qd=qd, act=act, lce=lce, stim=stim,
                     muscle_force=fmus, grf=grf, cop=cop, com=com, com_vel=comv,
                     termination=doc["termination"], fall_time=doc["fall_time"],
                     terrain=Terrain(tuple(map(tuple, doc["terrain"]))),
                     params=params, events=events, meta=doc["meta"])


def write_analysis_json(analysis: GaitAnalysis, path: str | Path,
                        extra: dict[str, Any] | None = None) -> None:
    doc = analysis.to_dict()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2))


# ------------------------------------------------------------------ IP figure


def ip_line_data(trace: GaitTrace, analysis: GaitAnalysis) -> np.ndarray:
    """Force lines in the CoM frame over the single-support window.

    Rows: (cop_x_rel, cop_y_rel, f_x, f_z) resampled like the regression.
    """
    w = analysis.stride_window
    sl = slice(w.ss0, w.ss1 + 1)
    leg = w.leg
    rel = trace.cop[sl, leg, :] - trace.com[sl]
    F = trace.grf[sl, leg, :]
    ok = ~np.isnan(rel[:, 0])
    return np.hstack([rel[ok], F[ok]])


def save_ip_figure(trace: GaitTrace, analysis: GaitAnalysis,
                   out_png: str | Path, out_csv: str | Path) -> None:
    data = ip_line_data(trace, analysis)
    np.savetxt(out_csv, data, fmt=_FMT, delimiter=",",
               header="cop_x_rel,cop_y_rel,f_x,f_z", comments="")
    fig, ax = plt.subplots(figsize=(5, 6))
    for row in data[:: max(1, len(data) // 40)]:
        cx, cy, fx, fz = row
        norm = math.hypot(fx, fz)
        if norm == 0:
            continue
        scale = 2.2 / norm
        ax.plot([cx, cx + fx * scale], [cy, cy + fz * scale],
                color="tab:gray", lw=0.6)
    if math.isfinite(analysis.ip.r2):
        ax.plot(0.0, analysis.ip.height, "r+", ms=12,
                label=f"intersection h={analysis.ip.height:.2f} m")
    ax.plot(0.0, 0.0, "ko", label="CoM")
    ax.set_xlabel("x - x_com [m]")
    ax.set_ylabel("y - y_com [m]")
    r2txt = f"{analysis.ip.r2:.3f}" if math.isfinite(analysis.ip.r2) else "-inf"
    ax.set_title(f"GRF lines in the CoM frame (R^2 = {r2txt})")
    ax.legend(loc="lower right")
    ax.set_xlim(-1.2, 1.2)
    ax.set_ylim(-1.3, 2.2)
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)


# ------------------------------------------------------------- stance figure


def save_stance_figure(trace: GaitTrace, analysis: GaitAnalysis,
                       out_png: str | Path, out_csv: str | Path) -> None:
    """CoP relative to CoM, CoM height, and GRFs over the analyzed stride."""
    w = analysis.stride_window
    sl = slice(w.i0, w.i1 + 1)
    leg = w.leg
    t = trace.t[sl]
    cop_rel = trace.cop[sl, leg, 0] - trace.com[sl, 0]
    rows = np.column_stack([t, cop_rel, trace.com[sl, 1],
                            trace.grf[sl, leg, 1], trace.grf[sl, leg, 0]])
    np.savetxt(out_csv, rows, fmt=_FMT, delimiter=",",
               header="t,cop_x_rel,com_y,grf_z,grf_x", comments="")
    fig, axes = plt.subplots(4, 1, figsize=(7, 9), sharex=True)
    ss = (trace.t[w.ss0], trace.t[w.ss1])
    titles = ["CoP x relative to CoM [m]", "CoM height [m]",
              "vertical GRF [N]", "horizontal GRF [N]"]
    for ax, col, title in zip(axes, rows[:, 1:].T, titles):
        ax.plot(t, col, lw=1.2)
        ax.axvspan(ss[0], ss[1], color="tab:blue", alpha=0.08,
                   label="single support")
        ax.set_ylabel(title)
    axes[0].legend(loc="upper right")
    axes[-1].set_xlabel("t [s]")
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)


# ------------------------------------------------------------ scatter figure


def save_robustness_figure(rows: list[dict[str, Any]], out_png: str | Path,
                           default_row: dict[str, Any] | None = None) -> None:
    """Max step-down height and collision fraction against R^2; the region
    above the 0.6 threshold is shaded as the focused-force regime."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4.2))
    r2 = np.array([r["r2"] for r in rows], dtype=float)
    h = np.array([math.nan if r["max_h_cm"] is None else r["max_h_cm"]
                  for r in rows], dtype=float)
    cf = np.array([r["cf"] for r in rows], dtype=float)
    finite = np.isfinite(r2)
    if rows and np.any(finite):
        r2p = np.where(finite, r2, np.min(r2[finite]) - 1.0)
    else:
        r2p = r2
    for ax, val, label in ((axes[0], h, "max step-down height [cm]"),
                           (axes[1], cf, "collision fraction")):
        lo = float(np.nanmin(r2p)) - 0.5 if len(rows) and np.any(finite) else -1.0
        hi = max(1.05, float(np.nanmax(r2p)) + 0.1) if len(rows) and np.any(finite) else 1.05
        ax.axvspan(0.6, hi, color="tab:green", alpha=0.12)
        ax.axvspan(lo, 0.6, color="tab:blue", alpha=0.08)
        ax.scatter(r2p, val, s=18, c="tab:blue", zorder=3)
        if default_row is not None:
            dval = default_row["max_h_cm"] if label.startswith("max") else default_row["cf"]
            ax.scatter([default_row["r2"]], [dval], s=48, c="black", zorder=4,
                       label="default gait")
            ax.legend(loc="best")
        ax.axvline(0.6, color="k", lw=0.8, ls="--")
        ax.set_xlabel("R^2")
        ax.set_ylabel(label)
        ax.set_xlim(lo, hi)
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)


def write_robustness_csv(rows: list[dict[str, Any]], path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write("gait_id,r2,max_h_cm,cf\n")
        for r in rows:
            h = "" if r["max_h_cm"] is None else r["max_h_cm"]
            fh.write(f"{r['gait_id']},{r['r2']!r},{h},{r['cf']!r}\n")


# ------------------------------------------------------------------ animation


def render_frames(trace: GaitTrace, model, out_dir: str | Path,
                  fps: float = 25.0, grf_scale: float = 5e-4) -> int:
    """Stick-figure frames with GRF arrows; returns the number of frames."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if trace.n_samples == 0:
        return 0
    fs = trace.meta.get("sample_rate", 1000.0)
    step = max(1, int(round(fs / fps)))
    idxs = range(0, trace.n_samples, step)
    n_frames = 0
    for fi, i in enumerate(idxs):
        k = model.kinematics(trace.q[i])
        fig, ax = plt.subplots(figsize=(5, 4.2))
        com_x = trace.com[i, 0]
        xs = np.linspace(com_x - 1.4, com_x + 1.4, 160)
        ax.plot(xs, trace.terrain.heights(xs), color="k", lw=1.0)
        trunk_top = k.trunk_com + (k.trunk_com - k.hip) * (0.45 / 0.35)
        ax.plot([k.hip[0], trunk_top[0]], [k.hip[1], trunk_top[1]],
                lw=3.0, color="tab:purple")
        for leg, color in ((0, "tab:red"), (1, "tab:blue")):
            ax.plot([k.hip[0], k.knee[leg][0], k.ankle[leg][0]],
                    [k.hip[1], k.knee[leg][1], k.ankle[leg][1]],
                    lw=2.2, color=color)
            heel, ball = k.points[2 * leg], k.points[2 * leg + 1]
            ax.plot([heel[0], ball[0], k.ankle[leg][0], heel[0]],
                    [heel[1], ball[1], k.ankle[leg][1], heel[1]],
                    lw=1.6, color=color)
            fx, fz = trace.grf[i, leg]
            if fz > 0.0 and not np.isnan(trace.cop[i, leg, 0]):
                cx, cy = trace.cop[i, leg]
                ax.arrow(cx, cy, fx * grf_scale, fz * grf_scale,
                         head_width=0.03, color="tab:green", lw=1.0)
        ax.plot(*trace.com[i], "ko", ms=4)
        ax.set_xlim(com_x - 1.4, com_x + 1.4)
        ax.set_ylim(-0.35, 2.1)
        ax.set_aspect("equal")
        ax.set_title(f"t = {trace.t[i]:.2f} s")
        fig.tight_layout()
        fig.savefig(out / f"frame_{fi:05d}.png", dpi=90)
        plt.close(fig)
        n_frames += 1
    return n_frames
