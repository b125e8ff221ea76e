#!/usr/bin/env python3
"""Rollout diagnostics used while tuning the default gait."""

import argparse
import json
import sys

import numpy as np

sys.path.insert(0, "src")

from nmwalk import load_config
from nmwalk.control import ControlParams
from nmwalk.contact import Terrain
from nmwalk.simulate import WalkerSim


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--t", type=float, default=4.0)
    ap.add_argument("--every", type=int, default=50)
    ap.add_argument("--params", type=str, default=None)
    ap.add_argument("--overrides", type=str, default=None, help="JSON dict of config overrides")
    args = ap.parse_args()

    cfg = load_config()
    if args.overrides:
        ov = json.loads(args.overrides)
        def deep(dst, src):
            for k, v in src.items():
                if isinstance(v, dict) and isinstance(dst.get(k), dict):
                    deep(dst[k], v)
                else:
                    dst[k] = v
        deep(cfg.data, ov)
    sim = WalkerSim(cfg)
    params = sim.default_params()
    if args.params:
        params = ControlParams.from_dict(json.loads(args.params))

    tr = sim.rollout(params, Terrain.flat(), t_max=args.t)
    print(f"termination={tr.termination} fall={tr.fall_time} t_end={tr.t[-1]:.2f}")
    hsL, hsR = tr.events.heel_strikes
    print(f"heel strikes L={np.round(hsL,2)} R={np.round(hsR,2)}")
    names = ["SOL", "TA", "GAS", "VAS", "HAM", "GLU", "HFL"]
    for i in range(0, tr.n_samples, args.every):
        q = tr.q[i]
        sL = " ".join(f"{n}{tr.stim[i, j]:.2f}" for j, n in enumerate(names))
        print(f"t={tr.t[i]:5.2f} pitch={np.degrees(q[2]):6.1f} x={tr.com[i,0]:6.2f} "
              f"y={tr.com[i,1]:.2f} vx={tr.com_vel[i,0]:5.2f} "
              f"L(h{np.degrees(q[3]):4.0f} k{np.degrees(q[4]):4.0f} a{np.degrees(q[5]):4.0f})"
              f" R(h{np.degrees(q[6]):4.0f} k{np.degrees(q[7]):4.0f} a{np.degrees(q[8]):4.0f}) "
              f"FzL={tr.grf[i,0,1]:6.0f} FzR={tr.grf[i,1,1]:6.0f} | L: {sL}")
    if tr.termination == "completed" and tr.stride_count() >= 8:
        from nmwalk.analysis import analyze_trace
        try:
            an = analyze_trace(tr)
            print(json.dumps(an.to_dict(), indent=1))
        except Exception as e:
            print("analysis failed:", e)


if __name__ == "__main__":
    main()
