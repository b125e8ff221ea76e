#!/usr/bin/env python3
"""Evaluate a batch of hand-picked parameter variants in parallel."""

import json
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

sys.path.insert(0, "src")

from nmwalk import load_config
from nmwalk.analysis import AnalysisError, analyze_trace
from nmwalk.config import RunConfig
from nmwalk.control import ControlParams
from nmwalk.simulate import SimulationError, WalkerSim, TERMINATION_COMPLETED

_SIM = None


def _init(config_data):
    global _SIM
    _SIM = WalkerSim(RunConfig(config_data))


def _run(item):
    name, d = item
    params = ControlParams.from_dict(d)
    try:
        tr = _SIM.rollout(params, t_max=12.0)
    except Exception as e:
        return name, f"error {e}"
    dist = float(tr.com[-1, 0] - tr.com[0, 0])
    hs = tr.events.merged_heel_strikes().size
    if tr.termination != TERMINATION_COMPLETED:
        return name, f"fell t={tr.fall_time:.2f} dist={dist:.2f} steps={hs}"
    try:
        an = analyze_trace(tr)
        return name, (f"WALKED v={an.speed:.2f} sl={an.step_length:.2f} "
                      f"r2={an.ip.r2:.3f} spread={an.stability.spread*1000:.1f}mm "
                      f"steady={an.stability.steady}")
    except (AnalysisError, SimulationError) as e:
        return name, f"completed dist={dist:.2f} steps={hs} (analysis: {e})"


def main():
    cfg = load_config()
    base = cfg.data["controller"]["params_default"]
    variants = {}

    def add(name, **kw):
        d = dict(base)
        d.update(kw)
        variants[name] = d

    add("base")
    add("sol_hi", gain_sol=1.8)
    add("sol_hi_gas_lo", gain_sol=1.8, gain_gas=0.7)
    add("kp_hi", bal_kp=10.0, bal_kd=0.6)
    add("kp_hi_sol_hi", bal_kp=10.0, bal_kd=0.6, gain_sol=1.8)
    add("lean_lo", lean_ref=0.03)
    add("lean_lo_kp_hi", lean_ref=0.03, bal_kp=10.0, bal_kd=0.6)
    add("hfl_hi", gain_hfl=1.8)
    add("vas_hi", gain_vas=3.0)
    add("slowdown", gain_sol=0.9, gain_gas=0.8, lean_ref=0.03)
    add("combo1", gain_sol=1.6, gain_gas=0.9, lean_ref=0.04, bal_kp=9.0, bal_kd=0.6, gain_hfl=1.5)
    add("combo2", gain_sol=1.6, gain_gas=0.9, lean_ref=0.04, bal_kp=9.0, bal_kd=0.6,
        gain_hfl=1.5, bal_ham=0.8, bal_glu=1.3)
    add("combo3", gain_sol=1.4, lean_ref=0.05, bal_kp=12.0, bal_kd=0.7, gain_hfl=1.5, gain_ta=2.5)

    with ProcessPoolExecutor(max_workers=2, initializer=_init,
                             initargs=(cfg.data,)) as pool:
        for name, result in pool.map(_run, variants.items()):
            print(f"{name:16s} {result}", flush=True)


if __name__ == "__main__":
    main()
