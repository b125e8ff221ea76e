#!/usr/bin/env python3
"""Meta-tuning: optimize the 12 control parameters together with the fixed
reflex-circuit constants, to pick good shipped defaults for both."""

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

sys.path.insert(0, "src")

from nmwalk import load_config
from nmwalk.analysis import AnalysisError, analyze_trace
from nmwalk.cmaes import CMAES
from nmwalk.config import RunConfig
from nmwalk.control import ControlParams, PARAM_NAMES
from nmwalk.simulate import SimulationError, WalkerSim, TERMINATION_COMPLETED

# (name, lo, hi) for the circuit constants appended to the 12 params
CONST_SPACE = [
    ("swing_boost_hfl", 0.05, 0.8),
    ("swing_suppress_glu", 0.05, 0.8),
    ("ham_swing_force_gain", 0.1, 2.0),
    ("glu_swing_force_gain", 0.1, 2.0),
    ("swing_lean_gain", 0.2, 4.0),
    ("vas_preswing_suppression", 0.2, 3.0),
    ("sol_ta_inhibition", 0.05, 1.0),
    ("hfl_length_offset", 0.45, 0.75),
    ("ham_hfl_suppression_offset", 0.7, 1.1),
    ("ta_length_offset", 0.55, 0.85),
]

_BASE = None
_TMAX = 12.0


def decode(x, base_cfg):
    """x in [0,1]^(12+k) -> (ControlParams, config dict with constants set)."""
    cfg = json.loads(json.dumps(base_cfg))     # deep copy
    ctl = cfg["controller"]
    from nmwalk.control import ParamSpace
    space = ParamSpace.from_config(ctl)
    params, _ = space.decode(np.asarray(x[:12]))
    for (name, lo, hi), xi in zip(CONST_SPACE, x[12:]):
        ctl[name] = lo + float(np.clip(xi, 0, 1)) * (hi - lo)
    ctl["params_default"] = params.to_dict()
    return params, cfg


def _init(base_cfg, tmax):
    global _BASE, _TMAX
    _BASE = base_cfg
    _TMAX = tmax


def _cost(x):
    params, cfg = decode(x, _BASE)
    try:
        sim = WalkerSim(RunConfig(cfg))
        tr = sim.rollout(params, t_max=_TMAX)
    except Exception:
        return 2e6, {}
    dist = float(tr.com[-1, 0] - tr.com[0, 0])
    if tr.termination != TERMINATION_COMPLETED:
        return 1e6 - dist, {"dist": round(dist, 2)}
    try:
        an = analyze_trace(tr)
    except (AnalysisError, SimulationError):
        return 1e3 + 10.0 + max(0, 8 - tr.stride_count()), {"dist": round(dist, 2)}
    if not an.stability.steady:
        return 1e3 + an.stability.spread, {"spread": round(an.stability.spread, 4)}
    r2 = an.ip.r2 if np.isfinite(an.ip.r2) else -10.0
    J = (abs(an.speed - 1.36) + 0.7 * abs(an.step_length - 0.77)
         + 1.5 * max(0.0, abs(r2 - 0.83) - 0.05)
         + 8.0 * max(0.0, an.stability.spread - 0.004))
    return J, {"v": round(an.speed, 3), "sl": round(an.step_length, 3),
               "r2": round(r2, 3), "spread": round(an.stability.spread, 4)}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--budget", type=int, default=12000)
    ap.add_argument("--seed", type=int, default=21)
    ap.add_argument("--sigma", type=float, default=0.12)
    ap.add_argument("--tmax", type=float, default=12.0)
    ap.add_argument("--workers", type=int, default=2)
    ap.add_argument("--start", type=str, default="scripts/best_params.json")
    args = ap.parse_args()

    cfg = load_config()
    base = cfg.data
    ctl = base["controller"]
    doc = json.loads(Path(args.start).read_text())
    if "x" in doc:
        x0 = np.clip(np.array(doc["x"], dtype=float), 0.0, 1.0)
    else:
        start_params = doc["params"] if "params" in doc else doc
        from nmwalk.control import ParamSpace
        space = ParamSpace.from_config(ctl)
        x0 = list(space.encode(ControlParams.from_dict(start_params)))
        for name, lo, hi in CONST_SPACE:
            x0.append((float(ctl[name]) - lo) / (hi - lo))
        x0 = np.clip(np.array(x0), 0.0, 1.0)

    es = CMAES(x0, args.sigma, seed=args.seed, bounds=(0.0, 1.0))
    best = 1e18
    out = Path("scripts/best_meta.json")
    t0 = time.time()
    with ProcessPoolExecutor(max_workers=args.workers, initializer=_init,
                             initargs=(base, args.tmax)) as pool:
        while es.state.n_evals < args.budget:
            X = es.ask()
            res = list(pool.map(_cost, X))
            costs = np.array([r[0] for r in res])
            es.tell(X, costs)
            i = int(np.argmin(costs))
            if costs[i] < best:
                best = float(costs[i])
                params, full_cfg = decode(X[i], base)
                out.write_text(json.dumps(
                    {"cost": best, "diag": res[i][1],
                     "params": params.to_dict(),
                     "constants": {n: full_cfg["controller"][n]
                                   for n, _, _ in CONST_SPACE},
                     "x": X[i].tolist()}, indent=1))
            print(f"[{time.time()-t0:7.1f}s] gen {es.state.generation:3d} "
                  f"evals {es.state.n_evals:5d} best {best:.4f} "
                  f"gen-best {costs[i]:.4f} {res[i][1]} sigma {es.state.sigma:.3f}",
                  flush=True)
    print("final best:", best)


if __name__ == "__main__":
    main()
