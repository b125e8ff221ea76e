#!/usr/bin/env python3
"""Find default control parameters that walk steadily near the target gait.

Runs the package's CMA-ES with the staged cost shape, but with a stage-3
objective that targets the reference descriptors (speed 1.36 m/s, step length
0.77 m) instead of an R^2 objective. Writes every improvement to
scripts/best_params.json.
"""

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
from nmwalk.simulate import SimulationError, WalkerSim, TERMINATION_COMPLETED

_SIM = None
_TMAX = 12.0


def _init(config_data, tmax):
    global _SIM, _TMAX
    _SIM = WalkerSim(RunConfig(config_data))
    _TMAX = tmax


def _cost(x):
    sim = _SIM
    params, _ = sim.param_space.decode(np.asarray(x))
    try:
        tr = sim.rollout(params, t_max=_TMAX)
    except Exception:
        return 2e6, {}
    dist = float(tr.com[-1, 0] - tr.com[0, 0])
    if tr.termination != TERMINATION_COMPLETED:
        return 1e6 - dist, {"dist": dist}
    try:
        an = analyze_trace(tr)
    except (AnalysisError, SimulationError):
        return 1e3 + 10.0 + max(0, 8 - tr.stride_count()), {"dist": dist}
    if not an.stability.steady:
        return 1e3 + an.stability.spread, {"spread": an.stability.spread}
    r2 = an.ip.r2 if np.isfinite(an.ip.r2) else -10.0
    J = (abs(an.speed - 1.36) + 0.5 * abs(an.step_length - 0.77)
         + 0.6 * max(0.0, abs(r2 - 0.83) - 0.08))
    return J, {"v": an.speed, "sl": an.step_length, "r2": an.ip.r2,
               "spread": an.stability.spread}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--budget", type=int, default=550)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--sigma", type=float, default=0.10)
    ap.add_argument("--tmax", type=float, default=12.0)
    ap.add_argument("--workers", type=int, default=2)
    ap.add_argument("--start", type=str, default=None, help="JSON params to start from")
    args = ap.parse_args()

    cfg = load_config()
    sim = WalkerSim(cfg)
    if args.start:
        from nmwalk.control import ControlParams
        start = ControlParams.from_dict(json.loads(Path(args.start).read_text()))
    else:
        start = sim.default_params()
    x0 = sim.param_space.encode(start)
    es = CMAES(x0, args.sigma, seed=args.seed, bounds=(0.0, 1.0))

    best = 1e18
    best_x = x0
    out = Path("scripts/best_params.json")
    t0 = time.time()
    with ProcessPoolExecutor(max_workers=args.workers, initializer=_init,
                             initargs=(cfg.data, args.tmax)) as pool:
        while es.state.n_evals < args.budget:
            X = es.ask()
            res = list(pool.map(_cost, X))
            costs = np.array([r[0] for r in res])
            es.tell(X, costs)
            i = int(np.argmin(costs))
            if costs[i] < best:
                best = float(costs[i])
                best_x = X[i].copy()
                params, _ = sim.param_space.decode(best_x)
                out.write_text(json.dumps({"cost": best, "diag": res[i][1],
                                           "params": params.to_dict()}, indent=1))
            print(f"[{time.time()-t0:7.1f}s] gen {es.state.generation:3d} "
                  f"evals {es.state.n_evals:4d} best {best:.4f} "
                  f"gen-best {costs[i]:.4f} diag {res[i][1]} sigma {es.state.sigma:.3f}",
                  flush=True)
    print("final best:", best)


if __name__ == "__main__":
    main()
