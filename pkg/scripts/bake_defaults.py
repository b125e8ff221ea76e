#!/usr/bin/env python3
"""Write tuned parameters into the packaged default config and verify them."""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, "src")

CONFIG = Path("src/nmwalk/data/default_config.json")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--params", default="scripts/best_params.json")
    ap.add_argument("--verify-only", action="store_true")
    args = ap.parse_args()

    doc = json.loads(Path(args.params).read_text())
    params = doc["params"] if "params" in doc else doc

    if not args.verify_only:
        cfg = json.loads(CONFIG.read_text())
        cfg["controller"]["params_default"] = {k: params[k] for k in
                                               cfg["controller"]["params_default"]}
        CONFIG.write_text(json.dumps(cfg, indent=2) + "\n")
        print("defaults written to", CONFIG)

    from nmwalk import load_config
    from nmwalk.analysis import analyze_trace
    from nmwalk.simulate import WalkerSim

    sim = WalkerSim(load_config())
    tr = sim.rollout(sim.default_params(), t_max=20.0)
    print("termination:", tr.termination, "t_end:", tr.t[-1])
    if tr.termination != "completed":
        print("FAIL: default gait does not complete 20 s")
        return 1
    an = analyze_trace(tr)
    print(json.dumps(an.to_dict(), indent=1))
    ok = (an.stability.steady
          and abs(an.speed - 1.36) <= 0.15
          and abs(an.step_length - 0.77) <= 0.10
          and abs(an.ip.r2 - 0.83) <= 0.15)
    print("acceptance windows:", "OK" if ok else "NOT MET")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
