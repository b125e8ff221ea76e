"""Command-line interface.

Subcommands: rollout, optimize, robustness, analyze, animate. Exit codes:
0 success, 1 domain failure (fall, instability, empty optimization result),
2 usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import export
from .analysis import AnalysisError, analyze_trace
from .config import ConfigError, load_config
from .contact import Terrain
from .control import ControlParams
from .optimize import (MODES, MODE_MIN_R2, cf_constrained_optimize,
                       optimize, query_archive, read_archive, robustness_sweep,
                       robustness_table, write_archive)
from .simulate import (SimulationError, TERMINATION_COMPLETED, WalkerSim,
                       step_down_robustness)

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2


def _out_dir(args) -> Path:
    base = args.out or os.environ.get("NMWALK_OUT", "runs")
    p = Path(base)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _parse_terrain(spec: str | None) -> Terrain:
    """'flat' or 'step:<height>@<x>', e.g. step:-0.03@5.0 for a 3 cm drop."""
    if spec is None or spec == "flat":
        return Terrain.flat()
    if spec.startswith("step:"):
        body = spec[len("step:"):]
        height, _, at = body.partition("@")
        if not at:
            raise ValueError("terrain step needs '@x', e.g. step:-0.03@5.0")
        h = float(height)
        return Terrain(((-1e12, 0.0), (float(at), h)))
    raise ValueError(f"unknown terrain spec {spec!r}")


def _load_params(sim: WalkerSim, source: str | None, index: int) -> ControlParams:
    if source is None:
        return sim.default_params()
    path = Path(source)
    if path.suffix == ".jsonl":
        records = read_archive(path)
        if not records:
            raise ValueError(f"archive {path} is empty")
        return records[index].control_params()
    doc = json.loads(path.read_text())
    if "params" in doc:
        doc = doc["params"]
    return ControlParams.from_dict(doc)


def cmd_rollout(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    sim = WalkerSim(cfg)
    params = _load_params(sim, args.params, args.index)
    terrain = _parse_terrain(args.terrain)
    trace = sim.rollout(params, terrain, t_max=args.tmax)
    out = _out_dir(args)
    export.write_trace_csv(trace, out / "trace.csv")
    export.write_trace_sidecar(trace, out / "trace.json")

    analysis = None
    note = {}
    if trace.termination == TERMINATION_COMPLETED:
        try:
            analysis = analyze_trace(trace)
        except (AnalysisError, SimulationError) as e:
            note["analysis_error"] = str(e)
    if analysis is not None:
        export.write_analysis_json(analysis, out / "analysis.json",
                                   extra={"termination": trace.termination})
        export.save_ip_figure(trace, analysis, out / "ip_lines.png",
                              out / "ip_lines.csv")
        export.save_stance_figure(trace, analysis, out / "stance.png",
                                  out / "stance.csv")
        print(json.dumps(analysis.to_dict(), indent=2))
    if args.animate:
        n = export.render_frames(trace, sim.model, out / "frames", fps=args.fps)
        print(f"wrote {n} frames to {out / 'frames'}")
    if trace.termination != TERMINATION_COMPLETED:
        print(f"rollout ended early: {trace.termination}"
              + (f" at t={trace.fall_time:.2f} s" if trace.fall_time else ""),
              file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    sim = WalkerSim(cfg)
    out = _out_dir(args)
    kwargs = dict(budget=args.budget, seed=args.seed, workers=args.workers,
                  t_max=args.tmax, out_dir=out, resume=args.resume,
                  log=lambda s: print(s, flush=True))
    if args.mode == "min-r2-cf":
        result = cf_constrained_optimize(sim, cf_weight=args.cf_weight, **kwargs)
    else:
        result = optimize(sim, args.mode, v_target=args.vtgt, **kwargs)
    write_archive(result.archive, out / "archive.jsonl")
    print(f"{len(result.archive)} steady gaits archived "
          f"({result.n_evals} evaluations, {result.generations} generations)")
    if result.archive:
        r2s = [r.r2 for r in result.archive]
        print(f"R^2 range: {min(r2s):.4g} .. {max(r2s):.4g}")
    if args.mode == "min-r2-cf":
        hits = query_archive(result.archive, r2_below=-1.0, cf_below=0.6)
        print(f"gaits with R^2 < -1 and CF < 0.6: {len(hits)}")
    if result.no_stage3:
        print("no steady gait found within the budget", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


def cmd_robustness(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    sim = WalkerSim(cfg)
    out = _out_dir(args)
    records = read_archive(args.archive) if args.archive else []
    if args.limit is not None:
        records = records[: args.limit]
    swept = robustness_sweep(sim, records, log=lambda s: print(s, flush=True))
    rows = robustness_table(swept)
    default_row = None
    if args.include_default:
        res = step_down_robustness(sim, sim.default_params())
        trace = sim.rollout(sim.default_params())
        try:
            an = analyze_trace(trace)
            default_row = {"gait_id": "default", "r2": an.ip.r2,
                           "max_h_cm": res.max_height_cm if res.flat_stable else None,
                           "cf": an.collision.fraction}
        except (AnalysisError, SimulationError):
            pass
    export.write_robustness_csv(rows + ([default_row] if default_row else []),
                                out / "robustness.csv")
    export.save_robustness_figure(rows, out / "robustness.png", default_row)
    print(f"{len(rows)} gaits swept; results in {out / 'robustness.csv'}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    trace = export.read_trace(args.trace, args.sidecar)
    out = _out_dir(args)
    try:
        analysis = analyze_trace(trace)
    except (AnalysisError, SimulationError) as e:
        print(f"analysis failed: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    export.write_analysis_json(analysis, out / "analysis.json")
    print(json.dumps(analysis.to_dict(), indent=2))
    return EXIT_OK


def cmd_animate(args) -> int:
    cfg = load_config(args.config)
    sim = WalkerSim(cfg)
    trace = export.read_trace(args.trace, args.sidecar)
    out = _out_dir(args)
    n = export.render_frames(trace, sim.model, out / "frames", fps=args.fps)
    print(f"wrote {n} frames to {out / 'frames'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nmwalk",
                                description="planar neuromuscular walking toolkit")
    p.add_argument("--config", default=None, help="config JSON (default: packaged)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("rollout", help="simulate one gait and analyze it")
    r.add_argument("--params", default=None,
                   help="params JSON or archive .jsonl (default: config defaults)")
    r.add_argument("--index", type=int, default=0, help="archive record index")
    r.add_argument("--terrain", default="flat", help="'flat' or step:<h>@<x>")
    r.add_argument("--tmax", type=float, default=None)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", default=None)
    r.add_argument("--animate", action="store_true")
    r.add_argument("--fps", type=float, default=25.0)
    r.set_defaults(func=cmd_rollout)

    o = sub.add_parser("optimize", help="run a staged-cost optimization")
    o.add_argument("--mode", choices=list(MODES), default=MODE_MIN_R2)
    o.add_argument("--budget", type=int, default=2000, help="rollout budget")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--vtgt", type=float, default=1.25,
                   help="target speed for max-r2 mode")
    o.add_argument("--cf-weight", type=float, default=1.0)
    o.add_argument("--tmax", type=float, default=None)
    o.add_argument("--workers", type=int, default=1)
    o.add_argument("--resume", action="store_true")
    o.add_argument("--out", default=None)
    o.set_defaults(func=cmd_optimize)

    b = sub.add_parser("robustness", help="step-down sweep over an archive")
    b.add_argument("--archive", default=None)
    b.add_argument("--limit", type=int, default=None)
    b.add_argument("--include-default", action="store_true")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_robustness)

    a = sub.add_parser("analyze", help="re-analyze an exported trace")
    a.add_argument("--trace", required=True)
    a.add_argument("--sidecar", required=True)
    a.add_argument("--out", default=None)
    a.set_defaults(func=cmd_analyze)

    m = sub.add_parser("animate", help="render stick-figure frames")
    m.add_argument("--trace", required=True)
    m.add_argument("--sidecar", required=True)
    m.add_argument("--fps", type=float, default=25.0)
    m.add_argument("--out", default=None)
    m.set_defaults(func=cmd_animate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
