"""Staged cost functions, the optimization driver and the gait archive.

Candidate gaits are scored in three lexicographic stages encoded into one
scalar with large additive offsets: candidates that fall rank by distance
traveled (stage 1), candidates that walk the full horizon but are not steady
rank by their margin-of-stability spread (stage 2), and steady gaits rank by
the mode's objective (stage 3): the focus measure R^2 itself to push the
intersection point away, 1 - R^2 plus a speed deviation to sharpen it, or
R^2 plus a weighted collision fraction for the efficiency-constrained run.

Every steady candidate is analyzed and archived as a GaitRecord (JSON lines,
append-only), so one run yields viable gaits across the whole R^2 range it
visited.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np

from .analysis import AnalysisError, GaitAnalysis, analyze_trace
from .cmaes import CMAES
from .config import RunConfig
from .control import ControlParams
from .simulate import (SimulationError, TERMINATION_COMPLETED, WalkerSim,
                       step_down_robustness)

MODE_MIN_R2 = "min-r2"
MODE_MAX_R2 = "max-r2"
MODE_MIN_R2_CF = "min-r2-cf"
MODES = (MODE_MIN_R2, MODE_MAX_R2, MODE_MIN_R2_CF)


@dataclass
class StagedCost:
    stage: int                    # 1 fell/failed, 2 unsteady, 3 steady
    value: float
    diagnostics: dict[str, Any] = field(default_factory=dict)


@dataclass
class GaitRecord:
    """One archived gait: parameters plus the analysis scalars."""

    params: dict[str, float]
    r2: float
    ip_height: float
    speed: float
    step_length: float
    collision_fraction: float
    stage: int
    cost: float
    mode: str
    generation: int
    max_step_down_cm: int | None = None

    def to_json(self) -> str:
        d = dict(self.__dict__)
        if not math.isfinite(self.r2):
            d["r2"] = "-inf" if self.r2 < 0 else "inf"
        if not math.isfinite(self.ip_height):
            d["ip_height"] = None
        return json.dumps(d)

    @classmethod
    def from_json(cls, line: str) -> "GaitRecord":
        d = json.loads(line)
        if isinstance(d.get("r2"), str):
            d["r2"] = -math.inf if d["r2"] == "-inf" else math.inf
        if d.get("ip_height") is None:
            d["ip_height"] = math.nan
        return cls(**d)

    def control_params(self) -> ControlParams:
        return ControlParams.from_dict(self.params)


def write_archive(records: Iterable[GaitRecord], path: str | Path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def append_archive(records: Iterable[GaitRecord], path: str | Path) -> None:
    with open(path, "a") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_archive(path: str | Path) -> list[GaitRecord]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(GaitRecord.from_json(line))
    return out


# ---------------------------------------------------------------- staged cost


def staged_cost(trace, analysis: GaitAnalysis | None, mode: str, *,
                v_target: float = 1.25, stage1_offset: float = 1e6,
                stage2_offset: float = 1e3, cf_weight: float = 1.0) -> StagedCost:
    """Scalar cost with lexicographic stage dominance (lower is better)."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; use one of {MODES}")
    distance = float(trace.com[-1, 0] - trace.com[0, 0]) if trace.n_samples else 0.0
    if trace.termination != TERMINATION_COMPLETED:
        return StagedCost(1, stage1_offset - distance,
                          {"distance": distance, "fall_time": trace.fall_time,
                           "termination": trace.termination})
    if analysis is None:
        # walked the horizon but never produced an analyzable steady stride
        short = max(0, 8 - trace.stride_count())
        return StagedCost(2, stage2_offset + 10.0 + short,
                          {"distance": distance, "strides": trace.stride_count()})
    if not analysis.stability.steady:
        return StagedCost(2, stage2_offset + analysis.stability.spread,
                          {"spread": analysis.stability.spread,
                           "distance": distance})
    r2 = analysis.ip.r2
    v = analysis.speed
    if mode == MODE_MIN_R2:
        value = r2
    elif mode == MODE_MAX_R2:
        value = 1.0 - r2 + abs(v - v_target)
    else:
        value = r2 + cf_weight * analysis.collision.fraction
    return StagedCost(3, float(value),
                      {"r2": r2, "v_sim": v, "spread": analysis.stability.spread,
                       "cf": analysis.collision.fraction})


# ---------------------------------------------------------- candidate evaluation


_WORKER_SIM: WalkerSim | None = None


def _init_worker(config_data: dict[str, Any]) -> None:
    global _WORKER_SIM
    _WORKER_SIM = WalkerSim(RunConfig(config_data))


def _eval_in_worker(task: tuple[np.ndarray, str, float, float, float, float, float]):
    x, mode, v_target, o1, o2, w_cf, t_max = task
    return evaluate_candidate(_WORKER_SIM, np.asarray(x), mode, v_target=v_target,
                              stage1_offset=o1, stage2_offset=o2,
                              cf_weight=w_cf, t_max=t_max)


def evaluate_candidate(sim: WalkerSim, x_norm: np.ndarray, mode: str, *,
                       v_target: float, stage1_offset: float, stage2_offset: float,
                       cf_weight: float, t_max: float):
    """Rollout + analysis + staged cost for one normalized parameter vector."""
    params, _ = sim.param_space.decode(x_norm)
    trace = sim.rollout(params, t_max=t_max)
    analysis = None
    if trace.termination == TERMINATION_COMPLETED:
        try:
            analysis = analyze_trace(trace)
        except (AnalysisError, SimulationError):
            analysis = None
    cost = staged_cost(trace, analysis, mode, v_target=v_target,
                       stage1_offset=stage1_offset, stage2_offset=stage2_offset,
                       cf_weight=cf_weight)
    record = None
    if cost.stage == 3 and analysis is not None:
        record = GaitRecord(
            params=params.to_dict(), r2=analysis.ip.r2,
            ip_height=analysis.ip.height, speed=analysis.speed,
            step_length=analysis.step_length,
            collision_fraction=analysis.collision.fraction,
            stage=3, cost=cost.value, mode=mode, generation=-1)
    return cost, record


# ---------------------------------------------------------------- run driver


@dataclass
class OptimizeResult:
    archive: list[GaitRecord]
    best: GaitRecord | None
    best_cost: float
    generations: int
    n_evals: int
    no_stage3: bool


def optimize(sim: WalkerSim, mode: str, *, budget: int, seed: int = 0,
             sigma0: float | None = None, t_max: float | None = None,
             v_target: float | None = None, cf_weight: float | None = None,
             workers: int = 1, out_dir: str | Path | None = None,
             resume: bool = False,
             log: Callable[[str], None] | None = None) -> OptimizeResult:
    """Run CMA-ES from the default parameters, archiving every steady gait.

    ``budget`` counts rollouts. Results depend only on (config, mode, budget,
    seed); candidate evaluations may run in parallel workers without changing
    them. With ``out_dir`` the archive (JSON lines), optimizer checkpoint and a
    run manifest are written and the run can be resumed after interruption.
    """
    if budget <= 0:
        raise ValueError("budget must be > 0")
    ocfg = sim.config.data["optimizer"]
    sigma0 = float(ocfg["sigma0"]) if sigma0 is None else sigma0
    v_target = float(ocfg["v_target"]) if v_target is None else v_target
    cf_weight = float(ocfg["cf_weight"]) if cf_weight is None else cf_weight
    o1 = float(ocfg["stage1_offset"])
    o2 = float(ocfg["stage2_offset"])
    t_max = sim.t_max_default if t_max is None else float(t_max)
    emit = log or (lambda s: None)

    x0 = sim.param_space.encode(sim.default_params())
    archive: list[GaitRecord] = []
    ckpt_path = arch_path = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt_path = out / "checkpoint.json"
        arch_path = out / "archive.jsonl"
        manifest = {
            "mode": mode, "budget": budget, "seed": seed, "sigma0": sigma0,
            "v_target": v_target, "cf_weight": cf_weight, "t_max": t_max,
            "config_sha256": hashlib.sha256(
                json.dumps(sim.config.data, sort_keys=True).encode()).hexdigest(),
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2))

    if resume and ckpt_path is not None and ckpt_path.exists():
        es = CMAES.resume(ckpt_path, bounds=(0.0, 1.0))
        if arch_path.exists():
            archive = read_archive(arch_path)
        emit(f"resumed at generation {es.state.generation} "
             f"({es.state.n_evals} evaluations)")
    else:
        es = CMAES(x0, sigma0, seed=seed, bounds=(0.0, 1.0))
        if arch_path is not None:
            arch_path.write_text("")

    pool = None
    if workers > 1:
        pool = ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                   initargs=(sim.config.data,))
    best: GaitRecord | None = None
    best_cost = math.inf
    try:
        while es.state.n_evals < budget:
            X = es.ask()
            tasks = [(x, mode, v_target, o1, o2, cf_weight, t_max) for x in X]
            if pool is not None:
                results = list(pool.map(_eval_in_worker, tasks))
            else:
                results = [_eval_in_worker_local(sim, t) for t in tasks]
            costs = np.array([c.value for c, _ in results])
            gen = es.state.generation
            new_records = []
            for c, rec in results:
                if rec is not None:
                    rec.generation = gen
                    new_records.append(rec)
                    archive.append(rec)
                if c.value < best_cost:
                    best_cost = c.value
                    best = rec
            es.tell(X, costs)
            if arch_path is not None and new_records:
                append_archive(new_records, arch_path)
            if ckpt_path is not None:
                es.checkpoint(ckpt_path)
            stages = [c.stage for c, _ in results]
            emit(f"gen {gen:4d} evals {es.state.n_evals:6d} "
                 f"best J {best_cost:.6g} stage counts "
                 f"{{1: {stages.count(1)}, 2: {stages.count(2)}, 3: {stages.count(3)}}} "
                 f"sigma {es.state.sigma:.4f}")
    finally:
        if pool is not None:
            pool.shutdown()

    archive.sort(key=lambda r: r.r2)
    no_stage3 = not archive
    if no_stage3:
        emit("no steady (stage-3) gait found within the budget")
    return OptimizeResult(archive=archive, best=best, best_cost=best_cost,
                          generations=es.state.generation,
                          n_evals=es.state.n_evals, no_stage3=no_stage3)


def _eval_in_worker_local(sim: WalkerSim, task) -> tuple[StagedCost, GaitRecord | None]:
    x, mode, v_target, o1, o2, w_cf, t_max = task
    return evaluate_candidate(sim, np.asarray(x), mode, v_target=v_target,
                              stage1_offset=o1, stage2_offset=o2,
                              cf_weight=w_cf, t_max=t_max)


def cf_constrained_optimize(sim: WalkerSim, *, budget: int, seed: int = 0,
                            **kwargs) -> OptimizeResult:
    """The additional run: minimize R^2 plus weighted collision fraction."""
    return optimize(sim, MODE_MIN_R2_CF, budget=budget, seed=seed, **kwargs)


def query_archive(records: list[GaitRecord], *, r2_below: float,
                  cf_below: float) -> list[GaitRecord]:
    """Gaits with r2 < r2_below and collision fraction < cf_below."""
    return [r for r in records
            if r.r2 < r2_below and r.collision_fraction < cf_below]


# ---------------------------------------------------------------- robustness


def robustness_sweep(sim: WalkerSim, records: list[GaitRecord], *,
                     log: Callable[[str], None] | None = None) -> list[GaitRecord]:
    """Fill max_step_down_cm for every archived gait; failures are recorded
    (None) and the sweep continues."""
    emit = log or (lambda s: None)
    out = []
    for i, rec in enumerate(records):
        rec = GaitRecord(**{**rec.__dict__})
        try:
            res = step_down_robustness(sim, rec.control_params())
            rec.max_step_down_cm = res.max_height_cm if res.flat_stable else None
            emit(f"gait {i}: r2 {rec.r2:.3f} -> max drop "
                 f"{rec.max_step_down_cm} cm")
        except Exception as e:  # per-gait failure must not stop the sweep
            rec.max_step_down_cm = None
            emit(f"gait {i}: robustness evaluation failed: {e}")
        out.append(rec)
    return out


def robustness_table(records: list[GaitRecord]) -> list[dict[str, Any]]:
    """Rows (gait id, R^2, max step-down height, CF) behind the scatter plots."""
    return [{"gait_id": i, "r2": r.r2, "max_h_cm": r.max_step_down_cm,
             "cf": r.collision_fraction} for i, r in enumerate(records)]
