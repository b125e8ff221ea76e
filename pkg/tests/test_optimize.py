import math

import numpy as np
import pytest

from nmwalk.analysis import (CollisionResult, GaitAnalysis, IPResult,
                             StabilityResult)
from nmwalk.contact import Terrain
from nmwalk.control import ControlParams
from nmwalk.optimize import (GaitRecord, MODE_MAX_R2, MODE_MIN_R2,
                             MODE_MIN_R2_CF, append_archive, query_archive,
                             read_archive, robustness_table, staged_cost,
                             write_archive)
from nmwalk.simulate import (GaitEvents, GaitTrace, TERMINATION_COMPLETED,
                             TERMINATION_FELL)


def make_trace(termination=TERMINATION_COMPLETED, distance=20.0, n=1000,
               fall_time=None, strides=10):
    t = np.arange(n) / 1000.0
    com = np.zeros((n, 2))
    com[:, 0] = np.linspace(0.0, distance, n)
    hs = np.linspace(0.2, t[-1], strides + 1)
    events = GaitEvents((hs, hs + 0.05), (hs + 0.02, hs + 0.07))
    q = np.zeros((n, 9))
    dummy14 = np.zeros((n, 14))
    return GaitTrace(t=t, q=q, qd=q.copy(), act=dummy14, lce=dummy14,
                     stim=dummy14, muscle_force=dummy14,
                     grf=np.zeros((n, 2, 2)), cop=np.full((n, 2, 2), np.nan),
                     com=com, com_vel=np.zeros((n, 2)),
                     termination=termination, fall_time=fall_time,
                     terrain=Terrain.flat(), params=None, events=events,
                     meta={"sample_rate": 1000.0})


def make_analysis(r2=0.5, speed=1.30, spread=0.002, cf=0.4, steady=None):
    steady = (spread < 0.0075) if steady is None else steady
    return GaitAnalysis(
        ip=IPResult(height=0.6, r2=r2, n_samples=100, degenerate_parallel=False),
        collision=CollisionResult(fraction=cf, phi=np.zeros(10),
                                  theta=np.zeros(10), lam=np.zeros(10),
                                  violations=0),
        stability=StabilityResult(margins=np.zeros(6), spread=spread,
                                  steady=steady),
        speed=speed, step_length=0.78, stride_window=None)


def test_eq1_returns_exactly_r2():
    c = staged_cost(make_trace(), make_analysis(r2=0.5), MODE_MIN_R2)
    assert c.stage == 3
    assert c.value == 0.5


def test_eq2_arithmetic_exact():
    c = staged_cost(make_trace(), make_analysis(r2=0.9, speed=1.30), MODE_MAX_R2)
    assert c.stage == 3
    assert c.value == pytest.approx(1.0 - 0.9 + abs(1.30 - 1.25), abs=1e-15)
    assert c.value == pytest.approx(0.15, abs=1e-12)


def test_cf_mode_adds_weighted_fraction():
    c = staged_cost(make_trace(), make_analysis(r2=0.2, cf=0.5), MODE_MIN_R2_CF,
                    cf_weight=1.0)
    assert c.value == pytest.approx(0.7)
    c0 = staged_cost(make_trace(), make_analysis(r2=0.2, cf=0.5), MODE_MIN_R2_CF,
                     cf_weight=0.0)
    assert c0.value == pytest.approx(0.2)   # w = 0 reduces to Eq. 1


def test_stage_dominance_for_constructed_triples():
    """Any stage-1 cost > any stage-2 cost > any stage-3 cost."""
    fell = staged_cost(make_trace(TERMINATION_FELL, distance=2.0, fall_time=1.0),
                       None, MODE_MIN_R2)
    unsteady = staged_cost(make_trace(), make_analysis(spread=0.02), MODE_MIN_R2)
    for r2 in (-5.0, 0.0, 0.93):
        steady = staged_cost(make_trace(), make_analysis(r2=r2), MODE_MIN_R2)
        assert fell.value > unsteady.value > steady.value
        assert (fell.stage, unsteady.stage, steady.stage) == (1, 2, 3)
    # maximize mode with realistic speeds keeps the same ordering
    for r2 in (-5.0, 0.0, 0.93):
        steady = staged_cost(make_trace(), make_analysis(r2=r2, speed=1.1),
                             MODE_MAX_R2)
        assert fell.value > unsteady.value > steady.value


def test_stage1_rewards_distance():
    near = staged_cost(make_trace(TERMINATION_FELL, distance=2.0), None, MODE_MIN_R2)
    far = staged_cost(make_trace(TERMINATION_FELL, distance=8.0), None, MODE_MIN_R2)
    assert far.value < near.value


def test_stage2_ranks_by_spread():
    a = staged_cost(make_trace(), make_analysis(spread=0.03), MODE_MIN_R2)
    b = staged_cost(make_trace(), make_analysis(spread=0.01), MODE_MIN_R2)
    assert b.value < a.value


def test_mode_monotonicity_at_stage3():
    lo = make_analysis(r2=0.2, speed=1.25)
    hi = make_analysis(r2=0.8, speed=1.25)
    t = make_trace()
    assert (staged_cost(t, lo, MODE_MIN_R2).value
            < staged_cost(t, hi, MODE_MIN_R2).value)
    assert (staged_cost(t, hi, MODE_MAX_R2).value
            < staged_cost(t, lo, MODE_MAX_R2).value)


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        staged_cost(make_trace(), make_analysis(), "bogus")


# ------------------------------------------------------------------ archive


def sample_record(r2=0.42, cm=None):
    params = {n: float(i) for i, n in enumerate(
        ("gain_sol", "gain_gas", "gain_vas", "gain_ta", "gain_hfl", "bal_ham",
         "bal_glu", "bal_hfl", "lean_ref", "bal_kp", "bal_kd",
         "stance_threshold"))}
    return GaitRecord(params=params, r2=r2, ip_height=0.6321, speed=1.312,
                      step_length=0.771, collision_fraction=0.387, stage=3,
                      cost=r2, mode=MODE_MIN_R2, generation=4,
                      max_step_down_cm=cm)


def test_archive_roundtrip_field_identical(tmp_path):
    recs = [sample_record(0.9), sample_record(-12.5, cm=3),
            sample_record(-math.inf)]
    path = tmp_path / "archive.jsonl"
    write_archive(recs, path)
    back = read_archive(path)
    assert len(back) == 3
    for a, b in zip(recs, back):
        assert a.__dict__ == b.__dict__


def test_archive_append(tmp_path):
    path = tmp_path / "archive.jsonl"
    write_archive([sample_record(0.1)], path)
    append_archive([sample_record(0.2)], path)
    assert [r.r2 for r in read_archive(path)] == [0.1, 0.2]


def test_query_archive():
    recs = [sample_record(-2.0), sample_record(-0.5), sample_record(0.8)]
    recs[0].collision_fraction = 0.55
    recs[1].collision_fraction = 0.3
    hit = query_archive(recs, r2_below=-1.0, cf_below=0.6)
    assert hit == [recs[0]]
    assert query_archive(recs, r2_below=-3.0, cf_below=0.6) == []


def test_robustness_table_columns():
    rows = robustness_table([sample_record(0.5, cm=3)])
    assert rows[0] == {"gait_id": 0, "r2": 0.5, "max_h_cm": 3, "cf": 0.387}


def test_record_control_params_roundtrip():
    rec = sample_record()
    p = rec.control_params()
    assert isinstance(p, ControlParams)
    assert p.to_dict() == rec.params


def test_optimize_small_budget_wellformed_and_resumable(sim, tmp_path):
    """One generation on a tiny horizon: archive well-formed (possibly empty),
    checkpoint written; resuming continues at the next generation."""
    from nmwalk.optimize import optimize, MODE_MIN_R2

    out = tmp_path / "run"
    res = optimize(sim, MODE_MIN_R2, budget=11, seed=5, t_max=2.0,
                   out_dir=out, sigma0=0.3)
    assert res.generations == 1
    assert res.n_evals == 11
    assert (out / "checkpoint.json").exists()
    assert (out / "manifest.json").exists()
    assert isinstance(res.archive, list)

    res2 = optimize(sim, MODE_MIN_R2, budget=22, seed=5, t_max=2.0,
                    out_dir=out, resume=True, sigma0=0.3)
    assert res2.generations == 2
    assert res2.n_evals == 22


def test_optimize_rejects_bad_budget(sim):
    from nmwalk.optimize import optimize, MODE_MIN_R2
    with pytest.raises(ValueError):
        optimize(sim, MODE_MIN_R2, budget=0)
