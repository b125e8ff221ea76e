import numpy as np
import pytest

from nmwalk.cmaes import CMAES, default_popsize, minimize


def sphere(x):
    return float(np.sum((x - 0.6) ** 2))


def rosenbrock(x):
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1 - x[:-1]) ** 2))


def test_default_population_formula():
    assert default_popsize(12) == 11        # 4 + floor(3 ln 12)
    assert default_popsize(5) == 8


def test_sphere_12d_within_budget():
    x, f, es = minimize(sphere, np.full(12, 0.2), 0.3, seed=3,
                        max_evals=15000, f_target=1e-9)
    assert f < 1e-8
    assert es.state.n_evals <= 15000


def test_rosenbrock_5d_within_budget():
    x, f, es = minimize(rosenbrock, np.full(5, 0.3), 0.3, seed=5,
                        max_evals=50000, f_target=1e-7)
    assert f < 1e-6
    assert es.state.n_evals <= 50000


def test_fixed_seed_reproducible_population():
    a = CMAES(np.zeros(12), 0.5, seed=123, bounds=(0.0, 1.0))
    b = CMAES(np.zeros(12), 0.5, seed=123, bounds=(0.0, 1.0))
    assert np.array_equal(a.ask(), b.ask())


def test_sigma_zero_limit_collapses_to_mean():
    es = CMAES(np.full(12, 0.4), 1e-12)
    X = es.ask()
    assert np.allclose(X, 0.4, atol=1e-9)


def test_bounds_respected():
    es = CMAES(np.full(12, 0.95), 0.6, seed=0, bounds=(0.0, 1.0))
    for _ in range(5):
        X = es.ask()
        assert np.all(X >= 0.0) and np.all(X <= 1.0)
        es.tell(X, np.array([sphere(x) for x in X]))


def test_equal_costs_still_update_cleanly():
    es = CMAES(np.full(12, 0.5), 0.3, seed=1)
    X = es.ask()
    es.tell(X, np.zeros(len(X)))
    assert np.isfinite(es.state.sigma) and es.state.sigma > 0
    assert np.all(np.isfinite(es.state.mean))
    assert np.all(np.isfinite(es.state.cov))


def test_nonfinite_costs_rank_worst():
    es = CMAES(np.full(4, 0.5), 0.3, seed=2)
    X = es.ask()
    costs = np.arange(len(X), dtype=float)
    costs[0] = np.nan          # would otherwise be the best rank
    es.tell(X, costs)
    # mean moved toward the finite candidates, not the nan one
    assert np.all(np.isfinite(es.state.mean))


def test_covariance_stays_spd():
    rng = np.random.default_rng(0)
    es = CMAES(np.full(6, 0.5), 0.4, seed=9)
    for _ in range(60):
        X = es.ask()
        es.tell(X, np.array([sphere(x[:6] * 2) for x in X]))
        vals = np.linalg.eigvalsh(0.5 * (es.state.cov + es.state.cov.T))
        assert vals.min() > 0


def test_best_cost_nonincreasing_after_warmup():
    es = CMAES(np.full(12, 0.2), 0.3, seed=17)
    best = []
    cur = np.inf
    for _ in range(40):
        X = es.ask()
        f = np.array([sphere(x) for x in X])
        es.tell(X, f)
        cur = min(cur, float(f.min()))
        best.append(cur)
    for a, b in zip(best[5:], best[6:]):
        assert b <= a + 1e-15


def test_checkpoint_resume_bit_identical(tmp_path):
    path = tmp_path / "ckpt.json"
    a = CMAES(np.full(8, 0.5), 0.3, seed=11, bounds=(0.0, 1.0))
    for _ in range(3):
        X = a.ask()
        a.tell(X, np.array([sphere(x[:8] * 1.5) for x in X]))
    a.checkpoint(path)
    b = CMAES.resume(path, bounds=(0.0, 1.0))
    Xa = a.ask()
    Xb = b.ask()
    assert np.array_equal(Xa, Xb)
    assert a.state.generation == b.state.generation
