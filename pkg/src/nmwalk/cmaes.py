"""Covariance matrix adaptation evolution strategy (standard settings).

Minimal, deterministic CMA-ES: rank-based weighted recombination of the best
half, cumulative step-size adaptation, rank-one plus rank-mu covariance
update, default learning rates for the problem dimension. Optional box
constraints are enforced by resampling out-of-bounds draws a bounded number
of times and clamping as a last resort, which keeps the search distribution
intact. The full optimizer state (including the RNG) can be checkpointed to
JSON and resumed bit-exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

_RESAMPLE_LIMIT = 10
_EIG_FLOOR = 1e-14


@dataclass
class OptimizerState:
    """Everything needed to reproduce or resume a run."""

    mean: np.ndarray
    sigma: float
    cov: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    generation: int
    n_evals: int
    seed: int
    rng_state: dict[str, Any]

    def to_json(self) -> dict[str, Any]:
        return {
            "mean": self.mean.tolist(),
            "sigma": self.sigma,
            "cov": self.cov.tolist(),
            "p_sigma": self.p_sigma.tolist(),
            "p_c": self.p_c.tolist(),
            "generation": self.generation,
            "n_evals": self.n_evals,
            "seed": self.seed,
            "rng_state": self.rng_state,
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "OptimizerState":
        return cls(mean=np.array(d["mean"]), sigma=float(d["sigma"]),
                   cov=np.array(d["cov"]), p_sigma=np.array(d["p_sigma"]),
                   p_c=np.array(d["p_c"]), generation=int(d["generation"]),
                   n_evals=int(d["n_evals"]), seed=int(d["seed"]),
                   rng_state=d["rng_state"])


def default_popsize(n: int) -> int:
    return 4 + int(3 * math.log(n))


class CMAES:
    """Ask/tell evolution strategy minimizing a scalar cost."""

    def __init__(self, x0: np.ndarray, sigma0: float, *, seed: int = 0,
                 popsize: int | None = None,
                 bounds: tuple[float, float] | None = None):
        x0 = np.asarray(x0, dtype=float)
        self.n = x0.size
        self.lam = popsize or default_popsize(self.n)
        self.bounds = bounds

        # selection and recombination weights (positive half)
        self.mu = self.lam // 2
        w = np.log(self.lam / 2 + 0.5) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mueff = float(self.weights.sum() ** 2 / (self.weights ** 2).sum())

        n, mueff = self.n, self.mueff
        self.cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
        self.cs = (mueff + 2) / (n + mueff + 5)
        self.c1 = 2 / ((n + 1.3) ** 2 + mueff)
        self.cmu = min(1 - self.c1,
                       2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
        self.damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + self.cs
        self.chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n ** 2))

        rng = np.random.default_rng(seed)
        self.state = OptimizerState(
            mean=x0.copy(), sigma=float(sigma0), cov=np.eye(self.n),
            p_sigma=np.zeros(self.n), p_c=np.zeros(self.n),
            generation=0, n_evals=0, seed=seed,
            rng_state=rng.bit_generator.state)
        self._rng = rng
        self._decompose()

    # ------------------------------------------------------------------ internals

    def _decompose(self) -> None:
        C = 0.5 * (self.state.cov + self.state.cov.T)
        vals, vecs = np.linalg.eigh(C)
        floor = max(_EIG_FLOOR, _EIG_FLOOR * float(vals.max()))
        if np.any(vals < floor):
            vals = np.maximum(vals, floor)
            self.state.cov = (vecs * vals) @ vecs.T
        else:
            self.state.cov = C
        self._B = vecs
        self._D = np.sqrt(vals)

    def _sample(self) -> np.ndarray:
        z = self._rng.standard_normal(self.n)
        return self.state.mean + self.state.sigma * (self._B @ (self._D * z))

    # ------------------------------------------------------------------ interface

    def ask(self) -> np.ndarray:
        """Sample the population (lam, n); draws violating the box are
        resampled up to a fixed limit and finally clamped."""
        out = np.empty((self.lam, self.n))
        for i in range(self.lam):
            x = self._sample()
            if self.bounds is not None:
                lo, hi = self.bounds
                tries = 0
                while (np.any(x < lo) or np.any(x > hi)) and tries < _RESAMPLE_LIMIT:
                    x = self._sample()
                    tries += 1
                x = np.clip(x, lo, hi)
            out[i] = x
        self.state.rng_state = self._rng.bit_generator.state
        return out

    def tell(self, candidates: np.ndarray, costs: np.ndarray) -> None:
        """Update mean, paths, covariance and step size from evaluated costs.

        Non-finite costs rank worst. Ties keep submission order (stable sort),
        so equal-cost populations still produce a well-defined update.
        """
        X = np.asarray(candidates, dtype=float)
        f = np.asarray(costs, dtype=float).copy()
        if X.shape != (self.lam, self.n) or f.shape != (self.lam,):
            raise ValueError("tell() shapes do not match the population")
        f[~np.isfinite(f)] = np.inf
        order = np.argsort(f, kind="stable")
        st = self.state

        xold = st.mean.copy()
        elite = X[order[: self.mu]]
        st.mean = self.weights @ elite
        y_w = (st.mean - xold) / st.sigma

        inv_sqrt = (self._B / self._D) @ self._B.T
        st.p_sigma = ((1 - self.cs) * st.p_sigma
                      + math.sqrt(self.cs * (2 - self.cs) * self.mueff) * (inv_sqrt @ y_w))
        ps_norm = float(np.linalg.norm(st.p_sigma))
        denom = math.sqrt(1 - (1 - self.cs) ** (2 * (st.generation + 1)))
        hsig = ps_norm / denom / self.chi_n < 1.4 + 2 / (self.n + 1)
        st.p_c = ((1 - self.cc) * st.p_c
                  + (math.sqrt(self.cc * (2 - self.cc) * self.mueff) * y_w if hsig else 0.0))

        Y = (elite - xold) / st.sigma
        rank_mu = np.einsum("k,ki,kj->ij", self.weights, Y, Y)
        c1a = self.c1 * (1 - (0 if hsig else 1) * self.cc * (2 - self.cc))
        st.cov = ((1 - c1a - self.cmu) * st.cov
                  + self.c1 * np.outer(st.p_c, st.p_c)
                  + self.cmu * rank_mu)
        st.sigma *= math.exp((self.cs / self.damps) * (ps_norm / self.chi_n - 1))
        st.generation += 1
        st.n_evals += self.lam
        self._decompose()

    # ------------------------------------------------------------------ persistence

    def checkpoint(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.state.to_json()))

    @classmethod
    def resume(cls, path: str | Path, *, popsize: int | None = None,
               bounds: tuple[float, float] | None = None) -> "CMAES":
        st = OptimizerState.from_json(json.loads(Path(path).read_text()))
        es = cls(st.mean, st.sigma, seed=st.seed, popsize=popsize, bounds=bounds)
        es.state = st
        es._rng = np.random.default_rng(st.seed)
        es._rng.bit_generator.state = st.rng_state
        es._decompose()
        return es


def minimize(fct, x0, sigma0, *, seed=0, max_evals=10000, f_target=None,
             popsize=None, bounds=None) -> tuple[np.ndarray, float, CMAES]:
    """Convenience loop: returns (best x, best f, strategy)."""
    es = CMAES(np.asarray(x0, dtype=float), sigma0, seed=seed,
               popsize=popsize, bounds=bounds)
    best_x = np.asarray(x0, dtype=float).copy()
    best_f = math.inf
    while es.state.n_evals < max_evals:
        X = es.ask()
        f = np.array([fct(x) for x in X])
        es.tell(X, f)
        i = int(np.argmin(f))
        if f[i] < best_f:
            best_f = float(f[i])
            best_x = X[i].copy()
        if f_target is not None and best_f <= f_target:
            break
    return best_x, best_f, es
