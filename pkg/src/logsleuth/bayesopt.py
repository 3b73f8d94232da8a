"""Bayesian optimization of one hyperparameter (GMM component count,
isolation-forest contamination).

A Gaussian-process surrogate with a squared-exponential kernel proposes the
next evaluation by maximizing expected improvement over a fixed candidate
grid; the first three evaluations are the space-filling triple (lo, hi,
midpoint).  Minimization convention throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import gmm as gmm_mod
from .gmm import DegenerateComponent, fit_em

INTEGER_RANGE = "integer"
REAL_RANGE = "real"
ACQUISITION_GRID = 512
KERNEL_NOISE = 1e-6


@dataclass(frozen=True)
class SearchSpace:
    kind: str
    lo: float
    hi: float

    def __post_init__(self):
        if self.kind not in (INTEGER_RANGE, REAL_RANGE):
            raise ValueError(f"unknown space kind {self.kind!r}")
        if not self.lo < self.hi:
            raise ValueError("lo must be < hi")

    def clip(self, x: float) -> float:
        x = min(max(x, self.lo), self.hi)
        return float(round(x)) if self.kind == INTEGER_RANGE else float(x)


@dataclass
class BoTrace:
    """Evaluated (param, objective) pairs in evaluation order."""

    points: list[tuple[float, float]] = field(default_factory=list)
    budget: int = 0

    @property
    def best(self) -> tuple[float, float]:
        return min(self.points, key=lambda p: (p[1], p[0]))

    def to_json_list(self) -> list[dict]:
        return [{"param": p, "value": v} for p, v in self.points]


def _norm_cdf(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.vectorize(math.erf)(z / math.sqrt(2.0)))


def _norm_pdf(z: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def _gp_posterior(xs: np.ndarray, ys: np.ndarray, grid: np.ndarray,
                  length_scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean/std on the grid for a zero-mean GP over standardized y."""
    y_mean = ys.mean()
    y_std = ys.std()
    if y_std == 0:
        y_std = 1.0
    yn = (ys - y_mean) / y_std

    def k(a, b):
        d = (a[:, None] - b[None, :]) / length_scale
        return np.exp(-0.5 * d * d)

    kxx = k(xs, xs) + KERNEL_NOISE * np.eye(len(xs))
    kxg = k(xs, grid)
    chol = np.linalg.cholesky(kxx)
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, yn))
    v = np.linalg.solve(chol, kxg)
    mean = np.einsum("ij,i->j", kxg, alpha)
    var = np.maximum(1.0 - np.einsum("ij,ij->j", v, v), 1e-12)
    return mean * y_std + y_mean, np.sqrt(var) * y_std


def _expected_improvement(mean: np.ndarray, std: np.ndarray, best: float) -> np.ndarray:
    z = (best - mean) / std
    return (best - mean) * _norm_cdf(z) + std * _norm_pdf(z)


def optimize(objective, space: SearchSpace, budget: int, seed: int = 0) -> BoTrace:
    """Minimize a deterministic objective over ``space`` within ``budget``
    evaluations.

    Integer spaces evaluate rounded candidates and never re-evaluate a
    point; if every remaining candidate is a duplicate the search stops
    early with the best found so far.
    """
    if budget < 3:
        raise ValueError("budget must be at least 3")
    rng = np.random.default_rng((int(seed), 0xB0))
    trace = BoTrace(budget=budget)
    evaluated: dict[float, float] = {}

    def run(x: float) -> None:
        x = space.clip(x)
        if x in evaluated:
            return
        y = float(objective(int(x) if space.kind == INTEGER_RANGE else x))
        evaluated[x] = y
        trace.points.append((x, y))

    for x in (space.lo, space.hi, (space.lo + space.hi) / 2.0):
        run(x)
        if len(trace.points) >= budget:
            return trace

    span = space.hi - space.lo
    length_scale = span / 4.0
    base_grid = np.linspace(space.lo, space.hi, ACQUISITION_GRID)

    while len(trace.points) < budget:
        xs = np.array([p for p, _ in trace.points])
        ys = np.array([v for _, v in trace.points])
        finite = np.isfinite(ys)
        if finite.sum() < 2:
            # objective mostly infeasible: fall back to seeded uniform probing
            run(space.lo + span * rng.random())
            continue
        worst = ys[finite].max()
        ys_safe = np.where(finite, ys, worst + abs(worst) + 1.0)

        # tiny seeded jitter keeps the argmax from being glued to grid knots
        jitter = (rng.random(ACQUISITION_GRID) - 0.5) * (span / ACQUISITION_GRID)
        grid = np.clip(base_grid + jitter, space.lo, space.hi)
        mean, std = _gp_posterior(xs, ys_safe, grid, length_scale)
        ei = _expected_improvement(mean, std, ys_safe.min())

        before = len(evaluated)
        for gi in np.argsort(-ei):
            cand = space.clip(float(grid[gi]))
            if cand not in evaluated:
                run(cand)
                break
        if len(evaluated) == before:
            break  # search space exhausted (small integer ranges)
    return trace


def gmm_selection_objective(data: np.ndarray, k: int, seed: int = 0,
                            max_iter: int = gmm_mod.DEFAULT_MAX_ITER) -> float:
    """Bayesian information criterion of a K-component fit (lower = better).

    Parameter count: (K-1) mixing weights + K*D means + K*D(D+1)/2
    covariance entries.  Infeasible K (more components than rows) and
    degenerate fits score +inf.
    """
    data = np.asarray(data, dtype=np.float64)
    n, d = data.shape
    if k < 1 or k > n:
        return float("inf")
    try:
        params = fit_em(data, k, seed=seed, max_iter=max_iter)
    except DegenerateComponent:
        return float("inf")
    ll = params.train_log_likelihoods[-1]
    p = (k - 1) + k * d + k * d * (d + 1) // 2
    return float(-2.0 * ll + p * math.log(n))


def iforest_contamination_objective(scores: dict[str, float], contamination: float) -> float:
    """Negative score gap at the flag boundary (lower = better).

    Cutting where the gap between the weakest flagged score and the
    strongest unflagged score is widest separates the populations most
    cleanly; all-equal scores give 0 everywhere.
    """
    if not 0.0 < contamination <= 0.5:
        raise ValueError("contamination must be in (0, 0.5]")
    vals = sorted(scores.values(), reverse=True)
    n = len(vals)
    k = math.ceil(contamination * n)
    if k >= n:
        return 0.0
    return -(vals[k - 1] - vals[k])
