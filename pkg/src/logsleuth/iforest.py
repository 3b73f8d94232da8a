"""Isolation forest for the (small) node-perspective table.

Trees are grown on independent uniform subsamples with per-tree RNG streams
derived from (seed, tree index), so the model is reproducible no matter how
tree construction is scheduled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

EULER_GAMMA = float(np.euler_gamma)
DEFAULT_N_TREES = 100
DEFAULT_SUBSAMPLE = 256


class DegenerateData(Exception):
    """Every feature is constant; nothing can be split."""


def avg_path_normalizer(n: int) -> float:
    """Expected unsuccessful-search path length c(n) in a random binary tree.

    Uses the asymptotic harmonic number H(i) = ln(i) + gamma for n > 2;
    c(2) = 1 and c(n <= 1) = 0 by convention.
    """
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * (math.log(n - 1) + EULER_GAMMA) - 2.0 * (n - 1) / n


@dataclass
class _Node:
    feature: int = -1          # -1 marks a leaf
    split: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None
    count: int = 0             # training rows reaching a leaf

    def to_dict(self) -> dict:
        if self.feature < 0:
            return {"count": self.count}
        return {"feature": self.feature, "split": self.split,
                "left": self.left.to_dict(), "right": self.right.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "_Node":
        if "feature" not in d:
            return cls(count=d["count"])
        return cls(feature=d["feature"], split=d["split"],
                   left=cls.from_dict(d["left"]), right=cls.from_dict(d["right"]))


class IsolationTree:
    def __init__(self, root: _Node, height_limit: int):
        self.root = root
        self.height_limit = height_limit

    def path_length(self, x: np.ndarray) -> float:
        node = self.root
        depth = 0
        while node.feature >= 0:
            node = node.left if x[node.feature] < node.split else node.right
            depth += 1
        return depth + avg_path_normalizer(node.count)

    def leaf_count_total(self) -> int:
        total = 0
        stack = [self.root]
        while stack:
            n = stack.pop()
            if n.feature < 0:
                total += n.count
            else:
                stack.extend((n.left, n.right))
        return total


def _grow(data: np.ndarray, idx: np.ndarray, depth: int, limit: int,
          rng: np.random.Generator) -> _Node:
    if depth >= limit or len(idx) <= 1:
        return _Node(count=len(idx))
    sub = data[idx]
    lo = sub.min(axis=0)
    hi = sub.max(axis=0)
    usable = np.nonzero(hi > lo)[0]
    if usable.size == 0:
        return _Node(count=len(idx))
    feature = int(usable[rng.integers(usable.size)])
    split = float(rng.uniform(lo[feature], hi[feature]))
    if split <= lo[feature]:           # keep the cut strictly interior
        split = float(np.nextafter(lo[feature], hi[feature]))
    mask = sub[:, feature] < split
    return _Node(feature=feature, split=split,
                 left=_grow(data, idx[mask], depth + 1, limit, rng),
                 right=_grow(data, idx[~mask], depth + 1, limit, rng))


@dataclass
class IsolationForest:
    trees: list[IsolationTree]
    n_trees: int
    subsample_size: int          # effective (clamped) size
    requested_subsample: int
    seed: int
    n_features: int
    contamination: float = 0.1

    def to_json_dict(self) -> dict:
        return {
            "version": 1,
            "model": "isolation_forest",
            "n_trees": self.n_trees,
            "subsample_size": self.subsample_size,
            "requested_subsample": self.requested_subsample,
            "seed": self.seed,
            "n_features": self.n_features,
            "contamination": self.contamination,
            "trees": [{"height_limit": t.height_limit, "root": t.root.to_dict()}
                      for t in self.trees],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "IsolationForest":
        trees = [IsolationTree(_Node.from_dict(t["root"]), t["height_limit"])
                 for t in d["trees"]]
        return cls(trees=trees, n_trees=d["n_trees"],
                   subsample_size=d["subsample_size"],
                   requested_subsample=d["requested_subsample"], seed=d["seed"],
                   n_features=d["n_features"], contamination=d["contamination"])

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


def fit_forest(data: np.ndarray, n_trees: int = DEFAULT_N_TREES,
               subsample: int = DEFAULT_SUBSAMPLE, seed: int = 0) -> IsolationForest:
    """Grow ``n_trees`` isolation trees on uniform subsamples.

    ``subsample`` is clamped to the row count (and recorded both ways).
    Raises DegenerateData when no feature varies at all.
    """
    data = np.asarray(data, dtype=np.float64)
    n, d = data.shape
    if n < 2:
        raise ValueError("need at least 2 rows")
    if np.all(data.max(axis=0) == data.min(axis=0)):
        raise DegenerateData("all features constant")
    eff = min(subsample, n)
    limit = max(1, math.ceil(math.log2(eff)))
    trees = []
    for t in range(n_trees):
        rng = np.random.default_rng((int(seed), t))
        idx = rng.choice(n, size=eff, replace=False)
        trees.append(IsolationTree(_grow(data, idx, 0, limit, rng), limit))
    return IsolationForest(trees=trees, n_trees=n_trees, subsample_size=eff,
                           requested_subsample=subsample, seed=int(seed),
                           n_features=d)


def anomaly_score(forest: IsolationForest, x: np.ndarray) -> float:
    """Score in (0, 1]: 2^(-E[path] / c(subsample)); higher = more anomalous."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != forest.n_features:
        raise ValueError("dimension mismatch with training data")
    mean_path = sum(t.path_length(x) for t in forest.trees) / len(forest.trees)
    c = avg_path_normalizer(forest.subsample_size)
    if c <= 0:
        return 1.0
    return float(2.0 ** (-mean_path / c))


def score_rows(forest: IsolationForest, data: np.ndarray) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    return np.array([anomaly_score(forest, row) for row in data])


def flag_by_contamination(scores: dict[str, float], contamination: float) -> set[str]:
    """Flag the ceil(contamination * N) highest scorers; ties break toward
    lexicographically smaller entity IDs so reports are stable run to run."""
    if not 0.0 < contamination <= 0.5:
        raise ValueError("contamination must be in (0, 0.5]")
    n = len(scores)
    if n == 0:
        return set()
    k = math.ceil(contamination * n)
    ranked = sorted(scores, key=lambda e: (-scores[e], e))
    return set(ranked[:k])
