"""Full-covariance Gaussian mixture fitted by EM, for the IP and content
perspectives.

Design constraints, all load-bearing for reproducibility:

* initialization is farthest-point seeding where the starting row and all
  tie-breaks are keyed to a content hash of each row (salted by the seed),
  so permuting the input rows permutes the result instead of changing it;
* every covariance carries a ridge of ``reg_covar`` on the diagonal;
* reductions go through einsum/np.sum (pairwise, single-threaded) rather
  than BLAS matmul so results do not depend on the thread count.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular

LOG_2PI = float(np.log(2.0 * np.pi))
DEFAULT_REG_COVAR = 1e-6
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 200
UNCERTAIN_CONFIDENCE = 0.6  # members below this stay out of preliminary labeling


class SingularCovariance(Exception):
    """Covariance not factorizable even after diagonal regularization."""


class DegenerateComponent(Exception):
    """A component collapsed twice despite re-seeding."""


@dataclass
class GaussianComponent:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.covariance = np.asarray(self.covariance, dtype=np.float64)
        d = self.mean.shape[0]
        if self.covariance.shape != (d, d):
            raise ValueError("covariance shape mismatch")
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-12):
            raise ValueError("covariance not symmetric")


@dataclass
class GmmParams:
    weights: np.ndarray
    components: list[GaussianComponent]
    train_log_likelihoods: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].mean.shape[0]

    def to_json_dict(self) -> dict:
        return {
            "version": 1,
            "model": "gaussian_mixture",
            "k": self.k,
            "weights": self.weights.tolist(),
            "means": [c.mean.tolist() for c in self.components],
            "covariances": [c.covariance.tolist() for c in self.components],
            "train_log_likelihoods": list(self.train_log_likelihoods),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "GmmParams":
        comps = [GaussianComponent(np.array(m), np.array(c))
                 for m, c in zip(d["means"], d["covariances"])]
        return cls(np.array(d["weights"]), comps,
                   list(d.get("train_log_likelihoods", [])))

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


@dataclass
class ClusterAssignment:
    cluster: np.ndarray            # argmax component per row
    responsibilities: np.ndarray   # rows x K posterior
    confidence: np.ndarray         # max responsibility per row


def _chol_lower(cov: np.ndarray, reg: float) -> np.ndarray:
    try:
        return cholesky(cov, lower=True)
    except np.linalg.LinAlgError:
        pass
    try:
        return cholesky(cov + reg * np.eye(cov.shape[0]), lower=True)
    except np.linalg.LinAlgError as e:
        raise SingularCovariance(str(e)) from None


def gaussian_log_density(x: np.ndarray, comp: GaussianComponent,
                         reg: float = DEFAULT_REG_COVAR) -> float:
    """Log of the multivariate normal density at ``x``, via Cholesky."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    L = _chol_lower(comp.covariance, reg)
    diff = x - comp.mean
    sol = solve_triangular(L, diff, lower=True)
    log_det = 2.0 * np.sum(np.log(np.diag(L)))
    return float(-0.5 * (len(x) * LOG_2PI + log_det + np.sum(sol * sol)))


def _log_density_matrix(data: np.ndarray, params: GmmParams,
                        reg: float = DEFAULT_REG_COVAR) -> np.ndarray:
    """N x K matrix of per-component log densities."""
    n, d = data.shape
    out = np.empty((n, params.k), dtype=np.float64)
    for k, comp in enumerate(params.components):
        L = _chol_lower(comp.covariance, reg)
        diff = (data - comp.mean).T   # d x n
        sol = solve_triangular(L, diff, lower=True)
        log_det = 2.0 * np.sum(np.log(np.diag(L)))
        out[:, k] = -0.5 * (d * LOG_2PI + log_det + np.einsum("dn,dn->n", sol, sol))
    return out


def _logsumexp_rows(m: np.ndarray) -> np.ndarray:
    mx = m.max(axis=1, keepdims=True)
    return (mx + np.log(np.sum(np.exp(m - mx), axis=1, keepdims=True)))[:, 0]


def _log_weights(weights: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(weights)


def mixture_log_density(x: np.ndarray, params: GmmParams) -> float:
    """Log of the weighted mixture density, via log-sum-exp."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    logp = _log_density_matrix(x, params) + _log_weights(params.weights)[None, :]
    return float(_logsumexp_rows(logp)[0])


def _row_hashes(data: np.ndarray, seed: int) -> np.ndarray:
    """Order-invariant per-row 64-bit hashes, salted by the seed."""
    out = np.empty(len(data), dtype=np.uint64)
    salt = str(int(seed)).encode()
    for i, row in enumerate(data):
        h = hashlib.blake2b(row.tobytes() + salt, digest_size=8).digest()
        out[i] = int.from_bytes(h, "big")
    return out


def _farthest_point_seeds(data: np.ndarray, k: int, hashes: np.ndarray) -> np.ndarray:
    """Greedy max-min-distance center selection; all ties break on the row
    hash so the choice is independent of row order."""
    n = len(data)
    first = int(np.lexsort((hashes,))[0]) if n else 0
    centers = [first]
    d2 = np.einsum("nd,nd->n", data - data[first], data - data[first])
    for _ in range(1, k):
        best = d2.max()
        cand = np.nonzero(d2 >= best)[0]
        nxt = int(cand[np.argmin(hashes[cand])])
        centers.append(nxt)
        nd2 = np.einsum("nd,nd->n", data - data[nxt], data - data[nxt])
        d2 = np.minimum(d2, nd2)
    return np.asarray(centers, dtype=np.int64)


def _ml_covariance(data: np.ndarray, reg: float) -> np.ndarray:
    mu = data.mean(axis=0)
    diff = data - mu
    cov = np.einsum("ni,nj->ij", diff, diff) / len(data)
    return cov + reg * np.eye(data.shape[1])


def fit_em(data: np.ndarray, k: int, seed: int = 0,
           max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
           reg_covar: float = DEFAULT_REG_COVAR) -> GmmParams:
    """Fit a K-component mixture by EM.

    Stops when the relative log-likelihood improvement falls below ``tol``
    or after ``max_iter`` iterations; the per-iteration log likelihood is
    recorded on the returned params.  A component whose support collapses is
    re-seeded once at the point worst explained by the model; a second
    collapse raises DegenerateComponent.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError("data must be 2-D")
    n, d = data.shape
    if n < k:
        raise ValueError(f"need at least k={k} rows, got {n}")

    hashes = _row_hashes(data, seed)
    seeds = _farthest_point_seeds(data, k, hashes)
    base_cov = _ml_covariance(data, reg_covar)
    params = GmmParams(
        weights=np.full(k, 1.0 / k),
        components=[GaussianComponent(data[i].copy(), base_cov.copy()) for i in seeds],
    )

    reseeded = set()
    prev_ll = -np.inf
    for _ in range(max_iter):
        log_dens = _log_density_matrix(data, params, reg_covar)
        weighted = log_dens + _log_weights(params.weights)[None, :]
        log_norm = _logsumexp_rows(weighted)
        ll = float(np.sum(log_norm))
        params.train_log_likelihoods.append(ll)
        resp = np.exp(weighted - log_norm[:, None])

        nk = np.sum(resp, axis=0)
        collapsed = np.nonzero(nk < 10 * np.finfo(float).eps)[0]
        if collapsed.size:
            for c in collapsed:
                if c in reseeded:
                    raise DegenerateComponent(f"component {int(c)} collapsed twice")
                reseeded.add(int(c))
                worst = int(np.argmin(log_norm))
                params.components[c] = GaussianComponent(data[worst].copy(), base_cov.copy())
                params.weights = np.full(k, 1.0 / k)
            continue

        params.weights = nk / n
        for c in range(k):
            mu = np.einsum("n,nd->d", resp[:, c], data) / nk[c]
            diff = data - mu
            cov = np.einsum("n,ni,nj->ij", resp[:, c], diff, diff) / nk[c]
            cov += reg_covar * np.eye(d)
            params.components[c] = GaussianComponent(mu, cov)

        if np.isfinite(prev_ll) and ll - prev_ll < tol * abs(prev_ll):
            break
        prev_ll = ll
    return params


def assign(data: np.ndarray, params: GmmParams) -> ClusterAssignment:
    """Posterior responsibilities, hard cluster, and confidence per row."""
    data = np.asarray(data, dtype=np.float64)
    weighted = _log_density_matrix(data, params) + _log_weights(params.weights)[None, :]
    log_norm = _logsumexp_rows(weighted)
    resp = np.exp(weighted - log_norm[:, None])
    return ClusterAssignment(
        cluster=np.argmax(resp, axis=1),
        responsibilities=resp,
        confidence=resp.max(axis=1),
    )
