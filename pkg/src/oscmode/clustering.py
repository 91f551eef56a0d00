"""Unsupervised mode recognition.

GMM-DTW clusters cycles on their rows of the pairwise DTW distance matrix.
Two baselines are provided: a GMM fitted to the raw latent points with a
per-cycle majority vote, and k-Shape on the flattened cycles. ``align_labels``
maps arbitrary cluster ids onto ground-truth ids for scoring.
"""

from __future__ import annotations

import csv
import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import pca as pca_mod
from .errors import DataError, DegenerateSignalError, IoError, NumericalError, ShapeError, UnsupportedError
from .rng import Rng, derive_seed

DTW_BATCH = 256  # pairs per wavefront batch; bounds memory at ~B*L*L doubles


def worker_count() -> int:
    env = os.environ.get("OSC_THREADS")
    cores = os.cpu_count() or 1
    if env:
        try:
            return max(1, min(int(env), cores))
        except ValueError:
            pass
    return cores


# ---------------------------------------------------------------- DTW

def _as_sequence(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] == 0:
        raise ShapeError("DTW needs a non-empty sequence of vectors")
    return a


def _accumulate(cost: np.ndarray) -> np.ndarray:
    """Accumulated-cost tables for a batch of local-cost grids (B, s, t).

    Returns W padded with an infinite first row and column, shape (B, s+1, t+1).
    Cells on one anti-diagonal depend only on the previous two, so each
    diagonal is filled in one vectorised step.
    """
    B, s, t = cost.shape
    W = np.full((B, s + 1, t + 1), np.inf)
    W[:, 0, 0] = 0.0
    for k in range(2, s + t + 1):
        i = np.arange(max(1, k - t), min(s, k - 1) + 1)
        j = k - i
        best = np.minimum(np.minimum(W[:, i - 1, j - 1], W[:, i - 1, j]), W[:, i, j - 1])
        W[:, i, j] = cost[:, i - 1, j - 1] + best
    return W


def local_cost(a, b) -> np.ndarray:
    a, b = _as_sequence(a), _as_sequence(b)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return np.sqrt(np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1))


def dtw(a, b) -> float:
    cost = local_cost(a, b)
    return float(_accumulate(cost[None])[0, -1, -1])


def dtw_batch(a_batch: np.ndarray, b_batch: np.ndarray) -> np.ndarray:
    """DTW for stacked pairs: a_batch (B, s, d), b_batch (B, t, d)."""
    diff = a_batch[:, :, None, :] - b_batch[:, None, :, :]
    cost = np.sqrt(np.sum(diff * diff, axis=-1))
    return _accumulate(cost)[:, -1, -1].copy()


def dtw_path(a, b) -> list[tuple[int, int]]:
    """Optimal warping path as 1-based (i, j) pairs from (1, 1) to (s, t).

    Backtracking prefers the diagonal predecessor, then left (i, j-1), then up
    (i-1, j) when accumulated costs tie.
    """
    cost = local_cost(a, b)
    W = _accumulate(cost[None])[0]
    i, j = cost.shape
    path = [(i, j)]
    while (i, j) != (1, 1):
        options = [(W[i - 1, j - 1], (i - 1, j - 1)), (W[i, j - 1], (i, j - 1)), (W[i - 1, j], (i - 1, j))]
        best = min(v for v, _ in options)
        i, j = next(cell for v, cell in options if v == best)
        path.append((i, j))
    return path[::-1]


def path_cost(a, b, path) -> float:
    cost = local_cost(a, b)
    return float(sum(cost[i - 1, j - 1] for i, j in path))


@dataclass
class DtwMatrix:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ShapeError("DTW matrix must be square")
        self.values = v

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def write_csv(self, path) -> None:
        try:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["cycle"] + [str(i) for i in range(self.n)])
                for i, row in enumerate(self.values):
                    w.writerow([i] + [repr(float(x)) for x in row])
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc

    @classmethod
    def read_csv(cls, path) -> "DtwMatrix":
        try:
            with open(path, newline="", encoding="utf-8") as fh:
                rows = list(csv.reader(fh))
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc}") from exc
        return cls(np.array([[float(x) for x in r[1:]] for r in rows[1:]]))


def dtw_feature_matrix(cycles: Sequence[np.ndarray], threads: Optional[int] = None) -> DtwMatrix:
    """Pairwise DTW distances, each unordered pair computed once."""
    seqs = [_as_sequence(c) for c in cycles]
    n = len(seqs)
    if n < 2:
        raise ShapeError("need at least two cycles")
    dims = {s.shape[1] for s in seqs}
    if len(dims) != 1:
        raise ShapeError("cycles differ in dimension")
    out = np.zeros((n, n))
    # batch pairs of equal shape so one wavefront serves many pairs
    groups: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for i in range(n):
        for j in range(i + 1, n):
            groups.setdefault((seqs[i].shape[0], seqs[j].shape[0]), []).append((i, j))
    jobs = []
    for pairs in groups.values():
        for start in range(0, len(pairs), DTW_BATCH):
            jobs.append(pairs[start:start + DTW_BATCH])

    def run(chunk):
        a = np.stack([seqs[i] for i, _ in chunk])
        b = np.stack([seqs[j] for _, j in chunk])
        return chunk, dtw_batch(a, b)

    threads = worker_count() if threads is None else max(1, threads)
    if threads == 1 or len(jobs) == 1:
        results = map(run, jobs)
    else:
        pool = ThreadPoolExecutor(max_workers=threads)
        results = pool.map(run, jobs)
    for chunk, dists in results:
        for (i, j), d in zip(chunk, dists):
            out[i, j] = out[j, i] = d
    if threads != 1 and len(jobs) != 1:
        pool.shutdown()
    return DtwMatrix(out)


# ---------------------------------------------------------------- GMM

@dataclass
class GmmParams:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    covariances: np.ndarray  # (K, d, d)

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "means": self.means.tolist(),
                "covariances": self.covariances.tolist()}


@dataclass
class GmmResult:
    params: GmmParams
    responsibilities: np.ndarray
    log_likelihood: list[float]
    converged: bool


def _log_gauss(X: np.ndarray, params: GmmParams) -> np.ndarray:
    """log(w_k N(x_i | mu_k, Sigma_k)), shape (n, K)."""
    n, d = X.shape
    out = np.empty((n, params.K))
    for k in range(params.K):
        try:
            chol = np.linalg.cholesky(params.covariances[k])
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"covariance {k} is not positive definite") from exc
        diff = X - params.means[k]
        sol = np.linalg.solve(chol, diff.T)
        maha = np.sum(sol * sol, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        with np.errstate(divide="ignore"):
            logw = np.log(params.weights[k])
        out[:, k] = logw - 0.5 * (d * math.log(2 * math.pi) + logdet + maha)
    return out


def _e_step(X: np.ndarray, params: GmmParams) -> tuple[np.ndarray, float]:
    lg = _log_gauss(X, params)
    top = np.max(lg, axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.sum(np.exp(lg - top), axis=1))
    resp = np.exp(lg - lse[:, None])
    resp /= resp.sum(axis=1, keepdims=True)
    return resp, float(np.sum(lse))


def _m_step(X: np.ndarray, resp: np.ndarray, reg: float, previous: GmmParams) -> GmmParams:
    n, d = X.shape
    Nk = resp.sum(axis=0)
    weights = Nk / n
    means = previous.means.copy()
    covs = previous.covariances.copy()
    for k in range(resp.shape[1]):
        if Nk[k] <= 1e-12:
            continue  # empty component keeps its last shape, weight ~0
        means[k] = resp[:, k] @ X / Nk[k]
        diff = X - means[k]
        cov = (resp[:, k, None] * diff).T @ diff / Nk[k]
        covs[k] = 0.5 * (cov + cov.T) + reg * np.eye(d)
    return GmmParams(weights / weights.sum(), means, covs)


def init_means(X: np.ndarray, K: int, seed: int) -> np.ndarray:
    """Farthest-point selection from a seeded first centre."""
    rng = Rng(derive_seed(seed, "gmm-init"))
    first = int(rng.integers(0, X.shape[0], 1)[0])
    chosen = [first]
    d2 = np.sum((X - X[first]) ** 2, axis=1)
    for _ in range(1, K):
        nxt = int(np.argmax(d2))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    return X[chosen].copy()


def gmm_fit(X, K: int, seed: int = 0, tol: float = 1e-6, max_iter: int = 500, reg: float = 1e-6) -> GmmResult:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if K < 1:
        raise DataError("K must be positive")
    if n < K:
        raise DataError(f"{n} samples cannot support {K} components")
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite features")
    params = GmmParams(np.full(K, 1.0 / K), init_means(X, K, seed), np.tile(np.eye(d), (K, 1, 1)))
    history: list[float] = []
    resp, _ = _e_step(X, params)
    converged = False
    for _ in range(max_iter):
        params = _m_step(X, resp, reg, params)
        resp, ll = _e_step(X, params)
        if not math.isfinite(ll):
            raise NumericalError("GMM log-likelihood is not finite")
        history.append(ll)
        if len(history) >= 2 and abs(history[-1] - history[-2]) < tol:
            converged = True
            break
    return GmmResult(params, resp, history, converged)


def gmm_predict(params: GmmParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] != params.d:
        raise ShapeError(f"GMM has dimension {params.d}, data {X.shape[1]}")
    resp, _ = _e_step(X, params)
    return np.argmax(resp, axis=1)  # argmax returns the lowest index on ties


def gmm_bic(X, K: int, seed: int = 0, **kw) -> float:
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    res = gmm_fit(X, K, seed, **kw)
    free = (K - 1) + K * d + K * d * (d + 1) / 2
    return -2.0 * res.log_likelihood[-1] + free * math.log(n)


def select_k(X, k_range=range(1, 9), seed: int = 0, **kw) -> int:
    """K with the lowest BIC; not used by the default pipelines."""
    X = np.asarray(X, dtype=np.float64)
    scores = [(gmm_bic(X, k, seed, **kw), k) for k in k_range if k <= X.shape[0]]
    return min(scores)[1]


def dtw_features(dist: DtwMatrix, pca_dims: Optional[int] = 8) -> np.ndarray:
    """Rows of the DTW matrix, optionally PCA-compacted to min(pca_dims, n-1) dimensions."""
    X = dist.values
    if pca_dims is None:
        return X.copy()
    k = min(pca_dims, dist.n - 1)
    model = pca_mod.fit(X, k)
    return pca_mod.transform(model, X)


def gmm_dtw_cluster(cycles: Sequence[np.ndarray], K: int, seed: int = 0, pca_dims: Optional[int] = 8,
                    reg: float = 1e-6, dist: Optional[DtwMatrix] = None) -> np.ndarray:
    if len(cycles) < K:
        raise DataError(f"{len(cycles)} cycles cannot form {K} clusters")
    dist = dtw_feature_matrix(cycles) if dist is None else dist
    X = dtw_features(dist, pca_dims)
    res = gmm_fit(X, K, seed, reg=reg)
    return gmm_predict(res.params, X)


def majority_vote(labels: np.ndarray, K: int) -> int:
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=K)
    return int(np.argmax(counts))


def gmm_point_cluster(cycles: Sequence[np.ndarray], K: int, seed: int = 0, reg: float = 1e-6) -> np.ndarray:
    """GMM over all latent points; each cycle takes its points' majority label."""
    if len(cycles) < K:
        raise DataError(f"{len(cycles)} cycles cannot form {K} clusters")
    points = np.concatenate([_as_sequence(c) for c in cycles], axis=0)
    res = gmm_fit(points, K, seed, reg=reg)
    point_labels = gmm_predict(res.params, points)
    out, start = [], 0
    for c in cycles:
        stop = start + len(c)
        out.append(majority_vote(point_labels[start:stop], K))
        start = stop
    return np.array(out, dtype=np.int64)


# ---------------------------------------------------------------- k-Shape

def znorm(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    if a.size == 0:
        raise ShapeError("empty sequence")
    sd = a.std()
    if sd <= 1e-12 * max(1.0, float(np.max(np.abs(a)))):
        raise DegenerateSignalError("sequence has zero variance")
    return (a - a.mean()) / sd


def _ncc(x: np.ndarray, y: np.ndarray) -> tuple[float, int]:
    """Max normalised cross-correlation of z-normalised x, y and its shift."""
    cc = np.correlate(x, y, mode="full")  # lag runs from -(len(y)-1) to len(x)-1
    denom = np.linalg.norm(x) * np.linalg.norm(y)
    ncc = cc / denom
    idx = int(np.argmax(ncc))
    return float(ncc[idx]), idx - (len(y) - 1)


def sbd(a, b) -> float:
    x, y = znorm(a), znorm(b)
    value, _ = _ncc(x, y)
    return max(0.0, 1.0 - value)


def _shift(y: np.ndarray, lag: int) -> np.ndarray:
    """Shift y by ``lag`` samples with zero fill."""
    out = np.zeros_like(y)
    if lag >= 0:
        out[lag:] = y[:len(y) - lag]
    else:
        out[:lag] = y[-lag:]
    return out


@dataclass
class KShapeModel:
    centroids: np.ndarray  # (K, m)
    labels: np.ndarray
    iterations: int = 0


def _power_iteration(M: np.ndarray, start: np.ndarray, tol: float = 1e-8, max_iter: int = 10000) -> np.ndarray:
    v = start / np.linalg.norm(start)
    for _ in range(max_iter):
        w = M @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            return v
        w /= norm
        if np.linalg.norm(w - v) < tol:
            return w
        v = w
    return v


def shape_centroid(members: np.ndarray, reference: Optional[np.ndarray]) -> np.ndarray:
    """Shape-extraction step: align members to the reference, take the dominant direction."""
    m = members.shape[1]
    if reference is not None and np.any(reference != 0):
        aligned = []
        for x in members:
            _, lag = _ncc(reference, x)
            aligned.append(_shift(x, lag))
        X = np.array(aligned)
    else:
        X = members.copy()
    Q = np.eye(m) - np.full((m, m), 1.0 / m)
    M = Q @ (X.T @ X) @ Q
    start = Q @ X.mean(axis=0)
    if np.linalg.norm(start) < 1e-12:
        start = Q @ X[0]
    if np.linalg.norm(start) < 1e-12:
        return np.zeros(m)
    c = _power_iteration(M, start)
    # eigenvector sign is arbitrary; keep the orientation closer to the members
    if np.sum(np.linalg.norm(X - c, axis=1)) > np.sum(np.linalg.norm(X + c, axis=1)):
        c = -c
    sd = c.std()
    return (c - c.mean()) / sd if sd > 0 else np.zeros(m)


def kshape_fit(sequences: Sequence[np.ndarray], K: int, seed: int = 0, max_iter: int = 100) -> KShapeModel:
    rows = [znorm(s) for s in sequences]
    if not rows or len({r.shape[0] for r in rows}) != 1:
        raise ShapeError("k-Shape needs sequences of equal length")
    X = np.array(rows)
    n, m = X.shape
    if n < K:
        raise DataError(f"{n} sequences cannot form {K} clusters")
    labels = Rng(derive_seed(seed, "kshape")).integers(0, K, n).astype(np.int64)
    centroids = np.zeros((K, m))
    it = 0
    for it in range(1, max_iter + 1):
        old = labels.copy()
        for k in range(K):
            members = X[labels == k]
            if len(members) == 0:
                # reseed an empty cluster with the worst-fitting sequence
                dist = np.array([_safe_sbd(X[i], centroids[labels[i]]) for i in range(n)])
                members = X[[int(np.argmax(dist))]]
            centroids[k] = shape_centroid(members, centroids[k])
        dist = np.array([[_safe_sbd(x, c) for c in centroids] for x in X])
        labels = np.argmin(dist, axis=1).astype(np.int64)
        if np.array_equal(labels, old):
            break
    return KShapeModel(centroids, labels, it)


def _safe_sbd(x: np.ndarray, c: np.ndarray) -> float:
    if not np.any(c):
        return 1.0  # an all-zero centroid correlates with nothing
    value, _ = _ncc(x, c)
    return max(0.0, 1.0 - value)


def flatten_for_kshape(cycle: np.ndarray) -> np.ndarray:
    """Interleaved latent coordinates in time order (no sorting: shape matters here)."""
    return np.asarray(cycle, dtype=np.float64).reshape(-1)


def kshape_cluster(cycles: Sequence[np.ndarray], K: int, seed: int = 0, max_iter: int = 100) -> np.ndarray:
    return kshape_fit([flatten_for_kshape(c) for c in cycles], K, seed, max_iter).labels


# ---------------------------------------------------------------- alignment

MAX_ALIGN_K = 6


def align_labels(pred, truth, K: int) -> tuple[tuple[int, ...], np.ndarray]:
    """Permutation ``perm`` (pred label p becomes perm[p]) maximising agreement with truth."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ShapeError("pred and truth differ in length")
    if K > MAX_ALIGN_K:
        raise UnsupportedError(f"exhaustive alignment supports K <= {MAX_ALIGN_K}")
    for arr in (pred, truth):
        if arr.size and (arr.min() < 0 or arr.max() >= K):
            raise DataError(f"labels must lie in [0, {K})")
    joint = np.zeros((K, K), dtype=np.int64)
    np.add.at(joint, (pred, truth), 1)
    best, best_perm = -1, None
    for perm in itertools.permutations(range(K)):  # lexicographic order
        agree = int(sum(joint[p, perm[p]] for p in range(K)))
        if agree > best:
            best, best_perm = agree, perm
    mapping = np.array(best_perm, dtype=np.int64)
    return tuple(int(p) for p in best_perm), mapping[pred] if pred.size else pred.copy()


METHODS = ("gmm-dtw", "gmm", "kshape")


@dataclass
class ClusteringReport:
    method: str
    K: int
    seed: int
    labels: list[int]
    permutation: Optional[list[int]] = None
    metrics: Optional[dict] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"method": self.method, "K": self.K, "seed": self.seed, "labels": self.labels,
               "permutation": self.permutation, "metrics": self.metrics}
        out.update(self.extra)
        return out


def cluster(method: str, cycles: Sequence[np.ndarray], K: int, seed: int = 0,
            **kw) -> tuple[np.ndarray, np.ndarray]:
    """Labels plus an (n, K) membership score matrix (higher means more likely)."""
    if len(cycles) < K:
        raise DataError(f"{len(cycles)} cycles cannot form {K} clusters")
    if method == "gmm-dtw":
        pca_dims = kw.get("pca_dims", 8)
        X = dtw_features(kw.get("dist") or dtw_feature_matrix(cycles), pca_dims)
        res = gmm_fit(X, K, seed, reg=kw.get("reg", 1e-6))
        return gmm_predict(res.params, X), res.responsibilities
    if method == "gmm":
        points = np.concatenate([_as_sequence(c) for c in cycles], axis=0)
        res = gmm_fit(points, K, seed, reg=kw.get("reg", 1e-6))
        point_labels = gmm_predict(res.params, points)
        labels, shares, start = [], [], 0
        for c in cycles:
            votes = np.bincount(point_labels[start:start + len(c)], minlength=K)
            labels.append(int(np.argmax(votes)))
            shares.append(votes / votes.sum())
            start += len(c)
        return np.array(labels, dtype=np.int64), np.array(shares)
    if method == "kshape":
        seqs = [flatten_for_kshape(c) for c in cycles]
        model = kshape_fit(seqs, K, seed, kw.get("max_iter", 100))
        dist = np.array([[_safe_sbd(znorm(x), c) for c in model.centroids] for x in seqs])
        return model.labels, -dist
    raise DataError(f"unknown clustering method {method!r}; choose from {', '.join(METHODS)}")


def permute_scores(scores: np.ndarray, perm: Sequence[int]) -> np.ndarray:
    """Reorder score columns so column perm[p] holds cluster p's score."""
    out = np.empty_like(scores)
    for p, q in enumerate(perm):
        out[:, q] = scores[:, p]
    return out
