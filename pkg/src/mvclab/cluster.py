"""K-means, Hungarian matching, cluster-assignment enhancement targets, label fusion."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

from .autodiff import ContractError


class InstanceError(ValueError):
    """Problem instance is infeasible (e.g. fewer samples than clusters)."""


# -- K-means ------------------------------------------------------------------------------------

@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    objective: float
    iterations: int
    history: List[float] = field(default_factory=list)


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: each new centre drawn with probability ∝ squared distance."""
    m = x.shape[0]
    centers = [x[rng.integers(m)]]
    closest = _sq_dists(x, centers[0][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(m)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, m - 1)
        centers.append(x[idx])
        closest = np.minimum(closest, _sq_dists(x, x[idx][None, :])[:, 0])
    return np.array(centers)


def _assign(x, centroids):
    """Nearest-centroid assignment, relocating empty clusters to the worst-fit points."""
    k = centroids.shape[0]
    labels = _sq_dists(x, centroids).argmin(axis=1)
    counts = np.bincount(labels, minlength=k)
    for e in np.nonzero(counts == 0)[0]:
        cost = ((x - centroids[labels]) ** 2).sum(axis=1)
        cost = np.where(counts[labels] > 1, cost, -1.0)
        far = int(np.argmax(cost))
        centroids[e] = x[far]
        counts[labels[far]] -= 1
        counts[e] += 1
        labels[far] = e
    # exact objective: the expanded distance form leaves roundoff where points sit on centroids
    return labels, float(((x - centroids[labels]) ** 2).sum())


def _lloyd(x, k, rng, max_iter, tol) -> KMeansResult:
    centroids = kmeans_plusplus(x, k, rng)
    labels, obj = _assign(x, centroids)
    history = [obj]
    it = 0
    for it in range(1, max_iter + 1):
        new = centroids.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = x[members].mean(axis=0)
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        new_labels, new_obj = _assign(x, new)
        if new_obj > obj:
            # roundoff at a fixed point; keep the better state
            break
        centroids, labels, obj = new, new_labels, new_obj
        history.append(obj)
        if shift < tol:
            break
    return KMeansResult(centroids=centroids, assignments=labels, objective=obj,
                        iterations=it, history=history)


def kmeans(features: np.ndarray, n_clusters: int, seed: int = 0, max_iter: int = 300,
           tol: float = 1e-6, n_init: int = 1) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding; best of ``n_init`` restarts by objective."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError("features must be a 2-D matrix")
    m = x.shape[0]
    if not 1 <= n_clusters <= m:
        raise InstanceError(f"need 1 <= K <= m, got K={n_clusters}, m={m}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        res = _lloyd(x, n_clusters, rng, max_iter, tol)
        if best is None or res.objective < best.objective:
            best = res
    return best


class KMeans(ClusterMixin, TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`kmeans`."""

    def __init__(self, n_clusters=8, n_init=1, max_iter=300, tol=1e-6, random_state=0):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        res = kmeans(X, self.n_clusters, seed=self.random_state, max_iter=self.max_iter,
                     tol=self.tol, n_init=self.n_init)
        self.cluster_centers_ = res.centroids
        self.labels_ = res.assignments
        self.inertia_ = res.objective
        self.n_iter_ = res.iterations
        self.history_ = res.history
        return self

    def transform(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        return np.sqrt(_sq_dists(X, self.cluster_centers_))

    def predict(self, X):
        return self.transform(X).argmin(axis=1)


# -- Hungarian ------------------------------------------------------------------------------------

def _hungarian_duals(cost: np.ndarray):
    """Shortest augmenting path Hungarian method; returns (row -> col, u, v)."""
    n = cost.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)     # p[j]: row matched to column j (1-based, 0 = none)
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    assign = np.empty(n, dtype=int)
    for j in range(1, n + 1):
        assign[p[j] - 1] = j - 1
    return assign, u[1:], v[1:]


def _has_perfect_matching(allowed: np.ndarray) -> bool:
    n = allowed.shape[0]
    match_col = -np.ones(allowed.shape[1], dtype=int)

    def augment(i, seen):
        for j in np.nonzero(allowed[i])[0]:
            if not seen[j]:
                seen[j] = True
                if match_col[j] < 0 or augment(match_col[j], seen):
                    match_col[j] = i
                    return True
        return False

    return all(augment(i, np.zeros(allowed.shape[1], dtype=bool)) for i in range(n))


def _lexicographic_min(tight: np.ndarray) -> np.ndarray:
    """Lexicographically smallest perfect matching inside the tight-edge graph."""
    n = tight.shape[0]
    allowed = tight.copy()
    perm = np.empty(n, dtype=int)
    for i in range(n):
        for j in np.nonzero(allowed[i])[0]:
            trial = allowed.copy()
            trial[i, :] = False
            trial[i, j] = True
            trial[i + 1:, j] = False
            if _has_perfect_matching(trial):
                allowed = trial
                perm[i] = j
                break
    return perm


def hungarian(cost) -> Tuple[np.ndarray, float]:
    """Minimum-cost permutation of a square cost matrix.

    Returns ``(perm, total)`` with row ``i`` assigned to column ``perm[i]``.
    Among optimal permutations the lexicographically smallest is returned.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ContractError(f"cost matrix must be square, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ContractError("cost matrix must be finite")
    n = c.shape[0]
    if n == 0:
        return np.empty(0, dtype=int), 0.0
    perm, u, v = _hungarian_duals(c)
    total = float(sum(c[i, perm[i]] for i in range(n)))
    # optimal matchings are exactly the perfect matchings on zero reduced-cost edges
    scale = max(1.0, float(np.abs(c).max()))
    tight = (c - u[:, None] - v[None, :]) <= 1e-12 * scale * n
    lex = _lexicographic_min(tight)
    lex_total = float(sum(c[i, lex[i]] for i in range(n)))
    if lex_total <= total:
        return lex, lex_total
    return perm, total


# -- correspondence and enhancement ----------------------------------------------------------------

@dataclass
class Correspondence:
    """Matching between K-means clusters and cluster-MLP clusters.

    ``permutation[j]`` is the cluster-MLP label matched to K-means cluster ``j``;
    ``contingency[i, j]`` counts samples with MLP label ``i`` and K-means label ``j``;
    ``cost = contingency.max() - contingency``.
    """

    permutation: np.ndarray
    cost: np.ndarray
    contingency: np.ndarray

    @property
    def assignment_matrix(self) -> np.ndarray:
        """Boolean A with A[i, j] = 1 when MLP cluster i is matched to K-means cluster j."""
        k = len(self.permutation)
        a = np.zeros((k, k), dtype=bool)
        a[self.permutation, np.arange(k)] = True
        return a

    def agreement(self) -> int:
        k = len(self.permutation)
        return int(self.contingency[self.permutation, np.arange(k)].sum())

    def to_json(self) -> dict:
        return {"permutation": self.permutation.tolist()}


def contingency(rows: np.ndarray, cols: np.ndarray, n_rows: int, n_cols: int) -> np.ndarray:
    table = np.zeros((n_rows, n_cols), dtype=np.int64)
    np.add.at(table, (rows, cols), 1)
    return table


def _check_labels(labels, k, what):
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise ContractError(f"{what} must be a 1-D integer array")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ContractError(f"{what} must lie in [0, {k})")
    return labels


def match_assignments(l: np.ndarray, p: np.ndarray, n_clusters: int) -> Correspondence:
    """Match cluster-MLP labels ``l`` with K-means labels ``p`` maximising agreement."""
    l = _check_labels(l, n_clusters, "cluster-MLP labels")
    p = _check_labels(p, n_clusters, "K-means labels")
    if l.shape != p.shape:
        raise ContractError("label vectors differ in length")
    table = contingency(l, p, n_clusters, n_clusters)
    cost = table.max() - table
    # Hungarian over rows = K-means clusters, so perm maps p -> l directly
    perm, _ = hungarian(cost.T)
    return Correspondence(permutation=perm, cost=cost, contingency=table)


def enhancement_target(corr: Correspondence, p: np.ndarray, n_clusters: int) -> np.ndarray:
    """One-hot m×K matrix whose row t marks the MLP cluster matched to K-means label p_t."""
    p = _check_labels(p, n_clusters, "K-means labels")
    target = np.zeros((p.size, n_clusters))
    target[np.arange(p.size), corr.permutation[p]] = 1.0
    return target


def fuse_assignments(q_batches: Sequence[np.ndarray]) -> np.ndarray:
    """argmax of the view-averaged soft assignments; ties go to the lowest index."""
    q = np.mean([np.asarray(qv, dtype=np.float64) for qv in q_batches], axis=0)
    return q.argmax(axis=1)


def final_clustering_biview(z1: np.ndarray, z2: np.ndarray, n_clusters: int, seed: int = 0,
                            n_init: int = 10) -> np.ndarray:
    """K-means on the row-wise concatenation [z1, z2]."""
    return kmeans(np.hstack([z1, z2]), n_clusters, seed=seed, n_init=n_init).assignments
