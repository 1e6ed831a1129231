"""Concentration bounds for uniform client sampling and the experiments behind them."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class BoundQuery:
    n: int
    tau: float
    epsilon: float
    rating_range: tuple[float, float] = (1.0, 5.0)

    def __post_init__(self):
        a, b = self.rating_range
        if self.n <= 0 or self.tau <= 0 or self.epsilon <= 0:
            raise ValueError("n, tau and epsilon must be positive")
        if not a < b:
            raise ValueError(f"rating range must satisfy a < b, got {self.rating_range}")


def lemma1_bound(sample_size, epsilon):
    """Hoeffding bound on a cluster's sampled count straying ``epsilon`` from |C|/K.

    ``min(1, 2 exp(-2 eps^2 / |C|))``; note the bound does not depend on K.
    """
    if sample_size <= 0 or epsilon <= 0:
        raise ValueError("sample_size and epsilon must be positive")
    return min(1.0, 2.0 * math.exp(-2.0 * epsilon ** 2 / sample_size))


def theorem1_bound(q: BoundQuery):
    """``min(1, 2 exp(-n tau eps^2 / (2 (b - a)^2)))``: probability that a rating
    predicted from the sampled-client item average strays ``eps`` from the
    full-population one."""
    a, b = q.rating_range
    return min(1.0, 2.0 * math.exp(-q.n * q.tau * q.epsilon ** 2 / (2.0 * (b - a) ** 2)))


def bound_report(kind, **query):
    """JSON-ready echo of a bound query and its value."""
    if kind == "lemma1":
        value = lemma1_bound(query["sample_size"], query["epsilon"])
        return {"bound": "lemma1", **query, "probability_bound": value,
                "confidence": 1.0 - value}
    q = BoundQuery(**query)
    value = theorem1_bound(q)
    return {"bound": "theorem1", **asdict(q), "rating_range": list(q.rating_range),
            "probability_bound": value, "confidence": 1.0 - value}


def cluster_labels(n, K, rng):
    """Random cluster labels with sizes as equal as possible (n clients spread over K)."""
    return rng.permutation(np.arange(n) % K)


def cluster_representation_mc(n, K, tau, trials, deviation_frac=0.15, rng_seed=0,
                              balanced=True):
    """Monte Carlo check that uniform sampling represents every cluster.

    Clients get cluster labels once (evenly sized clusters when ``balanced``,
    otherwise i.i.d. uniform labels); each trial samples ceil(tau n) clients
    without replacement and counts them per cluster. A (trial, cluster) pair
    *exceeds* when its count differs from |C|/K by more than
    ``deviation_frac * |C|/K``.
    """
    if trials < 1 or K < 1 or n < 1:
        raise ValueError("n, K and trials must be positive")
    rng = np.random.default_rng(rng_seed)
    labels = cluster_labels(n, K, rng) if balanced else rng.integers(K, size=n)
    size = max(1, math.ceil(tau * n - 1e-9))
    counts = np.empty((trials, K), dtype=np.int64)
    for t in range(trials):
        picked = rng.choice(n, size=size, replace=False)
        counts[t] = np.bincount(labels[picked], minlength=K)
    expected = size / K
    exceed = np.abs(counts - expected) > deviation_frac * expected
    p = float(exceed.mean())
    return {
        "n": n, "K": K, "tau": tau, "trials": trials, "deviation_frac": deviation_frac,
        "sample_size": size,
        "expected_per_cluster": expected,
        "mean_count": float(counts.mean()),
        "exceed_prob": p,
        "exceed_stderr": math.sqrt(p * (1 - p) / exceed.size),
        "min_count": int(counts.min()),
        "per_cluster_mean": counts.mean(axis=0),
        "per_cluster_exceed": exceed.mean(axis=0),
        "per_cluster_min": counts.min(axis=0),
        "hoeffding_bound": lemma1_bound(size, deviation_frac * expected),
    }


@dataclass
class ClusterAssignment:
    K: int
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    history: list  # inertia after every Lloyd iteration
    n_iter: int


def _kmeanspp(X, K, rng):
    n = len(X)
    centers = np.empty((K, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for c in range(1, K):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers[c] = X[idx]
        d2 = np.minimum(d2, np.sum((X - centers[c]) ** 2, axis=1))
    return centers


def _sq_dists(X, C):
    return np.maximum(
        np.sum(X ** 2, axis=1)[:, None] - 2 * X @ C.T + np.sum(C ** 2, axis=1)[None, :], 0.0)


def kmeans(X, K, rng_seed=0, n_init=10, max_iter=300, init=None):
    """Lloyd's algorithm with k-means++ seeding; best of ``n_init`` restarts.

    ``init`` (K x d) fixes the starting centroids and implies a single run.
    Inertia is the sum of squared Euclidean distances to the assigned centroid.
    """
    X = np.asarray(X, dtype=np.float64)
    if K < 1 or K > len(X):
        raise ValueError(f"K must be in [1, {len(X)}], got {K}")
    rng = np.random.default_rng(rng_seed)
    best = None
    for _ in range(1 if init is not None else n_init):
        C = np.array(init, dtype=np.float64) if init is not None else _kmeanspp(X, K, rng)
        labels = None
        history = []
        for it in range(max_iter):
            d = _sq_dists(X, C)
            new = np.argmin(d, axis=1)
            history.append(float(d[np.arange(len(X)), new].sum()))
            if labels is not None and np.array_equal(new, labels):
                break
            labels = new
            for c in range(K):
                members = X[labels == c]
                if len(members):
                    C[c] = members.mean(axis=0)
        inertia = float(np.sum((X - C[labels]) ** 2))
        if best is None or inertia < best.inertia:
            best = ClusterAssignment(K, labels, C.copy(), inertia, history, it + 1)
    return best


def kmeans_elbow(vectors, K_range, rng_seed=0):
    """``[(K, inertia), ...]`` for an elbow plot."""
    vectors = np.asarray(vectors)
    if max(K_range) > len(vectors):
        raise ValueError(f"K={max(K_range)} exceeds the {len(vectors)} points")
    return [(int(K), kmeans(vectors, K, rng_seed).inertia) for K in K_range]
