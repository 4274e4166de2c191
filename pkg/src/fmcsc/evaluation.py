"""K-means on common semantics and the ACC / NMI / ARI clustering metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContractError


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    # inertia after every assignment step of the winning restart
    history: tuple[float, ...] = field(default=())


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _sq_dists(x, x[chosen]).ravel()
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=closest / total))
        else:
            # every point coincides with a chosen center; pick an unused row
            free = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(free))
        chosen.append(nxt)
        closest = np.minimum(closest, _sq_dists(x, x[nxt : nxt + 1]).ravel())
    return x[chosen].copy()


def _lloyd(x, centers, max_iters, tol):
    history = []
    prev = None
    for _ in range(max_iters):
        d = _sq_dists(x, centers)
        labels = d.argmin(axis=1)
        inertia = float(d[np.arange(x.shape[0]), labels].sum())
        history.append(inertia)
        if prev is not None and prev - inertia <= tol * max(prev, 1e-300):
            break
        prev = inertia
        counts = np.bincount(labels, minlength=centers.shape[0])
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        nonempty = counts > 0
        centers = centers.copy()
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not nonempty.all():
            # re-seed each empty cluster at the point farthest from its center
            own = d[np.arange(x.shape[0]), labels].copy()
            for c in np.flatnonzero(~nonempty):
                far = int(own.argmax())
                centers[c] = x[far]
                own[far] = -1.0
    d = _sq_dists(x, centers)
    labels = d.argmin(axis=1)
    inertia = float(((x - centers[labels]) ** 2).sum())
    return labels, centers, inertia, history


def kmeans(
    h: np.ndarray,
    k: int,
    seed: int = 0,
    restarts: int = 10,
    max_iters: int = 300,
    tol: float = 1e-6,
) -> ClusterAssignment:
    """Lloyd's algorithm with k-means++ seeding; best of ``restarts`` by inertia.

    Ties between restarts go to the lowest restart index.
    """
    x = np.asarray(h, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError("kmeans expects a 2-D feature matrix")
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ContractError(f"need 1 <= K <= N, got K={k}, N={n}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        result = _lloyd(x, _kmeanspp(x, k, rng), max_iters, tol)
        if best is None or result[2] < best[2]:
            best = result
    labels, centers, inertia, history = best
    return ClusterAssignment(labels.astype(np.int64), centers, inertia, tuple(history))


# ------------------------------------------------------------------ metrics


def _check(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if pred.shape != truth.shape:
        raise ContractError(f"label vectors differ in length: {pred.size} vs {truth.size}")
    return pred, truth


def contingency(pred, truth) -> np.ndarray:
    pred, truth = _check(pred, truth)
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(truth, return_inverse=True)
    table = np.zeros((p.max(initial=-1) + 1, t.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    return table


def clustering_accuracy(pred, truth) -> float:
    pred, truth = _check(pred, truth)
    if pred.size == 0:
        return 0.0
    table = contingency(pred, truth)
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum() / pred.size)


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth) -> float:
    """Mutual information normalized by the arithmetic mean of the entropies."""
    pred, truth = _check(pred, truth)
    n = pred.size
    if n == 0:
        return 0.0
    table = contingency(pred, truth).astype(np.float64)
    a, b = table.sum(1), table.sum(0)
    nz = table > 0
    mi = float((table[nz] / n * np.log(table[nz] * n / np.outer(a, b)[nz])).sum())
    denom = 0.5 * (_entropy(a, n) + _entropy(b, n))
    if denom <= 0:
        return 0.0
    return float(min(max(mi / denom, 0.0), 1.0))


def _pairs(x: np.ndarray) -> float:
    return float((x * (x - 1) / 2.0).sum())


def ari(pred, truth) -> float:
    pred, truth = _check(pred, truth)
    n = pred.size
    table = contingency(pred, truth).astype(np.float64)
    index = _pairs(table)
    sum_a, sum_b = _pairs(table.sum(1)), _pairs(table.sum(0))
    total = n * (n - 1) / 2.0
    if total == 0:
        return 1.0
    expected = sum_a * sum_b / total
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        # both partitions trivial (all-in-one or all singletons) and therefore identical
        return 1.0
    return float((index - expected) / (max_index - expected))


@dataclass(frozen=True)
class ClusterMetrics:
    acc: float
    nmi: float
    ari: float


def score(pred, truth) -> ClusterMetrics:
    return ClusterMetrics(clustering_accuracy(pred, truth), nmi(pred, truth), ari(pred, truth))
