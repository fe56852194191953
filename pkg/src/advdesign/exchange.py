"""Greedy point exchange over cluster locations.

Gradient-based runs usually find good cluster locations but can stall at the
wrong cluster sizes. Point exchange fixes the locations and moves single
design points between them while a fixed-sample diagnostic improves.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .gda import j_hat

__all__ = ["ClusterSummary", "ExchangeResult", "cluster_design", "point_exchange"]


@dataclass
class ClusterSummary:
    centers: np.ndarray  # (m, coord_dim)
    assignment: np.ndarray  # (d,) index into centers
    counts: np.ndarray  # (m,)

    @property
    def n_clusters(self):
        return len(self.centers)


def _points(tau, coord_dim):
    return np.asarray(tau, dtype=float).reshape(-1, coord_dim)


def cluster_design(tau, radius, coord_dim=1):
    """Single-linkage clusters of design points joined whenever they are within ``radius``.

    Centres are member means, ordered lexicographically.
    """
    if radius <= 0:
        raise ValueError("cluster radius must be positive")
    pts = _points(tau, coord_dim)
    d = len(pts)
    if d == 1:
        labels = np.zeros(1, dtype=int)
    elif coord_dim == 1:
        order = np.argsort(pts[:, 0], kind="stable")
        gaps = np.diff(pts[order, 0]) > radius
        labels = np.empty(d, dtype=int)
        labels[order] = np.concatenate([[0], np.cumsum(gaps)])
    else:
        labels = fcluster(linkage(pts, method="single"), radius, criterion="distance") - 1
    n = labels.max() + 1
    counts = np.bincount(labels, minlength=n)
    centers = np.array([pts[labels == c].mean(axis=0) for c in range(n)])
    order = np.lexsort(centers.T[::-1])
    relabel = np.empty(n, dtype=int)
    relabel[order] = np.arange(n)
    return ClusterSummary(centers[order], relabel[labels], counts[order])


@dataclass
class ExchangeResult:
    tau: np.ndarray
    j_before: float
    j_after: float
    iterations: int  # evaluation passes, including the final non-improving one
    history: list = field(default_factory=list)
    pool: np.ndarray = None


def _criterion(info, kind):
    if kind == "adv":
        return np.linalg.det(info)
    if kind == "fig":
        return np.trace(info, axis1=-2, axis2=-1)
    raise ValueError(f"unknown diagnostic kind {kind!r}")


def point_exchange(model, theta_fixed, tau, kind="adv", max_iters=100, radius=0.25, candidates=None):
    """Greedy single-point exchange maximising the fixed-sample diagnostic.

    The candidate pool is ``candidates`` if given, otherwise the cluster centres
    of ``tau`` (at ``radius``); the design's own points are always added. Each
    iteration applies the best strictly improving replacement of one point by a
    pool location, ties going to the smallest (point, candidate) index pair.
    """
    cd = model.coord_dim
    pts = _points(tau, cd)
    if candidates is None:
        candidates = cluster_design(tau, radius, cd).centers
    candidates = np.asarray(candidates, dtype=float).reshape(-1, cd)
    if len(candidates) == 0:
        raise ValueError("point exchange needs a nonempty candidate pool")
    pool, inverse = np.unique(np.vstack([candidates, pts]), axis=0, return_inverse=True)
    idx = np.asarray(inverse).reshape(-1)[len(candidates):]
    theta_fixed = np.atleast_2d(theta_fixed)

    if model.additive:
        contrib = model.point_information(theta_fixed, pool)

        def score_all(idx):
            info = contrib[idx].sum(axis=0)
            swapped = info[None, None] - contrib[idx][:, None] + contrib[None, :]
            return _criterion(info, kind), _criterion(swapped, kind)

    else:

        def score_all(idx):
            current = j_hat(model, theta_fixed, pool[idx].reshape(-1), kind)
            d, m = len(idx), len(pool)
            designs = np.repeat(pool[idx][None], d * m, axis=0).reshape(d, m, d, cd)
            designs[np.arange(d), :, np.arange(d)] = pool[None, :]
            flat = designs.reshape(d * m, d * cd)
            scores = np.concatenate(
                [j_hat(model, theta_fixed, flat[s : s + 256], kind) for s in range(0, len(flat), 256)]
            )
            return current, scores.reshape(d, m)

    history = []
    passes = 0
    while passes < max_iters:
        passes += 1
        current, scores = score_all(idx)
        if not history:
            history.append(float(current))
        scores = np.where(idx[:, None] == np.arange(len(pool))[None, :], -np.inf, scores)
        i, c = np.unravel_index(np.argmax(scores), scores.shape)
        if not scores[i, c] > current:
            break
        idx = idx.copy()
        idx[i] = c
        history.append(float(scores[i, c]))
    return ExchangeResult(pool[idx].reshape(-1), history[0], history[-1], passes, history, pool)
