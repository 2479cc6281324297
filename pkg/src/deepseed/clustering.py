"""Hard k-means and seeded fuzzy c-means over embedding vectors.

Membership of point t in cluster k::

    q_tk = |x_t - mu_k|^2 / (1 + |x_t - mu_k|^2)
    u_tk = softmax_k(-(2 / gamma) * q_tk)

Centroids are weighted means with per-point weights
d_tk * u_tk, where d_tk = (|x_t - mu_k| + 2) / (|x_t - mu_k| + 1)^2 is taken
against the previous centroids.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import Tensor, add, mul, scale, sqnorm, sub, total

log = logging.getLogger(__name__)

CLUSTER_FORMAT = "deepseed-clusters/1"


class SeedingError(ValueError):
    pass


def sq_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(N, K) matrix of squared Euclidean distances, computed from explicit differences."""
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    c = np.atleast_2d(np.asarray(centroids, dtype=np.float64))
    diff = x[:, None, :] - c[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


# -- k-means --------------------------------------------------------------------

def kmeans_assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """One-hot (N, K) assignment to the nearest centroid; ties go to the lowest index."""
    d2 = sq_distances(points, centroids)
    s = np.zeros_like(d2)
    s[np.arange(d2.shape[0]), np.argmin(d2, axis=1)] = 1.0
    return s


def repair_empty(points: np.ndarray, centroids: np.ndarray, empty: list[int],
                 events: list[str] | None = None) -> np.ndarray:
    """Move each empty cluster's centroid onto the point farthest from its nearest centroid."""
    c = np.array(centroids, dtype=np.float64)
    live = [j for j in range(c.shape[0]) if j not in empty]
    for k in empty:
        nearest = sq_distances(points, c[live]).min(axis=1) if live else np.zeros(len(points))
        far = int(np.argmax(nearest))
        c[k] = points[far]
        live.append(k)
        msg = f"cluster {k} empty; re-seeded at point {far}"
        log.warning(msg)
        if events is not None:
            events.append(msg)
    return c


def kmeans_update(points: np.ndarray, s: np.ndarray, centroids: np.ndarray | None = None,
                  events: list[str] | None = None) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    counts = s.sum(axis=0)
    out = (s.T @ x) / np.where(counts > 0, counts, 1.0)[:, None]
    empty = [int(k) for k in np.flatnonzero(counts == 0)]
    if empty:
        base = out if centroids is None else np.where((counts > 0)[:, None], out, centroids)
        out = repair_empty(x, base, empty, events)
    return out


def kmeans_loss(points: np.ndarray, centroids: np.ndarray, s: np.ndarray | None = None) -> float:
    d2 = sq_distances(points, centroids)
    if s is None:
        s = kmeans_assign(points, centroids)
    return float((s * d2).sum())


def kmeans(points: np.ndarray, centroids: np.ndarray, iterations: int = 10) -> tuple[np.ndarray, np.ndarray, list[float]]:
    c = np.array(centroids, dtype=np.float64)
    history = []
    s = kmeans_assign(points, c)
    for _ in range(iterations):
        s = kmeans_assign(points, c)
        history.append(kmeans_loss(points, c, s))
        c = kmeans_update(points, s, c)
    s = kmeans_assign(points, c)
    history.append(kmeans_loss(points, c, s))
    return c, s, history


# -- c-means --------------------------------------------------------------------

def saturated_distance(d2: np.ndarray) -> np.ndarray:
    return d2 / (1.0 + d2)


def membership_from_q(q: np.ndarray, gamma: float) -> np.ndarray:
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    logits = -(2.0 / gamma) * q
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def cmeans_membership(points: np.ndarray, centroids: np.ndarray, gamma: float = 0.1) -> np.ndarray:
    return membership_from_q(saturated_distance(sq_distances(points, centroids)), gamma)


def distance_weights(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    dist = np.sqrt(sq_distances(points, centroids))
    return (dist + 2.0) / (dist + 1.0) ** 2


def cmeans_centroids(points: np.ndarray, u: np.ndarray, centroids: np.ndarray,
                     events: list[str] | None = None) -> np.ndarray:
    """Weighted-mean centroid update; weights d_tk are evaluated at ``centroids``."""
    x = np.asarray(points, dtype=np.float64)
    w = distance_weights(x, centroids) * u
    denom = w.sum(axis=0)
    out = (w.T @ x) / np.where(denom > 0, denom, 1.0)[:, None]
    empty = [int(k) for k in np.flatnonzero(denom <= 0)]
    if empty:
        base = np.where((denom > 0)[:, None], out, centroids)
        out = repair_empty(x, base, empty, events)
    return out


def cmeans_loss(points: np.ndarray, centroids: np.ndarray, u: np.ndarray, normalize: bool = True) -> float:
    """sum_t sum_k u_tk |x_t - mu_k|^2, divided by N when ``normalize``."""
    acc = float((u * sq_distances(points, centroids)).sum())
    return acc / len(points) if normalize else acc


def cmeans_loss_tensor(z: Tensor, centroids: np.ndarray, u: np.ndarray) -> Tensor:
    """Differentiable batch L_cm / B with centroids and memberships held constant."""
    B, K = u.shape
    out = None
    for k in range(K):
        d2 = sqnorm(sub(z, Tensor(centroids[k])), axis=1)
        term = total(mul(d2, Tensor(u[:, k])))
        out = term if out is None else add(out, term)
    return scale(out, 1.0 / B)


def cmeans(points: np.ndarray, centroids: np.ndarray, gamma: float = 0.1,
           iterations: int = 10) -> tuple[np.ndarray, np.ndarray, list[float]]:
    c = np.array(centroids, dtype=np.float64)
    history = []
    u = cmeans_membership(points, c, gamma)
    for _ in range(iterations):
        u = cmeans_membership(points, c, gamma)
        history.append(cmeans_loss(points, c, u))
        c = cmeans_centroids(points, u, c)
    return c, u, history


# -- seeding ----------------------------------------------------------------------

def seed(window_labels, K: int) -> tuple[np.ndarray, dict[int, int]]:
    """One-hot memberships from seed labels; cluster k carries pseudo-label k."""
    labels = np.asarray(window_labels, dtype=np.int64)
    present = set(np.unique(labels).tolist())
    if len(present) < K or not present <= set(range(K)):
        raise SeedingError(
            f"seed labels cover classes {sorted(present)}, need all of 0..{K - 1}"
        )
    u = np.zeros((labels.size, K))
    u[np.arange(labels.size), labels] = 1.0
    return u, {k: k for k in range(K)}


def seeded_centroids(points: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Initial centroids from one-hot seeds.

    The distance weights need a reference centroid; the membership-weighted
    mean of each seed class serves as that reference for the first update.
    """
    x = np.asarray(points, dtype=np.float64)
    ref = (u.T @ x) / u.sum(axis=0)[:, None]
    return cmeans_centroids(x, u, ref)


@dataclass
class ClusterState:
    centroids: np.ndarray
    memberships: np.ndarray
    gamma: float
    pseudo_labels: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.pseudo_labels:
            self.pseudo_labels = {k: k for k in range(self.K)}

    @property
    def K(self) -> int:
        return int(self.centroids.shape[0])

    def copy(self) -> "ClusterState":
        return ClusterState(self.centroids.copy(), self.memberships.copy(), self.gamma, dict(self.pseudo_labels))

    def predict(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        u = cmeans_membership(points, self.centroids, self.gamma)
        idx = np.argmax(u, axis=1)
        return np.array([self.pseudo_labels[int(k)] for k in idx], dtype=np.int64), u

    def to_dict(self) -> dict:
        return {
            "format": CLUSTER_FORMAT,
            "gamma": self.gamma,
            "centroids": self.centroids.tolist(),
            "pseudo_labels": {str(k): v for k, v in sorted(self.pseudo_labels.items())},
            "memberships": self.memberships.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ClusterState":
        if doc.get("format") != CLUSTER_FORMAT:
            raise ValueError(f"unsupported cluster format {doc.get('format')!r}")
        K = len(doc["centroids"])
        mem = np.asarray(doc["memberships"], dtype=np.float64).reshape(-1, K)
        return cls(np.asarray(doc["centroids"], dtype=np.float64), mem, float(doc["gamma"]),
                   {int(k): int(v) for k, v in doc["pseudo_labels"].items()})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "ClusterState":
        return cls.from_dict(json.loads(Path(path).read_text()))


def seed_state(points: np.ndarray, window_labels, K: int, gamma: float) -> ClusterState:
    u, pseudo = seed(window_labels, K)
    return ClusterState(seeded_centroids(points, u), u, gamma, pseudo)


# -- silhouette -------------------------------------------------------------------

def silhouette(points: np.ndarray, labels) -> tuple[np.ndarray, float]:
    """Per-point silhouette values and their mean.

    Members of singleton clusters score 0, and so does a point whose
    intra- and nearest-cluster mean distances are both 0.
    """
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    lab = np.asarray(labels)
    clusters = np.unique(lab)
    if clusters.size < 2:
        raise ValueError("silhouette needs at least 2 non-empty clusters")
    dist = np.sqrt(sq_distances(x, x))
    s = np.zeros(x.shape[0])
    masks = {c: lab == c for c in clusters}
    sizes = {c: int(m.sum()) for c, m in masks.items()}
    for i in range(x.shape[0]):
        own = lab[i]
        if sizes[own] == 1:
            continue
        a = dist[i, masks[own]].sum() / (sizes[own] - 1)
        b = min(dist[i, masks[c]].mean() for c in clusters if c != own)
        m = max(a, b)
        s[i] = 0.0 if m == 0 else (b - a) / m
    return s, float(s.mean())
