"""Soft assignments, Sinkhorn transport targets, KL alignment and k-means."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from ._backend import kernels as _k

log = logging.getLogger(__name__)

Q_FLOOR = 1e-12


class SinkhornError(FloatingPointError):
    pass


@dataclass
class SinkhornConfig:
    lam: float = 50.0
    max_iters: int = 500
    marginal_tol: float = 1e-6

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class SinkhornResult:
    P: np.ndarray
    converged: bool
    violation: float
    iters: int


@dataclass
class AssignmentState:
    Q: np.ndarray
    P: np.ndarray
    centers: np.ndarray
    proportions: np.ndarray


def _sq_dist(Z, centers):
    diff = Z[:, None, :] - centers[None, :, :]
    return np.einsum("ncd,ncd->nc", diff, diff)


def soft_assign(Z, centers) -> dc.DiffNode:
    """Row-normalized heavy-tailed kernel ``(1 + |z_i - c_j|^2)^-1``.

    Both arguments may be graph nodes; gradients flow to each.
    """
    Z = Z if isinstance(Z, dc.DiffNode) else dc.constant(Z)
    Cn = centers if isinstance(centers, dc.DiffNode) else dc.constant(centers)
    n, d = Z.shape
    c = Cn.shape[0]
    if c < 2:
        raise ValueError(f"need at least 2 clusters, got {c}")
    if Cn.shape[1] != d:
        raise dc.ShapeError("soft_assign", Z.shape, Cn.shape)
    zsq = dc.row_sum(dc.mul(Z, Z))
    csq = dc.transpose(dc.row_sum(dc.mul(Cn, Cn)))
    cross = dc.matmul(Z, dc.transpose(Cn))
    d2 = dc.add(
        dc.add(dc.matmul(zsq, dc.constant(np.ones((1, c)))), dc.matmul(dc.constant(np.ones((n, 1))), csq)),
        dc.scale(cross, -2.0),
    )
    kern = dc.power(dc.add_scalar(d2, 1.0), -1.0)
    return dc.row_mul(kern, dc.power(dc.row_sum(kern), -1.0))


def soft_assign_array(Z, centers) -> np.ndarray:
    kern = 1.0 / (1.0 + _sq_dist(np.asarray(Z, float), np.asarray(centers, float)))
    return kern / kern.sum(axis=1, keepdims=True)


def estimate_proportions(Q) -> np.ndarray:
    """Hard-assignment cluster shares, floored at 1/(10C) and renormalized."""
    Q = np.asarray(Q)
    n, c = Q.shape
    counts = np.bincount(np.argmax(Q, axis=1), minlength=c).astype(np.float64)
    pi = np.maximum(counts / n, 1.0 / (10.0 * c))
    return pi / pi.sum()


def sinkhorn(Q, proportions, cfg: SinkhornConfig | None = None, warn: bool = True) -> SinkhornResult:
    """Entropic transport plan with rows summing to 1 and columns to N*pi.

    The kernel is ``Q**lam``; scalings are carried as logarithms so large
    ``lam`` does not underflow. ``warn=False`` leaves non-convergence to the
    caller (the result still reports it).
    """
    cfg = cfg or SinkhornConfig()
    Q = np.asarray(Q, dtype=np.float64)
    pi = np.asarray(proportions, dtype=np.float64).ravel()
    n, c = Q.shape
    if pi.shape != (c,):
        raise ValueError(f"proportions length {pi.shape[0]} != {c} clusters")
    if np.any(pi <= 0) or abs(pi.sum() - 1.0) > 1e-9:
        raise ValueError("proportions must be positive and sum to 1")
    log_k = cfg.lam * np.log(np.maximum(Q, Q_FLOOR))
    log_u, log_v, iters, viol = _k.sinkhorn_log(log_k, np.log(n * pi), cfg.max_iters, cfg.marginal_tol)
    if not (np.all(np.isfinite(log_u)) and np.all(np.isfinite(log_v))):
        raise SinkhornError(
            f"non-finite Sinkhorn scaling (lambda={cfg.lam}); Q's dynamic range is too wide"
        )
    P = np.exp(log_k + log_u[:, None] + log_v[None, :])
    converged = bool(viol <= cfg.marginal_tol)
    if not converged and warn:
        log.warning("Sinkhorn stopped after %d iterations, marginal violation %.3g", iters, viol)
    return SinkhornResult(P, converged, float(viol), int(iters))


def kl_loss(P, Q) -> dc.DiffNode:
    """``sum_ij p_ij (log p_ij - log q_ij) / N`` with P held constant."""
    P = np.asarray(P.value if isinstance(P, dc.DiffNode) else P, dtype=np.float64)
    Q = Q if isinstance(Q, dc.DiffNode) else dc.constant(Q)
    if P.shape != Q.shape:
        raise dc.ShapeError("kl_loss", P.shape, Q.shape)
    if np.any(P < 0):
        raise ValueError("transport plan has negative entries")
    n = P.shape[0]
    pos = P > 0
    neg_entropy = float(np.sum(P[pos] * np.log(P[pos])))
    cross = dc.total(dc.mul(dc.constant(P), dc.log(dc.clip(Q, Q_FLOOR, np.inf))))
    return dc.add_scalar(dc.scale(cross, -1.0 / n), neg_entropy / n)


# ---------------------------------------------------------------- k-means

def kmeans_pp_init(Z, k, rng) -> np.ndarray:
    n = Z.shape[0]
    idx = [int(rng.integers(n))]
    d2 = np.sum((Z - Z[idx[0]]) ** 2, axis=1)
    for _ in range(1, k):
        tot = d2.sum()
        if tot > 0:
            nxt = int(rng.choice(n, p=d2 / tot))
        else:
            rest = np.setdiff1d(np.arange(n), idx)
            nxt = int(rng.choice(rest))
        idx.append(nxt)
        d2 = np.minimum(d2, np.sum((Z - Z[nxt]) ** 2, axis=1))
    return Z[idx].copy()


def lloyd(Z, centers, max_iter=300, tol=1e-8):
    """Lloyd iterations from given centers.

    Returns ``(centers, labels, inertia_history)``; an emptied cluster is
    re-seeded with the point farthest from its current center.
    """
    Z = np.asarray(Z, dtype=np.float64)
    centers = np.array(centers, dtype=np.float64, copy=True)
    k = centers.shape[0]
    history = []
    labels = None
    for _ in range(max_iter):
        d2 = _sq_dist(Z, centers)
        labels = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(len(Z)), labels].sum()))
        counts = np.bincount(labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            own = d2[np.arange(len(Z)), labels]
            # only steal from clusters that keep at least one member
            donors = counts[labels] > 1
            far = int(np.argmax(np.where(donors, own, -1.0)))
            counts[labels[far]] -= 1
            labels[far] = j
            counts[j] = 1
            d2[far] = 0.0
        new = np.zeros_like(centers)
        np.add.at(new, labels, Z)
        new /= counts[:, None]
        shift = float(np.max(np.abs(new - centers)))
        centers = new
        if shift < tol:
            break
    d2 = _sq_dist(Z, centers)
    labels = np.argmin(d2, axis=1)
    history.append(float(d2[np.arange(len(Z)), labels].sum()))
    return centers, labels, history


def kmeans(Z, C: int, seed: int = 0, n_init: int = 10, max_iter: int = 300, tol: float = 1e-8):
    """k-means++ seeding plus Lloyd; best of ``n_init`` restarts by inertia."""
    Z = np.asarray(Z, dtype=np.float64)
    if C < 1:
        raise ValueError(f"cluster count must be >= 1, got {C}")
    if Z.shape[0] < C:
        raise ValueError(f"{Z.shape[0]} points cannot form {C} clusters")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        init = kmeans_pp_init(Z, C, rng)
        centers, labels, hist = lloyd(Z, init, max_iter, tol)
        if best is None or hist[-1] < best[2]:
            best = (centers, labels, hist[-1])
    return best[0], best[1]


def inertia(Z, centers, labels) -> float:
    Z = np.asarray(Z)
    return float(np.sum((Z - np.asarray(centers)[labels]) ** 2))
