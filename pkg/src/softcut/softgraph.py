"""Dual-channel soft similarity graphs and the joint normalized-cut loss."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffcore as dc

MAX_CELLS = 12000


class GraphError(ValueError):
    pass


@dataclass
class NCutConfig:
    alpha: float = 0.7
    beta: float = 15.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")


@dataclass
class SoftGraphPair:
    A1: np.ndarray
    A2: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    L1: np.ndarray
    L2: np.ndarray

    @property
    def n(self) -> int:
        return self.A1.shape[0]

    def mixed_laplacian(self, alpha: float) -> np.ndarray:
        return alpha * self.L1 + (1.0 - alpha) * self.L2


def _check_size(n, max_cells):
    if n > max_cells:
        raise GraphError(
            f"{n} cells exceeds the dense-graph cap of {max_cells} "
            f"(~{4 * 8 * n * n / 1e9:.1f} GB for the four N x N matrices)"
        )


def build_adjacency_feature(X) -> np.ndarray:
    """Inner-product similarity ``X @ X.T``."""
    X = np.asarray(X, dtype=np.float64)
    A = X @ X.T
    # exact symmetry regardless of BLAS blocking
    return 0.5 * (A + A.T)


def cosine_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise GraphError(f"cells with zero-norm expression rows: {zero[:20].tolist()}")
    U = X / norms[:, None]
    C = U @ U.T
    return 0.5 * (C + C.T)


def build_adjacency_cosine(X) -> np.ndarray:
    """``|C| @ |C|.T`` where C is the pairwise cosine similarity."""
    C = np.abs(cosine_matrix(X))
    A = C @ C.T
    return 0.5 * (A + A.T)


def degrees(A) -> np.ndarray:
    return np.asarray(A, dtype=np.float64).sum(axis=1)


def normalized_laplacian(A) -> np.ndarray:
    """``I - D^{-1/2} A D^{-1/2}`` for a symmetric nonnegative A."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise GraphError(f"adjacency must be square, got {A.shape}")
    d = A.sum(axis=1)
    bad = np.flatnonzero(~(d > 0))
    if bad.size:
        raise GraphError(f"zero degree at nodes {bad[:20].tolist()}")
    r = 1.0 / np.sqrt(d)
    L = np.eye(A.shape[0]) - r[:, None] * A * r[None, :]
    return 0.5 * (L + L.T)


def build_graphs(X, max_cells: int = MAX_CELLS) -> SoftGraphPair:
    X = np.asarray(X, dtype=np.float64)
    _check_size(X.shape[0], max_cells)
    A1 = build_adjacency_feature(X)
    A2 = build_adjacency_cosine(X)
    return SoftGraphPair(A1, A2, degrees(A1), degrees(A2),
                         normalized_laplacian(A1), normalized_laplacian(A2))


def ncut_loss(Z, pair: SoftGraphPair, cfg: NCutConfig, L_mix=None) -> dc.DiffNode:
    """Relaxed joint normalized cut plus a squared-Frobenius orthogonality penalty.

    ``L_mix`` may be passed to reuse a precomputed ``alpha*L1 + (1-alpha)*L2``.
    """
    Z = Z if isinstance(Z, dc.DiffNode) else dc.constant(Z)
    if Z.shape[0] != pair.n:
        raise dc.ShapeError("ncut_loss", Z.shape, pair.A1.shape)
    if L_mix is None:
        L_mix = pair.mixed_laplacian(cfg.alpha)
    L = dc.constant(L_mix)
    Zt = dc.transpose(Z)
    cut = dc.trace(dc.matmul(Zt, dc.matmul(L, Z)))
    if cfg.beta == 0:
        return cut
    gram = dc.matmul(Zt, Z)
    ortho = dc.frob_sq(dc.sub(gram, dc.constant(np.eye(Z.shape[1]))))
    return dc.add(cut, dc.scale(ortho, cfg.beta))


def orthogonality_gap(Z) -> float:
    Z = np.asarray(Z)
    G = Z.T @ Z - np.eye(Z.shape[1])
    return float(np.sum(G * G))


def dump_graphs(pair: SoftGraphPair, directory) -> list[Path]:
    """Write A1, A2, L1, L2 as dense CSV files for inspection."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in ("A1", "A2", "L1", "L2"):
        p = directory / f"{name}.csv"
        np.savetxt(p, getattr(pair, name), delimiter=",", fmt="%.17g")
        paths.append(p)
    return paths
