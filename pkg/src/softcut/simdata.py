"""Synthetic count matrices: NB counts per cluster with independent dropout."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import ExpressionMatrix


@dataclass
class SimConfig:
    n_cells: int = 3000
    n_genes: int = 2500
    n_clusters: int = 6
    balanced: bool = True
    dropout_rate: float = 0.05
    de_fraction: float = 0.1
    de_log_fold: float = 1.0
    base_mean: float = 2.0
    dispersion: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 2:
            raise ValueError("n_clusters must be >= 2")
        if self.n_cells < self.n_clusters:
            raise ValueError("need at least one cell per cluster")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not 0.0 <= self.de_fraction <= 1.0:
            raise ValueError("de_fraction must lie in [0, 1]")
        if self.base_mean <= 0 or self.dispersion <= 0:
            raise ValueError("base_mean and dispersion must be positive")


def cluster_sizes(cfg: SimConfig) -> np.ndarray:
    k = cfg.n_clusters
    if cfg.balanced:
        w = np.ones(k)
    else:
        w = 1.0 / np.arange(1, k + 1)
    w = w / w.sum()
    raw = w * cfg.n_cells
    sizes = np.floor(raw).astype(np.int64)
    # largest remainder, earlier clusters first on ties
    rem = cfg.n_cells - sizes.sum()
    order = np.argsort(-(raw - sizes), kind="stable")
    sizes[order[:rem]] += 1
    if np.any(sizes == 0):
        raise ValueError(f"n_cells={cfg.n_cells} leaves an empty cluster: {sizes.tolist()}")
    return sizes


def cluster_means(cfg: SimConfig, rng_list) -> np.ndarray:
    """Generative mean per (cluster, gene)."""
    n_de = int(round(cfg.de_fraction * cfg.n_genes))
    means = np.full((cfg.n_clusters, cfg.n_genes), float(cfg.base_mean))
    for c, rng in enumerate(rng_list):
        genes = rng.choice(cfg.n_genes, size=n_de, replace=False)
        signs = rng.choice((-1.0, 1.0), size=n_de)
        means[c, genes] *= 2.0 ** (signs * cfg.de_log_fold)
    return means


def generate(cfg: SimConfig) -> ExpressionMatrix:
    sizes = cluster_sizes(cfg)
    seqs = np.random.SeedSequence(cfg.seed).spawn(2 * cfg.n_clusters)
    means = cluster_means(cfg, [np.random.default_rng(s) for s in seqs[: cfg.n_clusters]])
    r = cfg.dispersion
    blocks, labels = [], []
    for c, size in enumerate(sizes):
        rng = np.random.default_rng(seqs[cfg.n_clusters + c])
        m = np.broadcast_to(means[c], (size, cfg.n_genes))
        counts = rng.negative_binomial(r, r / (r + m)).astype(np.float64)
        if cfg.dropout_rate > 0:
            counts[rng.random(counts.shape) < cfg.dropout_rate] = 0.0
        blocks.append(counts)
        labels.append(np.full(size, c, dtype=np.int64))
    counts = np.vstack(blocks)
    return ExpressionMatrix(
        counts,
        [f"gene_{j}" for j in range(cfg.n_genes)],
        [f"cell_{i}" for i in range(cfg.n_cells)],
        np.concatenate(labels),
    )


def sparsity(em: ExpressionMatrix) -> float:
    return float(np.mean(em.counts == 0))
