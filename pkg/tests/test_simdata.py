import numpy as np
import pytest

from softcut.simdata import SimConfig, cluster_sizes, generate, sparsity


def test_balanced_sizes():
    em = generate(SimConfig(n_cells=300, n_genes=40, n_clusters=6, seed=0))
    assert np.bincount(em.labels).tolist() == [50] * 6
    assert em.counts.shape == (300, 40)


def test_unbalanced_sizes():
    sizes = cluster_sizes(SimConfig(n_cells=100, n_clusters=4, balanced=False))
    assert sizes.sum() == 100
    assert np.all(np.diff(sizes) <= 0)
    w = 1 / np.arange(1, 5)
    assert np.all(np.abs(sizes - 100 * w / w.sum()) < 1)


def test_dropout_monotone_sparsity():
    base = dict(n_cells=200, n_genes=50, n_clusters=4, seed=3)
    lo = sparsity(generate(SimConfig(dropout_rate=0.0, **base)))
    mid = sparsity(generate(SimConfig(dropout_rate=0.25, **base)))
    hi = sparsity(generate(SimConfig(dropout_rate=0.9, **base)))
    assert lo < mid < hi


def test_zero_fold_shares_means():
    em = generate(SimConfig(n_cells=4000, n_genes=30, n_clusters=2, de_log_fold=0.0, seed=1))
    a = em.counts[em.labels == 0].mean(axis=0)
    b = em.counts[em.labels == 1].mean(axis=0)
    # NB(mean 2, r 2) has variance 4; standard error of a 2000-cell mean ~0.045
    assert np.max(np.abs(a - b)) < 5 * np.sqrt(2 * 4.0 / 2000)


def test_deterministic():
    cfg = SimConfig(n_cells=60, n_genes=20, n_clusters=3, seed=7)
    a, b = generate(cfg), generate(cfg)
    np.testing.assert_array_equal(a.counts, b.counts)
    np.testing.assert_array_equal(a.labels, b.labels)
    c = generate(SimConfig(n_cells=60, n_genes=20, n_clusters=3, seed=8))
    assert not np.array_equal(a.counts, c.counts)


def test_counts_are_integers():
    em = generate(SimConfig(n_cells=50, n_genes=20, n_clusters=2))
    assert np.all(em.counts == np.round(em.counts)) and np.all(em.counts >= 0)


@pytest.mark.parametrize("kw", [dict(n_clusters=1), dict(n_cells=2, n_clusters=3), dict(dropout_rate=1.0),
                                dict(de_fraction=1.5), dict(dispersion=0.0)])
def test_invalid_configs(kw):
    with pytest.raises(ValueError):
        SimConfig(**kw)
