"""External clustering indices: matched accuracy, NMI and ARI."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np


def _pair(truth, pred):
    t = np.asarray(truth, dtype=np.int64).ravel()
    p = np.asarray(pred, dtype=np.int64).ravel()
    if t.shape != p.shape:
        raise ValueError(f"label vectors differ in length: {t.size} vs {p.size}")
    if t.size and (t.min() < 0 or p.min() < 0):
        raise ValueError("labels must be nonnegative")
    return t, p


def contingency(truth, pred) -> np.ndarray:
    t, p = _pair(truth, pred)
    _, ti = np.unique(t, return_inverse=True)
    _, pi = np.unique(p, return_inverse=True)
    table = np.zeros((ti.max(initial=-1) + 1, pi.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (ti, pi), 1)
    return table


def linear_assignment(cost) -> np.ndarray:
    """Minimum-cost perfect matching on a square matrix.

    Shortest augmenting paths with dual potentials, O(n^3). Returns
    ``col_of_row``.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise ValueError("cost matrix must be square")
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    match = [0] * (n + 1)  # match[col] = row, 1-based, 0 = free
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta, j1 = inf, 0
            row = cost[i0 - 1]
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta, j1 = minv[j], j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col_of_row[match[j] - 1] = j - 1
    return col_of_row


def accuracy_hungarian(truth, pred) -> float:
    t, _ = _pair(truth, pred)
    if t.size == 0:
        return 1.0
    table = contingency(truth, pred)
    k = max(table.shape)
    square = np.zeros((k, k), dtype=np.int64)
    square[: table.shape[0], : table.shape[1]] = table
    cols = linear_assignment(-square)
    return float(square[np.arange(k), cols].sum()) / t.size


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def nmi(truth, pred) -> float:
    """Mutual information over the arithmetic mean of the two entropies."""
    t, _ = _pair(truth, pred)
    n = t.size
    table = contingency(truth, pred)
    a, b = table.sum(axis=1), table.sum(axis=0)
    ht, hp = _entropy(a, n), _entropy(b, n)
    if ht == 0.0 and hp == 0.0:
        return 1.0
    nz = table > 0
    pij = table[nz] / n
    mi = float(np.sum(pij * np.log(pij * n * n / np.outer(a, b)[nz])))
    if mi <= 0.0:
        return 0.0
    return float(min(1.0, max(0.0, mi / (0.5 * (ht + hp)))))


def _comb2(x):
    x = np.asarray(x, dtype=np.int64)
    return x * (x - 1) // 2


def ari(truth, pred) -> float:
    t, _ = _pair(truth, pred)
    n = t.size
    table = contingency(truth, pred)
    sum_ij = int(_comb2(table).sum())
    sa = int(_comb2(table.sum(axis=1)).sum())
    sb = int(_comb2(table.sum(axis=0)).sum())
    total = n * (n - 1) // 2
    if total == 0:
        return 1.0
    # scaled by 2*total so numerator and denominator stay integers: one rounding only
    num = 2 * (total * sum_ij - sa * sb)
    den = total * (sa + sb) - 2 * sa * sb
    if den == 0:
        # both partitions trivial (all one cluster or all singletons)
        return 1.0 if sa == sb == sum_ij else 0.0
    return num / den


def evaluate(truth, pred) -> dict:
    t, p = _pair(truth, pred)
    return {
        "acc": accuracy_hungarian(t, p),
        "nmi": nmi(t, p),
        "ari": ari(t, p),
        "n_cells": int(t.size),
        "n_clusters_true": int(np.unique(t).size),
        "n_clusters_pred": int(np.unique(p).size),
    }


def write_report(path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=False) + "\n")
