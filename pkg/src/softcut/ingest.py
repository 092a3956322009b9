"""Loading expression matrices and turning raw counts into model input."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ParseError(ValueError):
    def __init__(self, path, line, msg):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {msg}")


class PreprocessError(ValueError):
    pass


@dataclass
class ExpressionMatrix:
    counts: np.ndarray
    gene_ids: list[str]
    cell_ids: list[str]
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.float64)
        n, d = self.counts.shape
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")
        if len(self.gene_ids) != d or len(self.cell_ids) != n:
            raise ValueError(
                f"identifier lengths ({len(self.cell_ids)} cells, {len(self.gene_ids)} genes) "
                f"do not match counts shape {self.counts.shape}"
            )
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ValueError(f"labels length {self.labels.shape[0]} != {n} cells")

    @property
    def shape(self):
        return self.counts.shape


@dataclass
class PreprocessConfig:
    min_cells_per_gene: int = 3
    top_genes: int | None = None
    normalize_target: float = 1e4
    log_transform: bool = True
    # "expression" keeps the largest column sums; "variance" the most variable genes
    gene_selection: str = "expression"


@dataclass
class Preprocessed:
    X: np.ndarray
    size_factors: np.ndarray
    kept_genes: np.ndarray
    gene_ids: list[str] = field(default_factory=list)

    def __iter__(self):
        return iter((self.X, self.size_factors, self.kept_genes))


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def _load_dense_csv(path: Path) -> ExpressionMatrix:
    with open(path, newline="") as fh:
        rows = [(i + 1, r) for i, r in enumerate(csv.reader(fh)) if r and any(t.strip() for t in r)]
    if not rows:
        raise ParseError(path, 1, "empty file")

    header = None
    first_line, first = rows[0]
    # header row: any non-numeric token past the (possible) id column
    if not all(_is_number(t) for t in first[1:]) or (len(first) == 1 and not _is_number(first[0])):
        header = [t.strip() for t in first]
        rows = rows[1:]
    if not rows:
        raise ParseError(path, first_line, "no data rows")
    has_ids = not _is_number(rows[0][1][0])

    cell_ids, data = [], []
    width = None
    for lineno, r in rows:
        toks = [t.strip() for t in r]
        if has_ids:
            cell_ids.append(toks[0])
            toks = toks[1:]
        if width is None:
            width = len(toks)
        elif len(toks) != width:
            raise ParseError(path, lineno, f"ragged row: expected {width} values, got {len(toks)}")
        try:
            vals = [float(t) for t in toks]
        except ValueError as exc:
            raise ParseError(path, lineno, f"non-numeric value ({exc})") from None
        for v in vals:
            if not np.isfinite(v) or v < 0:
                raise ParseError(path, lineno, f"invalid count {v!r}")
        data.append(vals)

    counts = np.array(data, dtype=np.float64)
    n, d = counts.shape
    if header is not None:
        gene_ids = header[1:] if has_ids and len(header) == d + 1 else header
        if len(gene_ids) != d:
            raise ParseError(path, first_line, f"header has {len(header)} names for {d} columns")
    else:
        gene_ids = [f"gene_{j}" for j in range(d)]
    if not has_ids:
        cell_ids = [f"cell_{i}" for i in range(n)]
    return ExpressionMatrix(counts, list(gene_ids), cell_ids)


def _load_sparse_triplet(path: Path) -> ExpressionMatrix:
    with open(path) as fh:
        lines = [(i + 1, ln.split()) for i, ln in enumerate(fh)]
    lines = [(i, t) for i, t in lines if t and not t[0].startswith(("%", "#"))]
    if not lines:
        raise ParseError(path, 1, "missing 'rows cols nnz' header")
    hline, head = lines[0]
    try:
        n, d, nnz = (int(t) for t in head)
    except ValueError:
        raise ParseError(path, hline, "header must be 'rows cols nnz'") from None
    body = lines[1:]
    if len(body) != nnz:
        raise ParseError(path, hline, f"header declares {nnz} entries, found {len(body)}")
    counts = np.zeros((n, d))
    for lineno, toks in body:
        if len(toks) != 3:
            raise ParseError(path, lineno, "expected 'row col value'")
        try:
            i, j, v = int(toks[0]), int(toks[1]), float(toks[2])
        except ValueError:
            raise ParseError(path, lineno, "malformed entry") from None
        if not (1 <= i <= n and 1 <= j <= d):
            raise ParseError(path, lineno, f"index ({i}, {j}) outside declared {n}x{d}")
        if not np.isfinite(v) or v < 0:
            raise ParseError(path, lineno, f"invalid count {v!r}")
        counts[i - 1, j - 1] += v
    return ExpressionMatrix(counts, [f"gene_{j}" for j in range(d)], [f"cell_{i}" for i in range(n)])


def load_labels(path) -> np.ndarray:
    out = []
    with open(path) as fh:
        for lineno, ln in enumerate(fh, 1):
            s = ln.strip()
            if not s:
                continue
            try:
                out.append(int(s))
            except ValueError:
                raise ParseError(path, lineno, f"label {s!r} is not an integer") from None
    return np.array(out, dtype=np.int64)


def load_matrix(path, format: str = "dense-csv", labels_path=None) -> ExpressionMatrix:
    """Read a cells x genes count matrix.

    ``format`` is ``"dense-csv"`` or ``"sparse-triplet"`` (1-based
    ``row col value`` lines after a ``rows cols nnz`` header).
    """
    path = Path(path)
    if format == "dense-csv":
        em = _load_dense_csv(path)
    elif format == "sparse-triplet":
        em = _load_sparse_triplet(path)
    else:
        raise ValueError(f"unknown format {format!r}")
    if labels_path is not None:
        labels = load_labels(labels_path)
        if labels.shape[0] != em.shape[0]:
            raise ParseError(labels_path, labels.shape[0], f"{labels.shape[0]} labels for {em.shape[0]} cells")
        em.labels = labels
    return em


def write_dense_csv(path, em: ExpressionMatrix) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", *em.gene_ids])
        for cid, row in zip(em.cell_ids, em.counts):
            w.writerow([cid, *(repr(float(v)) if v != int(v) else str(int(v)) for v in row)])


def preprocess(raw: ExpressionMatrix, cfg: PreprocessConfig | None = None) -> Preprocessed:
    """Filter genes, compute size factors, normalize, log-transform, select genes."""
    cfg = cfg or PreprocessConfig()
    counts = raw.counts
    if counts.size == 0:
        raise PreprocessError("empty expression matrix")

    totals = counts.sum(axis=1)
    zero_cells = np.flatnonzero(totals <= 0)
    if zero_cells.size:
        names = [raw.cell_ids[i] for i in zero_cells[:20]]
        raise PreprocessError(f"{zero_cells.size} cell(s) with zero total count: {names}")
    size_factors = totals / np.median(totals)

    expressed = (counts > 0).sum(axis=0)
    keep = np.flatnonzero((expressed >= cfg.min_cells_per_gene) & (counts.sum(axis=0) > 0))
    if keep.size == 0:
        raise PreprocessError("all genes were filtered out")
    if keep.size < 2:
        raise PreprocessError(f"only {keep.size} gene survives filtering, need at least 2")

    sub = counts[:, keep]
    sub_totals = sub.sum(axis=1, keepdims=True)
    if np.any(sub_totals <= 0):
        bad = [raw.cell_ids[i] for i in np.flatnonzero(sub_totals[:, 0] <= 0)[:20]]
        raise PreprocessError(f"cells with no counts left after gene filtering: {bad}")
    norm = sub / sub_totals * cfg.normalize_target
    X = np.log1p(norm) if cfg.log_transform else norm

    if cfg.top_genes is not None:
        if cfg.top_genes > keep.size:
            raise PreprocessError(f"top_genes={cfg.top_genes} exceeds {keep.size} genes left after filtering")
        if cfg.gene_selection == "expression":
            score = norm.sum(axis=0)
        elif cfg.gene_selection == "variance":
            score = X.var(axis=0)
        else:
            raise ValueError(f"unknown gene_selection {cfg.gene_selection!r}")
        # stable sort on -score keeps lower index first among ties
        top = np.sort(np.argsort(-score, kind="stable")[: cfg.top_genes])
        X = X[:, top]
        keep = keep[top]

    return Preprocessed(X=X, size_factors=size_factors, kept_genes=keep,
                        gene_ids=[raw.gene_ids[j] for j in keep])
