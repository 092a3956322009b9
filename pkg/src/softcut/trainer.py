"""Two-phase training: NCut + ZINB pretraining, then joint training with transport targets."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .otcluster import SinkhornConfig, estimate_proportions, kl_loss, kmeans, sinkhorn, soft_assign
from .softgraph import NCutConfig, SoftGraphPair, ncut_loss
from .zinb import ModelParams, attach_input_stats, decode_heads, encode, init_params, zinb_nll

log = logging.getLogger(__name__)


class TrainingError(FloatingPointError):
    def __init__(self, msg, epoch=None):
        self.epoch = epoch
        super().__init__(msg)


@dataclass
class TrainConfig:
    pretrain_epochs: int = 200
    train_epochs: int = 200
    learning_rate: float = 1e-3
    weight_decay: float = 5e-3
    alpha: float = 0.7
    beta: float = 15.0
    gamma: float = 50.0
    mu_weight: float = 1e-3
    lam: float = 50.0
    n_clusters: int = 2
    seed: int = 0
    embedding_dim: int = 16
    hidden: tuple = (256, 64)
    activation: str = "tanh"
    # frozen per-gene input transform: "standardize", "center" or "none"
    input_norm: str = "standardize"
    sinkhorn_iters: int = 500
    sinkhorn_tol: float = 1e-6
    kmeans_init: int = 10
    # "trainable": centers follow gradients; "kmeans": re-fit every epoch
    centers_mode: str = "trainable"

    def __post_init__(self):
        if self.pretrain_epochs < 0 or self.train_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        for name in ("weight_decay", "beta", "gamma", "mu_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.centers_mode not in ("trainable", "kmeans"):
            raise ValueError(f"unknown centers_mode {self.centers_mode!r}")
        self.hidden = tuple(int(h) for h in self.hidden)

    @property
    def ncut(self) -> NCutConfig:
        return NCutConfig(self.alpha, self.beta)

    @property
    def sinkhorn(self) -> SinkhornConfig:
        return SinkhornConfig(self.lam, self.sinkhorn_iters, self.sinkhorn_tol)


@dataclass
class OptimizerState:
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: OptimizerState, lr: float,
              weight_decay: float = 0.0, decay_keys=None) -> dict:
    """Bias-corrected Adam with decoupled weight decay; returns new arrays.

    ``decay_keys`` limits decay to a subset of names (default: all).
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.b1 ** t
    c2 = 1.0 - state.b2 ** t
    out = {}
    for name, p in params.items():
        g = grads[name]
        if p.shape != g.shape:
            raise dc.ShapeError("adam_step", p.shape, g.shape)
        if weight_decay and (decay_keys is None or name in decay_keys):
            p = p * (1.0 - lr * weight_decay)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = state.b1 * m + (1.0 - state.b1) * g
        v = state.b2 * v + (1.0 - state.b2) * g * g
        state.m[name], state.v[name] = m, v
        out[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out


@dataclass
class LossRecord:
    epoch: int
    l_ncut: float
    l_zinb: float
    l_kl: float
    total: float

    def row(self):
        return (self.epoch, self.l_ncut, self.l_zinb, self.l_kl, self.total)


@dataclass
class TrainResult:
    """``centers`` are in units of ``Z / params.embed_scale``, where Q is computed."""

    labels: np.ndarray
    Z: np.ndarray
    params: ModelParams
    centers: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    history: list
    pretrain_history: list = field(default_factory=list)


def _zinb_target(X, target):
    return X if target is None else np.asarray(target, dtype=np.float64)


def _check(value, epoch, what="total loss"):
    if not np.isfinite(value):
        raise TrainingError(f"non-finite {what} at epoch {epoch}", epoch)


def pretrain(X, graphs: SoftGraphPair, params: ModelParams, cfg: TrainConfig,
             size_factors=None, zinb_target=None, callback=None):
    """Minimize NCut + gamma * ZINB full-batch; returns ``(params, Z, history)``."""
    X = np.asarray(X, dtype=np.float64)
    s = np.ones(X.shape[0]) if size_factors is None else np.asarray(size_factors)
    target = _zinb_target(X, zinb_target)
    if graphs.n != X.shape[0]:
        raise ValueError(f"graphs built on {graphs.n} cells, data has {X.shape[0]}")
    L_mix = graphs.mixed_laplacian(cfg.alpha)
    ncfg = cfg.ncut
    params = params.copy()
    state = OptimizerState()
    history = []
    for epoch in range(cfg.pretrain_epochs):
        b = params.bind()
        Z = encode(X, b)
        l_ncut = ncut_loss(Z, graphs, ncfg, L_mix=L_mix)
        l_zinb = zinb_nll(target, decode_heads(Z, b, s))
        total = dc.add(l_ncut, dc.scale(l_zinb, cfg.gamma))
        tv = dc.forward(total)
        _check(tv, epoch)
        dc.backward(total)
        rec = LossRecord(epoch, float(l_ncut.value[0, 0]), float(l_zinb.value[0, 0]), 0.0, tv)
        history.append(rec)
        log.debug("pretrain %d ncut=%.5g zinb=%.5g total=%.5g", epoch, rec.l_ncut, rec.l_zinb, tv)
        if callback:
            callback(rec)
        new = adam_step(params.named(), b.grads(), state, cfg.learning_rate, cfg.weight_decay)
        params = params.replace(new)
    Z = encode(X, params).value
    return params, Z, history


def train_joint(X, graphs: SoftGraphPair, params: ModelParams, cfg: TrainConfig,
                size_factors=None, zinb_target=None, callback=None) -> TrainResult:
    """Joint training on NCut + gamma*ZINB + mu*KL(P || Q)."""
    X = np.asarray(X, dtype=np.float64)
    s = np.ones(X.shape[0]) if size_factors is None else np.asarray(size_factors)
    target = _zinb_target(X, zinb_target)
    if graphs.n != X.shape[0]:
        raise ValueError(f"graphs built on {graphs.n} cells, data has {X.shape[0]}")
    L_mix = graphs.mixed_laplacian(cfg.alpha)
    ncfg, scfg = cfg.ncut, cfg.sinkhorn
    params = params.copy()
    # assignments live in Z / embed_scale so the Student-t kernel sees O(1) distances
    unscale = 1.0 / params.embed_scale
    Z0 = encode(X, params).value * unscale
    centers, _ = kmeans(Z0, cfg.n_clusters, seed=cfg.seed, n_init=cfg.kmeans_init)
    state = OptimizerState()
    decay = set(params.named())
    history = []
    P = None
    unconverged = 0
    for epoch in range(cfg.train_epochs):
        b = params.bind()
        Z = encode(X, b)
        if cfg.centers_mode == "kmeans" and epoch > 0:
            centers, _ = kmeans(Z.value * unscale, cfg.n_clusters, seed=cfg.seed, n_init=cfg.kmeans_init)
        c_leaf = dc.leaf(centers, name="centers")
        Q = soft_assign(dc.scale(Z, unscale), c_leaf)
        pi = estimate_proportions(Q.value)
        res = sinkhorn(Q.value, pi, scfg, warn=False)
        if not res.converged:
            unconverged += 1
            log.debug("epoch %d: Sinkhorn not converged (violation %.3g)", epoch, res.violation)
        P = res.P
        l_ncut = ncut_loss(Z, graphs, ncfg, L_mix=L_mix)
        l_zinb = zinb_nll(target, decode_heads(Z, b, s))
        l_kl = kl_loss(P, Q)
        total = dc.add(dc.add(l_ncut, dc.scale(l_zinb, cfg.gamma)), dc.scale(l_kl, cfg.mu_weight))
        tv = dc.forward(total)
        _check(tv, epoch)
        dc.backward(total)
        rec = LossRecord(epoch, float(l_ncut.value[0, 0]), float(l_zinb.value[0, 0]),
                         float(l_kl.value[0, 0]), tv)
        history.append(rec)
        log.debug("train %d ncut=%.5g zinb=%.5g kl=%.5g total=%.5g", epoch, *rec.row()[1:])
        if callback:
            callback(rec)
        named = params.named()
        grads = b.grads()
        if cfg.centers_mode == "trainable":
            named["centers"] = centers
            grads["centers"] = c_leaf.grad
        new = adam_step(named, grads, state, cfg.learning_rate, cfg.weight_decay, decay_keys=decay)
        if cfg.centers_mode == "trainable":
            centers = new.pop("centers")
        params = params.replace(new)

    if unconverged:
        log.warning("Sinkhorn hit its iteration cap in %d of %d epochs", unconverged, cfg.train_epochs)
    Zf = encode(X, params).value
    Qf = soft_assign(Zf * unscale, centers).value
    if P is None:
        P = sinkhorn(Qf, estimate_proportions(Qf), scfg, warn=False).P
    labels = np.argmax(Qf, axis=1)
    return TrainResult(labels, Zf, params, centers, Qf, P, history)


def init_model(X, cfg: TrainConfig) -> ModelParams:
    """Seeded Glorot initialization with frozen input statistics from ``X``."""
    X = np.asarray(X, dtype=np.float64)
    params = init_params(X.shape[1], cfg.embedding_dim, cfg.hidden, cfg.activation, cfg.seed)
    return attach_input_stats(params, X, cfg.input_norm)


def fit(X, graphs: SoftGraphPair, cfg: TrainConfig, size_factors=None, zinb_target=None,
        params: ModelParams | None = None) -> TrainResult:
    """Initialize, pretrain and jointly train."""
    X = np.asarray(X, dtype=np.float64)
    if params is None:
        params = init_model(X, cfg)
    params, _, pre_hist = pretrain(X, graphs, params, cfg, size_factors, zinb_target)
    result = train_joint(X, graphs, params, cfg, size_factors, zinb_target)
    result.pretrain_history = pre_hist
    return result


def silhouette(Z, labels) -> float:
    """Mean silhouette width with Euclidean distances."""
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels)
    ks = np.unique(labels)
    if ks.size < 2:
        return 0.0
    sq = np.sum(Z * Z, axis=1)
    D = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * Z @ Z.T, 0.0))
    n = len(Z)
    s = np.zeros(n)
    means = np.stack([D[:, labels == k].mean(axis=1) for k in ks], axis=1)
    sizes = np.array([(labels == k).sum() for k in ks])
    own = np.searchsorted(ks, labels)
    for i in range(n):
        c = own[i]
        if sizes[c] == 1:
            continue
        a = means[i, c] * sizes[c] / (sizes[c] - 1)
        b = np.min(np.delete(means[i], c))
        s[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return float(s.mean())


def select_k(Z, k_range, seed: int = 0, n_init: int = 10) -> tuple[int, dict]:
    """Pick the cluster count with the highest silhouette of k-means on Z."""
    scores = {}
    for k in k_range:
        if k < 2 or k > len(Z):
            continue
        _, labels = kmeans(Z, k, seed=seed, n_init=n_init)
        scores[k] = silhouette(Z, labels)
    if not scores:
        raise ValueError("no valid cluster count in range")
    best = max(scores, key=lambda k: (scores[k], -k))
    return best, scores
