"""Feature autoencoder with zero-inflated negative binomial output heads."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from ._backend import kernels as _k

PROB_FLOOR = 1e-10
PARAM_MIN, PARAM_MAX = 1e-6, 1e6
PI_EPS = 1e-6
_LOG_CAP = 30.0
CHECKPOINT_VERSION = 1

ACTIVATIONS = ("sigmoid", "tanh", "linear")


class ZinbError(FloatingPointError):
    def __init__(self, msg, indices=None):
        self.indices = indices
        super().__init__(msg)


@dataclass
class ModelParams:
    """Dense layer weights; each layer is a ``(W, b)`` pair with b shaped 1 x out."""

    encoder: list
    decoder: list
    head_pi: tuple
    head_mu: tuple
    head_theta: tuple
    activation: str = "tanh"
    # frozen input standardization (1 x D each) and fixed embedding scale
    input_shift: np.ndarray | None = None
    input_scale: np.ndarray | None = None
    embed_scale: float = 1.0

    @property
    def n_genes(self) -> int:
        return self.encoder[0][0].shape[0]

    @property
    def embedding_dim(self) -> int:
        return self.encoder[-1][0].shape[1]

    def named(self) -> dict:
        out = {}
        for prefix, layers in (("enc", self.encoder), ("dec", self.decoder)):
            for i, (W, b) in enumerate(layers):
                out[f"{prefix}{i}.W"] = W
                out[f"{prefix}{i}.b"] = b
        for head in ("pi", "mu", "theta"):
            W, b = getattr(self, f"head_{head}")
            out[f"{head}.W"] = W
            out[f"{head}.b"] = b
        return out

    @classmethod
    def from_named(cls, named: dict, activation: str = "tanh", **frozen) -> "ModelParams":
        def layers(prefix):
            out, i = [], 0
            while f"{prefix}{i}.W" in named:
                out.append((named[f"{prefix}{i}.W"], named[f"{prefix}{i}.b"]))
                i += 1
            return out

        return cls(
            encoder=layers("enc"),
            decoder=layers("dec"),
            head_pi=(named["pi.W"], named["pi.b"]),
            head_mu=(named["mu.W"], named["mu.b"]),
            head_theta=(named["theta.W"], named["theta.b"]),
            activation=activation,
            **frozen,
        )

    def frozen(self) -> dict:
        return {"input_shift": self.input_shift, "input_scale": self.input_scale,
                "embed_scale": self.embed_scale}

    def replace(self, named: dict) -> "ModelParams":
        """Same architecture and frozen parts, new trainable arrays."""
        return ModelParams.from_named(named, self.activation, **self.frozen())

    def copy(self) -> "ModelParams":
        return self.replace({k: v.copy() for k, v in self.named().items()})

    def bind(self) -> "Binding":
        """Leaves for every parameter, ready for one forward/backward pass."""
        return Binding({k: dc.leaf(v, name=k) for k, v in self.named().items()}, self.activation,
                       self.frozen())


@dataclass
class Binding:
    nodes: dict
    activation: str = "tanh"
    frozen: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.nodes[key]

    def grads(self) -> dict:
        return {k: n.grad for k, n in self.nodes.items()}


@dataclass
class ZinbOutput:
    pi_hat: dc.DiffNode
    mu_hat: dc.DiffNode
    theta_hat: dc.DiffNode
    hidden: dc.DiffNode | None = field(default=None, repr=False)


def init_params(n_genes: int, embedding_dim: int = 16, hidden=(256, 64),
                activation: str = "tanh", seed: int = 0) -> ModelParams:
    """Glorot-uniform weights and zero biases."""
    if activation not in ACTIVATIONS:
        raise ValueError(f"activation must be one of {ACTIVATIONS}")
    rng = np.random.default_rng(seed)

    def dense(fan_in, fan_out):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_in, fan_out)), np.zeros((1, fan_out))

    enc_sizes = [n_genes, *hidden, embedding_dim]
    dec_sizes = [embedding_dim, *reversed(hidden)]
    encoder = [dense(a, b) for a, b in zip(enc_sizes[:-1], enc_sizes[1:])]
    decoder = [dense(a, b) for a, b in zip(dec_sizes[:-1], dec_sizes[1:])]
    top = dec_sizes[-1]
    return ModelParams(encoder, decoder, dense(top, n_genes), dense(top, n_genes),
                       dense(top, n_genes), activation)


def attach_input_stats(params: ModelParams, X, input_norm: str = "standardize",
                       embed_scale: float | None = None) -> ModelParams:
    """Freeze per-gene input statistics and the embedding scale into ``params``.

    ``input_norm`` is ``"standardize"`` (zero mean, unit variance per gene),
    ``"center"`` or ``"none"``. ``embed_scale`` defaults to ``1/sqrt(N)`` so
    unit-variance encoder outputs give roughly orthonormal embedding columns.
    """
    X = np.asarray(X, dtype=np.float64)
    out = params.copy()
    shift = scale = None
    if input_norm in ("standardize", "center"):
        shift = X.mean(axis=0, keepdims=True)
    if input_norm == "standardize":
        sd = X.std(axis=0, keepdims=True)
        scale = np.where(sd > 0, 1.0 / np.where(sd > 0, sd, 1.0), 1.0)
    elif input_norm not in ("center", "none"):
        raise ValueError(f"unknown input_norm {input_norm!r}")
    out.input_shift, out.input_scale = shift, scale
    out.embed_scale = float(embed_scale) if embed_scale is not None else 1.0 / np.sqrt(X.shape[0])
    return out


def _as_binding(params) -> Binding:
    if isinstance(params, Binding):
        return params
    return Binding({k: dc.constant(v, name=k) for k, v in params.named().items()}, params.activation,
                   params.frozen())


def _activate(h, kind):
    if kind == "sigmoid":
        return dc.sigmoid(h)
    if kind == "tanh":
        return dc.add_scalar(dc.scale(dc.sigmoid(dc.scale(h, 2.0)), 2.0), -1.0)
    return h


def _affine(h, W, b):
    if h.shape[1] != W.shape[0]:
        raise dc.ShapeError("affine", h.shape, W.shape)
    ones = dc.constant(np.ones((h.shape[0], 1)))
    return dc.add(dc.matmul(h, W), dc.matmul(ones, b))


def _layer_count(binding, prefix):
    i = 0
    while f"{prefix}{i}.W" in binding.nodes:
        i += 1
    return i


def encode(X, params) -> dc.DiffNode:
    """Embed cells: hidden layers use the configured activation, the last is linear."""
    p = _as_binding(params)
    shift = p.frozen.get("input_shift")
    scale = p.frozen.get("input_scale")
    if shift is not None or scale is not None:
        x = np.asarray(X.value if isinstance(X, dc.DiffNode) else X, dtype=np.float64)
        if shift is not None:
            x = x - shift
        if scale is not None:
            x = x * scale
        h = dc.constant(x)
    else:
        h = X if isinstance(X, dc.DiffNode) else dc.constant(X)
    n = _layer_count(p, "enc")
    for i in range(n):
        h = _affine(h, p[f"enc{i}.W"], p[f"enc{i}.b"])
        if i < n - 1:
            h = _activate(h, p.activation)
    es = p.frozen.get("embed_scale", 1.0)
    return h if es == 1.0 else dc.scale(h, es)


def decode_heads(Z, params, size_factors) -> ZinbOutput:
    p = _as_binding(params)
    s = np.asarray(size_factors, dtype=np.float64).reshape(-1, 1)
    if s.shape[0] != Z.shape[0]:
        raise dc.ShapeError("decode_heads", Z.shape, s.shape)
    if np.any(~(s > 0)):
        bad = np.flatnonzero(~(s[:, 0] > 0))
        raise ValueError(f"size factors must be positive; offending rows {bad[:20].tolist()}")
    h = Z if isinstance(Z, dc.DiffNode) else dc.constant(Z)
    es = p.frozen.get("embed_scale", 1.0)
    if es != 1.0:
        # decoder sees the unscaled encoder output
        h = dc.scale(h, 1.0 / es)
    for i in range(_layer_count(p, "dec")):
        h = _activate(_affine(h, p[f"dec{i}.W"], p[f"dec{i}.b"]), p.activation)

    pi = dc.clip(dc.sigmoid(_affine(h, p["pi.W"], p["pi.b"])), PI_EPS, 1.0 - PI_EPS)
    mu_raw = dc.exp(dc.clip(_affine(h, p["mu.W"], p["mu.b"]), -_LOG_CAP, _LOG_CAP))
    mu = dc.clip(dc.row_mul(mu_raw, dc.constant(s)), PARAM_MIN, PARAM_MAX)
    theta = dc.clip(dc.exp(dc.clip(_affine(h, p["theta.W"], p["theta.b"]), -_LOG_CAP, _LOG_CAP)),
                    PARAM_MIN, PARAM_MAX)
    return ZinbOutput(pi, mu, theta, hidden=h)


def zinb_nll(X, out: ZinbOutput, floor: float = PROB_FLOOR) -> dc.DiffNode:
    """Mean per-entry ZINB negative log-likelihood as a fused graph node."""
    x = np.asarray(X.value if isinstance(X, dc.DiffNode) else X, dtype=np.float64)
    pi, mu, th = out.pi_hat, out.mu_hat, out.theta_hat
    for node in (pi, mu, th):
        if node.shape != x.shape:
            raise dc.ShapeError("zinb_nll", x.shape, node.shape)
    if np.any(x < 0):
        raise ValueError("zinb_nll needs nonnegative data")
    nll, d_pi, d_mu, d_th = _k.zinb_nll_terms(x, pi.value, mu.value, th.value, floor)
    # the kernel's clamps would hide NaN inputs, so check them too
    bad = ~(np.isfinite(nll) & np.isfinite(pi.value) & np.isfinite(mu.value) & np.isfinite(th.value))
    if bad.any():
        idx = np.argwhere(bad)
        raise ZinbError(f"non-finite ZINB loss at {len(idx)} entries, first {idx[:5].tolist()}", idx)
    m = x.size
    value = np.array([[nll.sum() / m]])

    def vjp(g):
        c = g[0, 0] / m
        return d_pi * c, d_mu * c, d_th * c

    return dc.make_node(value, (pi, mu, th), vjp, "zinb_nll")


def nb_log_pmf(x, mu, theta):
    """Log of the negative binomial pmf (with the 1/x! term), elementwise."""
    x, mu, theta = (np.asarray(a, dtype=np.float64) for a in (x, mu, theta))
    log_tm = np.log(theta + mu)
    return (_k.lgamma(x + theta) - _k.lgamma(theta) - _k.lgamma(x + 1.0)
            + theta * (np.log(theta) - log_tm) + x * (np.log(mu) - log_tm))


# ---------------------------------------------------------------- checkpoints

def save_params(path, params: ModelParams) -> None:
    """Write an ``.npz`` checkpoint (see README for the key layout)."""
    named = params.named()
    arrays = {f"param/{k}": v for k, v in named.items()}
    for k in ("input_shift", "input_scale"):
        v = getattr(params, k)
        if v is not None:
            arrays[f"frozen/{k}"] = np.asarray(v, dtype=np.float64)
    arrays["frozen/embed_scale"] = np.array(float(params.embed_scale))
    with open(Path(path), "wb") as fh:
        np.savez(
            fh,
            format_version=np.array(CHECKPOINT_VERSION),
            activation=np.array(params.activation),
            names=np.array(list(named)),
            **arrays,
        )


def load_params(path) -> ModelParams:
    with np.load(Path(path), allow_pickle=False) as f:
        version = int(f["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        names = [str(n) for n in f["names"]]
        named = {n: np.array(f[f"param/{n}"], dtype=np.float64) for n in names}
        activation = str(f["activation"])
        frozen = {k: np.array(f[f"frozen/{k}"], dtype=np.float64)
                  for k in ("input_shift", "input_scale") if f"frozen/{k}" in f}
        if "frozen/embed_scale" in f:
            frozen["embed_scale"] = float(f["frozen/embed_scale"])
    return ModelParams.from_named(named, activation, **frozen)
