"""Pure numpy implementations of the hot kernels.

Mirrors the API of the compiled ``_kernels`` extension so either can be
selected at import time.
"""
import numpy as np

_SHIFT = 10.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)

# Stirling coefficients B_{2k} / (2k (2k-1)), k = 1..7
_LGAMMA_COEFS = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
)
# B_{2k} / (2k), k = 1..7
_DIGAMMA_COEFS = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    5.0 / 660.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)


def _shift_up(x):
    z = np.array(x, dtype=np.float64, copy=True)
    prod = np.ones_like(z)
    recip = np.zeros_like(z)
    for _ in range(int(_SHIFT)):
        m = z < _SHIFT
        if not m.any():
            break
        prod[m] *= z[m]
        recip[m] += 1.0 / z[m]
        z[m] += 1.0
    return z, prod, recip


def lgamma(x):
    """log Gamma(x) for x > 0, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    z, prod, _ = _shift_up(x)
    zi = 1.0 / z
    zi2 = zi * zi
    series = np.zeros_like(z)
    for c in reversed(_LGAMMA_COEFS):
        series = series * zi2 + c
    out = (z - 0.5) * np.log(z) - z + _HALF_LOG_2PI + series * zi
    return out - np.log(prod)


def digamma(x):
    """Digamma for x > 0: upward recurrence then asymptotic series."""
    x = np.asarray(x, dtype=np.float64)
    z, _, recip = _shift_up(x)
    zi2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    for c in reversed(_DIGAMMA_COEFS):
        series = series * zi2 + c
    out = np.log(z) - 0.5 / z - series * zi2
    return out - recip


def zinb_nll_terms(x, pi, mu, theta, floor):
    """Per-entry ZINB negative log-likelihood and its partials.

    Returns ``(nll, d_pi, d_mu, d_theta)``, all shaped like ``x``.
    Entries whose mixture probability falls under ``floor`` get zero
    gradient.
    """
    x = np.asarray(x, dtype=np.float64)
    log_tm = np.log(theta + mu)
    log_nb = (
        lgamma(x + theta)
        - lgamma(theta)
        - lgamma(x + 1.0)
        + theta * (np.log(theta) - log_tm)
        + x * (np.log(mu) - log_tm)
    )
    nb = np.exp(log_nb)
    is_zero = (x == 0.0).astype(np.float64)
    prob = pi * is_zero + (1.0 - pi) * nb
    live = prob > floor
    prob_f = np.where(live, prob, floor)
    nll = -np.log(prob_f)

    inv = np.where(live, 1.0 / prob_f, 0.0)
    d_pi = -(is_zero - nb) * inv
    d_lognb = -(1.0 - pi) * nb * inv
    r = (theta + x) / (theta + mu)
    d_mu = d_lognb * (x / mu - r)
    d_theta = d_lognb * (
        digamma(x + theta) - digamma(theta) + np.log(theta) + 1.0 - log_tm - r
    )
    return nll, d_pi, d_mu, d_theta


def _logsumexp_rows(a):
    m = a.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return (m + np.log(np.exp(a - m).sum(axis=1, keepdims=True)))[:, 0]


def sinkhorn_log(log_k, log_col, max_iters, tol):
    """Balanced Sinkhorn scaling in log space with unit row targets.

    Returns ``(log_u, log_v, iters, violation)`` where violation is the
    max absolute row-marginal error after the last column update.
    """
    log_k = np.asarray(log_k, dtype=np.float64)
    n, c = log_k.shape
    log_u = np.zeros(n)
    log_v = np.zeros(c)
    violation = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        log_u = -_logsumexp_rows(log_k + log_v[None, :])
        log_v = log_col - _logsumexp_rows((log_k + log_u[:, None]).T)
        rows = np.exp(_logsumexp_rows(log_k + log_u[:, None] + log_v[None, :]))
        violation = float(np.max(np.abs(rows - 1.0)))
        if violation <= tol:
            break
    return log_u, log_v, it, violation
