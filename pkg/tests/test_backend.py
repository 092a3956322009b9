"""Compiled kernels and the numpy fallback must agree."""
import os
import subprocess
import sys

import mpmath
import numpy as np
import pytest

from softcut import _fallback
from softcut._backend import BACKEND

compiled = pytest.importorskip("softcut._kernels")
BACKENDS = [pytest.param(_fallback, id="python"), pytest.param(compiled, id="compiled")]


def _rel(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300))


@pytest.mark.parametrize("k", BACKENDS)
def test_lgamma_digamma_vs_mpmath(k):
    xs = np.array([1e-8, 1e-3, 0.1, 0.5, 1.0, 1.5, 2.0, 3.7, 9.99, 10.0, 25.0, 1e3, 1e6])
    lg = np.array([float(mpmath.loggamma(mpmath.mpf(x))) for x in xs])
    dg = np.array([float(mpmath.digamma(mpmath.mpf(x))) for x in xs])
    assert np.max(np.abs(k.lgamma(xs) - lg) / np.maximum(np.abs(lg), 1.0)) < 1e-14
    assert np.max(np.abs(k.digamma(xs) - dg) / np.maximum(np.abs(dg), 1.0)) < 1e-14


def test_special_function_parity():
    x = np.random.default_rng(0).uniform(1e-4, 200, size=(40, 30))
    assert _rel(compiled.lgamma(x), _fallback.lgamma(x)) < 1e-13
    assert _rel(compiled.digamma(x), _fallback.digamma(x)) < 1e-13


def test_zinb_terms_parity():
    rng = np.random.default_rng(1)
    shape = (25, 17)
    x = rng.integers(0, 30, size=shape).astype(float)
    x[rng.random(shape) < 0.4] = 0
    pi = rng.uniform(0, 1, shape)
    mu = 10 ** rng.uniform(-8, 7, shape)
    th = 10 ** rng.uniform(-8, 7, shape)
    a = compiled.zinb_nll_terms(x, pi, mu, th, 1e-10)
    b = _fallback.zinb_nll_terms(x, pi, mu, th, 1e-10)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=1e-10, atol=1e-12)


def test_sinkhorn_parity():
    rng = np.random.default_rng(2)
    Q = rng.dirichlet(np.ones(5), size=40)
    log_k = 50 * np.log(Q)
    log_col = np.log(40 * np.full(5, 0.2))
    a = compiled.sinkhorn_log(log_k, log_col, 300, 1e-9)
    b = _fallback.sinkhorn_log(log_k, log_col, 300, 1e-9)
    Pa = np.exp(log_k + a[0][:, None] + a[1][None, :])
    Pb = np.exp(log_k + b[0][:, None] + b[1][None, :])
    np.testing.assert_allclose(Pa, Pb, atol=1e-9)
    assert a[2] == b[2]


def test_env_var_forces_fallback():
    code = "from softcut._backend import BACKEND; print(BACKEND)"
    env = dict(os.environ, SOFTCUT_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    assert BACKEND in ("compiled", "python")
