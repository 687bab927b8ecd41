from __future__ import annotations

import numpy as np
import pytest

from bundledyn.geometry import ObservationSystemSpec
from bundledyn.poisson import Observable


def flat_spec(n=1, k=1, H=None, H_grad=None, rho=None, drho=None, delta=1.0, **kw):
    """Darboux base, identity metrics unless overridden.

    A custom ``rho`` without ``drho`` falls back to finite differences.
    """
    if H is None:
        H = lambda x, xi, pi: 0.5 * float(x @ x + pi @ pi)
        H_grad = lambda x, xi, pi: np.concatenate([x, np.zeros(k), pi])
    if rho is None:
        rho = lambda x: np.eye(k)
        drho = lambda x: np.zeros((2 * n, k, k))
    return ObservationSystemSpec(
        n=n,
        k=k,
        hamiltonian=H,
        hamiltonian_grad=H_grad,
        observation_map=lambda x: x[:k].copy(),
        fiber_metric=rho,
        fiber_metric_grad=drho,
        uncertainty=(lambda x: delta) if np.isscalar(delta) else delta,
        **kw,
    )


def conformal_spec(n=2, k=2, analytic=True, f=None, df=None):
    """``rho = exp(2 f(x)) I`` with ``f = x^1`` by default."""
    f = f or (lambda x: x[0])
    if df is None:
        def df(x):
            g = np.zeros(2 * n)
            g[0] = 1.0
            return g

    def rho(x):
        return np.exp(2.0 * f(x)) * np.eye(k)

    def drho(x):
        return 2.0 * np.exp(2.0 * f(x)) * df(x)[:, None, None] * np.eye(k)[None]

    return flat_spec(n=n, k=k, rho=rho, drho=drho if analytic else None)


def random_observable(rng, dim):
    """Smooth scalar with analytic gradient: quadratic plus a few sines."""
    S = rng.normal(size=(dim, dim))
    S = 0.5 * (S + S.T)
    b = rng.normal(size=dim)
    W = rng.normal(size=(3, dim))
    c = rng.normal(size=3)
    a = rng.normal(size=3)

    def fn(z):
        return 0.5 * z @ S @ z + b @ z + a @ np.sin(W @ z + c)

    def grad(z):
        return S @ z + b + W.T @ (a * np.cos(W @ z + c))

    return Observable(fn, grad)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
