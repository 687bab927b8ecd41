"""Open Toda chain with observed relative positions.

Conventions: ``y_i = q_i - q_{i+1}`` and ``e_i = exp(y_i + eps_i)``. The
observation-error law is ``eps_dot_i = s * 2 (p_i - p_{i+1})``; the sign ``s``
that zeroes the off-diagonal zero-curvature residual is ``ORACLE_SIGN``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .eigen import symmetric_spectrum
from .errors import InvalidInputError, InvalidParameterError
from .geometry import ObservationSystemSpec

Array = np.ndarray

ORACLE_SIGN = -1.0
PRINTED_SIGN = 1.0


@dataclass(frozen=True)
class TodaParams:
    n: int = 3
    delta0: float = 0.5
    alpha_noise: float = 1.0
    beta_weight: float = 0.0
    kappa: float = 1.0
    alpha_momentum: float = 1.0
    weights: Array = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 2:
            raise InvalidParameterError("Toda chain needs n >= 2")
        for name in ("delta0", "alpha_noise", "kappa", "alpha_momentum"):
            v = getattr(self, name)
            if not (v > 0.0 and math.isfinite(v)):
                raise InvalidParameterError(f"{name} must be positive and finite")
        if not (self.beta_weight >= 0.0 and math.isfinite(self.beta_weight)):
            raise InvalidParameterError("beta_weight must be >= 0")
        idx = np.arange(1, self.n + 1)
        w = np.exp(-self.beta_weight * np.abs(idx - 0.5 * (self.n + 1)))
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def m_eff(self) -> float:
        """Reduced mass of the ``n - 1`` relative coordinates with unit masses."""
        return 1.0 / (self.n - 1)

    @property
    def constraint_weights(self) -> Array:
        """Weights applied to the ``n - 1`` fiber coordinates."""
        return self.weights[: self.n - 1]


@dataclass(frozen=True)
class LaxPair:
    L: Array
    A: Array
    lam: float


def _pair(q, p) -> tuple[Array, Array]:
    q = np.asarray(q, dtype=float).reshape(-1)
    p = np.asarray(p, dtype=float).reshape(-1)
    if q.size != p.size or q.size < 1:
        raise InvalidInputError("q and p must be non-empty and of equal length")
    return q, p


def toda_rhs(q, p) -> tuple[Array, Array]:
    q, p = _pair(q, p)
    f = np.exp(q[:-1] - q[1:])
    pdot = np.zeros_like(p)
    pdot[:-1] -= f
    pdot[1:] += f
    return p.copy(), pdot


def toda_energy(q, p) -> float:
    q, p = _pair(q, p)
    return float(0.5 * p @ p + np.sum(np.exp(q[:-1] - q[1:])))


def _eps(eps_vec, n: int) -> Array:
    eps = np.zeros(n - 1) if eps_vec is None else np.asarray(eps_vec, dtype=float).reshape(-1)
    if eps.size != n - 1:
        raise InvalidInputError(f"eps must have length n - 1 = {n - 1}, got {eps.size}")
    return eps


def uncertainty_radius(eps, params: TodaParams) -> float:
    """``delta0 * sqrt(1 + alpha * sum eps_j^2)``, shared by every site."""
    eps = np.asarray(eps, dtype=float)
    return params.delta0 * math.sqrt(1.0 + params.alpha_noise * float(eps @ eps))


def uncertainty_rate(eps, eps_dot, params: TodaParams) -> float:
    eps = np.asarray(eps, dtype=float)
    eps_dot = np.asarray(eps_dot, dtype=float)
    return params.delta0 * params.alpha_noise * float(eps @ eps_dot) / math.sqrt(
        1.0 + params.alpha_noise * float(eps @ eps)
    )


def build_lax(q, p, eps_vec=None, lam: float = 0.0, params: Optional[TodaParams] = None,
              eps_dot=None) -> LaxPair:
    """``L = L0 + lam L1`` and ``A = A0 + lam A1``.

    ``A1 = diag(delta_dot)`` needs ``eps_dot``; without it ``A1 = 0``.
    """
    q, p = _pair(q, p)
    n = q.size
    eps = _eps(eps_vec, n)
    params = params or TodaParams()
    e = np.exp(q[:-1] - q[1:] + eps)
    L = np.diag(p) + np.diag(e, 1) + np.diag(e, -1)
    A = np.diag(e, 1) - np.diag(e, -1)
    delta = uncertainty_radius(eps, params)
    L = L + lam * delta * np.eye(n)
    if eps_dot is not None:
        rate = uncertainty_rate(eps, _eps(eps_dot, n), params)
        A = A + lam * rate * np.eye(n)
    return LaxPair(L=L, A=A, lam=lam)


def epsilon_evolution(p, sign: Optional[float] = None, printed_sign: bool = False) -> Array:
    """``eps_dot_i = s * 2 (p_i - p_{i+1})``.

    ``s`` defaults to ``ORACLE_SIGN``; ``printed_sign=True`` selects ``+1``.
    """
    p = np.asarray(p, dtype=float).reshape(-1)
    if sign is None:
        sign = PRINTED_SIGN if printed_sign else ORACLE_SIGN
    return sign * 2.0 * (p[:-1] - p[1:])


def _dL_dt(q, p, eps, eps_dot, params: TodaParams) -> tuple[Array, Array]:
    """Time derivatives of ``L0`` and ``L1`` along the Toda flow and the given ``eps_dot``."""
    qd, pd = toda_rhs(q, p)
    e = np.exp(q[:-1] - q[1:] + eps)
    de = e * (qd[:-1] - qd[1:] + eps_dot)
    dL0 = np.diag(pd) + np.diag(de, 1) + np.diag(de, -1)
    dL1 = uncertainty_rate(eps, eps_dot, params) * np.eye(q.size)
    return dL0, dL1


def zero_curvature_orders(q, p, eps_vec, eps_dot, params: Optional[TodaParams] = None) -> dict:
    """Residual matrices of ``dL/dt - [A, L]`` split by powers of ``lam``.

    Keys ``0``, ``1`` and ``2`` hold the coefficient matrices of
    ``lam^0``, ``lam^1`` and ``lam^2``.
    """
    q, p = _pair(q, p)
    n = q.size
    params = params or TodaParams()
    eps = _eps(eps_vec, n)
    eps_dot = _eps(eps_dot, n)
    base = build_lax(q, p, eps, 0.0, params)
    L0, A0 = base.L, base.A
    L1 = uncertainty_radius(eps, params) * np.eye(n)
    A1 = uncertainty_rate(eps, eps_dot, params) * np.eye(n)
    dL0, dL1 = _dL_dt(q, p, eps, eps_dot, params)

    def comm(X, Y):
        return X @ Y - Y @ X

    return {
        0: dL0 - comm(A0, L0),
        1: dL1 - comm(A0, L1) - comm(A1, L0),
        2: -comm(A1, L1),
    }


def zero_curvature_matrix(q, p, eps_vec, eps_dot, params: Optional[TodaParams] = None,
                          lam: float = 0.0) -> Array:
    orders = zero_curvature_orders(q, p, eps_vec, eps_dot, params)
    return orders[0] + lam * orders[1] + lam * lam * orders[2]


def zero_curvature_residual(q, p, eps_vec, eps_dot, params: Optional[TodaParams] = None,
                            lam: float = 0.0, per_order: bool = False):
    """Frobenius norm of ``dL/dt - [A, L]`` along the Toda flow.

    With ``per_order=True`` returns ``{order: norm}`` for the ``lam`` powers.
    """
    if per_order:
        return {k: float(np.linalg.norm(v)) for k, v in zero_curvature_orders(q, p, eps_vec, eps_dot, params).items()}
    return float(np.linalg.norm(zero_curvature_matrix(q, p, eps_vec, eps_dot, params, lam)))


def oracle_sign(rng: Optional[np.random.Generator] = None, n: int = 2) -> float:
    """Sign ``s`` minimizing the off-diagonal ``lam^0`` residual at a random state."""
    rng = rng or np.random.default_rng(0)
    q, p = rng.normal(size=n), rng.normal(size=n)
    eps = 0.1 * rng.normal(size=n - 1)
    best, best_res = None, math.inf
    for s in (1.0, -1.0):
        R = zero_curvature_orders(q, p, eps, epsilon_evolution(p, sign=s))[0]
        res = float(np.max(np.abs(np.diag(R, 1))))
        if res < best_res:
            best, best_res = s, res
    return best


def epsilon_crit(p, params: TodaParams) -> float:
    """``min_i |p_i - p_{i+1}| / (2 alpha delta0)``."""
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.size < 2:
        raise InvalidInputError("epsilon_crit needs at least two momenta")
    return float(np.min(np.abs(p[:-1] - p[1:])) / (2.0 * params.alpha_noise * params.delta0))


# classical oracle


def flaschka_lax(q, p) -> Array:
    """Symmetric tridiagonal Lax matrix with ``b_i = p_i / 2`` and ``a_i = exp((q_i - q_{i+1}) / 2) / 2``."""
    q, p = _pair(q, p)
    if q.size < 2:
        raise InvalidInputError("flaschka_lax needs n >= 2")
    a = 0.5 * np.exp(0.5 * (q[:-1] - q[1:]))
    return np.diag(0.5 * p) + np.diag(a, 1) + np.diag(a, -1)


def rk4_toda(q, p, t_final: float, dt: float) -> tuple[Array, Array]:
    """Classical fourth-order Runge-Kutta on ``toda_rhs``; the last step is shortened to hit ``t_final``."""
    if not dt > 0.0:
        raise InvalidParameterError("dt must be > 0")
    q, p = _pair(q, p)
    steps = max(1, math.ceil(t_final / dt - 1e-9))
    h = t_final / steps
    z = np.concatenate([q, p])
    n = q.size

    def f(w):
        a, b = toda_rhs(w[:n], w[n:])
        return np.concatenate([a, b])

    for _ in range(steps):
        k1 = f(z)
        k2 = f(z + 0.5 * h * k1)
        k3 = f(z + 0.5 * h * k2)
        k4 = f(z + h * k3)
        z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return z[:n], z[n:]


def flaschka_drift(q, p, t_final: float = 10.0, dt: float = 1e-3) -> dict:
    """Spectral drift of the Flaschka matrix under RK4, with a Richardson check at ``2 dt``."""
    ev0 = symmetric_spectrum(flaschka_lax(q, p))
    qf, pf = rk4_toda(q, p, t_final, dt)
    qc, pc = rk4_toda(q, p, t_final, 2 * dt)
    ev = symmetric_spectrum(flaschka_lax(qf, pf))
    evc = symmetric_spectrum(flaschka_lax(qc, pc))
    return {
        "drift": float(np.max(np.abs(ev - ev0))),
        "drift_coarse": float(np.max(np.abs(evc - ev0))),
        "richardson_estimate": float(np.max(np.abs(evc - ev)) / 15.0),
        "momentum_drift": float(abs(np.sum(pf) - np.sum(np.asarray(p, dtype=float)))),
        "spectrum_initial": ev0.tolist(),
        "spectrum_final": ev.tolist(),
    }


# bundle system


def toda_system_spec(params: TodaParams, unconstrained: bool = False,
                     uncertainty=None) -> ObservationSystemSpec:
    """Toda chain on the observation bundle with the weighted ellipsoid constraint.

    ``uncertainty`` overrides the constant radius ``delta0``.
    """
    n, k = params.n, params.n - 1
    w = params.constraint_weights
    d0sq = params.delta0 ** 2
    am = params.alpha_momentum
    m_eff = params.m_eff
    kappa = params.kappa
    D = np.zeros((k, 2 * n))
    D[np.arange(k), np.arange(k)] = 1.0
    D[np.arange(k), np.arange(1, k + 1)] = -1.0

    def hamiltonian(x, xi, pi):
        q, p = x[:n], x[n:]
        return toda_energy(q, p) + 0.5 * float(pi @ pi / m_eff + kappa * xi @ xi)

    def hamiltonian_grad(x, xi, pi):
        q, p = x[:n], x[n:]
        _, pdot = toda_rhs(q, p)
        return np.concatenate([-pdot, p, kappa * xi, pi / m_eff])

    def constraint(x, xi, pi):
        return 1.0 - float(np.sum(w * (xi**2 / d0sq + pi**2 / (2.0 * am * d0sq))))

    def constraint_grad(x, xi, pi):
        return np.concatenate([np.zeros(2 * n), -2.0 * w * xi / d0sq, -w * pi / (am * d0sq)])

    delta0 = params.delta0
    return ObservationSystemSpec(
        n=n,
        k=k,
        hamiltonian=hamiltonian,
        hamiltonian_grad=hamiltonian_grad,
        observation_map=lambda x: D @ x,
        observation_jacobian=lambda x: D,
        fiber_metric=lambda x: np.eye(k),
        fiber_metric_grad=lambda x: np.zeros((2 * n, k, k)),
        uncertainty=(lambda x: delta0) if uncertainty is None else uncertainty,
        constraint=None if unconstrained else constraint,
        constraint_grad=None if unconstrained else constraint_grad,
        name="toda",
    )
