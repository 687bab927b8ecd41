"""Fiber-bundle geometry: fiber metrics, the observation-adaptive connection,
its curvature, fiber-ball clamping, cutoff functions and properness checks.

Fiber coordinates hold the observation *deviation*, centered at zero, so the
fiber over ``x`` is the ball ``{xi : |xi|_rho(x) <= delta(x)}``. The raw
observation is recovered as ``h(x) + xi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _fd
from .errors import (
    DomainError,
    InsufficientSamplesError,
    InvalidInputError,
    InvalidParameterError,
    SingularMetricError,
)

Array = np.ndarray


def darboux(n: int) -> Array:
    """Canonical symplectic matrix for coordinates ``(q_1..q_n, p_1..p_n)``."""
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, eye], [-eye, zero]])


@dataclass
class ObservationSystemSpec:
    """Complete description of a constrained system on an observation bundle.

    Evaluators take the base point ``x`` (length ``2n``) unless noted; the
    Hamiltonian and constraint take ``(x, xi, pi)``. Optional ``*_grad``
    callbacks return analytic derivatives; when absent, fourth-order central
    differences with relative step ``gradient_step`` are used.

    ``constraint`` follows the convention ``Phi >= 0`` feasible. ``None`` means
    the system is unconstrained.
    """

    n: int
    k: int
    hamiltonian: Callable[[Array, Array, Array], float]
    observation_map: Callable[[Array], Array]
    fiber_metric: Callable[[Array], Array]
    uncertainty: Callable[[Array], float]
    base_metric: Optional[Callable[[Array], Array]] = None
    base_symplectic: Optional[Callable[[Array], Array]] = None
    observation_jacobian: Optional[Callable[[Array], Array]] = None
    fiber_metric_grad: Optional[Callable[[Array], Array]] = None
    boundary_distance: Optional[Callable[[Array], float]] = None
    hamiltonian_grad: Optional[Callable[[Array, Array, Array], Array]] = None
    constraint: Optional[Callable[[Array, Array, Array], float]] = None
    constraint_grad: Optional[Callable[[Array, Array, Array], Array]] = None
    mixing: object = None
    base_christoffel: Optional[Callable[[Array], Array]] = None
    gradient_step: float = 1e-5
    eps_safe: float = 0.1
    boundary_eps0: float = 0.1
    boundary_delta_max: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        if self.n < 1 or self.k < 1:
            raise InvalidParameterError(f"need n >= 1 and k >= 1, got n={self.n}, k={self.k}")
        if not 0.0 <= self.boundary_delta_max < 1.0:
            raise InvalidParameterError("boundary_delta_max must lie in [0, 1)")
        if self.gradient_step <= 0:
            raise InvalidParameterError("gradient_step must be positive")

    @property
    def dim(self) -> int:
        return 2 * self.n + 2 * self.k

    def split(self, z: Array) -> tuple[Array, Array, Array]:
        m = 2 * self.n
        return z[:m], z[m:m + self.k], z[m + self.k:]

    # evaluators with defaults

    def g_M(self, x: Array) -> Array:
        if self.base_metric is None:
            return np.eye(2 * self.n)
        return np.asarray(self.base_metric(x), dtype=float)

    def omega_M(self, x: Array) -> Array:
        if self.base_symplectic is None:
            return darboux(self.n)
        return np.asarray(self.base_symplectic(x), dtype=float)

    def rho(self, x: Array) -> Array:
        return np.asarray(self.fiber_metric(x), dtype=float)

    def delta(self, x: Array) -> float:
        return float(self.uncertainty(x))

    def distance_to_boundary(self, x: Array) -> float:
        if self.boundary_distance is None:
            return math.inf
        d = float(self.boundary_distance(x))
        if not d >= 0.0:
            raise DomainError(f"boundary distance {d!r} outside the working region")
        return d

    def dh(self, x: Array) -> Array:
        if self.observation_jacobian is not None:
            return np.asarray(self.observation_jacobian(x), dtype=float)
        d = _fd.derivative(self.observation_map, x, self.gradient_step)
        return d.T.reshape(self.k, 2 * self.n)

    def drho(self, x: Array) -> Array:
        """Base derivatives ``d_i rho_ab`` with shape ``(2n, k, k)``."""
        if self.fiber_metric_grad is not None:
            return np.asarray(self.fiber_metric_grad(x), dtype=float)
        return _fd.derivative(self.rho, x, self.gradient_step)

    def christoffel_base(self, x: Array) -> Array:
        if self.base_christoffel is None:
            m = 2 * self.n
            return np.zeros((m, m, m))
        return np.asarray(self.base_christoffel(x), dtype=float)

    def H(self, z: Array) -> float:
        return float(self.hamiltonian(*self.split(z)))

    def Phi(self, z: Array) -> float:
        if self.constraint is None:
            return math.inf
        return float(self.constraint(*self.split(z)))

    def grad_H(self, z: Array) -> Array:
        if self.hamiltonian_grad is not None:
            return np.asarray(self.hamiltonian_grad(*self.split(z)), dtype=float)
        return _fd.gradient(self.H, z, 1e-6)

    def grad_Phi(self, z: Array) -> Array:
        if self.constraint is None:
            return np.zeros(self.dim)
        if self.constraint_grad is not None:
            return np.asarray(self.constraint_grad(*self.split(z)), dtype=float)
        return _fd.gradient(self.Phi, z, 1e-6)


@dataclass(frozen=True)
class BundleState:
    """A point ``(t, x, xi, pi)`` of the total space."""

    t: float
    x: Array
    xi: Array
    pi: Array

    def __post_init__(self):
        for name in ("x", "xi", "pi"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def vector(self) -> Array:
        return np.concatenate([self.x, self.xi, self.pi])

    @classmethod
    def from_vector(cls, t: float, z: Array, spec: ObservationSystemSpec) -> "BundleState":
        x, xi, pi = spec.split(np.asarray(z, dtype=float))
        return cls(float(t), x, xi, pi)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.t) and np.all(np.isfinite(self.vector())))


def as_vector(state) -> Array:
    if isinstance(state, BundleState):
        return state.vector()
    return np.asarray(state, dtype=float)


@dataclass
class ConnectionReport:
    gamma_mixed: Array
    compat_residual: float
    curvature_mixed: Array


# fiber ball


def _check_fiber(spec: ObservationSystemSpec, x: Array, xi: Array) -> tuple[Array, Array]:
    x = np.asarray(x, dtype=float).reshape(-1)
    xi = np.asarray(xi, dtype=float).reshape(-1)
    if x.size != 2 * spec.n or xi.size != spec.k:
        raise InvalidInputError(f"expected x of length {2 * spec.n} and xi of length {spec.k}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xi))):
        raise InvalidInputError("non-finite coordinates")
    return x, xi


def _quad_norm(rho: Array, xi: Array) -> float:
    return math.sqrt(max(float(xi @ rho @ xi), 0.0))


def fiber_norm(spec: ObservationSystemSpec, x, xi) -> float:
    """``sqrt(xi^T rho(x) xi)``."""
    x, xi = _check_fiber(spec, x, xi)
    return _quad_norm(spec.rho(x), xi)


def radial_clamp(spec: ObservationSystemSpec, x, xi) -> Array:
    """Scale ``xi`` radially back into the fiber ball of radius ``delta(x)``.

    The result always passes ``fiber_norm <= delta`` as evaluated here, so the
    operation is exactly idempotent.
    """
    x, xi = _check_fiber(spec, x, xi)
    rho = spec.rho(x)
    radius = spec.delta(x)
    nrm = _quad_norm(rho, xi)
    if nrm <= radius:
        return xi.copy()
    out = xi * (radius / nrm)
    shrink = 1.0
    while _quad_norm(rho, out) > radius:
        shrink = np.nextafter(shrink, 0.0)
        out = xi * (radius / nrm) * shrink
    return out


# connection and curvature


def _inverse_metric(rho: Array) -> Array:
    try:
        np.linalg.cholesky(rho)
    except np.linalg.LinAlgError:
        raise SingularMetricError("fiber metric is not positive-definite") from None
    if np.linalg.cond(rho) > 1e13:
        raise SingularMetricError("fiber metric is numerically singular")
    return np.linalg.inv(rho)


def mixed_connection(spec: ObservationSystemSpec, x, boundary_truncation: bool = False) -> Array:
    """Mixed coefficients ``Gamma[a, b, i] = 1/2 rho^{ac} d_i rho_{bc}``.

    Fiber-fiber coefficients vanish because ``rho`` does not depend on the
    fiber coordinates, so they are not returned. With ``boundary_truncation``
    the coefficients are multiplied by ``cutoff_chi(d(x, dW), eps_safe)``.
    """
    x = np.asarray(x, dtype=float)
    Q = _inverse_metric(spec.rho(x))
    gamma = 0.5 * np.einsum("ac,ibc->abi", Q, spec.drho(x))
    if boundary_truncation:
        gamma = gamma * cutoff_chi(spec.distance_to_boundary(x), spec.eps_safe)
    return gamma


def metric_compat_residual(spec: ObservationSystemSpec, x) -> float:
    """``max |d_i rho_ab - Gamma^c_{ai} rho_cb - Gamma^c_{bi} rho_ac|``."""
    x = np.asarray(x, dtype=float)
    rho = spec.rho(x)
    P = spec.drho(x)
    gamma = mixed_connection(spec, x)
    t1 = np.einsum("cai,cb->iab", gamma, rho)
    t2 = np.einsum("cbi,ac->iab", gamma, rho)
    return float(np.max(np.abs(P - t1 - t2)))


def mixed_curvature(spec: ObservationSystemSpec, x) -> Array:
    """Mixed curvature ``R[a, b, i, j]`` from the closed form
    ``1/2 [(d_i rho^{ac})(d_j rho_bc) - (d_j rho^{ac})(d_i rho_bc)]``.
    """
    x = np.asarray(x, dtype=float)
    Q = _inverse_metric(spec.rho(x))
    P = spec.drho(x)
    dQ = -np.einsum("ad,ide,ec->iac", Q, P, Q)
    half = 0.5 * np.einsum("iac,jbc->abij", dQ, P)
    return half - half.transpose(0, 1, 3, 2)


def connection_report(spec: ObservationSystemSpec, x) -> ConnectionReport:
    return ConnectionReport(
        gamma_mixed=mixed_connection(spec, x),
        compat_residual=metric_compat_residual(spec, x),
        curvature_mixed=mixed_curvature(spec, x),
    )


# cutoffs


def _bump(s: float) -> float:
    return math.exp(-1.0 / s) if s > 0.0 else 0.0


def smooth_step(s: float) -> float:
    """C-infinity step: 0 for s <= 0, 1 for s >= 1, strictly increasing between."""
    if s <= 0.0:
        return 0.0
    if s >= 1.0:
        return 1.0
    a = _bump(s)
    return a / (a + _bump(1.0 - s))


def cutoff_chi(t: float, eps: float) -> float:
    """Smooth cutoff equal to 0 for ``t <= eps/2`` and 1 for ``t >= eps``."""
    if not eps > 0.0:
        raise InvalidParameterError(f"eps must be positive, got {eps!r}")
    if t >= eps:
        return 1.0
    half = 0.5 * eps
    return smooth_step((t - half) / half)


def comm_cutoff(p, p_base, R_comm: float, width: float = 1.0) -> float:
    """Communication-range cutoff: 1 inside ``R_comm``, outside it
    ``eta((r - R)/R) * (R/r)**3`` with ``eta(u) = 1 - smooth_step(u / width)``.
    """
    if not (R_comm > 0.0 and math.isfinite(R_comm)):
        raise InvalidParameterError(f"R_comm must be positive and finite, got {R_comm!r}")
    if not width > 0.0:
        raise InvalidParameterError("width must be positive")
    r = float(np.linalg.norm(np.asarray(p, dtype=float) - np.asarray(p_base, dtype=float)))
    if r <= R_comm:
        return 1.0
    eta = 1.0 - smooth_step(((r - R_comm) / R_comm) / width)
    return eta * (R_comm / r) ** 3


# properness


@dataclass
class PropernessReport:
    """Sample-based evidence for the four properness conditions; never a proof."""

    samples: int
    c1_max_delta: float
    c2_min_ratio: Optional[float]
    c2_samples: int
    c2_alpha: float
    c2_violated: bool
    c3_lipschitz: Optional[float]
    c4b_exponent: Optional[float]
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "samples": self.samples,
            "C1": {"max_delta": self.c1_max_delta, "finite": math.isfinite(self.c1_max_delta)},
            "C2": {
                "min_ratio": self.c2_min_ratio,
                "samples": self.c2_samples,
                "alpha": self.c2_alpha,
                "violated": self.c2_violated,
            },
            "C3": {"lipschitz_quotient": self.c3_lipschitz},
            "C4b": {"decay_exponent": self.c4b_exponent},
            "notes": list(self.notes),
        }


def lipschitz_quotient(spec: ObservationSystemSpec, xs: Array) -> float:
    """Largest ``|delta(x) - delta(y)| / |x - y|`` over distinct sample pairs."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if xs.shape[0] < 2:
        raise InsufficientSamplesError("Lipschitz quotient needs at least two points")
    deltas = np.array([spec.delta(x) for x in xs])
    diff = xs[:, None, :] - xs[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    num = np.abs(deltas[:, None] - deltas[None, :])
    mask = dist > 0.0
    if not np.any(mask):
        raise InsufficientSamplesError("all sample points coincide")
    return float(np.max(num[mask] / dist[mask]))


def decay_exponent(spec: ObservationSystemSpec, xs: Array, x_ref=None) -> Optional[float]:
    """Fitted ``beta`` in ``delta(x) ~ C (1 + |x - x_ref|)^-beta`` over the far half of the samples."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ref = np.zeros(xs.shape[1]) if x_ref is None else np.asarray(x_ref, dtype=float)
    d = np.linalg.norm(xs - ref, axis=1)
    far = d >= np.median(d)
    u = np.log1p(d[far])
    if np.unique(u).size < 2:
        return None
    v = np.log([spec.delta(x) for x in xs[far]])
    slope = np.polyfit(u, v, 1)[0]
    return float(-slope)


def validate_properness(
    spec: ObservationSystemSpec,
    sample_points: Sequence,
    R_min: float = 1.0,
    alpha: float = 1.0,
    x_ref=None,
) -> PropernessReport:
    """Evaluate (C1)-(C3) and the (C4b) decay fit on sampled bundle states.

    ``sample_points`` are ``BundleState`` objects or full state vectors.
    """
    states = [as_vector(s) for s in sample_points]
    if not states:
        raise InsufficientSamplesError("no sample points")
    zs = np.vstack(states)
    m = 2 * spec.n
    xs = zs[:, :m]
    notes = []

    c1 = max(spec.delta(x) for x in xs)

    ratios = []
    if spec.constraint is not None:
        for z in zs:
            x, xi, _ = spec.split(z)
            r = _quad_norm(spec.rho(x), xi)
            if r >= R_min and r > 0.0:
                ratios.append(spec.Phi(z) / r**2)
    c2 = min(ratios) if ratios else None
    if c2 is None:
        notes.append("C2: no samples with fiber norm >= R_min")

    try:
        c3 = lipschitz_quotient(spec, xs)
    except InsufficientSamplesError as exc:
        c3 = None
        notes.append(f"C3: insufficient samples ({exc})")

    c4 = decay_exponent(spec, xs, x_ref) if xs.shape[0] >= 2 else None
    if c4 is None:
        notes.append("C4b: not enough distinct distances to fit a decay exponent")

    return PropernessReport(
        samples=len(states),
        c1_max_delta=float(c1),
        c2_min_ratio=c2,
        c2_samples=len(ratios),
        c2_alpha=alpha,
        c2_violated=bool(c2 is not None and c2 < -alpha),
        c3_lipschitz=c3,
        c4b_exponent=c4,
        notes=notes,
    )
