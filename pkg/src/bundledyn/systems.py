"""Built-in systems: harmonic oscillator, circle constraint and the Toda chain."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidParameterError, ProjectionFailureError
from .geometry import BundleState, ObservationSystemSpec
from .integrator import IntegratorConfig, project_constraint
from .toda import TodaParams, toda_system_spec


@dataclass
class SystemEntry:
    """A built system with its defaults.

    ``integrator`` and ``constraint`` hold per-system defaults that a run
    configuration may override.
    """

    spec: ObservationSystemSpec
    initial: BundleState
    integrator: dict = field(default_factory=dict)
    constraint: dict = field(default_factory=dict)


def _unit_fiber(k: int):
    return lambda x: np.eye(k)


def oscillator(omega: float = 1.0, constraint: str = "none", delta0: float = 1.0) -> SystemEntry:
    """``H = (p^2 + omega^2 q^2) / 2`` with a static one-dimensional fiber.

    ``omega = 0`` is the free particle; ``constraint="position"`` imposes
    ``Phi = q``.
    """
    if not (omega >= 0.0 and math.isfinite(omega)):
        raise InvalidParameterError("omega must be finite and >= 0")
    if not delta0 > 0.0:
        raise InvalidParameterError("delta0 must be > 0")
    if constraint not in ("none", "position"):
        raise InvalidParameterError(f"oscillator constraint must be 'none' or 'position', got {constraint!r}")
    w2 = omega * omega

    spec = ObservationSystemSpec(
        n=1,
        k=1,
        hamiltonian=lambda x, xi, pi: 0.5 * (x[1] ** 2 + w2 * x[0] ** 2),
        hamiltonian_grad=lambda x, xi, pi: np.array([w2 * x[0], x[1], 0.0, 0.0]),
        observation_map=lambda x: x[:1].copy(),
        observation_jacobian=lambda x: np.array([[1.0, 0.0]]),
        fiber_metric=_unit_fiber(1),
        fiber_metric_grad=lambda x: np.zeros((2, 1, 1)),
        uncertainty=lambda x: delta0,
        name="oscillator" if omega > 0 else "free_particle",
    )
    if constraint == "position":
        spec.constraint = lambda x, xi, pi: float(x[0])
        spec.constraint_grad = lambda x, xi, pi: np.array([1.0, 0.0, 0.0, 0.0])
        initial = BundleState(0.0, [-0.5, 0.0], [0.0], [0.0])
        return SystemEntry(spec, initial, {"projection": "off", "adapt": False, "monitor_geometry": False},
                           {"alpha_dissipation": 2.0, "mu_floor": 1.0})
    initial = BundleState(0.0, [1.0, 0.0] if omega > 0 else [0.0, 1.0], [0.0], [0.0])
    return SystemEntry(spec, initial)


def circle_constraint(c: float = 1.0, delta0: float = 1.0) -> SystemEntry:
    """``H = (q^2 + p^2) / 2`` with the first-class constraint ``Phi = H - c``."""
    if not c > 0.0:
        raise InvalidParameterError("c must be > 0")
    if not delta0 > 0.0:
        raise InvalidParameterError("delta0 must be > 0")

    def grad(x, xi, pi):
        return np.array([x[0], x[1], 0.0, 0.0])

    spec = ObservationSystemSpec(
        n=1,
        k=1,
        hamiltonian=lambda x, xi, pi: 0.5 * (x[0] ** 2 + x[1] ** 2),
        hamiltonian_grad=grad,
        observation_map=lambda x: x[:1].copy(),
        observation_jacobian=lambda x: np.array([[1.0, 0.0]]),
        fiber_metric=_unit_fiber(1),
        fiber_metric_grad=lambda x: np.zeros((2, 1, 1)),
        uncertainty=lambda x: delta0,
        constraint=lambda x, xi, pi: 0.5 * (x[0] ** 2 + x[1] ** 2) - c,
        constraint_grad=grad,
        name="circle_constraint",
    )
    initial = BundleState(0.0, [math.sqrt(2.0 * c), 0.0], [0.0], [0.0])
    return SystemEntry(spec, initial, {"projection": "equality", "first_class": True},
                       {"alpha_dissipation": 0.0})


def toda(n: int = 3, delta0: float = 0.5, alpha_noise: float = 1.0, beta_weight: float = 0.0,
         kappa: float = 1.0, alpha_momentum: float = 1.0, unconstrained: bool = False,
         uncertainty_decay: bool = False) -> SystemEntry:
    """Toda chain with the weighted ellipsoid constraint.

    ``uncertainty_decay`` replaces the constant radius by
    ``delta0 / (1 + |x|^2)``.
    """
    params = TodaParams(int(n), delta0, alpha_noise, beta_weight, kappa, alpha_momentum)
    radius = None
    if uncertainty_decay:
        radius = lambda x: delta0 / (1.0 + float(x @ x))
    spec = toda_system_spec(params, unconstrained=bool(unconstrained), uncertainty=radius)
    q0 = np.zeros(params.n)
    p0 = np.linspace(0.5, -0.5, params.n)
    k = params.n - 1
    initial = BundleState(0.0, np.concatenate([q0, p0]), np.zeros(k), np.zeros(k))
    return SystemEntry(spec, initial, {"projection": "inequality"}, {"alpha_dissipation": 0.0})


REGISTRY: dict[str, Callable[..., SystemEntry]] = {
    "oscillator": oscillator,
    "circle_constraint": circle_constraint,
    "toda": toda,
}


def build_system(name: str, params: dict | None = None) -> SystemEntry:
    if name not in REGISTRY:
        raise InvalidParameterError(f"unknown system {name!r}; known: {sorted(REGISTRY)}")
    try:
        return REGISTRY[name](**(params or {}))
    except TypeError as exc:
        raise InvalidParameterError(f"bad parameters for {name}: {exc}") from None


def surface_samples(spec: ObservationSystemSpec, count: int, seed: int = 0,
                    scale: float = 1.0, tol: float = 1e-13) -> list[BundleState]:
    """Random states moved onto ``Phi = 0`` by equality projection.

    Candidates whose projection fails are redrawn.
    """
    if spec.constraint is None:
        raise InvalidParameterError("system has no constraint surface")
    rng = np.random.default_rng(seed)
    cfg = IntegratorConfig(projection="equality", max_projection_iters=100, tol_constraint=tol)
    out = []
    attempts = 0
    while len(out) < count:
        attempts += 1
        if attempts > 20 * count + 100:
            raise ProjectionFailureError("could not generate surface samples")
        z = scale * rng.normal(size=spec.dim)
        try:
            z, _ = project_constraint(spec, z, cfg)
        except ProjectionFailureError:
            continue
        if abs(spec.Phi(z)) <= 1e-10 and np.all(np.isfinite(z)):
            out.append(BundleState.from_vector(0.0, z, spec))
    return out


def grid_samples(spec: ObservationSystemSpec, count: int, r_max: float = 1000.0) -> list[BundleState]:
    """Deterministic base points at log-spaced distances along rotating directions.

    The fiber coordinate sits on the boundary of the fiber ball; ``pi = 0``.
    A single point is placed at the origin.
    """
    if count < 1:
        raise InvalidParameterError("grid needs at least one point")
    m = 2 * spec.n
    radii = [0.0] if count == 1 else np.geomspace(0.1, r_max, count)
    out = []
    for j, r in enumerate(radii):
        u = np.cos(np.arange(m) + 0.7 * j)
        x = r * u / np.linalg.norm(u)
        xi = np.zeros(spec.k)
        xi[0] = 1.0
        rho = spec.rho(x)
        xi = xi * spec.delta(x) / math.sqrt(float(xi @ rho @ xi))
        out.append(BundleState(0.0, x, xi, np.zeros(spec.k)))
    return out

