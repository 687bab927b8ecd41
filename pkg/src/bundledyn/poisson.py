"""Symplectic form on the bundle, Poisson brackets and Hamiltonian vector fields.

Coordinates are ordered ``(x^1..x^2n, xi_1..xi_k, pi_1..pi_k)``. The bracket
orientation is fixed by ``{q, p} = +1``; the Hamiltonian vector field is
``B @ grad H`` so that ``dq/dt = dH/dp``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _fd
from .errors import DegenerateStructureError, InvalidParameterError, SingularMetricError
from .geometry import ObservationSystemSpec, as_vector, cutoff_chi, mixed_curvature

Array = np.ndarray

BACKENDS = ("paper_table", "exact_inverse")


class Observable:
    """Scalar function of the full state vector with an optional analytic gradient."""

    def __init__(self, fn: Callable[[Array], float], grad: Optional[Callable[[Array], Array]] = None):
        self.fn = fn
        self.grad = grad

    def __call__(self, z: Array) -> float:
        return float(self.fn(z))


def coordinate(spec: ObservationSystemSpec, index: int) -> Observable:
    """The coordinate function ``z -> z[index]``."""
    e = np.zeros(spec.dim)
    e[index] = 1.0
    return Observable(lambda z: z[index], lambda z: e)


def hamiltonian_observable(spec: ObservationSystemSpec) -> Observable:
    return Observable(spec.H, spec.grad_H)


def constraint_observable(spec: ObservationSystemSpec) -> Observable:
    return Observable(spec.Phi, spec.grad_Phi)


def gradient(F, z: Array, scale: float = 1e-6) -> Array:
    grad = getattr(F, "grad", None)
    if grad is not None:
        return np.asarray(grad(z), dtype=float)
    return _fd.gradient(F, z, scale)


@dataclass
class MixingModel:
    """Structure coefficients coupling base and fiber directions.

    ``mode="zero"`` disables mixing. ``mode="curvature"`` uses the evaluators
    given (each ``x -> array[2n, k, k]`` indexed ``[i, a, b]``); any evaluator
    left as ``None`` defaults to zero, except ``C`` which defaults to the
    symmetrized mixed curvature summed over its second base index.
    """

    mode: str = "zero"
    C: Optional[Callable[[Array], Array]] = None
    D: Optional[Callable[[Array], Array]] = None
    E: Optional[Callable[[Array], Array]] = None
    F: Optional[Callable[[Array], Array]] = None

    def __post_init__(self):
        if self.mode not in ("zero", "curvature"):
            raise InvalidParameterError(f"unknown mixing mode {self.mode!r}")

    def structure(self, spec: ObservationSystemSpec, x: Array) -> tuple[Array, Array, Array, Array]:
        shape = (2 * spec.n, spec.k, spec.k)
        zero = np.zeros(shape)
        if self.mode == "zero":
            return zero, zero, zero, zero
        C = curvature_structure(spec, x) if self.C is None else np.asarray(self.C(x), float)
        D = zero if self.D is None else np.asarray(self.D(x), float)
        E = zero if self.E is None else np.asarray(self.E(x), float)
        F = zero if self.F is None else np.asarray(self.F(x), float)
        return C, D, E, F

    def symmetry_defect(self, spec: ObservationSystemSpec, x: Array) -> float:
        """Largest violation of ``C_iab = C_iba``, ``F_iab = F_iba``, ``D_iab = E_iba``."""
        C, D, E, F = self.structure(spec, x)
        return float(max(
            np.max(np.abs(C - C.transpose(0, 2, 1))),
            np.max(np.abs(F - F.transpose(0, 2, 1))),
            np.max(np.abs(D - E.transpose(0, 2, 1))),
        ))


def curvature_structure(spec: ObservationSystemSpec, x: Array) -> Array:
    """Default ``C[i, a, b]``: mixed curvature ``R^a_{b i j}`` summed over ``j``,
    symmetrized in ``(a, b)``.

    Lowering ``a`` with ``rho`` would give a tensor antisymmetric in ``(a, b)``
    for a metric connection, whose symmetric part is identically zero, so the
    mixed-index components are used instead. Vanishes for conformal metrics.
    """
    R = mixed_curvature(spec, x).sum(axis=3)  # [a, b, i]
    S = 0.5 * (R + R.transpose(1, 0, 2))
    return S.transpose(2, 0, 1)


def _mixing(spec: ObservationSystemSpec) -> MixingModel:
    return spec.mixing if spec.mixing is not None else MixingModel()


def mixing_KL(spec: ObservationSystemSpec, state) -> tuple[Array, Array]:
    """``K_ia = C_iab xi_b + D_iab pi_b`` and ``L_ia = E_iab xi_b + F_iab pi_b``."""
    z = as_vector(state)
    x, xi, pi = spec.split(z)
    model = _mixing(spec)
    if model.mode == "zero":
        zero = np.zeros((2 * spec.n, spec.k))
        return zero, zero.copy()
    C, D, E, F = model.structure(spec, x)
    K = C @ xi + D @ pi
    L = E @ xi + F @ pi
    return K, L


def boundary_scale(d: float, eps0: float, delta_max: float) -> float:
    """Degeneration factor ``1 - delta_max * exp(-d / eps0)``."""
    if not (eps0 > 0.0) or not (0.0 <= delta_max < 1.0) or not (d >= 0.0):
        raise InvalidParameterError(
            f"boundary_scale needs d >= 0, eps0 > 0, 0 <= delta_max < 1 (got {d}, {eps0}, {delta_max})"
        )
    if math.isinf(d):
        return 1.0
    return 1.0 - delta_max * math.exp(-d / eps0)


def omega_scale(spec: ObservationSystemSpec, x: Array) -> float:
    """Scale applied to the assembled form at ``x``.

    Blends ``boundary_scale`` with the cutoff so the form is exactly standard
    once ``d >= eps_safe`` and equals ``1 - delta_max`` on the boundary.
    """
    d = spec.distance_to_boundary(x)
    if spec.boundary_delta_max == 0.0 or math.isinf(d):
        return 1.0
    chi = cutoff_chi(d, spec.eps_safe)
    drop = 1.0 - boundary_scale(d, spec.boundary_eps0, spec.boundary_delta_max)
    return 1.0 - (1.0 - chi) * drop


@dataclass(frozen=True)
class OmegaAssembly:
    matrix: Array
    scale: float


def _upper_antisym(U: Array) -> Array:
    U = np.triu(U, 1)
    return U - U.T


def _assemble_upper(spec: ObservationSystemSpec, base: Array, K: Array, L: Array) -> Array:
    m, k = 2 * spec.n, spec.k
    N = spec.dim
    U = np.zeros((N, N))
    U[:m, :m] = np.triu(base, 1)
    U[:m, m:m + k] = K
    U[:m, m + k:] = L
    U[m:m + k, m + k:] = np.eye(k)
    return U


def assemble_omega(spec: ObservationSystemSpec, state) -> OmegaAssembly:
    """Matrix of ``pi^* omega_M + omega_fib + Omega_mix``, scaled near the boundary."""
    z = as_vector(state)
    x = z[: 2 * spec.n]
    s = omega_scale(spec, x)
    K, L = mixing_KL(spec, z)
    matrix = s * _upper_antisym(_assemble_upper(spec, spec.omega_M(x), K, L))
    return OmegaAssembly(matrix=matrix, scale=s)


def bracket_matrix(spec: ObservationSystemSpec, state, backend: str = "exact_inverse") -> Array:
    """Coordinate Poisson brackets ``B[i, j] = {z^i, z^j}``.

    ``paper_table`` places ``K`` and ``L`` directly in the base-fiber blocks and
    raises the base form; ``exact_inverse`` is ``-inv(omega_E)``.
    """
    z = as_vector(state)
    if backend == "paper_table":
        x = z[: 2 * spec.n]
        raised = -np.linalg.inv(spec.omega_M(x))
        K, L = mixing_KL(spec, z)
        return _upper_antisym(_assemble_upper(spec, raised, K, L))
    if backend == "exact_inverse":
        omega = assemble_omega(spec, z).matrix
        if np.linalg.cond(omega) > 1e12:
            raise DegenerateStructureError("assembled symplectic form is numerically singular")
        B = -np.linalg.inv(omega)
        return 0.5 * (B - B.T)
    raise InvalidParameterError(f"unknown backend {backend!r}; expected one of {BACKENDS}")


def poisson_bracket(spec: ObservationSystemSpec, F, G, state, backend: str = "exact_inverse") -> float:
    """``{F, G} = grad F . B . grad G``."""
    z = as_vector(state)
    B = bracket_matrix(spec, z, backend)
    return float(gradient(F, z) @ B @ gradient(G, z))


def grad_E(spec: ObservationSystemSpec, F, state) -> tuple[Array, Array, Array]:
    """Metric-raised gradient ``(g_M^-1 dF/dx, rho^-1 dF/dxi, dF/dpi)``."""
    z = as_vector(state)
    x = z[: 2 * spec.n]
    gx, gxi, gpi = spec.split(gradient(F, z))
    try:
        return np.linalg.solve(spec.g_M(x), gx), np.linalg.solve(spec.rho(x), gxi), gpi.copy()
    except np.linalg.LinAlgError:
        raise SingularMetricError("singular base or fiber metric") from None


def grad_norm_sq(spec: ObservationSystemSpec, F, state) -> float:
    z = as_vector(state)
    gx, gxi, gpi = spec.split(gradient(F, z))
    ux, uxi, upi = grad_E(spec, F, z)
    return float(gx @ ux + gxi @ uxi + gpi @ upi)


def hamiltonian_vector_field(spec: ObservationSystemSpec, state, backend: str = "exact_inverse") -> Array:
    z = as_vector(state)
    return bracket_matrix(spec, z, backend) @ spec.grad_H(z)


def jacobi_residual(spec: ObservationSystemSpec, F, G, H, state,
                    backend: str = "exact_inverse", outer_step: float = 2e-4) -> float:
    """``|{F,{G,H}} + {G,{H,F}} + {H,{F,G}}|`` with finite-difference outer gradients."""
    z = as_vector(state)

    def inner(A, C):
        return lambda w: poisson_bracket(spec, A, C, w, backend)

    total = 0.0
    for A, C, D in ((F, G, H), (G, H, F), (H, F, G)):
        outer = Observable(inner(C, D), lambda w, f=inner(C, D): _fd.gradient(f, w, outer_step))
        total += poisson_bracket(spec, A, outer, z, backend)
    return abs(total)
