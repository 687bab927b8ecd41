"""Dirac classification and regularized treatment of observation constraints."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InsufficientSamplesError, InvalidInputError, InvalidParameterError
from .geometry import ObservationSystemSpec, as_vector, metric_compat_residual
from .poisson import (
    assemble_omega,
    bracket_matrix,
    constraint_observable,
    grad_E,
    grad_norm_sq,
    hamiltonian_observable,
    poisson_bracket,
)

log = logging.getLogger(__name__)

Array = np.ndarray

FIRST_CLASS = "first_class"
SECOND_CLASS = "second_class"
INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class RegularizationParams:
    alpha_dissipation: float = 1.0
    eps_reg: float = 1e-6
    mu_floor: float = 1.0
    T_char: float = 1.0
    auto_validate: bool = False

    def __post_init__(self):
        if not (self.alpha_dissipation >= 0.0 and math.isfinite(self.alpha_dissipation)):
            raise InvalidParameterError("alpha_dissipation must be finite and >= 0")
        if not self.eps_reg > 0.0:
            raise InvalidParameterError("eps_reg must be > 0")
        if not self.mu_floor >= 0.0:
            raise InvalidParameterError("mu_floor must be >= 0")
        if not self.T_char > 0.0:
            raise InvalidParameterError("T_char must be > 0")

    def validate_against(self, bracket_norm: float) -> None:
        """Raise if ``alpha_dissipation`` exceeds ``alpha_max`` (only when ``auto_validate``)."""
        if not self.auto_validate:
            return
        limit = alpha_max(self.mu_floor, bracket_norm, self.T_char)
        if self.alpha_dissipation > limit:
            raise InvalidParameterError(
                f"alpha_dissipation={self.alpha_dissipation} exceeds alpha_max={limit:.6g}"
            )


@dataclass(frozen=True)
class DiracReport:
    classification: str
    max_abs_bracket: float
    samples_used: int
    tolerance: float

    def as_dict(self) -> dict:
        return {
            "classification": self.classification,
            "max_abs_bracket": self.max_abs_bracket,
            "samples_used": self.samples_used,
            "tolerance": self.tolerance,
        }


def classify_dirac(
    spec: ObservationSystemSpec,
    surface_samples: Sequence,
    tol: float | None = None,
    min_samples: int = 10,
    backend: str = "exact_inverse",
) -> DiracReport:
    """Classify the constraint by the size of ``{H, Phi}`` on the constraint surface.

    Without an explicit ``tol`` the threshold is
    ``1e-8 * (1 + max|H| + max |grad H| |grad Phi|)`` over the samples.
    """
    if spec.constraint is None:
        raise InvalidInputError("system has no constraint to classify")
    zs = [as_vector(s) for s in surface_samples]
    if not zs:
        raise InsufficientSamplesError("no surface samples")
    H = hamiltonian_observable(spec)
    Phi = constraint_observable(spec)
    brackets = []
    scale = 0.0
    for z in zs:
        phi = spec.Phi(z)
        if abs(phi) > 1e-6:
            raise InvalidInputError(f"sample off the constraint surface (|Phi| = {abs(phi):.3g})")
        brackets.append(poisson_bracket(spec, H, Phi, z, backend))
        gh, gp = spec.grad_H(z), spec.grad_Phi(z)
        scale = max(scale, abs(spec.H(z)) + float(np.linalg.norm(gh) * np.linalg.norm(gp)))
    if tol is None:
        tol = 1e-8 * (1.0 + scale)
    worst = float(np.max(np.abs(brackets)))
    if len(zs) < min_samples:
        label = INDETERMINATE
    else:
        label = FIRST_CLASS if worst <= tol else SECOND_CLASS
    return DiracReport(label, worst, len(zs), float(tol))


def regularized_multiplier(bracket: float, phi: float, grad_sq: float, alpha: float, eps: float) -> float:
    """``-(bracket + alpha * phi) / (grad_sq + eps)``."""
    return -(bracket + alpha * phi) / (grad_sq + eps)


def constraint_drift(spec: ObservationSystemSpec, state, backend: str = "exact_inverse", B=None) -> float:
    """Rate of change of ``Phi`` along the Hamiltonian flow, ``{Phi, H}``."""
    z = as_vector(state)
    if B is None:
        B = bracket_matrix(spec, z, backend)
    return float(spec.grad_Phi(z) @ B @ spec.grad_H(z))


def regularized_lambda(spec: ObservationSystemSpec, state, params: RegularizationParams,
                       backend: str = "exact_inverse", B=None) -> float:
    """Regularized multiplier at ``state``.

    The bracket term is the drift ``dPhi/dt`` along ``X_H``; with the
    correction applied along the metric gradient of ``Phi`` this gives
    ``dPhi/dt = -alpha * Phi * g / (g + eps)`` where ``g = |grad_E Phi|^2``.
    """
    if spec.constraint is None:
        return 0.0
    z = as_vector(state)
    g = grad_norm_sq(spec, constraint_observable(spec), z)
    return regularized_multiplier(
        constraint_drift(spec, z, backend, B), spec.Phi(z), g, params.alpha_dissipation, params.eps_reg
    )


def alpha_max(mu: float, bracket_norm: float, T_char: float) -> float:
    if not (mu > 0 and bracket_norm > 0 and T_char > 0):
        raise InvalidParameterError("alpha_max needs mu, bracket_norm, T_char > 0")
    return min(mu * mu / bracket_norm, 1.0 / T_char)


def decay_bound(phi0_abs: float, params: RegularizationParams, t: float) -> float:
    """``|Phi(0)| exp(-alpha t / (mu^2 + eps))``."""
    if t < 0:
        raise InvalidParameterError("t must be >= 0")
    rate = params.alpha_dissipation / (params.mu_floor ** 2 + params.eps_reg)
    return abs(phi0_abs) * math.exp(-rate * t)


def estimate_mu(spec: ObservationSystemSpec, surface_samples: Iterable) -> float:
    """Smallest ``|grad_E Phi|`` over the samples."""
    Phi = constraint_observable(spec)
    values = [math.sqrt(grad_norm_sq(spec, Phi, s)) for s in surface_samples]
    if not values:
        raise InsufficientSamplesError("no samples for mu estimate")
    return min(values)


def rhs_terms(
    spec: ObservationSystemSpec,
    state,
    params: RegularizationParams,
    backend: str = "exact_inverse",
    first_class: bool = False,
    phi_tol: float = 1e-10,
) -> tuple[Array, float]:
    """Velocity ``X_H + lambda * grad_E Phi`` together with the multiplier used."""
    z = as_vector(state)
    B = bracket_matrix(spec, z, backend)
    v = B @ spec.grad_H(z)
    if spec.constraint is None:
        return v, 0.0
    if first_class and abs(spec.Phi(z)) <= phi_tol:
        return v, 0.0
    lam = regularized_lambda(spec, z, params, backend, B)
    if lam != 0.0:
        v = v + lam * np.concatenate(grad_E(spec, constraint_observable(spec), z))
    return v, lam


def constrained_rhs(
    spec: ObservationSystemSpec,
    state,
    params: RegularizationParams,
    backend: str = "exact_inverse",
    first_class: bool = False,
    phi_tol: float = 1e-10,
) -> Array:
    """``X_H + lambda * grad_E Phi`` with the regularized multiplier.

    ``first_class=True`` forces ``lambda = 0`` while ``|Phi| <= phi_tol``.
    """
    return rhs_terms(spec, state, params, backend, first_class, phi_tol)[0]


def geometric_loss(spec: ObservationSystemSpec, state, weights=(1.0, 1.0, 1.0), omega_ref=None) -> float:
    """``Phi^2 + alpha_w * r_compat^2 + beta_w * |omega_E - omega_ref|_F^2``.

    ``weights = (lam_geo, alpha_w, beta_w)``; ``lam_geo`` is not applied here,
    see ``total_loss``.
    """
    _, alpha_w, beta_w = weights
    z = as_vector(state)
    omega = assemble_omega(spec, z).matrix
    if omega_ref is None:
        omega_ref = omega
    omega_ref = np.asarray(omega_ref, dtype=float)
    if omega_ref.shape != omega.shape:
        raise InvalidInputError(f"omega_ref shape {omega_ref.shape} != {omega.shape}")
    phi = 0.0 if spec.constraint is None else spec.Phi(z)
    compat = metric_compat_residual(spec, z[: 2 * spec.n])
    return float(phi**2 + alpha_w * compat**2 + beta_w * np.sum((omega - omega_ref) ** 2))


def total_loss(task_loss: float, geo_loss: float, lam_geo: float) -> float:
    return task_loss + lam_geo * geo_loss
