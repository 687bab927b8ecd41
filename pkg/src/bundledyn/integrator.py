"""Constraint-preserving integration on the observation bundle.

One step is: covariant prediction, projection back onto the constraint set,
radial clamp of the fiber coordinate, and a geometric error check that drives
step-size control.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _fd
from .constraints import RegularizationParams, rhs_terms
from .errors import (
    InvalidParameterError,
    ProjectionFailureError,
    ProjectionNonConvergenceError,
    StepFailureError,
)
from .geometry import (
    BundleState,
    ObservationSystemSpec,
    as_vector,
    fiber_norm,
    metric_compat_residual,
    mixed_connection,
    radial_clamp,
)
from .poisson import BACKENDS, assemble_omega

log = logging.getLogger(__name__)

Array = np.ndarray

PROJECTION_MODES = ("inequality", "equality", "off")


@dataclass(frozen=True)
class IntegratorConfig:
    """Step control and constraint handling.

    ``projection`` selects how the constraint is enforced after prediction:
    ``"inequality"`` restores ``Phi >= 0``, ``"equality"`` restores
    ``Phi = 0`` and ``"off"`` leaves it to the regularized multiplier alone.
    With ``monitor_geometry=False`` the step-map symplecticity residual is not
    computed and the geometric error reduces to the metric term.
    """

    h0: float = 0.01
    h_min: float = 1e-6
    h_max: float = 0.1
    tol_geo: float = 1e-2
    t_final: float = 1.0
    adapt: bool = True
    max_projection_iters: int = 5
    tol_constraint: float = 1e-10
    regularization: RegularizationParams = field(default_factory=RegularizationParams)
    backend: str = "exact_inverse"
    growth_factor: float = 1.5
    deterministic: bool = True
    projection: str = "inequality"
    first_class: bool = False
    monitor_geometry: bool = True
    jacobian_step: float = 1e-6

    def __post_init__(self):
        if not (0.0 < self.h_min <= self.h0 <= self.h_max):
            raise InvalidParameterError(
                f"need 0 < h_min <= h0 <= h_max (got {self.h_min}, {self.h0}, {self.h_max})"
            )
        if not self.tol_geo > 0.0:
            raise InvalidParameterError("tol_geo must be > 0")
        if self.max_projection_iters < 1:
            raise InvalidParameterError("max_projection_iters must be >= 1")
        if not self.tol_constraint > 0.0:
            raise InvalidParameterError("tol_constraint must be > 0")
        if not self.growth_factor >= 1.0:
            raise InvalidParameterError("growth_factor must be >= 1")
        if not math.isfinite(self.t_final):
            raise InvalidParameterError("t_final must be finite")
        if self.backend not in BACKENDS:
            raise InvalidParameterError(f"unknown backend {self.backend!r}")
        if self.projection not in PROJECTION_MODES:
            raise InvalidParameterError(f"unknown projection mode {self.projection!r}")
        if not self.jacobian_step > 0.0:
            raise InvalidParameterError("jacobian_step must be > 0")


@dataclass
class StepDiagnostics:
    h_used: float
    phi_value: float
    energy: float
    eps_geo: float
    projection_iters: int
    clamped: bool
    lambda_value: float
    class_flag: str
    phi_predicted: float = math.nan

    def as_dict(self) -> dict:
        out = {}
        for key, val in self.__dict__.items():
            if isinstance(val, float) and not math.isfinite(val):
                val = None
            out[key] = val
        return out


@dataclass
class Trajectory:
    states: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.states)

    def append(self, state: BundleState, diag: StepDiagnostics) -> None:
        self.states.append(state)
        self.diagnostics.append(diag)

    @property
    def times(self) -> Array:
        return np.array([s.t for s in self.states])

    def vectors(self) -> Array:
        return np.vstack([s.vector() for s in self.states])

    @property
    def final(self) -> BundleState:
        return self.states[-1]

    def max_abs_phi(self) -> float:
        vals = [abs(d.phi_value) for d in self.diagnostics if math.isfinite(d.phi_value)]
        return max(vals) if vals else math.nan

    def max_abs_phi_predicted(self) -> float:
        vals = [abs(d.phi_predicted) for d in self.diagnostics[1:] if math.isfinite(d.phi_predicted)]
        return max(vals) if vals else math.nan


# prediction


def _phi(spec: ObservationSystemSpec, z: Array) -> float:
    return math.nan if spec.constraint is None else spec.Phi(z)


def _predict_vector(spec: ObservationSystemSpec, z: Array, h: float, cfg: IntegratorConfig) -> tuple[Array, float]:
    v, lam = rhs_terms(spec, z, cfg.regularization, cfg.backend, cfg.first_class, cfg.tol_constraint)
    m, k = 2 * spec.n, spec.k
    x, xi = z[:m], z[m:m + k]
    gamma = mixed_connection(spec, x)
    if np.any(gamma):
        v = v.copy()
        v[m:m + k] += np.einsum("abi,b,i->a", gamma, xi, v[:m])
    return z + h * v, lam


def predict(spec: ObservationSystemSpec, state: BundleState, h: float, cfg: IntegratorConfig) -> BundleState:
    """Euler step along the constrained velocity with horizontal transport of ``xi``."""
    if not h > 0.0:
        raise InvalidParameterError("h must be > 0")
    z, _ = _predict_vector(spec, state.vector(), h, cfg)
    return BundleState.from_vector(state.t + h, z, spec)


# projection


def _block_metric_solve(spec: ObservationSystemSpec, z: Array, g: Array) -> Array:
    x, _, _ = spec.split(z)
    gx, gxi, gpi = spec.split(g)
    return np.concatenate([np.linalg.solve(spec.g_M(x), gx), np.linalg.solve(spec.rho(x), gxi), gpi])


def _satisfied(phi: float, cfg: IntegratorConfig, mode: str) -> bool:
    if mode == "equality":
        return abs(phi) <= cfg.tol_constraint
    return phi >= -cfg.tol_constraint


def project_constraint(spec: ObservationSystemSpec, state, cfg: IntegratorConfig,
                       mode: Optional[str] = None) -> tuple[BundleState | Array, int]:
    """Newton steps along the metric-normalized gradient of ``Phi``.

    Returns the corrected state (same type as given) and the number of
    iterations. A state that already satisfies the constraint is returned
    unchanged with zero iterations.
    """
    mode = cfg.projection if mode is None else mode
    is_state = isinstance(state, BundleState)
    z = as_vector(state).copy()
    if spec.constraint is None or mode == "off":
        return state, 0
    phi = spec.Phi(z)
    if _satisfied(phi, cfg, mode):
        return state, 0
    best, best_phi = z.copy(), abs(phi)
    for it in range(1, cfg.max_projection_iters + 1):
        g = spec.grad_Phi(z)
        u = _block_metric_solve(spec, z, g)
        gu = float(g @ u)
        if not gu > 0.0:
            raise ProjectionFailureError("degenerate constraint gradient")
        nu = u / math.sqrt(gu)
        slope = float(g @ nu)
        if slope <= 1e-14:
            raise ProjectionFailureError(f"degenerate constraint gradient (<grad Phi, nu> = {slope:.3g})")
        a = abs(phi) / slope if mode == "inequality" else -phi / slope
        z = z + a * nu
        phi = spec.Phi(z)
        if abs(phi) < best_phi:
            best, best_phi = z.copy(), abs(phi)
        if _satisfied(phi, cfg, mode):
            out = BundleState.from_vector(state.t, z, spec) if is_state else z
            return out, it
    best_out = BundleState.from_vector(state.t, best, spec) if is_state else best
    raise ProjectionNonConvergenceError(
        f"projection did not converge in {cfg.max_projection_iters} iterations (|Phi| = {best_phi:.3g})",
        best_state=best_out,
        iterations=cfg.max_projection_iters,
    )


# geometric error


def symplectic_residual(spec: ObservationSystemSpec, state, h: float, cfg: IntegratorConfig) -> float:
    """``|J^T Omega J - Omega|_F / |Omega|_F`` for the prediction map ``J``."""
    z = as_vector(state)
    J = _fd.jacobian(lambda w: _predict_vector(spec, w, h, cfg)[0], z, cfg.jacobian_step)
    omega = assemble_omega(spec, z).matrix
    return float(np.linalg.norm(J.T @ omega @ J - omega) / np.linalg.norm(omega))


def geometric_error(spec: ObservationSystemSpec, state, h: float, cfg: IntegratorConfig) -> float:
    """Larger of the metric-compatibility residual and the step-map symplecticity residual."""
    if not h > 0.0:
        raise InvalidParameterError("h must be > 0")
    z = as_vector(state)
    err = metric_compat_residual(spec, z[: 2 * spec.n])
    if cfg.monitor_geometry:
        err = max(err, symplectic_residual(spec, z, h, cfg))
    return float(err)


# stepping


def _class_flag(spec: ObservationSystemSpec, cfg: IntegratorConfig) -> str:
    if spec.constraint is None:
        return "unconstrained"
    return "first_class" if cfg.first_class else "second_class"


def step(spec: ObservationSystemSpec, state: BundleState, h: float,
         cfg: IntegratorConfig) -> tuple[BundleState, StepDiagnostics, float]:
    """Advance one accepted step, halving ``h`` while the geometric error is too large."""
    z0 = state.vector()
    while True:
        err = geometric_error(spec, z0, h, cfg)
        if err <= cfg.tol_geo or not cfg.adapt:
            break
        if h <= cfg.h_min:
            diag = StepDiagnostics(h, _phi(spec, z0), spec.H(z0), err, 0, False, math.nan,
                                   _class_flag(spec, cfg))
            raise StepFailureError(
                f"geometric error {err:.3g} above tol_geo {cfg.tol_geo:.3g} at h_min", diagnostics=diag
            )
        h = max(0.5 * h, cfg.h_min)
        log.debug("step rejected at t=%g, h -> %g", state.t, h)

    z, lam = _predict_vector(spec, z0, h, cfg)
    phi_pred = _phi(spec, z)
    z, iters = project_constraint(spec, z, cfg)
    m, k = 2 * spec.n, spec.k
    x, xi = z[:m], z[m:m + k]
    clamped = fiber_norm(spec, x, xi) > spec.delta(x)
    if clamped:
        z = z.copy()
        z[m:m + k] = radial_clamp(spec, x, xi)
    new_state = BundleState.from_vector(state.t + h, z, spec)
    diag = StepDiagnostics(
        h_used=h,
        phi_value=_phi(spec, z),
        energy=spec.H(z),
        eps_geo=err,
        projection_iters=iters,
        clamped=bool(clamped),
        lambda_value=lam,
        class_flag=_class_flag(spec, cfg),
        phi_predicted=phi_pred,
    )
    h_next = h
    if cfg.adapt and err < 0.1 * cfg.tol_geo:
        h_next = min(cfg.growth_factor * h, cfg.h_max)
    return new_state, diag, h_next


def integrate(spec: ObservationSystemSpec, state0: BundleState, cfg: IntegratorConfig) -> Trajectory:
    """Step from ``state0`` to ``cfg.t_final``, landing on it exactly.

    The first entry of the trajectory is ``state0`` with ``h_used = 0``.
    """
    if not cfg.t_final > state0.t:
        raise InvalidParameterError("t_final must exceed the initial time")
    if not state0.is_finite():
        raise InvalidParameterError("initial state has non-finite entries")
    z0 = state0.vector()
    _, lam0 = rhs_terms(spec, z0, cfg.regularization, cfg.backend, cfg.first_class, cfg.tol_constraint)
    phi0 = _phi(spec, z0)
    traj = Trajectory(manifest={"system": spec.name, "config": cfg})
    traj.append(state0, StepDiagnostics(0.0, phi0, spec.H(z0), 0.0, 0, False, lam0,
                                        _class_flag(spec, cfg), phi0))
    state, h = state0, cfg.h0
    while state.t < cfg.t_final:
        remaining = cfg.t_final - state.t
        last = h >= remaining - 1e-9 * h
        h_try = remaining if last else h
        try:
            new_state, diag, h_next = step(spec, state, h_try, cfg)
        except StepFailureError as exc:
            exc.trajectory = traj
            raise
        if last and diag.h_used == h_try:
            new_state = replace(new_state, t=cfg.t_final)
        traj.append(new_state, diag)
        state = new_state
        h = h if last and diag.h_used == h_try else h_next
    return traj


# convergence


@dataclass
class OrderReport:
    hs: list
    phi_errors: list
    phi_post_errors: list
    global_errors: list
    p_phi: list
    p_glob: list
    fitted_p_phi: Optional[float]
    fitted_p_glob: Optional[float]
    phi_exact: bool
    glob_exact: bool
    reference_h: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _orders(hs, errs) -> tuple[list, Optional[float], bool]:
    errs = [e for e in errs if e is not None]
    if len(errs) != len(hs):
        return [], None, False
    if all(e <= 1e-14 for e in errs):
        return [], None, True
    pairs = []
    for a, b in zip(errs, errs[1:]):
        pairs.append(math.log2(a / b) if a > 0 and b > 0 else None)
    if any(e <= 0 for e in errs):
        return pairs, None, False
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    return pairs, float(slope), False


def _energy_norm(spec: ObservationSystemSpec, d: Array, z_ref: Array) -> float:
    x, _, _ = spec.split(z_ref)
    dx, dxi, dpi = spec.split(d)
    return math.sqrt(float(dx @ spec.g_M(x) @ dx + dxi @ spec.rho(x) @ dxi + dpi @ dpi))


def convergence_study(spec: ObservationSystemSpec, state0: BundleState, cfg: IntegratorConfig,
                      levels: int, reference: bool = True) -> OrderReport:
    """Fixed-step runs at ``h0, h0/2, ...`` with observed orders.

    The constraint error at each level is the largest ``|Phi|`` of a predicted
    state (before projection); the global error is the energy-norm distance of
    the terminal state to a run at ``h0 / 2**(levels + 2)``.
    """
    if levels < 3:
        raise InvalidParameterError("convergence_study needs levels >= 3")
    base = replace(cfg, adapt=False, monitor_geometry=False)

    def run(h):
        c = replace(base, h0=h, h_min=min(base.h_min, h), h_max=max(base.h_max, h))
        return integrate(spec, state0, c)

    hs = [cfg.h0 / 2**i for i in range(levels)]
    trajs = [run(h) for h in hs]
    constrained = spec.constraint is not None
    phi_err = [t.max_abs_phi_predicted() if constrained else None for t in trajs]
    phi_post = [t.max_abs_phi() if constrained else None for t in trajs]
    h_ref = cfg.h0 / 2 ** (levels + 2)
    glob = [None] * levels
    if reference:
        z_ref = run(h_ref).final.vector()
        glob = [_energy_norm(spec, t.final.vector() - z_ref, z_ref) for t in trajs]
    p_phi, fit_phi, phi_exact = _orders(hs, phi_err) if constrained else ([], None, False)
    p_glob, fit_glob, glob_exact = _orders(hs, glob) if reference else ([], None, False)
    return OrderReport(
        hs=hs,
        phi_errors=phi_err,
        phi_post_errors=phi_post,
        global_errors=glob,
        p_phi=p_phi,
        p_glob=p_glob,
        fitted_p_phi=fit_phi,
        fitted_p_glob=fit_glob,
        phi_exact=phi_exact,
        glob_exact=glob_exact,
        reference_h=h_ref,
    )
