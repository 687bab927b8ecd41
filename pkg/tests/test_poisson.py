from __future__ import annotations

import math

import numpy as np
import pytest

from bundledyn.errors import DegenerateStructureError, InvalidParameterError, SingularMetricError
from bundledyn.geometry import BundleState
from bundledyn.poisson import (
    MixingModel,
    Observable,
    assemble_omega,
    boundary_scale,
    bracket_matrix,
    coordinate,
    curvature_structure,
    grad_E,
    grad_norm_sq,
    hamiltonian_vector_field,
    jacobi_residual,
    mixing_KL,
    poisson_bracket,
)
from conftest import conformal_spec, flat_spec, random_observable

BACKENDS = ("paper_table", "exact_inverse")


def _const_mixing(C=None, D=None, E=None, F=None):
    wrap = lambda A: None if A is None else (lambda x: A)
    return MixingModel("curvature", C=wrap(C), D=wrap(D), E=wrap(E), F=wrap(F))


def test_mixing_zero_mode():
    spec = flat_spec(n=1, k=2)
    K, L = mixing_KL(spec, np.arange(6.0))
    assert np.all(K == 0) and np.all(L == 0)
    assert K.shape == (2, 2)


def test_mixing_linear_form():
    C = np.zeros((2, 1, 1))
    C[0, 0, 0] = 2.0
    spec = flat_spec(n=1, k=1, mixing=_const_mixing(C=C))
    K, L = mixing_KL(spec, BundleState(0.0, [0.0, 0.0], [0.5], [0.3]))
    assert K[0, 0] == pytest.approx(1.0)
    assert np.all(L == 0)
    K, L = mixing_KL(spec, np.zeros(4))
    assert np.all(K == 0) and np.all(L == 0)


def test_curvature_mode_default_is_symmetric_and_vanishes_for_conformal():
    spec = conformal_spec(n=2, k=2)
    spec.mixing = MixingModel("curvature")
    x = np.array([0.2, 0.1, -0.4, 0.3])
    assert np.max(np.abs(curvature_structure(spec, x))) <= 1e-12
    rho = lambda x: np.array([[2.0 + np.sin(x[0]), 0.3 * x[1]], [0.3 * x[1], 2.0 + x[0] * x[1]]])
    twisted = flat_spec(n=2, k=2, rho=rho, mixing=MixingModel("curvature"))
    C = curvature_structure(twisted, np.array([1.0, 1.0, 0.0, 0.0]))
    assert np.max(np.abs(C)) > 1e-4
    assert twisted.mixing.symmetry_defect(twisted, np.array([1.0, 1.0, 0.0, 0.0])) <= 1e-10


def test_unknown_mixing_mode():
    with pytest.raises(InvalidParameterError):
        MixingModel("spline")


def test_assemble_omega_standard_blocks():
    spec = flat_spec(n=1, k=1)
    om = assemble_omega(spec, np.zeros(4))
    expected = np.array([[0, 1, 0, 0], [-1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]], float)
    np.testing.assert_array_equal(om.matrix, expected)
    assert om.scale == 1.0


def test_assemble_omega_mixing_entry():
    C = np.zeros((2, 1, 1))
    C[0, 0, 0] = 0.1
    spec = flat_spec(n=1, k=1, mixing=_const_mixing(C=C))
    m = assemble_omega(spec, np.array([0.0, 0.0, 1.0, 0.0])).matrix
    assert m[0, 2] == pytest.approx(0.1)
    assert m[2, 0] == pytest.approx(-0.1)
    np.testing.assert_array_equal(m, -m.T)


def test_assemble_omega_boundary_scaling():
    spec = flat_spec(n=1, k=1, boundary_delta_max=0.5)
    spec.boundary_distance = lambda x: 0.0
    om = assemble_omega(spec, np.zeros(4))
    assert om.scale == pytest.approx(0.5)
    np.testing.assert_allclose(om.matrix, 0.5 * assemble_omega(flat_spec(), np.zeros(4)).matrix)
    # exactly standard once past eps_safe
    spec.boundary_distance = lambda x: spec.eps_safe
    assert assemble_omega(spec, np.zeros(4)).scale == 1.0


def test_boundary_scale():
    assert boundary_scale(0.0, 0.1, 0.5) == pytest.approx(0.5)
    assert boundary_scale(10.0, 0.1, 0.5) == pytest.approx(1.0)
    assert boundary_scale(0.3, 0.1, 0.0) == 1.0
    vals = [boundary_scale(d, 0.1, 0.4) for d in np.linspace(0, 1, 50)]
    assert all(b > a for a, b in zip(vals[:-1], vals[1:]))
    for bad in [(-1.0, 0.1, 0.5), (0.0, 0.0, 0.5), (0.0, 0.1, 1.0)]:
        with pytest.raises(InvalidParameterError):
            boundary_scale(*bad)


@pytest.mark.parametrize("backend", BACKENDS)
def test_bracket_matrix_canonical(backend):
    spec = flat_spec(n=1, k=1)
    B = bracket_matrix(spec, np.zeros(4), backend)
    expected = np.array([[0, 1, 0, 0], [-1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]], float)
    np.testing.assert_allclose(B, expected, atol=1e-15)


def test_bracket_paper_table_places_mixing_directly():
    C = np.zeros((2, 1, 1))
    C[0, 0, 0] = 0.1
    spec = flat_spec(n=1, k=1, mixing=_const_mixing(C=C))
    z = np.array([0.0, 0.0, 1.0, 0.0])
    B = bracket_matrix(spec, z, "paper_table")
    assert B[0, 2] == pytest.approx(0.1)
    # the exact inverse places the same coupling in the (p, pi) slot instead
    Bx = bracket_matrix(spec, z, "exact_inverse")
    assert abs(Bx[0, 2]) <= 1e-15
    assert Bx[1, 3] == pytest.approx(-0.1)


@pytest.mark.parametrize("backend", BACKENDS)
def test_bracket_antisymmetric(backend, rng):
    C = rng.normal(size=(4, 2, 2))
    C = 0.05 * (C + C.transpose(0, 2, 1))
    spec = flat_spec(n=2, k=2, mixing=_const_mixing(C=C))
    B = bracket_matrix(spec, rng.normal(size=8), backend)
    assert np.max(np.abs(B + B.T)) <= 1e-12


def test_bracket_unknown_backend():
    with pytest.raises(InvalidParameterError):
        bracket_matrix(flat_spec(), np.zeros(4), "magic")


def test_exact_inverse_degenerate():
    spec = flat_spec(n=1, k=1, base_symplectic=lambda x: np.zeros((2, 2)))
    with pytest.raises(DegenerateStructureError):
        bracket_matrix(spec, np.zeros(4), "exact_inverse")


@pytest.mark.parametrize("backend", BACKENDS)
def test_poisson_bracket_examples(backend):
    spec = flat_spec(n=1, k=1)
    z = np.array([0.3, -0.2, 0.1, 0.4])
    assert poisson_bracket(spec, coordinate(spec, 2), coordinate(spec, 3), z, backend) == pytest.approx(1.0)
    assert poisson_bracket(spec, coordinate(spec, 0), coordinate(spec, 1), z, backend) == pytest.approx(1.0)
    H = Observable(lambda w: math.sin(w[0]) * w[3] + w[1] ** 3)
    assert abs(poisson_bracket(spec, H, H, z, backend)) <= 1e-12


@pytest.mark.parametrize("backend", BACKENDS)
def test_bracket_antisymmetry_and_leibniz(backend, rng):
    spec = flat_spec(n=1, k=1)
    for _ in range(10):
        F, G, H = (random_observable(rng, 4) for _ in range(3))
        z = rng.normal(size=4)
        fg = poisson_bracket(spec, F, G, z, backend)
        gf = poisson_bracket(spec, G, F, z, backend)
        assert abs(fg + gf) <= 1e-12 * max(1.0, abs(fg))
        prod = Observable(lambda w: F(w) * G(w))
        lhs = poisson_bracket(spec, prod, H, z, backend)
        rhs = F(z) * poisson_bracket(spec, G, H, z, backend) + G(z) * poisson_bracket(spec, F, H, z, backend)
        assert lhs == pytest.approx(rhs, abs=1e-8 * max(1.0, abs(rhs)))


def test_jacobi_non_darboux_base(rng):
    A = rng.normal(size=(4, 4))
    om = A - A.T + 3.0 * np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])
    spec = flat_spec(n=2, k=1, base_symplectic=lambda x: om)
    for _ in range(5):
        F, G, H = (random_observable(rng, 6) for _ in range(3))
        assert jacobi_residual(spec, F, G, H, rng.normal(size=6)) <= 1e-8


def test_grad_E_examples():
    spec = flat_spec(n=1, k=1)
    z = np.zeros(4)
    assert grad_norm_sq(spec, coordinate(spec, 2), z) == pytest.approx(1.0)
    F = Observable(lambda w: w[0] + w[3])
    assert grad_norm_sq(spec, F, z) == pytest.approx(2.0)
    spec2 = flat_spec(n=1, k=1, rho=lambda x: 2.0 * np.eye(1))
    assert grad_norm_sq(spec2, coordinate(spec2, 2), z) == pytest.approx(0.5)
    gx, gxi, gpi = grad_E(spec2, coordinate(spec2, 2), z)
    np.testing.assert_allclose(gxi, [0.5])


def test_grad_E_singular_metric():
    spec = flat_spec(n=1, k=1, base_metric=lambda x: np.zeros((2, 2)))
    with pytest.raises(SingularMetricError):
        grad_E(spec, coordinate(spec, 0), np.zeros(4))


@pytest.mark.parametrize("backend", BACKENDS)
def test_hamiltonian_vector_field_examples(backend):
    spec = flat_spec(n=1, k=1)
    z = np.array([0.7, -0.3, 0.2, 0.5])
    v = hamiltonian_vector_field(spec, z, backend)
    # H = (q^2 + p^2 + pi^2)/2
    np.testing.assert_allclose(v, [-0.3, -0.7, 0.5, 0.0], atol=1e-14)
    spec = flat_spec(n=1, k=1, H=lambda x, xi, pi: 0.5 * pi[0] ** 2)
    v = hamiltonian_vector_field(spec, z, backend)
    np.testing.assert_allclose(v, [0.0, 0.0, 0.5, 0.0], atol=1e-9)
    spec = flat_spec(n=1, k=1, H=lambda x, xi, pi: 3.0)
    assert np.max(np.abs(hamiltonian_vector_field(spec, z, backend))) <= 1e-12
