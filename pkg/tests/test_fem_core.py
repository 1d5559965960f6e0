"""Tests for the P1 finite element core."""

import numpy as np
import pytest

from fem_core import (Mesh, NodalFunction, ProblemSpec, TridiagonalSystem, apply_Sh, assemble_system,
                      build_uniform_mesh, gauss_legendre, hat_areas, l2_inner, mass_times, quadrature_load)
from solver_errors import CoefficientViolationError, InvalidArgumentError, SingularSystemError


def test_uniform_mesh(mesh4):
    assert np.array_equal(mesh4.nodes, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert mesh4.h == 0.25
    assert mesh4.n_interior == 3


@pytest.mark.parametrize("n", [0, 1])
def test_uniform_mesh_too_small(n):
    with pytest.raises(InvalidArgumentError):
        build_uniform_mesh(n)


@pytest.mark.parametrize("nodes", [[0.0, 0.5, 0.5, 1.0], [0.0, 0.6, 0.4, 1.0], [0.1, 0.5, 1.0]])
def test_mesh_validation(nodes):
    with pytest.raises(InvalidArgumentError):
        Mesh(np.array(nodes))


def test_locate_is_right_continuous(mesh4):
    assert list(mesh4.locate([0.0, 0.25, 0.3, 1.0])) == [0, 1, 1, 3]


def test_gauss_legendre_exactness():
    s, w = gauss_legendre(5)
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    assert (w * s**9).sum() == pytest.approx(0.1, abs=1e-15)


def test_gauss_legendre_invalid_order():
    with pytest.raises(InvalidArgumentError):
        gauss_legendre(0)


def test_stiffness_constant_coefficients(mesh4, poisson_zero):
    sys = assemble_system(mesh4, poisson_zero)
    assert sys.main == pytest.approx([8.0, 8.0, 8.0])
    assert sys.off == pytest.approx([-4.0, -4.0])


def test_reaction_mass_terms(mesh4):
    spec = ProblemSpec(desired_state=lambda x: 0.0 * x, alpha=1.0, reaction=1.0)
    sys = assemble_system(mesh4, spec)
    assert sys.main == pytest.approx(8.0 + 2.0 * 0.25 / 3.0)
    assert sys.off == pytest.approx(-4.0 + 0.25 / 6.0)


def test_callable_coefficients_match_constants(mesh32):
    constant = ProblemSpec(desired_state=lambda x: 0.0 * x, alpha=1.0, diffusion=2.0, reaction=3.0)
    callable_ = ProblemSpec(desired_state=lambda x: 0.0 * x, alpha=1.0,
                            diffusion=lambda x: np.full_like(x, 2.0), reaction=lambda x: np.full_like(x, 3.0))
    a = assemble_system(mesh32, constant)
    b = assemble_system(mesh32, callable_)
    assert np.allclose(a.main, b.main, rtol=1e-12, atol=0.0)
    assert np.allclose(a.off, b.off, rtol=1e-12, atol=0.0)


def test_coefficient_below_bound(mesh4):
    with pytest.raises(CoefficientViolationError):
        ProblemSpec(desired_state=lambda x: 0.0 * x, alpha=1.0, diffusion=0.5)
    spec = ProblemSpec(desired_state=lambda x: 0.0 * x, alpha=1.0, diffusion=lambda x: 1.0 - x)
    with pytest.raises(CoefficientViolationError):
        assemble_system(mesh4, spec)


def test_nonpositive_alpha():
    with pytest.raises(InvalidArgumentError):
        ProblemSpec(desired_state=lambda x: 0.0 * x, alpha=0.0)


def test_nodal_exactness_constant_source(mesh32, poisson_zero):
    sys = assemble_system(mesh32, poisson_zero)
    u = apply_Sh(sys, hat_areas(mesh32), mesh32)
    x = mesh32.nodes
    assert np.abs(u.values - x * (1.0 - x) / 2.0).max() < 1e-14


def test_tridiagonal_system_checks():
    with pytest.raises(SingularSystemError):
        TridiagonalSystem(main=np.array([1.0, 0.0]), off=np.array([0.5]))
    sys = TridiagonalSystem(main=np.array([2.0, 2.0, 2.0]), off=np.array([-1.0, -1.0]))
    with pytest.raises(InvalidArgumentError):
        sys.solve(np.ones(4))
    v = np.array([1.0, 2.0, 3.0])
    assert np.allclose(sys.matvec(sys.solve(v)), v, atol=1e-14)


def test_nodal_function_boundary_values(mesh4):
    with pytest.raises(InvalidArgumentError):
        NodalFunction(mesh4, np.ones(5))
    u = NodalFunction.from_interior(mesh4, [1.0, 2.0, 1.0])
    assert u(0.375) == pytest.approx(1.5)
    assert u.slopes == pytest.approx([4.0, 4.0, -4.0, -4.0])


def test_quadrature_load_of_one_is_hat_area(mesh32):
    assert quadrature_load(mesh32, lambda x: np.ones_like(x)) == pytest.approx(hat_areas(mesh32), abs=1e-15)


def test_mass_times_and_l2_inner():
    mesh = build_uniform_mesh(2)
    hat = NodalFunction.from_interior(mesh, [1.0])
    assert mass_times(mesh, np.ones(3)) == pytest.approx([0.5])
    assert l2_inner(hat, hat) == pytest.approx(1.0 / 3.0)


def test_solution_operator_is_symmetric(mesh32, poisson_zero):
    rng = np.random.default_rng(3)
    sys = assemble_system(mesh32, poisson_zero)
    f = NodalFunction.from_interior(mesh32, rng.normal(size=mesh32.n_interior))
    g = NodalFunction.from_interior(mesh32, rng.normal(size=mesh32.n_interior))
    Sf = apply_Sh(sys, mass_times(mesh32, f.values), mesh32)
    Sg = apply_Sh(sys, mass_times(mesh32, g.values), mesh32)
    assert l2_inner(Sf, g) == pytest.approx(l2_inner(f, Sg), rel=1e-11)


def test_l2_inner_needs_same_mesh(mesh4, mesh32):
    with pytest.raises(InvalidArgumentError):
        l2_inner(NodalFunction.zero(mesh4), NodalFunction.zero(mesh32))
