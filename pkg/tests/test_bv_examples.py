import numpy as np
import pytest

from bv_control import JumpControl, load_of_jump_control
from bv_examples import ALPHA, C_EX1, X_C, example2, exact_state_ex1, exact_state_of_control, load_example
from fem_core import apply_Sh, assemble_system, build_uniform_mesh
from solver_errors import InvalidArgumentError


def test_jump_abscissa():
    assert C_EX1 == pytest.approx(12.0 - 4.0 * np.sqrt(8.0))
    assert X_C == pytest.approx(0.222557550058686, abs=1e-9)


def test_control_segment_values(ex1):
    _, exact = ex1
    assert exact.control.positions == pytest.approx([X_C, 0.5, 1.0 - X_C])
    midpoints = [X_C / 2.0, (X_C + 0.5) / 2.0, (1.5 - X_C) / 2.0, 1.0 - X_C / 2.0]
    assert exact.control(np.array(midpoints)) == pytest.approx([0.5, 1.5, -0.5, 1.0])


def test_certificate_values(ex1):
    _, exact = ex1
    assert exact.phi(0.5) == pytest.approx(-ALPHA, rel=1e-12)
    assert exact.phi(X_C) == pytest.approx(ALPHA, rel=1e-12)
    assert exact.phi(1.0 - X_C) == pytest.approx(ALPHA, rel=1e-12)
    assert abs(exact.phi(1.0)) <= 1e-12
    assert np.abs(exact.phi(np.linspace(0.0, 1.0, 10_000))).max() <= ALPHA * (1.0 + 1e-12)


def test_adjoint_is_phi_derivative(ex1):
    _, exact = ex1
    x = np.linspace(0.001, 0.999, 1000)
    delta = 1e-5
    fd = (exact.phi(x + delta) - exact.phi(x - delta)) / (2.0 * delta)
    assert np.abs(fd - exact.adjoint(x)).max() < 1e-8
    fd_dz = (exact.adjoint(x + delta) - exact.adjoint(x - delta)) / (2.0 * delta)
    assert np.abs(fd_dz - exact.adjoint_derivative(x)).max() < 1e-8


def test_desired_state_adjoint_identity(ex1):
    spec, exact = ex1
    x = np.linspace(0.01, 0.99, 500)
    delta = 1e-4
    second = (exact.adjoint(x + delta) - 2.0 * exact.adjoint(x) + exact.adjoint(x - delta)) / delta**2
    assert np.abs(spec.desired_state(x) - exact.state(x) - second).max() < 1e-8
    assert spec.alpha == ALPHA


def test_exact_state_boundary_and_curvature(ex1):
    _, exact = ex1
    assert exact_state_ex1(0.0) == pytest.approx(0.0, abs=1e-15)
    assert exact_state_ex1(1.0) == pytest.approx(0.0, abs=1e-15)
    breaks = np.concatenate(([0.0], exact.breakpoints, [1.0]))
    x = (breaks[:-1] + breaks[1:]) / 2.0
    delta = 1e-3
    curvature = (exact.state(x + delta) - 2.0 * exact.state(x) + exact.state(x - delta)) / delta**2
    assert curvature == pytest.approx(-np.array([0.5, 1.5, -0.5, 1.0]), abs=1e-6)


def test_exact_state_is_c1(ex1):
    _, exact = ex1
    t = exact.breakpoints
    assert exact.state(t - 1e-12) == pytest.approx(exact.state(t + 1e-12), abs=1e-11)
    assert exact.state.derivative(t - 1e-12) == pytest.approx(exact.state.derivative(t + 1e-12), abs=1e-10)


def test_exact_state_matches_fem_at_nodes(ex1, poisson_zero):
    _, exact = ex1
    mesh = build_uniform_mesh(2**10)
    u_h = apply_Sh(assemble_system(mesh, poisson_zero), load_of_jump_control(mesh, exact.control), mesh)
    assert np.abs(u_h.values - exact.state(mesh.nodes)).max() < 1e-10


def test_closed_form_state_of_constant_control():
    u = exact_state_of_control(JumpControl.constant(1.0))
    x = np.linspace(0.0, 1.0, 11)
    assert u(x) == pytest.approx(x * (1.0 - x) / 2.0, abs=1e-15)


def test_example2_desired_state():
    spec = example2()
    assert spec.desired_state(0.0) == pytest.approx(0.0, abs=1e-16)
    assert spec.desired_state(0.5) == pytest.approx(1.0 / np.pi**2)
    assert spec.alpha == ALPHA
    assert load_example(2)[1] is None


def test_unknown_example():
    with pytest.raises(InvalidArgumentError):
        load_example(3)
