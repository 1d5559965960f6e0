from dataclasses import replace

import numpy as np
import pytest

from fem_core import assemble_system, build_uniform_mesh
from subproblem_ssn import (assemble_gram, fixed_point_residual, largest_eigenvalue, shrink,
                            solve_subproblem_oracle, solve_subproblem_ssn, subproblem_objective)
from solver_errors import InvalidArgumentError


@pytest.fixture
def gram(mesh32, tracking_system, tracking_spec):
    return assemble_gram(mesh32, tracking_system, [0.3, 0.7], tracking_spec)


def test_shrink():
    assert shrink(np.array([3.0, -0.5, -2.0]), 1.0) == pytest.approx([2.0, 0.0, -1.0])


@pytest.mark.parametrize("points", [[0.0, 0.5], [0.5, 1.2], [0.7, 0.3], [0.4, 0.4]])
def test_invalid_candidate_points(mesh32, tracking_system, tracking_spec, points):
    with pytest.raises(InvalidArgumentError):
        assemble_gram(mesh32, tracking_system, points, tracking_spec)


def test_gram_is_symmetric_positive(gram):
    assert gram.G.shape == (3, 3)
    assert np.array_equal(gram.G, gram.G.T)
    assert np.linalg.eigvalsh(gram.G).min() > 0.0


def test_ssn_recovers_tracked_control(gram, tracking_spec, target_control):
    sol = solve_subproblem_ssn(gram, tracking_spec.alpha)
    assert sol.converged
    assert not sol.fallback_used
    assert sol.fixed_point_residual <= 1e-12
    # the tracked control is attainable, so only the penalty biases the coefficients
    assert sol.coeffs[0] > 0.0 > sol.coeffs[1]
    assert sol.offset == pytest.approx(target_control.offset, abs=0.5)


def test_ssn_matches_oracle(gram):
    alpha = 1e-4
    newton = solve_subproblem_ssn(gram, alpha)
    oracle = solve_subproblem_oracle(gram, alpha, tol=1e-12, momentum=True)
    assert oracle.converged
    assert subproblem_objective(gram, newton.w, alpha) == pytest.approx(
        subproblem_objective(gram, oracle.w, alpha), rel=1e-10)
    assert np.array_equal(np.asarray(newton.coeffs) != 0.0, np.asarray(oracle.coeffs) != 0.0)


def test_large_alpha_zeroes_all_jumps(gram):
    sol = solve_subproblem_ssn(gram, alpha=1e3)
    assert sol.coeffs == [0.0, 0.0]
    assert sol.offset == pytest.approx(gram.b[0] / gram.G[0, 0])


def test_offset_only_problem(mesh32, tracking_system, tracking_spec):
    gram = assemble_gram(mesh32, tracking_system, [], tracking_spec)
    sol = solve_subproblem_ssn(gram, tracking_spec.alpha)
    assert sol.coeffs == []
    assert sol.offset == pytest.approx(gram.b[0] / gram.G[0, 0])


def test_objective_at_zero_is_constant_term(gram):
    assert subproblem_objective(gram, np.zeros(3), 1.0) == gram.const_term
    assert fixed_point_residual(gram, np.zeros(3), 1.0) > 0.0


def test_state_of_coefficients(gram):
    w = np.array([1.0, 0.0, 0.0])
    assert np.array_equal(gram.state(w).values, gram.images[0])


def test_largest_eigenvalue(gram):
    assert largest_eigenvalue(gram.G) == pytest.approx(np.linalg.eigvalsh(gram.G).max(), rel=1e-6)


def test_ssn_rejects_nonpositive_tolerance(gram):
    with pytest.raises(InvalidArgumentError):
        solve_subproblem_ssn(gram, 1e-4, eps_in=0.0)


def kkt_gradient(gram, sol):
    return gram.b - gram.G @ sol.w


def test_ssn_kkt_signs(gram):
    alpha = 1e-4
    sol = solve_subproblem_ssn(gram, alpha)
    g = kkt_gradient(gram, sol)
    slack = 1e-8 * alpha + sol.fixed_point_residual / gram.gamma
    assert g[0] == pytest.approx(0.0, abs=slack)
    for c, gi in zip(sol.coeffs, g[1:]):
        if c != 0.0:
            assert np.sign(c) * gi == pytest.approx(alpha, abs=slack)
        else:
            assert abs(gi) <= alpha + slack


def test_ssn_scales_with_data_and_weight(gram):
    alpha, lam = 1e-4, 3.0
    base = solve_subproblem_ssn(gram, alpha)
    scaled = solve_subproblem_ssn(replace(gram, b=lam * gram.b), lam * alpha)
    assert scaled.converged
    assert scaled.w == pytest.approx(lam * base.w, rel=1e-9, abs=1e-12 * lam * np.abs(base.w).max())
    assert np.array_equal(np.asarray(scaled.coeffs) != 0.0, np.asarray(base.coeffs) != 0.0)


def test_ssn_is_deterministic(gram):
    first = solve_subproblem_ssn(gram, 1e-4)
    second = solve_subproblem_ssn(gram, 1e-4)
    assert np.array_equal(first.w, second.w)
    assert first.iterations == second.iterations


def test_fallback_reaches_newton_solution(gram):
    alpha = 1e-4
    newton = solve_subproblem_ssn(gram, alpha)
    fallback = solve_subproblem_ssn(gram, alpha, max_iter=0)
    assert fallback.fallback_used
    assert fallback.converged
    assert fallback.fixed_point_residual <= 1e-12
    assert subproblem_objective(gram, fallback.w, alpha) == pytest.approx(
        subproblem_objective(gram, newton.w, alpha), rel=1e-10)
    assert np.array_equal(np.asarray(fallback.coeffs) != 0.0, np.asarray(newton.coeffs) != 0.0)


@pytest.mark.parametrize("n", [15, 31])
def test_ssn_on_adjacent_node_candidates(ex1, n):
    spec, _ = ex1
    mesh = build_uniform_mesh(n)
    gram = assemble_gram(mesh, assemble_system(mesh, spec), mesh.nodes[1:-1], spec)

    sol = solve_subproblem_ssn(gram, spec.alpha)
    assert sol.converged
    assert sol.fixed_point_residual <= 1e-12
    assert np.abs(sol.w).max() < 1e2
    oracle = solve_subproblem_oracle(gram, spec.alpha, tol=1e-10, max_iter=200_000, momentum=True)
    j_newton = subproblem_objective(gram, sol.w, spec.alpha)
    assert j_newton <= subproblem_objective(gram, oracle.w, spec.alpha) + 1e-12 * abs(j_newton)
