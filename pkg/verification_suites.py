"""
Randomized property checks behind `bvsolve.py verify`.

Every suite draws from its own generator seeded by (seed, suite name), so a
suite gives the same table whether it runs alone or as part of `all`.
"""
import logging
import zlib
from typing import Callable, Dict, List

import numpy as np
from pydantic import BaseModel

from bv_control import JumpControl, PiecewiseConstant, control_distance, control_inner, load_of_jump_control, project_Pi_h
from bv_examples import ALPHA, X_C, example1, exact_state_of_control
from fem_core import Mesh, NodalFunction, ProblemSpec, apply_Sh, assemble_system, l2_inner, mass_times
from solver_errors import InvalidArgumentError
from subproblem_ssn import assemble_gram, solve_subproblem_oracle, solve_subproblem_ssn, subproblem_objective

logger = logging.getLogger(__name__)


class CheckResult(BaseModel):
    suite: str
    check: str
    passed: bool
    worst: float
    bound: float
    samples: int


def random_mesh(rng: np.random.Generator, n_min: int = 4, n_max: int = 64) -> Mesh:
    """Non-uniform mesh whose element widths differ by at most a factor of three"""
    n = int(rng.integers(n_min, n_max + 1))
    widths = rng.uniform(0.5, 1.5, n)
    nodes = np.concatenate(([0.0], np.cumsum(widths) / widths.sum()))
    nodes[-1] = 1.0
    return Mesh(nodes)


def random_control(rng: np.random.Generator, max_jumps: int = 6, min_gap: float = 0.0) -> JumpControl:
    m = int(rng.integers(0, max_jumps + 1))
    positions = np.sort(rng.uniform(0.02, 0.98, m))
    if min_gap > 0.0 and m > 1:
        positions = positions[np.concatenate(([True], np.diff(positions) >= min_gap))]
    return JumpControl(float(rng.normal()), positions, rng.normal(size=positions.size))


def _result(suite: str, check: str, worst: float, bound: float, samples: int) -> CheckResult:
    return CheckResult(suite=suite, check=check, passed=bool(worst <= bound),
                       worst=float(worst), bound=float(bound), samples=samples)


def projection_suite(rng: np.random.Generator, count: int = 500) -> List[CheckResult]:
    tv_excess, l1_excess, orthogonality = 0.0, 0.0, 0.0
    for _ in range(count):
        mesh = random_mesh(rng)
        q = random_control(rng)
        projected = project_Pi_h(q, mesh)
        tv = q.total_variation
        tv_excess = max(tv_excess, projected.total_variation - tv)
        l1_excess = max(l1_excess, control_distance(q, projected.to_jump_control(), 1) - mesh.h * tv)

        p = PiecewiseConstant(mesh, rng.normal(size=mesh.n_elements)).to_jump_control()
        pairing = control_inner(q, p) - control_inner(projected.to_jump_control(), p)
        scale = 1.0 + abs(control_inner(q, p))
        orthogonality = max(orthogonality, abs(pairing) / scale)

    return [
        _result("projection", "TV(Pi_h q) <= TV(q)", tv_excess, 1e-12, count),
        _result("projection", "||q - Pi_h q||_1 <= h TV(q)", l1_excess, 1e-12, count),
        _result("projection", "(q - Pi_h q, p_h) = 0", orthogonality, 1e-12, count),
    ]


def _random_desired_state(rng: np.random.Generator) -> Callable:
    modes = np.arange(1, 5)
    amplitudes = rng.normal(size=modes.size) / modes
    shift = float(rng.normal())

    def desired_state(x):
        x = np.asarray(x, dtype=float)
        return shift + np.sin(np.pi * np.multiply.outer(x, modes)) @ amplitudes

    return desired_state


def oracle_suite(rng: np.random.Generator, count: int = 100) -> List[CheckResult]:
    """SSN against accelerated proximal gradient on random inner problems (m <= 8)"""
    worst_gap, mismatched, unconverged = 0.0, 0, 0
    for _ in range(count):
        mesh = random_mesh(rng, n_min=16)
        spec = ProblemSpec(desired_state=_random_desired_state(rng), alpha=float(10.0 ** rng.uniform(-4, -2)))
        points = random_control(rng, max_jumps=8, min_gap=0.05).positions
        sys = assemble_system(mesh, spec)
        gram = assemble_gram(mesh, sys, points, spec)

        newton = solve_subproblem_ssn(gram, spec.alpha)
        oracle = solve_subproblem_oracle(gram, spec.alpha, tol=1e-10, max_iter=500_000, momentum=True)
        if not (newton.converged and oracle.converged):
            unconverged += 1
            continue
        j_newton = subproblem_objective(gram, newton.w, spec.alpha)
        j_oracle = subproblem_objective(gram, oracle.w, spec.alpha)
        worst_gap = max(worst_gap, abs(j_newton - j_oracle) / max(abs(j_oracle), 1e-300))
        if not np.array_equal(np.asarray(newton.coeffs) != 0.0, np.asarray(oracle.coeffs) != 0.0):
            mismatched += 1

    return [
        _result("oracle", "both solvers converge", unconverged, 0, count),
        _result("oracle", "objectives agree (relative)", worst_gap, 1e-10, count),
        _result("oracle", "identical supports", mismatched, 0, count),
    ]


def example1_suite(rng: np.random.Generator, count: int = 10_000) -> List[CheckResult]:
    _, exact = example1()
    phi, z = exact.phi, exact.adjoint
    xs = np.linspace(0.0, 1.0, count)
    delta = 1e-4
    inner = xs[(xs > delta) & (xs < 1.0 - delta)]

    sup_excess = float(np.abs(phi(xs)).max()) - ALPHA
    jump_error = max(abs(float(phi(t)) - ALPHA * np.sign(c)) for t, c in exact.control.jumps)
    fd_z = (phi(inner + delta) - phi(inner - delta)) / (2.0 * delta)
    fd_adjoint = (z(inner + delta) - 2.0 * z(inner) + z(inner - delta)) / delta**2
    identity = exact.desired_state(inner) - exact.state(inner)

    # second differences of the state inside each open segment
    breaks = np.concatenate(([0.0], exact.breakpoints, [1.0]))
    samples = breaks[:-1, None] + np.diff(breaks)[:, None] * rng.uniform(0.1, 0.9, (breaks.size - 1, 20))
    u = exact.state
    curvature = (u(samples + delta) - 2.0 * u(samples) + u(samples - delta)) / delta**2
    segment_values = exact.control(samples)

    return [
        _result("example1", "x_c = 0.2225575 (4 digits)", abs(X_C - 0.2225575), 5e-5, 1),
        _result("example1", "Phi(1) = 0", abs(float(phi(1.0))), 1e-12, 1),
        _result("example1", "||Phi||_inf <= alpha", sup_excess, 1e-12 * ALPHA, count),
        _result("example1", "Phi(t_i) = alpha sign(c_i)", jump_error, 1e-12, exact.control.m),
        _result("example1", "z = Phi' (finite differences)", float(np.abs(fd_z - z(inner)).max()), 1e-8, inner.size),
        _result("example1", "u_d - u = z'' (finite differences)", float(np.abs(fd_adjoint - identity).max()), 1e-8, inner.size),
        _result("example1", "u(0) = u(1) = 0", float(np.abs(u(np.array([0.0, 1.0]))).max()), 1e-14, 2),
        _result("example1", "-u'' = q on segments", float(np.abs(curvature + segment_values).max()), 1e-6, samples.size),
    ]


def fem_suite(rng: np.random.Generator, count: int = 50) -> List[CheckResult]:
    nodal_error, symmetry, residual = 0.0, 0.0, 0.0
    for _ in range(count):
        mesh = random_mesh(rng)
        spec = ProblemSpec(desired_state=lambda x: np.zeros_like(x), alpha=1.0)
        sys = assemble_system(mesh, spec)

        q = random_control(rng)
        load = load_of_jump_control(mesh, q)
        u_h = apply_Sh(sys, load, mesh)
        exact = exact_state_of_control(q)
        nodal_error = max(nodal_error, float(np.abs(u_h.values - exact(mesh.nodes)).max()))
        residual = max(residual, float(np.abs(sys.matvec(u_h.interior) - load).max()))

        f = NodalFunction.from_interior(mesh, rng.normal(size=mesh.n_interior))
        g = NodalFunction.from_interior(mesh, rng.normal(size=mesh.n_interior))
        Sf = apply_Sh(sys, mass_times(mesh, f.values), mesh)
        Sg = apply_Sh(sys, mass_times(mesh, g.values), mesh)
        lhs, rhs = l2_inner(Sf, g), l2_inner(f, Sg)
        symmetry = max(symmetry, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1.0))

    return [
        _result("fem", "nodal exactness for -u'' = q", nodal_error, 1e-12, count),
        _result("fem", "(S_h f, g) = (f, S_h g)", symmetry, 1e-11, count),
        _result("fem", "Galerkin residual", residual, 1e-10, count),
    ]


SUITES: Dict[str, Callable[[np.random.Generator], List[CheckResult]]] = {
    "projection": projection_suite,
    "oracle": oracle_suite,
    "example1": example1_suite,
    "fem": fem_suite,
}


def suite_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def run_suites(suite: str = "all", seed: int = 0) -> List[CheckResult]:
    if suite != "all" and suite not in SUITES:
        raise InvalidArgumentError(f"unknown suite {suite!r}, expected all or one of {sorted(SUITES)}")
    names = list(SUITES) if suite == "all" else [suite]
    results: List[CheckResult] = []
    for name in names:
        logger.info(f"Running {name} suite (seed {seed})")
        results.extend(SUITES[name](suite_rng(seed, name)))
    failed = [r for r in results if not r.passed]
    if failed:
        logger.warning(f"{len(failed)} of {len(results)} checks failed")
    return results
