"""
Outer iteration: inner solve on the current candidate points, then the roots
of the new adjoint become the next candidates, until the point set settles.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from adjoint_tools import (OptimalityReport, PhiFunction, Scheme, StructuralReport, compute_adjoint,
                           find_interior_roots, optimality_report, phi_of, structural_diagnostics)
from bv_control import ControlRecord, JumpControl
from fem_core import Mesh, NodalFunction, ProblemSpec, assemble_system, quadrature_load
from solver_errors import InvalidArgumentError, NonConvergenceError
from subproblem_ssn import (GramSystem, SubproblemSolution, assemble_gram, desired_norm_term,
                            solve_subproblem_ssn, subproblem_objective)

logger = logging.getLogger(__name__)


class SolverConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    eps_in: float = Field(1e-12, gt=0)
    eps_out: float = Field(1e-10, gt=0)
    max_outer: int = Field(200, ge=1)
    max_inner: int = Field(100, ge=1)
    quad_order: int = Field(5, ge=1)
    damping_enabled: bool = True
    node_snap_tol: float = Field(1e-12, gt=0)

    @classmethod
    def build(cls, **overrides) -> "SolverConfig":
        """Construct from optional overrides, None meaning default"""
        try:
            return cls(**{k: v for k, v in overrides.items() if v is not None})
        except ValidationError as e:
            raise InvalidArgumentError(f"invalid solver configuration: {e}") from e


class SolveSummary(BaseModel):
    scheme: Scheme
    n: int
    h: float
    objective: float
    outer_iterations: int
    n_jumps: int
    control: ControlRecord
    optimality: OptimalityReport
    inner: SubproblemSolution
    structural: StructuralReport


@dataclass(frozen=True, eq=False)
class Solution:
    control: JumpControl
    state: NodalFunction
    adjoint: NodalFunction
    phi: PhiFunction
    outer_iterations: int
    inner_report: SubproblemSolution
    optimality: OptimalityReport
    scheme: Scheme
    objective: float
    structural: StructuralReport

    @property
    def mesh(self) -> Mesh:
        return self.state.mesh

    def summary(self) -> SolveSummary:
        return SolveSummary(
            scheme=self.scheme,
            n=self.mesh.n_elements,
            h=self.mesh.h,
            objective=self.objective,
            outer_iterations=self.outer_iterations,
            n_jumps=self.control.pruned().m,
            control=self.control.to_record(),
            optimality=self.optimality,
            inner=self.inner_report,
            structural=self.structural,
        )


@dataclass(frozen=True, eq=False)
class _Iterate:
    points: np.ndarray
    gram: GramSystem
    inner: SubproblemSolution
    control: JumpControl
    state: NodalFunction
    adjoint: NodalFunction
    roots: np.ndarray


class _OuterContext:
    """Everything that stays fixed across outer iterations of one solve"""

    def __init__(self, spec: ProblemSpec, mesh: Mesh, cfg: SolverConfig):
        self.spec = spec
        self.mesh = mesh
        self.cfg = cfg
        self.sys = assemble_system(mesh, spec, cfg.quad_order)
        self.desired_load = quadrature_load(mesh, spec.desired_state, cfg.quad_order)
        self.const_term = desired_norm_term(mesh, spec, cfg.quad_order)

    def solve_at(self, points: np.ndarray, previous: Optional[_Iterate]) -> _Iterate:
        gram = assemble_gram(self.mesh, self.sys, points, self.spec, self.cfg.quad_order,
                             desired_load=self.desired_load, const_term=self.const_term)
        w0 = warm_start(previous, points, 3.0 * self.mesh.h)
        inner = solve_subproblem_ssn(gram, self.spec.alpha, self.cfg.eps_in, self.cfg.max_inner, w0)
        w = inner.w
        state = gram.state(w)
        adjoint = compute_adjoint(self.sys, state, self.spec, self.cfg.quad_order,
                                  desired_load=self.desired_load)
        return _Iterate(points=points, gram=gram, inner=inner,
                        control=JumpControl(w[0], points, w[1:]),
                        state=state, adjoint=adjoint, roots=find_interior_roots(adjoint))

    def build(self, it: _Iterate, outer_iterations: int, scheme: Scheme) -> Solution:
        alpha = self.spec.alpha
        return Solution(
            control=it.control,
            state=it.state,
            adjoint=it.adjoint,
            phi=phi_of(it.adjoint),
            outer_iterations=outer_iterations,
            inner_report=it.inner,
            optimality=optimality_report(it.control, it.adjoint, alpha, scheme,
                                         kkt_residual=it.inner.fixed_point_residual),
            scheme=scheme,
            objective=subproblem_objective(it.gram, it.inner.w, alpha),
            structural=structural_diagnostics(it.adjoint, it.roots),
        )

    def finish(self, it: _Iterate, outer_iterations: int, scheme: Scheme) -> Solution:
        solution = self.build(it, outer_iterations, scheme)
        logger.info(f"✅ {scheme} solve on n={self.mesh.n_elements} converged after {outer_iterations} "
                    f"outer iterations: {solution.control.pruned().m} jumps, j_h={solution.objective:.10e}")
        return solution

    def fail(self, it: Optional[_Iterate], scheme: Scheme, telemetry: Dict) -> NonConvergenceError:
        last = self.build(it, self.cfg.max_outer, scheme) if it is not None else None
        message = f"{scheme} solve on n={self.mesh.n_elements} did not converge in {self.cfg.max_outer} outer iterations"
        logger.error(f"❌ {message}")
        return NonConvergenceError(message, last_iterate=last, telemetry=telemetry)


def warm_start(previous: Optional[_Iterate], points: np.ndarray, radius: float) -> np.ndarray:
    """Offset carried over; each new point takes the coefficient of the nearest old point within radius"""
    w0 = np.zeros(points.size + 1)
    if previous is None:
        return w0
    w0[0] = previous.inner.offset
    old = previous.points
    if old.size == 0 or points.size == 0:
        return w0
    coeffs = np.asarray(previous.inner.coeffs)
    right = np.clip(np.searchsorted(old, points), 0, old.size - 1)
    left = np.clip(right - 1, 0, old.size - 1)
    nearest = np.where(np.abs(old[left] - points) <= np.abs(old[right] - points), left, right)
    close = np.abs(old[nearest] - points) <= radius
    w0[1:][close] = coeffs[nearest[close]]
    return w0


def damped_update(t_prev: Optional[np.ndarray], t_curr: np.ndarray, t_next: np.ndarray) -> np.ndarray:
    t_curr = np.asarray(t_curr, dtype=float)
    t_next = np.asarray(t_next, dtype=float)
    if t_curr.shape != t_next.shape:
        raise InvalidArgumentError("damping applies only to updates with an equal number of points")
    if t_prev is None:
        return t_next
    t_prev = np.asarray(t_prev, dtype=float)
    if t_prev.shape != t_curr.shape:
        raise InvalidArgumentError("damping history must have the same number of points")
    if np.linalg.norm(t_next - t_curr) >= np.linalg.norm(t_curr - t_prev):
        return 0.5 * t_curr + 0.5 * t_next
    return t_next


def solve_variational(spec: ProblemSpec, mesh: Mesh, cfg: SolverConfig = SolverConfig()) -> Solution:
    ctx = _OuterContext(spec, mesh, cfg)
    t_prev: Optional[np.ndarray] = None
    t_curr = np.empty(0)
    last: Optional[_Iterate] = None
    step = np.inf

    for k in range(cfg.max_outer + 1):
        # measured on the undamped roots, so the returned points are their own roots within eps_out
        if last is not None and last.roots.size == last.points.size:
            step = float(np.linalg.norm(last.roots - last.points))
            if step <= cfg.eps_out:
                return ctx.finish(last, k, "variational")
        if k == cfg.max_outer:
            break
        last = ctx.solve_at(t_curr, last)
        t_next = last.roots
        if cfg.damping_enabled and t_next.size == t_curr.size:
            history = t_prev if t_prev is not None and t_prev.size == t_curr.size else None
            damped = damped_update(history, t_curr, t_next)
            if damped is not t_next:
                logger.debug(f"Outer step {k}: non-decreasing update, damping {t_next.size} points")
            t_next = damped
        logger.debug(f"Outer step {k}: {t_curr.size} candidates, {last.inner.iterations} SSN steps, "
                     f"{t_next.size} new roots")
        t_prev, t_curr = t_curr, t_next

    raise ctx.fail(last, "variational", {"outer_iterations": cfg.max_outer, "last_step": step,
                                         "last_point_count": int(t_curr.size)})


def candidate_nodes(mesh: Mesh, roots, snap_tol: float) -> np.ndarray:
    """Node indices replacing each root: the enclosing element's endpoints, or the node it sits on"""
    nodes = mesh.nodes
    last = nodes.size - 1
    picked = set()
    for r in np.asarray(roots, dtype=float):
        k = int(mesh.locate(r))
        if abs(r - nodes[k]) <= snap_tol:
            picked.add(k)
        elif abs(r - nodes[k + 1]) <= snap_tol:
            picked.add(k + 1)
        else:
            picked.update((k, k + 1))
    picked.discard(0)
    picked.discard(last)
    return np.array(sorted(picked), dtype=int)


def solve_full_discrete(spec: ProblemSpec, mesh: Mesh, cfg: SolverConfig = SolverConfig()) -> Solution:
    ctx = _OuterContext(spec, mesh, cfg)
    idx_prev: Optional[np.ndarray] = None
    idx_curr = np.empty(0, dtype=int)
    last: Optional[_Iterate] = None
    change = np.inf

    for k in range(cfg.max_outer):
        it = ctx.solve_at(mesh.nodes[idx_curr], last)
        if idx_prev is not None and np.array_equal(idx_curr, idx_prev):
            change = float(np.linalg.norm(it.inner.w - last.inner.w))
            if change <= cfg.eps_out:
                return ctx.finish(it, k + 1, "full")
        idx_next = candidate_nodes(mesh, it.roots, cfg.node_snap_tol)
        if (cfg.damping_enabled and idx_prev is not None and np.array_equal(idx_next, idx_prev)
                and not np.array_equal(idx_next, idx_curr)):
            logger.debug(f"Outer step {k}: candidate sets cycle, using their union")
            idx_next = np.union1d(idx_curr, idx_next)
        logger.debug(f"Outer step {k}: {idx_curr.size} candidate nodes, {it.inner.iterations} SSN steps, "
                     f"{idx_next.size} next")
        last = it
        idx_prev, idx_curr = idx_curr, idx_next

    raise ctx.fail(last, "full", {"outer_iterations": cfg.max_outer, "last_change": change,
                                  "last_point_count": int(idx_curr.size)})


def solve(spec: ProblemSpec, mesh: Mesh, scheme: Scheme, cfg: SolverConfig = SolverConfig()) -> Solution:
    if scheme == "variational":
        return solve_variational(spec, mesh, cfg)
    if scheme == "full":
        return solve_full_discrete(spec, mesh, cfg)
    raise InvalidArgumentError(f"unknown scheme {scheme!r}")
