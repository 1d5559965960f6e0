"""
Inner problem for fixed candidate jump points t_1 < ... < t_m:

    min_{a, c}  1/2 ||S_h(a + sum_i c_i 1_(t_i,1)) - u_d||^2 + alpha sum_i |c_i|

In the basis images y_0 = S_h(1), y_i = S_h(1_(t_i,1)) this is a lasso with an
unpenalized offset, written with the Gram matrix G and b_i = (u_d, y_i).
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional

import numpy as np
from pydantic import BaseModel
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from bv_control import MERGE_TOL, JumpControl, load_of_jump_control
from fem_core import (DEFAULT_QUAD_ORDER, Mesh, NodalFunction, ProblemSpec, TridiagonalSystem,
                      element_quadrature, evaluate, hat_areas, mass_times, quadrature_load)
from solver_errors import InvalidArgumentError, SolverFailureError

logger = logging.getLogger(__name__)

GRAM_REGULARIZATION = 1e-14
FALLBACK_CHUNK = 5_000


@dataclass(frozen=True, eq=False)
class GramSystem:
    mesh: Mesh
    points: np.ndarray
    images: np.ndarray  # (m+1, n_nodes) nodal values of y_0..y_m
    G: np.ndarray
    b: np.ndarray
    const_term: float

    @property
    def m(self) -> int:
        return self.points.size

    @cached_property
    def gamma(self) -> float:
        """Prox step 1 / max diag(G); the fixed point does not depend on it"""
        return 1.0 / float(np.max(np.diag(self.G)))

    def state(self, w) -> NodalFunction:
        return NodalFunction(self.mesh, np.asarray(w, dtype=float) @ self.images)


class SubproblemSolution(BaseModel):
    offset: float
    coeffs: List[float]
    iterations: int
    converged: bool
    fixed_point_residual: float
    fallback_used: bool = False

    @property
    def w(self) -> np.ndarray:
        return np.concatenate(([self.offset], self.coeffs))


def desired_norm_term(mesh: Mesh, spec: ProblemSpec, quad_order: int = DEFAULT_QUAD_ORDER) -> float:
    X, W, _ = element_quadrature(mesh, quad_order)
    return 0.5 * float((W * evaluate(spec.desired_state, X) ** 2).sum())


def assemble_gram(mesh: Mesh, sys: TridiagonalSystem, points, spec: ProblemSpec,
                  quad_order: int = DEFAULT_QUAD_ORDER,
                  desired_load: Optional[np.ndarray] = None,
                  const_term: Optional[float] = None) -> GramSystem:
    points = np.array(points, dtype=float).ravel()
    if np.any(points <= 0.0) or np.any(points >= 1.0):
        raise InvalidArgumentError("candidate points must lie strictly inside (0,1)")
    if points.size > 1 and np.any(np.diff(points) < MERGE_TOL):
        raise InvalidArgumentError("candidate points must be strictly increasing and pre-merged")

    loads = np.empty((mesh.n_interior, points.size + 1))
    loads[:, 0] = hat_areas(mesh)
    for i, t in enumerate(points):
        loads[:, i + 1] = load_of_jump_control(mesh, JumpControl(0.0, [t], [1.0]))

    images = np.zeros((points.size + 1, mesh.nodes.size))
    images[:, 1:-1] = sys.solve(loads).T

    G = images[:, 1:-1] @ mass_times(mesh, images).T
    G = 0.5 * (G + G.T)

    if desired_load is None:
        desired_load = quadrature_load(mesh, spec.desired_state, quad_order)
    if const_term is None:
        const_term = desired_norm_term(mesh, spec, quad_order)
    b = images[:, 1:-1] @ desired_load

    points.setflags(write=False)
    return GramSystem(mesh=mesh, points=points, images=images, G=G, b=b, const_term=const_term)


def shrink(x, tau):
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def _prox(v: np.ndarray, tau: float) -> np.ndarray:
    out = v.copy()
    out[1:] = shrink(v[1:], tau)
    return out


def subproblem_objective(gram: GramSystem, w, alpha: float) -> float:
    w = np.asarray(w, dtype=float)
    return float(0.5 * w @ gram.G @ w - gram.b @ w + gram.const_term + alpha * np.abs(w[1:]).sum())


def fixed_point_residual(gram: GramSystem, w, alpha: float, gamma: Optional[float] = None) -> float:
    gamma = gram.gamma if gamma is None else gamma
    w = np.asarray(w, dtype=float)
    v = w - gamma * (gram.G @ w - gram.b)
    return float(np.abs(w - _prox(v, gamma * alpha)).max())


def _solve_spd(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return cho_solve(cho_factor(A), rhs)
    except LinAlgError:
        logger.warning(f"Active Gram block of size {A.shape[0]} is numerically singular, regularizing")
    try:
        return cho_solve(cho_factor(A + GRAM_REGULARIZATION * np.eye(A.shape[0])), rhs)
    except LinAlgError as e:
        raise SolverFailureError(f"active Gram block stays singular after regularization: {e}") from e


def _solution(w: np.ndarray, iterations: int, converged: bool, residual: float,
              fallback_used: bool = False) -> SubproblemSolution:
    return SubproblemSolution(offset=float(w[0]), coeffs=w[1:].tolist(), iterations=iterations,
                              converged=converged, fixed_point_residual=residual,
                              fallback_used=fallback_used)


def _newton_step(gram: GramSystem, w: np.ndarray, alpha: float):
    """Active-set step from w; returns the new iterate and the sign pattern it was built from"""
    gamma = gram.gamma
    v = w - gamma * (gram.G @ w - gram.b)
    active = np.abs(v) > gamma * alpha
    active[0] = True
    signs = np.where(active, np.sign(v), 0.0)
    signs[0] = 0.0
    idx = np.flatnonzero(active)
    w_new = np.zeros_like(w)
    w_new[idx] = _solve_spd(gram.G[np.ix_(idx, idx)], gram.b[idx] - alpha * signs[idx])
    return w_new, signs.astype(np.int8).tobytes()


def solve_subproblem_ssn(gram: GramSystem, alpha: float, eps_in: float = 1e-12,
                         max_iter: int = 100, w0=None,
                         fallback_max_iter: int = 1_000_000) -> SubproblemSolution:
    """
    Semismooth Newton on w = P(w - gamma (G w - b)), P = shrink on the jump
    coefficients and identity on the offset. Each step is the active-set
    system G_AA w_A = b_A - alpha s_A with inactive coefficients set to zero.

    A step is a function of the sign pattern alone, so a repeated pattern is a
    cycle. Newton stops there and proximal gradient takes over from the best
    iterate seen (or from zero if that has the lower objective).
    """
    if not eps_in > 0.0:
        raise InvalidArgumentError(f"eps_in must be positive, got {eps_in}")
    w = np.zeros(gram.m + 1) if w0 is None else np.array(w0, dtype=float)
    best_w, best_residual = w, np.inf
    seen = set()

    steps = 0
    for steps in range(max_iter + 1):
        residual = fixed_point_residual(gram, w, alpha)
        if residual <= eps_in:
            return _solution(w, steps, True, residual)
        if residual < best_residual:
            best_w, best_residual = w, residual
        if steps == max_iter:
            break
        w_next, pattern = _newton_step(gram, w, alpha)
        if pattern in seen:
            logger.debug(f"SSN active set repeats after {steps} steps (residual {residual:.3e})")
            break
        seen.add(pattern)
        w = w_next

    zero = np.zeros(gram.m + 1)
    start = zero if subproblem_objective(gram, zero, alpha) < subproblem_objective(gram, best_w, alpha) else best_w
    logger.warning(f"SSN stopped after {steps} steps at residual {best_residual:.3e} (m={gram.m}), "
                   f"continuing with proximal gradient")
    return _proximal_fallback(gram, alpha, eps_in, fallback_max_iter, start, steps)


def _proximal_fallback(gram: GramSystem, alpha: float, eps_in: float, max_iter: int,
                       start: np.ndarray, newton_steps: int) -> SubproblemSolution:
    """Accelerated proximal gradient in chunks, each followed by one active-set step on its support"""
    w, used = start, 0
    residual = fixed_point_residual(gram, w, alpha)
    while used < max_iter:
        chunk = solve_subproblem_oracle(gram, alpha, eps_in, min(FALLBACK_CHUNK, max_iter - used),
                                        w0=w, momentum=True)
        used += max(chunk.iterations, 1)
        if chunk.converged:
            return chunk.model_copy(update={"iterations": newton_steps + used, "fallback_used": True})
        w, residual = chunk.w, chunk.fixed_point_residual
        polished, _ = _newton_step(gram, w, alpha)
        polished_residual = fixed_point_residual(gram, polished, alpha)
        if polished_residual <= eps_in:
            return _solution(polished, newton_steps + used, True, polished_residual, fallback_used=True)
    raise SolverFailureError(f"inner solve stalled at residual {residual:.3e} (m={gram.m})")


def largest_eigenvalue(G: np.ndarray, iters: int = 200) -> float:
    v = np.ones(G.shape[0]) / np.sqrt(G.shape[0])
    estimate = 0.0
    for _ in range(iters):
        Gv = G @ v
        norm = float(np.linalg.norm(Gv))
        if norm == 0.0:
            return 0.0
        v = Gv / norm
        estimate = float(v @ G @ v)
    return estimate


def solve_subproblem_oracle(gram: GramSystem, alpha: float, tol: float = 1e-12,
                            max_iter: int = 1_000_000, w0=None,
                            momentum: bool = False) -> SubproblemSolution:
    """
    Proximal gradient with step 1/L (L from power iteration). With momentum the
    FISTA extrapolation is used and restarted whenever the objective goes up.
    Never raises on exhaustion; returns converged=False instead.
    """
    G, b = gram.G, gram.b
    L = 1.05 * largest_eigenvalue(G)
    if L == 0.0:
        w = np.zeros(gram.m + 1)
        return _solution(w, 0, True, fixed_point_residual(gram, w, alpha))

    w = np.zeros(gram.m + 1) if w0 is None else np.array(w0, dtype=float)
    y = w.copy()
    t = 1.0
    obj = subproblem_objective(gram, w, alpha)
    residual = fixed_point_residual(gram, w, alpha)
    if residual <= tol:
        return _solution(w, 0, True, residual)

    for it in range(1, max_iter + 1):
        step = 1.0 / L
        w_new = _prox(y - step * (G @ y - b), step * alpha)
        obj_new = subproblem_objective(gram, w_new, alpha)
        if obj_new > obj + 1e-15 * (1.0 + abs(obj)):
            if momentum:
                # restart from the last iterate
                y, t = w.copy(), 1.0
            else:
                L *= 2.0
            continue
        if momentum:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = w_new + (t - 1.0) / t_new * (w_new - w)
            t = t_new
        else:
            y = w_new
        w, obj = w_new, obj_new
        residual = fixed_point_residual(gram, w, alpha)
        if residual <= tol:
            return _solution(w, it, True, residual)

    return _solution(w, max_iter, False, residual)
