"""
Discrete adjoint, its antiderivative Phi_h and the certificates built on it.

Phi_h(x) = int_0^x z_h is piecewise quadratic; optimality asks |Phi_h| <= alpha
with equality (and matching sign) wherever the control jumps, and Phi_h(1) = 0.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel

from bv_control import JumpControl
from fem_core import (DEFAULT_QUAD_ORDER, NodalFunction, ProblemSpec, TridiagonalSystem,
                      apply_Sh, mass_times, quadrature_load)
from solver_errors import InvalidArgumentError
from subproblem_ssn import shrink

logger = logging.getLogger(__name__)

Scheme = Literal["variational", "full"]

# a root this close to a node is treated as sitting on it
NODE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PhiFunction:
    z: NodalFunction

    @property
    def mesh(self):
        return self.z.mesh

    @cached_property
    def nodal(self) -> np.ndarray:
        z = self.z.values
        increments = self.mesh.widths * (z[:-1] + z[1:]) / 2.0
        nodal = np.concatenate(([0.0], np.cumsum(increments)))
        nodal.setflags(write=False)
        return nodal

    @property
    def at_one(self) -> float:
        return float(self.nodal[-1])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        k = self.mesh.locate(x)
        s = x - self.mesh.nodes[k]
        values = self.nodal[k] + self.z.values[k] * s + 0.5 * self.z.slopes[k] * s**2
        return float(values) if values.ndim == 0 else values

    def sup_norm(self) -> float:
        """Exact max |Phi_h|: extrema sit at nodes or at sign changes of z_h"""
        z = self.z.values
        z0, z1 = z[:-1], z[1:]
        cross = z0 * z1 < 0.0
        roots = self.mesh.nodes[:-1][cross] + self.mesh.widths[cross] * z0[cross] / (z0[cross] - z1[cross])
        candidates = np.abs(self.nodal)
        if roots.size:
            candidates = np.concatenate((candidates, np.abs(self(roots))))
        return float(candidates.max())


class OptimalityReport(BaseModel):
    scheme: Scheme
    phi_at_one: float
    max_abs_phi_at_jumps: float
    nodal_phi_bound_violation: float
    sign_mismatches: int
    kkt_residual: float
    phi_sup: float
    zero_height_jumps: int


class RootSlope(BaseModel):
    position: float
    left_slope: float
    right_slope: float
    flat: bool
    clustered: bool


class StructuralReport(BaseModel):
    threshold: float
    roots: List[RootSlope]

    @property
    def flat_count(self) -> int:
        return sum(r.flat for r in self.roots)

    @property
    def cluster_count(self) -> int:
        return sum(r.clustered for r in self.roots)


def compute_adjoint(sys: TridiagonalSystem, u_h: NodalFunction, spec: ProblemSpec,
                    quad_order: int = DEFAULT_QUAD_ORDER,
                    desired_load: Optional[np.ndarray] = None) -> NodalFunction:
    """z_h = S_h(u_h - u_d); the bilinear form is symmetric so the state operator is reused"""
    mesh = u_h.mesh
    if desired_load is None:
        desired_load = quadrature_load(mesh, spec.desired_state, quad_order)
    rhs = mass_times(mesh, u_h.values) - desired_load
    return apply_Sh(sys, rhs, mesh)


def phi_of(z_h: NodalFunction) -> PhiFunction:
    return PhiFunction(z_h)


def find_interior_roots(z_h: NodalFunction, tol_zero: Optional[float] = None,
                        tol_merge: Optional[float] = None) -> np.ndarray:
    mesh = z_h.mesh
    z = z_h.values
    scale = float(np.abs(z).max())
    if scale == 0.0:
        # an identically vanishing adjoint has no isolated roots
        return np.empty(0)
    if tol_zero is None:
        tol_zero = 1e-12 * scale
    if tol_merge is None:
        tol_merge = max(1e-10, mesh.h * 1e-6)
    if tol_zero <= 0.0 or tol_merge <= 0.0:
        raise InvalidArgumentError("root tolerances must be positive")

    touching = mesh.interior_nodes[np.abs(z[1:-1]) <= tol_zero]

    z0, z1 = z[:-1], z[1:]
    cross = (z0 * z1 < 0.0) & (np.abs(z0) > tol_zero) & (np.abs(z1) > tol_zero)
    crossing = mesh.nodes[:-1][cross] + mesh.widths[cross] * z0[cross] / (z0[cross] - z1[cross])

    candidates = np.sort(np.concatenate((touching, crossing)))
    if candidates.size == 0:
        return candidates
    roots = [candidates[0]]
    for r in candidates[1:]:
        if r - roots[-1] >= tol_merge:
            roots.append(r)
    return np.array(roots)


def optimality_report(q: JumpControl, z_h: NodalFunction, alpha: float, scheme: Scheme,
                      kkt_residual: Optional[float] = None) -> OptimalityReport:
    if scheme not in ("variational", "full"):
        raise InvalidArgumentError(f"unknown scheme {scheme!r}")
    phi = phi_of(z_h)
    phi_one = phi.at_one

    nonzero = q.heights != 0.0
    t, c = q.positions[nonzero], q.heights[nonzero]
    if t.size:
        phi_t = np.atleast_1d(phi(t))
        level = float(np.abs(np.abs(phi_t) - alpha).max())
        mismatches = int(np.count_nonzero(np.sign(phi_t) != np.sign(c)))
    else:
        level, mismatches = 0.0, 0

    nodal_violation = 0.0
    if scheme == "full":
        nodal_violation = float(np.maximum(np.abs(phi.nodal) - alpha, 0.0).max())

    if kkt_residual is None:
        # unit prox step: d/da = Phi_h(1), d/dc_i = Phi_h(1) - Phi_h(t_i)
        w = np.concatenate(([q.offset], q.heights))
        grad = np.concatenate(([phi_one], phi_one - np.atleast_1d(phi(q.positions))))
        step = w - grad
        step[1:] = shrink(step[1:], alpha)
        kkt_residual = float(np.abs(w - step).max())

    return OptimalityReport(
        scheme=scheme,
        phi_at_one=abs(phi_one),
        max_abs_phi_at_jumps=level,
        nodal_phi_bound_violation=nodal_violation,
        sign_mismatches=mismatches,
        kkt_residual=kkt_residual,
        phi_sup=phi.sup_norm(),
        zero_height_jumps=int(np.count_nonzero(~nonzero)),
    )


def structural_diagnostics(z_h: NodalFunction, roots, threshold: float = 1e-6) -> StructuralReport:
    mesh = z_h.mesh
    slopes = z_h.slopes
    roots = np.asarray(roots, dtype=float)

    entries = []
    local_width = []
    for r in roots:
        k = int(mesh.locate(r))
        if k + 1 < mesh.nodes.size - 1 and abs(r - mesh.nodes[k + 1]) <= NODE_TOL:
            k += 1
        if k > 0 and abs(r - mesh.nodes[k]) <= NODE_TOL:
            left, right = slopes[k - 1], slopes[k]
            local_width.append(max(mesh.widths[k - 1], mesh.widths[k]))
        else:
            left = right = slopes[k]
            local_width.append(mesh.widths[k])
        flat = bool(min(abs(left), abs(right)) < threshold)
        if flat:
            logger.warning(f"Adjoint is nearly flat at root {r:.10f} (slopes {left:.3e}, {right:.3e})")
        entries.append(dict(position=float(r), left_slope=float(left), right_slope=float(right),
                            flat=flat, clustered=False))

    for i in range(len(entries) - 1):
        gap = entries[i + 1]["position"] - entries[i]["position"]
        if gap < 3.0 * max(local_width[i], local_width[i + 1]):
            entries[i]["clustered"] = entries[i + 1]["clustered"] = True
            logger.warning(f"Roots {entries[i]['position']:.10f} and {entries[i + 1]['position']:.10f} are clustered")

    return StructuralReport(threshold=threshold, roots=[RootSlope(**e) for e in entries])
