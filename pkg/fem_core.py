"""
Piecewise-linear finite elements on [0,1] for the operator

    a(v, w) = (a v', w') + (d0 v, w),   v, w in V_h (zero boundary values).

Systems are assembled over interior nodes only and solved by a banded
Cholesky factorization that is computed once per system.
"""
import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded
from scipy.special import roots_legendre

from solver_errors import CoefficientViolationError, InvalidArgumentError, SingularSystemError

logger = logging.getLogger(__name__)

DEFAULT_QUAD_ORDER = 5

Coefficient = Union[float, Callable[[np.ndarray], np.ndarray]]


def evaluate(f: Callable, x: np.ndarray) -> np.ndarray:
    """Evaluate a vectorized callable and broadcast scalar results to x's shape"""
    x = np.asarray(x, dtype=float)
    return np.broadcast_to(np.asarray(f(x), dtype=float), x.shape)


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 3:
            raise InvalidArgumentError("mesh needs at least 2 elements")
        if nodes[0] != 0.0 or nodes[-1] != 1.0:
            raise InvalidArgumentError(f"mesh must span [0,1], got [{nodes[0]}, {nodes[-1]}]")
        if np.any(np.diff(nodes) <= 0.0):
            raise InvalidArgumentError("mesh nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @cached_property
    def widths(self) -> np.ndarray:
        widths = np.diff(self.nodes)
        widths.setflags(write=False)
        return widths

    @property
    def h(self) -> float:
        return float(self.widths.max())

    @property
    def n_elements(self) -> int:
        return self.nodes.size - 1

    @property
    def n_interior(self) -> int:
        return self.nodes.size - 2

    @property
    def interior_nodes(self) -> np.ndarray:
        return self.nodes[1:-1]

    def locate(self, x) -> np.ndarray:
        """Index of the element [x_k, x_{k+1}) holding x; x = 1 maps to the last element"""
        k = np.searchsorted(self.nodes, x, side="right") - 1
        return np.clip(k, 0, self.n_elements - 1)

    def same_as(self, other: "Mesh") -> bool:
        return self is other or np.array_equal(self.nodes, other.nodes)


@dataclass(frozen=True, eq=False)
class NodalFunction:
    """A member of V_h: one value per node, zero at both boundary nodes"""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.mesh.nodes.shape:
            raise InvalidArgumentError(
                f"expected {self.mesh.nodes.size} nodal values, got {values.shape}")
        if values[0] != 0.0 or values[-1] != 0.0:
            raise InvalidArgumentError("V_h members vanish at x=0 and x=1")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_interior(cls, mesh: Mesh, interior) -> "NodalFunction":
        values = np.zeros(mesh.nodes.size)
        values[1:-1] = interior
        return cls(mesh, values)

    @classmethod
    def zero(cls, mesh: Mesh) -> "NodalFunction":
        return cls(mesh, np.zeros(mesh.nodes.size))

    @property
    def interior(self) -> np.ndarray:
        return self.values[1:-1]

    @cached_property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / self.mesh.widths

    def __call__(self, x):
        return np.interp(x, self.mesh.nodes, self.values)


@dataclass(frozen=True)
class ProblemSpec:
    """
    Data of the control problem.

    diffusion/reaction are either floats (flagged constant, exact element
    matrices) or vectorized callables checked at quadrature points.
    """

    desired_state: Callable[[np.ndarray], np.ndarray]
    alpha: float
    diffusion: Coefficient = 1.0
    reaction: Coefficient = 0.0
    nu: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0.0:
            raise InvalidArgumentError(f"alpha must be positive, got {self.alpha}")
        if not self.nu > 0.0:
            raise InvalidArgumentError(f"nu must be positive, got {self.nu}")
        if self.diffusion_is_constant and self.diffusion < self.nu:
            raise CoefficientViolationError(f"diffusion {self.diffusion} below nu={self.nu}")
        if self.reaction_is_constant and self.reaction < 0.0:
            raise CoefficientViolationError(f"reaction {self.reaction} is negative")

    @property
    def diffusion_is_constant(self) -> bool:
        return not callable(self.diffusion)

    @property
    def reaction_is_constant(self) -> bool:
        return not callable(self.reaction)

    def with_alpha(self, alpha: float) -> "ProblemSpec":
        return ProblemSpec(self.desired_state, alpha, self.diffusion, self.reaction, self.nu)


@dataclass(frozen=True, eq=False)
class TridiagonalSystem:
    """Symmetric tridiagonal matrix over interior nodes; off holds sub = super diagonal"""

    main: np.ndarray
    off: np.ndarray

    def __post_init__(self):
        main = np.array(self.main, dtype=float)
        off = np.array(self.off, dtype=float)
        if main.ndim != 1 or off.shape != (max(main.size - 1, 0),):
            raise InvalidArgumentError("off diagonal must have one entry less than the main diagonal")
        if not np.all(main > 0.0):
            raise SingularSystemError("main diagonal must be strictly positive")
        main.setflags(write=False)
        off.setflags(write=False)
        object.__setattr__(self, "main", main)
        object.__setattr__(self, "off", off)

    @property
    def size(self) -> int:
        return self.main.size

    @cached_property
    def _factor(self) -> np.ndarray:
        banded = np.zeros((2, self.size))
        banded[0, 1:] = self.off
        banded[1] = self.main
        try:
            return cholesky_banded(banded, lower=False)
        except LinAlgError as e:
            raise SingularSystemError(f"zero pivot in tridiagonal factorization: {e}") from e

    def solve(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.ndim == 0 or rhs.shape[0] != self.size:
            raise InvalidArgumentError(f"rhs has {rhs.shape} entries, system has {self.size}")
        return cho_solve_banded((self._factor, False), rhs)

    def matvec(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        shape = (-1,) + (1,) * (v.ndim - 1)
        out = self.main.reshape(shape) * v
        off = self.off.reshape(shape)
        out[:-1] += off * v[1:]
        out[1:] += off * v[:-1]
        return out


@lru_cache(maxsize=None)
def gauss_legendre(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights mapped to the reference element [0,1]"""
    if not isinstance(order, (int, np.integer)) or order < 1:
        raise InvalidArgumentError(f"quadrature order must be a positive integer, got {order}")
    xi, w = roots_legendre(int(order))
    points, weights = (xi + 1.0) / 2.0, w / 2.0
    points.setflags(write=False)
    weights.setflags(write=False)
    return points, weights


def element_quadrature(mesh: Mesh, quad_order: int):
    """Quadrature points X and weights W per element (shape n_elements x order), local coords s"""
    s, w = gauss_legendre(quad_order)
    X = mesh.nodes[:-1, None] + mesh.widths[:, None] * s[None, :]
    W = mesh.widths[:, None] * w[None, :]
    return X, W, s


def build_uniform_mesh(n: int) -> Mesh:
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise InvalidArgumentError(f"uniform mesh needs n >= 2 elements, got {n}")
    return Mesh(np.arange(n + 1) / n)


def assemble_system(mesh: Mesh, spec: ProblemSpec,
                    quad_order: int = DEFAULT_QUAD_ORDER) -> TridiagonalSystem:
    h = mesh.widths
    X, W, s = element_quadrature(mesh, quad_order)

    if spec.diffusion_is_constant:
        kappa = spec.diffusion / h
    else:
        a = evaluate(spec.diffusion, X)
        if np.any(a < spec.nu):
            bad = X[a < spec.nu][0]
            raise CoefficientViolationError(f"diffusion below nu={spec.nu} at x={bad:.6g}")
        kappa = (W * a).sum(axis=1) / h**2

    if spec.reaction_is_constant:
        m_diag = spec.reaction * h / 3.0
        m00, m11, m01 = m_diag, m_diag, spec.reaction * h / 6.0
    else:
        d = evaluate(spec.reaction, X)
        if np.any(d < 0.0):
            bad = X[d < 0.0][0]
            raise CoefficientViolationError(f"reaction negative at x={bad:.6g}")
        psi0, psi1 = 1.0 - s, s
        m00 = (W * d * psi0**2).sum(axis=1)
        m01 = (W * d * psi0 * psi1).sum(axis=1)
        m11 = (W * d * psi1**2).sum(axis=1)

    diag = np.zeros(mesh.nodes.size)
    diag[:-1] += kappa + m00
    diag[1:] += kappa + m11
    off = -kappa + m01
    return TridiagonalSystem(main=diag[1:-1], off=off[1:-1])


def solve_tridiagonal(sys: TridiagonalSystem, rhs) -> np.ndarray:
    return sys.solve(rhs)


def hat_areas(mesh: Mesh) -> np.ndarray:
    """Integral of every interior hat function"""
    return (mesh.widths[:-1] + mesh.widths[1:]) / 2.0


def quadrature_load(mesh: Mesh, f: Callable, quad_order: int = DEFAULT_QUAD_ORDER) -> np.ndarray:
    X, W, s = element_quadrature(mesh, quad_order)
    fx = evaluate(f, X) * W
    full = np.zeros(mesh.nodes.size)
    full[:-1] += (fx * (1.0 - s)).sum(axis=1)
    full[1:] += (fx * s).sum(axis=1)
    return full[1:-1]


def mass_times(mesh: Mesh, values) -> np.ndarray:
    """Exact (u, phi_j) for piecewise-linear u given by nodal values along the last axis"""
    u = np.asarray(values, dtype=float)
    h = mesh.widths / 6.0
    full = np.zeros_like(u)
    full[..., :-1] += h * (2.0 * u[..., :-1] + u[..., 1:])
    full[..., 1:] += h * (u[..., :-1] + 2.0 * u[..., 1:])
    return full[..., 1:-1]


def apply_Sh(sys: TridiagonalSystem, load, mesh: Mesh) -> NodalFunction:
    if sys.size != mesh.n_interior:
        raise InvalidArgumentError(f"system size {sys.size} does not match mesh ({mesh.n_interior} interior nodes)")
    return NodalFunction.from_interior(mesh, sys.solve(load))


def l2_inner(u: NodalFunction, v: NodalFunction) -> float:
    if not u.mesh.same_as(v.mesh):
        raise InvalidArgumentError("l2_inner needs functions on the same mesh")
    a, b = u.values, v.values
    h = u.mesh.widths
    per_element = h / 6.0 * (2.0 * a[:-1] * b[:-1] + a[:-1] * b[1:] + a[1:] * b[:-1] + 2.0 * a[1:] * b[1:])
    return float(per_element.sum())
