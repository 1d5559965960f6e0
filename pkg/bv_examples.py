"""
The two benchmark problems (a = 1, d0 = 0, alpha = 1e-5).

Example 1 is manufactured: the certificate Phi is prescribed, z = Phi' and
u_d = u + z'' make the prescribed jump control optimal. Example 2 only fixes
u_d; its solution is approximated on a fine reference grid.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Tuple

import numpy as np
import sympy as sp

from bv_control import JumpControl
from fem_core import ProblemSpec, evaluate
from solver_errors import InvalidArgumentError

logger = logging.getLogger(__name__)

ALPHA = 1e-5
C_EX1 = 12.0 - 4.0 * np.sqrt(8.0)
X_C = float(np.arccos(C_EX1 / 4.0) / (2.0 * np.pi))


class PiecewiseQuadraticState:
    """
    Closed-form S(q) for -u'' = q, u(0) = u(1) = 0 and a jump control q.

    On segment s the state is -v_s x^2/2 + A_s x + B_s; (A_s, B_s) follow from
    C^1 matching by forward elimination with A_0 fixed by u(1) = 0.
    """

    def __init__(self, q: JumpControl):
        self.breakpoints = np.concatenate(([0.0], q.positions, [1.0]))
        self.segment_values = q.offset + np.concatenate(([0.0], np.cumsum(q.heights)))
        v = self.segment_values
        A = np.zeros(v.size)
        B = np.zeros(v.size)
        for s, t in enumerate(q.positions):
            dv = v[s + 1] - v[s]
            A[s + 1] = A[s] + dv * t
            B[s + 1] = B[s] - dv * t * t / 2.0
        # x is a homogeneous solution, so shifting every A_s by the same amount fixes u(1)
        A -= -v[-1] / 2.0 + A[-1] + B[-1]
        self.A, self.B = A, B

    def _segment(self, x: np.ndarray) -> np.ndarray:
        return np.clip(np.searchsorted(self.breakpoints, x, side="right") - 1, 0, self.A.size - 1)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        s = self._segment(x)
        return -self.segment_values[s] * x**2 / 2.0 + self.A[s] * x + self.B[s]

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        s = self._segment(x)
        return -self.segment_values[s] * x + self.A[s]


def exact_state_of_control(q: JumpControl) -> PiecewiseQuadraticState:
    return PiecewiseQuadraticState(q)


@dataclass(frozen=True)
class ExactSolution:
    control: JumpControl
    state: Callable
    adjoint: Callable
    adjoint_derivative: Callable
    phi: Callable
    desired_state: Callable
    alpha: float

    @property
    def breakpoints(self) -> np.ndarray:
        return self.control.positions


def _vectorized(expr, x) -> Callable:
    f = sp.lambdify(x, expr, "numpy")
    return lambda s: evaluate(f, s)


@lru_cache(maxsize=None)
def _certificate(alpha: float):
    """Phi and its first three derivatives, differentiated symbolically"""
    x = sp.Symbol("x", real=True)
    c = sp.Integer(12) - 4 * sp.sqrt(8)
    phi = sp.Float(alpha) / (2 * c) * ((1 - sp.cos(4 * sp.pi * x)) - c * (1 - sp.cos(2 * sp.pi * x)))
    derivatives = [phi]
    for _ in range(3):
        derivatives.append(sp.diff(derivatives[-1], x))
    return tuple(_vectorized(d, x) for d in derivatives)


def example1() -> Tuple[ProblemSpec, ExactSolution]:
    control = JumpControl.from_jumps(0.5, [(X_C, 1.0), (0.5, -2.0), (1.0 - X_C, 1.5)])
    state = exact_state_of_control(control)
    phi, z, dz, d3phi = _certificate(ALPHA)

    def desired_state(x):
        return state(x) + d3phi(x)

    spec = ProblemSpec(desired_state=desired_state, alpha=ALPHA)
    exact = ExactSolution(control=control, state=state, adjoint=z, adjoint_derivative=dz,
                          phi=phi, desired_state=desired_state, alpha=ALPHA)
    return spec, exact


def exact_state_ex1(x):
    _, exact = example1()
    return exact.state(x)


def example2() -> ProblemSpec:
    def desired_state(x):
        return 0.5 / np.pi**2 * (1.0 - np.cos(2.0 * np.pi * np.asarray(x, dtype=float)))

    return ProblemSpec(desired_state=desired_state, alpha=ALPHA)


def load_example(example_id: int) -> Tuple[ProblemSpec, Optional[ExactSolution]]:
    if example_id == 1:
        return example1()
    if example_id == 2:
        return example2(), None
    raise InvalidArgumentError(f"unknown example {example_id!r}, expected 1 or 2")
