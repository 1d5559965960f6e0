"""
BV controls in offset-plus-jumps form, q = a + sum_i c_i 1_(t_i,1), and
their exact calculus against the P1 mesh: loads, cell averages, distances.
"""
import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Tuple

import numpy as np
from pydantic import BaseModel

from fem_core import Mesh, hat_areas
from solver_errors import InvalidArgumentError

logger = logging.getLogger(__name__)

# jumps closer than this are one jump
MERGE_TOL = 1e-12


class JumpRecord(BaseModel):
    t: float
    c: float


class ControlRecord(BaseModel):
    offset: float
    jumps: List[JumpRecord] = []


@dataclass(frozen=True, eq=False)
class JumpControl:
    offset: float = 0.0
    positions: np.ndarray = field(default_factory=lambda: np.empty(0))
    heights: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        t = np.array(self.positions, dtype=float).ravel()
        c = np.array(self.heights, dtype=float).ravel()
        if t.shape != c.shape:
            raise InvalidArgumentError(f"{t.size} jump positions but {c.size} heights")
        if np.any(t <= 0.0) or np.any(t >= 1.0):
            raise InvalidArgumentError("jump positions must lie strictly inside (0,1)")
        order = np.argsort(t, kind="stable")
        t, c = t[order], c[order]
        if t.size > 1 and np.any(np.diff(t) < MERGE_TOL):
            t, c = _merge_close(t, c)
        t.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "positions", t)
        object.__setattr__(self, "heights", c)

    @classmethod
    def from_jumps(cls, offset: float, jumps: Iterable[Tuple[float, float]] = ()) -> "JumpControl":
        pairs = list(jumps)
        t = [p[0] for p in pairs]
        c = [p[1] for p in pairs]
        return cls(offset, np.asarray(t, dtype=float), np.asarray(c, dtype=float))

    @classmethod
    def constant(cls, value: float) -> "JumpControl":
        return cls(value)

    @property
    def m(self) -> int:
        return self.positions.size

    @property
    def jumps(self) -> List[Tuple[float, float]]:
        return list(zip(self.positions.tolist(), self.heights.tolist()))

    @property
    def total_variation(self) -> float:
        return float(np.abs(self.heights).sum())

    def __call__(self, x):
        x_arr = np.asarray(x, dtype=float)
        if np.any(x_arr < 0.0) or np.any(x_arr > 1.0):
            raise InvalidArgumentError("controls are evaluated on [0,1] only")
        cumulative = np.concatenate(([0.0], np.cumsum(self.heights)))
        # side="right": a jump at t counts for x = t (right limit)
        values = self.offset + cumulative[np.searchsorted(self.positions, x_arr, side="right")]
        return float(values) if values.ndim == 0 else values

    def antiderivative(self, x) -> np.ndarray:
        """Exact integral of q over [0, x]"""
        x = np.asarray(x, dtype=float)
        ramps = np.maximum(x[..., None] - self.positions, 0.0)
        return self.offset * x + ramps @ self.heights

    def pruned(self) -> "JumpControl":
        keep = self.heights != 0.0
        return JumpControl(self.offset, self.positions[keep], self.heights[keep])

    def to_record(self) -> ControlRecord:
        return ControlRecord(offset=self.offset,
                             jumps=[JumpRecord(t=t, c=c) for t, c in self.jumps])

    @classmethod
    def from_record(cls, record: ControlRecord) -> "JumpControl":
        return cls.from_jumps(record.offset, [(j.t, j.c) for j in record.jumps])


def _merge_close(t: np.ndarray, c: np.ndarray):
    merged_t, merged_c = [t[0]], [c[0]]
    for ti, ci in zip(t[1:], c[1:]):
        if ti - merged_t[-1] < MERGE_TOL:
            merged_c[-1] += ci
        else:
            merged_t.append(ti)
            merged_c.append(ci)
    logger.debug(f"Merged {t.size - len(merged_t)} jumps closer than {MERGE_TOL}")
    return np.array(merged_t), np.array(merged_c)


@dataclass(frozen=True, eq=False)
class PiecewiseConstant:
    """A member of Q_h: one value per element"""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.mesh.n_elements,):
            raise InvalidArgumentError(
                f"expected {self.mesh.n_elements} cell values, got {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def total_variation(self) -> float:
        return float(np.abs(np.diff(self.values)).sum())

    def __call__(self, x):
        return self.values[self.mesh.locate(x)]

    def to_jump_control(self) -> JumpControl:
        """Offset plus jumps at interior nodes, zero differences dropped"""
        jumps = np.diff(self.values)
        keep = jumps != 0.0
        return JumpControl(self.values[0], self.mesh.interior_nodes[keep], jumps[keep])


def total_variation(q: JumpControl) -> float:
    return q.total_variation


def load_of_jump_control(mesh: Mesh, q: JumpControl) -> np.ndarray:
    """
    Exact (q, phi_j) for all interior hats.

    A jump at t inside element k = [x_k, x_{k+1}] leaves hats j <= k-1 untouched,
    cuts hats k and k+1, and covers hats j >= k+2 completely.
    """
    n = mesh.n_elements
    h = mesh.widths
    full_area = np.zeros(n + 1)
    full_area[1:-1] = hat_areas(mesh)

    full = q.offset * full_area
    if q.m == 0:
        return full[1:-1]

    k = mesh.locate(q.positions)
    s = q.positions - mesh.nodes[k]
    hk = h[k]
    c = q.heights

    covered = np.zeros(n + 2)
    np.add.at(covered, k + 2, c)
    full += np.cumsum(covered)[:n + 1] * full_area

    right_half = np.where(k + 1 < n, h[np.minimum(k + 1, n - 1)] / 2.0, 0.0)
    np.add.at(full, k, c * (hk - s) ** 2 / (2.0 * hk))
    np.add.at(full, k + 1, c * ((hk**2 - s**2) / (2.0 * hk) + right_half))
    return full[1:-1]


def project_Pi_h(q: JumpControl, mesh: Mesh) -> PiecewiseConstant:
    primitive = q.antiderivative(mesh.nodes)
    return PiecewiseConstant(mesh, np.diff(primitive) / mesh.widths)


def _merged_segments(q1: JumpControl, q2: JumpControl):
    breaks = np.unique(np.concatenate(([0.0, 1.0], q1.positions, q2.positions)))
    return np.diff(breaks), (breaks[:-1] + breaks[1:]) / 2.0


def control_distance(q1: JumpControl, q2: JumpControl, p: int = 1) -> float:
    if p not in (1, 2):
        raise InvalidArgumentError(f"only L1 and L2 distances are supported, got p={p}")
    lengths, mids = _merged_segments(q1, q2)
    diff = np.abs(q1(mids) - q2(mids))
    if p == 1:
        return float(diff @ lengths)
    return float(np.sqrt(diff**2 @ lengths))


def control_inner(q1: JumpControl, q2: JumpControl) -> float:
    lengths, mids = _merged_segments(q1, q2)
    return float((q1(mids) * q2(mids)) @ lengths)
