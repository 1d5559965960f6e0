"""
Mesh-refinement studies on the grid family n = 2^k - 1 (uniform, not nested).

Each level is solved from a cold start; errors are measured against the exact
solution (Example 1) or a fine reference solution of the same scheme (Example 2).
"""
import asyncio
import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import orjson
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from tqdm import tqdm

from adjoint_tools import Scheme, compute_adjoint
from bv_control import ControlRecord, JumpControl, control_distance, load_of_jump_control
from bv_examples import load_example
from fem_core import (DEFAULT_QUAD_ORDER, NodalFunction, apply_Sh, assemble_system,
                      build_uniform_mesh, evaluate, gauss_legendre)
from outer_loop import SolverConfig, solve
from reference_store import ReferenceStore
from solver_errors import BVSolverError, InvalidArgumentError, StudyLevelError

logger = logging.getLogger(__name__)

METRICS = ("e_q_L1", "e_q_L2", "e_u_L2", "e_z_Linf", "e_z_grad_Linf")
DEFAULT_REFERENCE_LEVEL = 17


def level_size(k: int) -> int:
    return 2**k - 1


class StudyConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    example: Literal[1, 2]
    scheme: Scheme
    k_min: int = Field(4, ge=2)
    k_max: int = 9
    reference_level: Optional[int] = None
    metrics: Tuple[str, ...] = METRICS
    output_dir: Path = Path("results")
    solver: SolverConfig = SolverConfig()
    jobs: int = Field(1, ge=1)
    samples_per_element: int = Field(20, ge=2)

    @model_validator(mode="after")
    def _check_levels(self) -> "StudyConfig":
        if self.k_max < self.k_min:
            raise ValueError(f"empty level range {self.k_min}..{self.k_max}")
        unknown = set(self.metrics) - set(METRICS)
        if unknown:
            raise ValueError(f"unknown metrics {sorted(unknown)}")
        reference = self.effective_reference_level
        if reference is not None and reference <= self.k_max + 2:
            raise ValueError(f"reference level {reference} must exceed k_max + 2 = {self.k_max + 2}")
        return self

    @classmethod
    def build(cls, **values) -> "StudyConfig":
        try:
            return cls(**{k: v for k, v in values.items() if v is not None})
        except ValidationError as e:
            raise InvalidArgumentError(f"invalid study configuration: {e}") from e

    @property
    def effective_reference_level(self) -> Optional[int]:
        if self.example == 1:
            return None
        return self.reference_level if self.reference_level is not None else DEFAULT_REFERENCE_LEVEL

    @property
    def stem(self) -> str:
        return f"example{self.example}_{self.scheme}_study"


class StudyRow(BaseModel):
    level: int
    h: float
    n: int
    e_q_L1: Optional[float] = None
    e_q_L2: Optional[float] = None
    e_u_L2: Optional[float] = None
    e_z_Linf: Optional[float] = None
    e_z_grad_Linf: Optional[float] = None
    outer_iters: int
    n_jumps: int
    wall_time: Optional[float] = None


class StudyReport(BaseModel):
    example: int
    scheme: Scheme
    reference_level: Optional[int] = None
    rows: List[StudyRow] = []
    eoc: Dict[str, List[Optional[float]]] = {}
    slope_last4: Dict[str, Optional[float]] = {}
    slope_all: Dict[str, Optional[float]] = {}


# ---------------------------------------------------------------------------
# Error norms
# ---------------------------------------------------------------------------

def state_error_L2(u_h: NodalFunction, exact: Callable, breakpoints=(),
                   quad_order: int = DEFAULT_QUAD_ORDER) -> float:
    breakpoints = np.asarray(breakpoints, dtype=float)
    inner = breakpoints[(breakpoints > 0.0) & (breakpoints < 1.0)]
    pts = np.union1d(u_h.mesh.nodes, inner)
    lengths = np.diff(pts)
    s, w = gauss_legendre(quad_order)
    X = pts[:-1, None] + lengths[:, None] * s
    err = u_h(X) - evaluate(exact, X)
    return float(np.sqrt((lengths[:, None] * w * err**2).sum()))


def _element_samples(z_h: NodalFunction, samples_per_element: int) -> np.ndarray:
    if samples_per_element < 2:
        raise InvalidArgumentError(f"need at least 2 samples per element, got {samples_per_element}")
    s = np.linspace(0.0, 1.0, samples_per_element + 1)
    mesh = z_h.mesh
    return mesh.nodes[:-1, None] + mesh.widths[:, None] * s


def adjoint_error_sup(z_h: NodalFunction, exact_z: Callable, samples_per_element: int = 20) -> float:
    X = _element_samples(z_h, samples_per_element)
    return float(np.abs(z_h(X) - evaluate(exact_z, X)).max())


def adjoint_gradient_error_sup(z_h: NodalFunction, exact_dz: Callable, samples_per_element: int = 20) -> float:
    """Each element's constant slope against the exact derivative on that closed element"""
    X = _element_samples(z_h, samples_per_element)
    return float(np.abs(z_h.slopes[:, None] - evaluate(exact_dz, X)).max())


def eoc(errors: Sequence[Optional[float]], hs: Sequence[float]) -> List[Optional[float]]:
    rates: List[Optional[float]] = [None]
    for i in range(1, len(errors)):
        e0, e1 = errors[i - 1], errors[i]
        if e0 is None or e1 is None or e0 <= 0.0 or e1 <= 0.0:
            rates.append(None)
        else:
            rates.append(float(np.log(e0 / e1) / np.log(hs[i - 1] / hs[i])))
    return rates[:len(errors)]


def regression_slope(errors: Sequence[Optional[float]], hs: Sequence[float]) -> Optional[float]:
    pairs = [(h, e) for h, e in zip(hs, errors) if e is not None and e > 0.0]
    if len(pairs) < 2:
        return None
    log_h, log_e = np.log(np.array(pairs)).T
    return float(np.polyfit(log_h, log_e, 1)[0])


# ---------------------------------------------------------------------------
# Per-level work (runs in worker processes when jobs > 1)
# ---------------------------------------------------------------------------

class LevelTask(BaseModel):
    example: int
    scheme: Scheme
    level: int
    solver: SolverConfig
    metrics: Tuple[str, ...]
    samples_per_element: int
    reference_level: Optional[int] = None
    reference: Optional[ControlRecord] = None


@dataclass(frozen=True)
class _Target:
    control: JumpControl
    state: Callable
    state_breakpoints: np.ndarray
    adjoint: Callable
    adjoint_derivative: Callable


def _reference_target(example: int, level: int, control: JumpControl, quad_order: int) -> _Target:
    """State and adjoint of a stored reference control, always recomputed from the control"""
    spec, _ = load_example(example)
    mesh = build_uniform_mesh(level_size(level))
    sys = assemble_system(mesh, spec, quad_order)
    state = apply_Sh(sys, load_of_jump_control(mesh, control), mesh)
    adjoint = compute_adjoint(sys, state, spec, quad_order)
    slopes = adjoint.slopes
    return _Target(control=control, state=state, state_breakpoints=mesh.interior_nodes,
                   adjoint=adjoint, adjoint_derivative=lambda x: slopes[mesh.locate(x)])


def _target_for(task: LevelTask) -> _Target:
    if task.reference is not None:
        return _reference_target(task.example, task.reference_level,
                                 JumpControl.from_record(task.reference), task.solver.quad_order)
    _, exact = load_example(task.example)
    if exact is None:
        raise InvalidArgumentError(f"example {task.example} has no exact solution, a reference is required")
    return _Target(control=exact.control, state=exact.state, state_breakpoints=exact.breakpoints,
                   adjoint=exact.adjoint, adjoint_derivative=exact.adjoint_derivative)


def solve_level(task: LevelTask) -> StudyRow:
    spec, _ = load_example(task.example)
    mesh = build_uniform_mesh(level_size(task.level))
    started = time.perf_counter()
    solution = solve(spec, mesh, task.scheme, task.solver)
    wall_time = time.perf_counter() - started

    target = _target_for(task)
    samples = task.samples_per_element
    metrics: Dict[str, float] = {}
    for name in task.metrics:
        if name == "e_q_L1":
            metrics[name] = control_distance(solution.control, target.control, 1)
        elif name == "e_q_L2":
            metrics[name] = control_distance(solution.control, target.control, 2)
        elif name == "e_u_L2":
            metrics[name] = state_error_L2(solution.state, target.state, target.state_breakpoints,
                                           task.solver.quad_order)
        elif name == "e_z_Linf":
            metrics[name] = adjoint_error_sup(solution.adjoint, target.adjoint, samples)
        elif name == "e_z_grad_Linf":
            metrics[name] = adjoint_gradient_error_sup(solution.adjoint, target.adjoint_derivative, samples)

    return StudyRow(level=task.level, h=mesh.h, n=mesh.n_elements, outer_iters=solution.outer_iterations,
                    n_jumps=solution.control.pruned().m, wall_time=wall_time, **metrics)


async def _solve_levels_parallel(tasks: List[LevelTask], jobs: int) -> list:
    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [loop.run_in_executor(pool, solve_level, task) for task in tasks]
        return await asyncio.gather(*futures, return_exceptions=True)


# ---------------------------------------------------------------------------
# Study driver
# ---------------------------------------------------------------------------

def reference_control(cfg: StudyConfig, store: Optional[ReferenceStore] = None) -> JumpControl:
    level = cfg.effective_reference_level
    key = ReferenceStore.key(cfg.example, cfg.scheme, level)
    if store is not None:
        cached = store.load_reference(key)
        if cached is not None:
            return cached
    logger.info(f"Solving reference {key} (n={level_size(level)})")
    spec, _ = load_example(cfg.example)
    try:
        solution = solve(spec, build_uniform_mesh(level_size(level)), cfg.scheme, cfg.solver)
    except BVSolverError as e:
        raise StudyLevelError(level, e) from e
    if store is not None:
        store.save_reference(key, solution.control)
    return solution.control


def build_report(cfg: StudyConfig, rows: List[StudyRow]) -> StudyReport:
    rows = sorted(rows, key=lambda r: -r.h)
    hs = [r.h for r in rows]
    report = StudyReport(example=cfg.example, scheme=cfg.scheme,
                         reference_level=cfg.effective_reference_level, rows=rows)
    for name in cfg.metrics:
        errors = [getattr(r, name) for r in rows]
        report.eoc[name] = eoc(errors, hs)
        report.slope_last4[name] = regression_slope(errors[-4:], hs[-4:])
        report.slope_all[name] = regression_slope(errors, hs)
    return report


def run_study(cfg: StudyConfig, store: Optional[ReferenceStore] = None, progress: bool = False) -> StudyReport:
    reference: Optional[ControlRecord] = None
    if cfg.effective_reference_level is not None:
        reference = reference_control(cfg, store).to_record()

    levels = list(range(cfg.k_min, cfg.k_max + 1))
    tasks = [LevelTask(example=cfg.example, scheme=cfg.scheme, level=k, solver=cfg.solver,
                       metrics=cfg.metrics, samples_per_element=cfg.samples_per_element,
                       reference_level=cfg.effective_reference_level, reference=reference)
             for k in levels]

    if cfg.jobs > 1:
        logger.info(f"Solving {len(tasks)} levels with {cfg.jobs} workers")
        outcomes = asyncio.run(_solve_levels_parallel(tasks, cfg.jobs))
    else:
        outcomes = []
        for task in tqdm(tasks, desc=cfg.stem, disable=not progress):
            try:
                outcomes.append(solve_level(task))
            except BVSolverError as e:
                outcomes.append(e)
                break

    rows = []
    for k, outcome in zip(levels, outcomes):
        if isinstance(outcome, BaseException):
            logger.error(f"❌ Study {cfg.stem} failed at level k={k}: {outcome}")
            raise StudyLevelError(k, outcome) from outcome
        logger.info(f"Level k={k}: n={outcome.n}, {outcome.outer_iters} outer iterations, "
                    f"{outcome.wall_time:.2f}s")
        rows.append(outcome)
    return build_report(cfg, rows)


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def _render(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def csv_header(include_timing: bool = False) -> List[str]:
    header = ["h", "n", *METRICS, *(f"eoc_{m[2:]}" for m in METRICS), "outer_iters", "n_jumps"]
    return header + ["wall_time"] if include_timing else header


def emit(report: StudyReport, fmt: Literal["csv", "json"], path, include_timing: bool = False) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "csv":
            with open(path, "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(csv_header(include_timing))
                for i, row in enumerate(report.rows):
                    rates = [report.eoc.get(m, [None] * len(report.rows))[i] for m in METRICS]
                    record = [row.h, row.n, *(getattr(row, m) for m in METRICS), *rates,
                              row.outer_iters, row.n_jumps]
                    if include_timing:
                        record.append(row.wall_time)
                    writer.writerow([_render(v) for v in record])
        elif fmt == "json":
            exclude = None if include_timing else {"rows": {"__all__": {"wall_time"}}}
            payload = report.model_dump(mode="json", exclude=exclude)
            path.write_bytes(orjson.dumps(payload, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))
        else:
            raise InvalidArgumentError(f"unknown report format {fmt!r}")
    except OSError as e:
        raise OSError(e.errno, f"cannot write study report: {e.strerror}", str(path)) from e
    logger.info(f"Wrote {fmt} report to {path}")
    return path


def load_report(path) -> StudyReport:
    return StudyReport.model_validate(orjson.loads(Path(path).read_bytes()))
