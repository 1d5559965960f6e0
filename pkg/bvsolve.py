import csv
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import click
import coloredlogs
import numpy as np
import orjson

from bv_examples import load_example
from fem_core import build_uniform_mesh
from outer_loop import Solution, SolverConfig, solve
from reference_store import ReferenceStore
from solver_errors import BVSolverError, InvalidArgumentError
from study_harness import StudyConfig, emit, run_study
from verification_suites import SUITES, CheckResult, run_suites

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"
JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS


def parse_levels(ctx, param, value: str):
    try:
        lo, hi = (int(part) for part in value.split(".."))
    except ValueError:
        raise click.BadParameter(f"expected K_MIN..K_MAX, got {value!r}")
    return lo, hi


def solver_options(f):
    """Flags shared by solve and study; None keeps the SolverConfig default"""
    options = [
        click.option("--eps-in", type=float, default=None, help="Inner fixed-point tolerance.  [default: 1e-12]"),
        click.option("--eps-out", type=float, default=None, help="Outer point-update tolerance.  [default: 1e-10]"),
        click.option("--quad-order", type=int, default=None, help="Gauss-Legendre points per element.  [default: 5]"),
        click.option("--max-outer", type=int, default=None, help="Outer iteration budget.  [default: 200]"),
        click.option("--max-inner", type=int, default=None, help="Semismooth Newton step budget.  [default: 100]"),
        click.option("--no-damping", is_flag=True, default=False, help="Disable damping of non-decreasing point updates."),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def _solver_config(eps_in, eps_out, quad_order, max_outer, max_inner, no_damping) -> SolverConfig:
    return SolverConfig.build(eps_in=eps_in, eps_out=eps_out, quad_order=quad_order, max_outer=max_outer,
                              max_inner=max_inner, damping_enabled=False if no_damping else None)


def write_json(path: Path, payload) -> None:
    path.write_bytes(orjson.dumps(payload, option=JSON_OPTIONS))


def write_nodal_csv(path: Path, nodes: np.ndarray, values: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["node", "value"])
        writer.writerows([f"{x:.17g}", f"{v:.17g}"] for x, v in zip(nodes.tolist(), values.tolist()))


def write_solution(solution: Solution, output_dir: Path) -> None:
    output_dir.mkdir(parents=True, exist_ok=True)
    nodes = solution.mesh.nodes
    write_json(output_dir / "control.json", solution.control.to_record().model_dump())
    write_nodal_csv(output_dir / "state.csv", nodes, solution.state.values)
    write_nodal_csv(output_dir / "adjoint.csv", nodes, solution.adjoint.values)
    write_nodal_csv(output_dir / "phi.csv", nodes, solution.phi.nodal)
    write_json(output_dir / "summary.json", solution.summary().model_dump(mode="json"))
    logger.info(f"Wrote solution files to {output_dir}")


def render_checks(results: Sequence[CheckResult]) -> str:
    width = max((len(r.check) for r in results), default=0)
    lines = []
    for r in results:
        mark = "✅" if r.passed else "❌"
        lines.append(f"{mark} {r.suite:<10} {r.check:<{width}}  worst={r.worst:.3e}  bound={r.bound:.1e}  n={r.samples}")
    passed = sum(r.passed for r in results)
    lines.append(f"{passed}/{len(results)} checks passed")
    return "\n".join(lines)


@click.group()
@click.option("--log-level", default="INFO", show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
def cli(log_level: str):
    """Solver for 1D elliptic optimal control with total-variation regularized controls."""
    coloredlogs.install(level=log_level.upper(), fmt=LOG_FORMAT)


@cli.command("solve")
@click.option("--example", type=click.IntRange(1, 2), required=True)
@click.option("--scheme", type=click.Choice(["variational", "full"]), default="variational", show_default=True)
@click.option("--n", "n", type=click.IntRange(min=2), default=1023, show_default=True, help="Number of elements.")
@click.option("--alpha", type=float, default=None, help="Override the example's regularization weight.")
@solver_options
@click.option("--output-dir", type=click.Path(file_okay=False, path_type=Path), default=Path("results/solve"),
              show_default=True)
def solve_command(example, scheme, n, alpha, eps_in, eps_out, quad_order, max_outer, max_inner, no_damping,
                  output_dir):
    """Solve one example on a uniform mesh and write control, state, adjoint, Phi and summary."""
    cfg = _solver_config(eps_in, eps_out, quad_order, max_outer, max_inner, no_damping)
    spec, _ = load_example(example)
    if alpha is not None:
        spec = spec.with_alpha(alpha)
    logger.info(f"Solving example {example} ({scheme}) on n={n}")
    solution = solve(spec, build_uniform_mesh(n), scheme, cfg)
    write_solution(solution, output_dir)
    return 0


@cli.command("study")
@click.option("--example", type=click.IntRange(1, 2), required=True)
@click.option("--scheme", type=click.Choice(["variational", "full"]), default="variational", show_default=True)
@click.option("--levels", default="4..9", show_default=True, callback=parse_levels,
              help="Level range K_MIN..K_MAX, n = 2^k - 1 elements.")
@click.option("--reference-level", type=int, default=None,
              help="Reference level for example 2.  [default: 17]")
@solver_options
@click.option("--format", "fmt", type=click.Choice(["csv", "json", "both"]), default="both", show_default=True)
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True, help="Levels solved concurrently.")
@click.option("--timings", is_flag=True, default=False, help="Write per-level wall time to the report files.")
@click.option("--output-dir", type=click.Path(file_okay=False, path_type=Path), default=Path("results"),
              show_default=True)
@click.option("--references-dir", type=click.Path(file_okay=False, path_type=Path),
              default=Path("references"), show_default=True)
@click.option("--quiet", is_flag=True, default=False, help="Hide the progress bar.")
def study_command(example, scheme, levels, reference_level, eps_in, eps_out, quad_order, max_outer, max_inner,
                  no_damping, fmt, jobs, timings, output_dir, references_dir, quiet):
    """Run a mesh-refinement study and write the error table with convergence orders."""
    k_min, k_max = levels
    cfg = StudyConfig.build(example=example, scheme=scheme, k_min=k_min, k_max=k_max,
                            reference_level=reference_level, output_dir=output_dir, jobs=jobs,
                            solver=_solver_config(eps_in, eps_out, quad_order, max_outer, max_inner, no_damping))
    store = ReferenceStore(str(references_dir)) if cfg.effective_reference_level is not None else None
    report = run_study(cfg, store, progress=not quiet and sys.stderr.isatty())
    formats: List[str] = ["csv", "json"] if fmt == "both" else [fmt]
    for f in formats:
        emit(report, f, cfg.output_dir / f"{cfg.stem}.{f}", include_timing=timings)
    return 0


@cli.command("verify")
@click.option("--suite", type=click.Choice(["all", *SUITES]), default="all", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def verify_command(suite, seed):
    """Run the randomized property suites and print a pass/fail table."""
    results = run_suites(suite, seed)
    click.echo(render_checks(results))
    return 0 if all(r.passed for r in results) else 1


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Programmatic entry point returning the process exit status"""
    args = list(sys.argv[1:] if argv is None else argv)
    stage = next((a for a in args if a in cli.commands), "cli")
    try:
        status = cli.main(args=args, prog_name="bvsolve", standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        logger.error("❌ Aborted")
        return 1
    except InvalidArgumentError as e:
        logger.error(f"❌ {stage}: invalid arguments: {e}")
        return 2
    except BVSolverError as e:
        logger.error(f"❌ {stage} failed: {e}")
        return 1
    except OSError as e:
        logger.error(f"❌ {stage} failed writing output: {e}")
        return 1
    return status if isinstance(status, int) else 0


if __name__ == "__main__":
    sys.exit(run())
