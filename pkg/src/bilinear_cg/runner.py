"""Run configured experiments and write their reports.

Files written to ``output_dir`` by :func:`run_experiment`:

``report.csv``
    one row per outer iteration (row 0 is the initial guess);
``summary.csv``
    a single table row (mesh size, iteration counts, error norms) with no
    timing information, byte-identical between repeated runs;
``state_t*.csv``, ``misfit_t*.csv``
    nodal snapshots ``x, y, value`` of ``y_h`` and ``y_h - y_d``;
``control_t*.csv`` / ``control.csv``
    the computed velocity field at each snapshot time (example 2), or the
    whole control trajectory next to the exact one (example 1);
``run.json``
    configuration echo, status and wall time.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .mesh import build_unit_square_mesh
from .optimizer import ControlSpace, RunConfig, RunReport, run
from .pde import Discretization, TimeGrid
from .problems import Manufactured, error_norms, example1_data, example2_data
from .projection import ProjectionWorkspace
from .verify import Check, run_checks

log = logging.getLogger(__name__)

SUMMARY_HEADER = [
    "level", "h", "dt", "Iter_CG", "MaxIter_PCG",
    "L2_u_err", "L2_y_err", "rel_misfit", "status",
]
SWEEP_RATIOS = ["ratio_u_err", "ratio_y_err", "ratio_misfit"]
REPORT_HEADER = ["iter", "J", "grad_norm2", "grad_ratio", "stepsize", "max_inner_pcg"]


def fmt(x: float) -> str:
    """Fixed 10 significant digits."""
    return f"{x:.9e}"


@dataclass
class Experiment:
    """Everything needed to run one configured experiment."""

    config: ExperimentConfig
    problem: Manufactured
    disc: Discretization
    space: ControlSpace

    @property
    def mode(self) -> str:
        return self.space.mode


def setup_experiment(cfg: ExperimentConfig) -> Experiment:
    if cfg.level is None:
        raise ValueError("a single-level experiment needs 'level'")
    mesh = build_unit_square_mesh(cfg.level)
    grid = TimeGrid(1.0, 2**cfg.effective_dt_power)
    if cfg.example == 1:
        problem = example1_data(cfg.alpha1)
        disc = Discretization(problem.data, mesh, grid)
        space = ControlSpace(disc, "finite_dim")
    else:
        problem = example2_data(mesh, grid, cfg.alpha1, cfg.effective_reference_level, cfg.tol_pcg)
        disc = Discretization(problem.data, mesh, grid)
        ws = ProjectionWorkspace(mesh, tol1=cfg.tol_pcg, max_inner=cfg.max_inner)
        space = ControlSpace(disc, "field", ws)
    return Experiment(cfg, problem, disc, space)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    report: RunReport
    errors: dict[str, float]
    h: float
    dt: float
    files: list[Path] = field(default_factory=list)

    @property
    def level(self) -> int:
        return self.config.level

    def summary_row(self) -> list[str]:
        r = self.report
        return [
            str(self.level), fmt(self.h), fmt(self.dt), str(r.iterations), str(r.max_inner_overall),
            fmt(self.errors["err_u"]), fmt(self.errors["err_y"]), fmt(self.errors["rel_misfit"]), r.status,
        ]


def _write_csv(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _snapshot_index(t: float, dt: float, N: int) -> int:
    return min(N, max(0, int(round(t / dt))))


def write_outputs(exp: Experiment, result: ExperimentResult, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    rep, disc = result.report, exp.disc
    g0 = rep.grad_norm2[0] if rep.grad_norm2 and rep.grad_norm2[0] > 0 else 1.0
    files = [
        _write_csv(
            out / "report.csv",
            REPORT_HEADER,
            (
                [str(k), fmt(J), fmt(gg), fmt(gg / g0), fmt(rho), str(mi)]
                for k, (J, gg, rho, mi) in enumerate(
                    zip(rep.objective, rep.grad_norm2, rep.stepsize, rep.max_inner)
                )
            ),
        ),
        _write_csv(out / "summary.csv", SUMMARY_HEADER, [result.summary_row()]),
    ]

    xs, ys = disc.mesh.fine_nodes[:, 0], disc.mesh.fine_nodes[:, 1]
    grid = disc.grid
    for t in exp.config.snapshot_times:
        n = _snapshot_index(t, grid.dt, grid.N)
        tag = f"t{grid.t(n):.4f}"
        y = rep.state[n]
        files.append(_write_csv(out / f"state_{tag}.csv", ["x", "y", "value"], zip(map(fmt, xs), map(fmt, ys), map(fmt, y))))
        files.append(
            _write_csv(
                out / f"misfit_{tag}.csv", ["x", "y", "value"],
                zip(map(fmt, xs), map(fmt, ys), map(fmt, y - disc.yd[n])),
            )
        )
        if exp.mode == "field" and n >= 1:
            u = rep.control[n - 1]
            files.append(
                _write_csv(
                    out / f"control_{tag}.csv", ["x", "y", "u1", "u2"],
                    zip(map(fmt, xs), map(fmt, ys), map(fmt, u[0]), map(fmt, u[1])),
                )
            )
    if exp.mode == "finite_dim":
        times = grid.times[1:]
        exact = exp.problem.control(times)
        files.append(
            _write_csv(
                out / "control.csv", ["t", "u1", "u2", "u1_exact", "u2_exact"],
                ([fmt(t), fmt(u[0]), fmt(u[1]), fmt(e[0]), fmt(e[1])] for t, u, e in zip(times, rep.control, exact)),
            )
        )

    meta = {
        "config": exp.config.model_dump(),
        "status": rep.status,
        "iterations": rep.iterations,
        "max_inner_pcg": rep.max_inner_overall,
        "errors": result.errors,
        "descent_violations": rep.descent_violations,
        "wall_time_s": rep.wall_time,
        "norms": "dt-weighted, mass-matrix L2 against nodal interpolants",
    }
    if exp.mode == "field":
        meta["reference_level"] = exp.config.effective_reference_level
    path = out / "run.json"
    path.write_text(json.dumps(meta, indent=2) + "\n")
    files.append(path)
    return files


def run_experiment(
    config: ExperimentConfig | str | Path, *, write: bool = True, callback=None
) -> ExperimentResult:
    """Run one experiment; writes the report files unless ``write`` is false."""
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    start = time.perf_counter()
    exp = setup_experiment(cfg)
    log.info("example %d, level %d, N=%d: setup %.1fs", cfg.example, cfg.level, exp.disc.grid.N, time.perf_counter() - start)
    report = run(
        exp.space,
        RunConfig(tol=cfg.tol, max_outer=cfg.max_outer, threads=cfg.threads, restart_every=cfg.restart_every),
        callback=callback,
    )
    errors = error_norms(exp.problem, exp.disc, report.control, report.state)
    result = ExperimentResult(cfg, report, errors, h=exp.disc.mesh.h, dt=exp.disc.grid.dt)
    log.info(
        "%s after %d iterations: err_u=%.4e err_y=%.4e misfit=%.4e",
        report.status, report.iterations, errors["err_u"], errors["err_y"], errors["rel_misfit"],
    )
    if write:
        result.files = write_outputs(exp, result, Path(cfg.output_dir))
    return result


@dataclass
class SweepResult:
    results: list[ExperimentResult]
    path: Path | None = None

    def ratios(self) -> list[list[float | None]]:
        """Error ratios between each row and the next coarser one."""
        out: list[list[float | None]] = []
        keys = ("err_u", "err_y", "rel_misfit")
        for i, r in enumerate(self.results):
            if i == 0:
                out.append([None] * 3)
            else:
                prev = self.results[i - 1].errors
                out.append([prev[k] / r.errors[k] if r.errors[k] > 0 else float("inf") for k in keys])
        return out

    def rows(self) -> list[list[str]]:
        return [
            r.summary_row() + ["" if x is None else fmt(x) for x in ratio]
            for r, ratio in zip(self.results, self.ratios())
        ]


def run_sweep(config: ExperimentConfig | str | Path, *, write: bool = True) -> SweepResult:
    """Run every level in ``levels`` with ``dt = h / 2`` and tabulate error ratios."""
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    levels = cfg.levels if cfg.levels is not None else [cfg.level]
    root = Path(cfg.output_dir)
    results = []
    for level in levels:
        sub = cfg.for_level(level).model_copy(update={"output_dir": str(root / f"level_{level}")})
        results.append(run_experiment(sub, write=write))
    sweep = SweepResult(results)
    if write:
        root.mkdir(parents=True, exist_ok=True)
        sweep.path = _write_csv(root / "sweep.csv", SUMMARY_HEADER + SWEEP_RATIOS, sweep.rows())
    return sweep


def run_verify(callback=None) -> list[Check]:
    """Property checks on small meshes; see :mod:`bilinear_cg.verify`."""
    return run_checks(callback)
