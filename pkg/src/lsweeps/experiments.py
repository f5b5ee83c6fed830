"""Experiment presets: problem setup, solve pipeline, oracle and studies."""
from __future__ import annotations

import csv
import dataclasses
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cdd import CDDLayout, build_cdd
from .discretization import (
    Grid2D,
    PmlSpec,
    SlownessModel,
    Stencil,
    extend_slowness,
    global_stencil,
    pml_points,
)
from .io import write_wavefield
from .sparse_direct import factorize, solve
from .krylov import SolveReport, gmres, true_residual
from .models import generate_model, point_sources, standard_sources
from .runtime import DistributedOperator, Runtime, instrument
from .sweeps import LSweepsPreconditioner

CSV_HEADER = ["N", "omega_over_2pi", "q", "p", "T_fact", "N_it", "T_it", "T_total"]
ORACLE_MAX_N = 640

# default source per model when the config does not name one
DEFAULT_SOURCES = {
    "two_layer": "point:0.5,0.25",
    "checkerboard": "point:0.5,0.5",
    "waveguide": "point:0.05,0.5",
}


@dataclass
class ExperimentConfig:
    model: str = "constant"
    model_file: str | None = None
    q: int = 2
    r: int | None = None
    points_per_subdomain: int = 101
    ppw: float = 10.0
    pml_wavelengths: float = 2.0
    tol: float = 1e-6
    restart: int = 50
    maxit: int = 200
    workers: int | None = None
    out: str | None = None
    seed: int = 0
    contrast: float = 2.0
    source: str | None = None
    preconditioner: str = "auto"
    absorption: str = "per_point"

    def __post_init__(self):
        if self.r is None:
            self.r = self.q
        if self.q < 1 or self.r < 1:
            raise ValueError("q and r must be positive")
        if self.pml_wavelengths < 1:
            raise ValueError("PML must be at least one wavelength thick")
        if self.points_per_subdomain < 8:
            raise ValueError("subdomains need at least 8 points per side")
        if self.preconditioner not in ("auto", "scenario3", "windowed"):
            raise ValueError(f"unknown preconditioner mode {self.preconditioner!r}")

    @property
    def n(self) -> int:
        return self.points_per_subdomain * max(self.q, self.r)

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        """Read flat ``key = value`` lines; ``overrides`` that are not None win."""
        values = parse_config(Path(path).read_text())
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values: dict) -> "ExperimentConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in values.items():
            key = key.replace("-", "_")
            if key not in fields:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(fields[key].type, value)
        return cls(**kwargs)


def parse_config(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def _coerce(tp, value):
    if not isinstance(value, str):
        return value
    tp = str(tp)
    if value.lower() in ("none", ""):
        return None
    if tp.startswith("int"):
        return int(value)
    if tp.startswith("float"):
        return float(value)
    return value


@dataclass
class Problem:
    config: ExperimentConfig
    grid: Grid2D
    model: SlownessModel
    m_ext: np.ndarray
    omega: float
    spec: PmlSpec
    source: np.ndarray
    layout: CDDLayout
    _stencil: Stencil | None = field(default=None, repr=False)

    @property
    def stencil(self) -> Stencil:
        if self._stencil is None:
            self._stencil = global_stencil(self.grid, self.m_ext, self.omega, self.spec)
        return self._stencil

    @property
    def N(self) -> int:
        return self.grid.nx_bulk * self.grid.ny_bulk


def omega_for(n: int, ppw: float) -> float:
    """Angular frequency giving ``ppw`` points per wavelength on ``n`` points spanning [0, 1]."""
    return 2 * math.pi * (n - 1) / ppw


def build_problem(config: ExperimentConfig) -> Problem:
    n = config.n
    if n % config.q or n % config.r:
        raise ValueError(f"n={n} is not divisible by the {config.q}x{config.r} decomposition")
    probe = Grid2D.unit_square(n, 1)
    params = {"contrast": config.contrast, "seed": config.seed, "path": config.model_file}
    kind = "file" if config.model_file and config.model in ("file", "constant") else config.model
    model = generate_model(kind, params, probe)
    grid = Grid2D.unit_square(n, pml_points(config.ppw, config.pml_wavelengths, model.m0))
    m_ext = extend_slowness(model, grid)
    omega = omega_for(n, config.ppw)
    spec = PmlSpec.for_problem(grid, omega, config.absorption)
    source = make_source(config.source or DEFAULT_SOURCES.get(config.model, "standard"), grid)
    layout = build_cdd(grid, config.q, config.r)
    return Problem(config, grid, model, m_ext, omega, spec, source, layout)


def make_source(spec: str, grid: Grid2D) -> np.ndarray:
    """``standard``, ``ones`` or ``point:x,y[;x,y...]``."""
    if spec == "standard":
        return standard_sources(grid)
    if spec == "ones":
        return np.ones(grid.size)
    if spec.startswith("point:"):
        pts = []
        for item in spec[len("point:"):].split(";"):
            x, y = (float(v) for v in item.split(","))
            pts.append((x, y))
        return point_sources(grid, pts)
    raise ValueError(f"unknown source {spec!r}")


@dataclass
class ExperimentResult:
    problem: Problem
    solution: np.ndarray
    report: SolveReport
    p: int
    mode: str
    runtime: Runtime

    def csv_row(self) -> list:
        rep = self.report
        return [self.problem.N, round(self.problem.omega / (2 * math.pi), 1),
                self.problem.config.q, self.p, f"{rep.T_fact:.6g}", rep.iterations,
                f"{rep.T_it:.6g}", f"{rep.T_total:.6g}"]


def solve_problem(problem: Problem, workers: int | None = None) -> ExperimentResult:
    """Factorize, run GMRES and collect timings; nothing is written to disk."""
    cfg = problem.config
    report = SolveReport()
    runtime = Runtime(cfg.q, cfg.r, workers if workers is not None else cfg.workers)
    mode = cfg.preconditioner
    if mode == "auto":
        # Krylov vectors touch the skeleton even when the source does not
        mode = "windowed" if cfg.q * cfg.r > 1 else "scenario3"
    precond = LSweepsPreconditioner(problem.layout, problem.m_ext, problem.omega, problem.spec,
                                    executor=runtime, mode=mode)
    t0 = time.perf_counter()
    A = DistributedOperator(runtime, problem.stencil, problem.layout.row_splits)
    instrument(report, "setup", time.perf_counter() - t0)
    t0 = time.perf_counter()
    precond.setup()
    instrument(report, "factorize", time.perf_counter() - t0)
    x, report = gmres(A, precond, problem.source, tol=cfg.tol, restart=cfg.restart,
                      maxit=cfg.maxit, dot_fn=A.dot, report=report)
    report.true_residual = true_residual(A, x, problem.source)
    for rec in runtime.records:
        if rec.messages:
            report.messages[rec.phase] = report.messages.get(rec.phase, 0) + rec.messages
            report.volume[rec.phase] = report.volume.get(rec.phase, 0) + rec.volume_complex
    runtime.close()
    return ExperimentResult(problem, x, report, runtime.p, mode, runtime)


def write_artifacts(result: ExperimentResult, out: str | os.PathLike, append: bool = False) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "report.csv"
    new = not (append and csv_path.exists())
    with open(csv_path, "w" if new else "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(CSV_HEADER)
        w.writerow(result.csv_row())
    g = result.problem.grid
    tag = f"q{result.problem.config.q}"
    write_wavefield(out / f"wavefield_{tag}.hwf", result.solution.reshape(g.shape), g.h)
    result.runtime.dump_records(out / f"instrumentation_{tag}.jsonl")


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    result = solve_problem(build_problem(config))
    if config.out:
        write_artifacts(result, config.out)
    return result


class OracleTooLarge(ValueError):
    pass


def direct_solve(problem: Problem) -> np.ndarray:
    n = max(problem.grid.nx_bulk, problem.grid.ny_bulk)
    if n > ORACLE_MAX_N:
        raise OracleTooLarge(
            f"global direct solve refused: n={n} > {ORACLE_MAX_N} "
            f"({problem.grid.size} unknowns with PML)"
        )
    F = factorize(problem.stencil.to_csr(), ordering="COLAMD")
    return solve(F, problem.source)


def relative_error(x: np.ndarray, ref: np.ndarray) -> float:
    return float(np.linalg.norm(x - ref) / np.linalg.norm(ref))


def compare_against_oracle(config_or_result) -> float:
    """Relative L2 distance between the GMRES and the direct solution."""
    result = config_or_result
    if isinstance(config_or_result, ExperimentConfig):
        problem = build_problem(config_or_result)
        direct_solve(problem)  # refuse early if too large
        result = solve_problem(problem)
    return relative_error(result.solution, direct_solve(result.problem))


def pml_study(config: ExperimentConfig, wavelengths=(1, 2, 3, 4)) -> list[tuple[float, int, bool]]:
    rows = []
    for w in wavelengths:
        res = solve_problem(build_problem(dataclasses.replace(config, pml_wavelengths=w)))
        rows.append((w, res.report.iterations, res.report.converged))
    return rows


def scaling_study(config: ExperimentConfig, qs=(2, 4, 8), workers="q") -> list[ExperimentResult]:
    out = []
    for q in qs:
        cfg = dataclasses.replace(config, q=q, r=q)
        p = q if workers == "q" else workers
        out.append(solve_problem(build_problem(cfg), p))
    return out
