"""Command-line front end: ``lsweeps <subcommand> [flags]``.

Exit status is 0 on success, 2 when GMRES fails to converge (artifacts are
still written) and 1 for usage or I/O errors.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .discretization import Grid2D
from .experiments import (
    CSV_HEADER,
    ExperimentConfig,
    OracleTooLarge,
    build_problem,
    direct_solve,
    relative_error,
    solve_problem,
    write_artifacts,
)
from .io import FormatError, write_model
from .models import MODEL_KINDS, generate_model

EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 1, 2

log = logging.getLogger("lsweeps")

# flag name -> ExperimentConfig field
FLAGS = {
    "model": "model", "model_file": "model_file", "q": "q", "r": "r", "ppw": "ppw",
    "pml_wavelengths": "pml_wavelengths", "tol": "tol", "restart": "restart",
    "workers": "workers", "out": "out", "seed": "seed", "contrast": "contrast",
    "source": "source", "points_per_subdomain": "points_per_subdomain",
    "preconditioner": "preconditioner",
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' file; flags override it")
    p.add_argument("--model", choices=MODEL_KINDS)
    p.add_argument("--model-file", help="HVM1 squared-slowness file")
    p.add_argument("--q", type=int, help="subdomain rows (along y)")
    p.add_argument("--r", type=int, help="subdomain columns (along x, default: q)")
    p.add_argument("--points-per-subdomain", type=int)
    p.add_argument("--ppw", type=float, help="points per wavelength")
    p.add_argument("--pml-wavelengths", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--restart", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--contrast", type=float)
    p.add_argument("--source", help="'standard', 'ones' or 'point:x,y[;x,y...]'")
    p.add_argument("--preconditioner", choices=("auto", "scenario3", "windowed"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lsweeps", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("solve", help="run one experiment"))
    p = sub.add_parser("pml-study", help="iterations against PML thickness")
    _common(p)
    p.add_argument("--wavelengths", default="1,2,3,4")
    p = sub.add_parser("scaling-study", help="timings for growing q with p = q workers")
    _common(p)
    p.add_argument("--qs", default="2,4,8")
    _common(sub.add_parser("oracle-check", help="compare against a global direct solve"))
    p = sub.add_parser("gen-model", help="write a built-in model as an HVM1 file")
    p.add_argument("path")
    p.add_argument("--model", choices=[k for k in MODEL_KINDS if k != "file"], required=True)
    p.add_argument("--n", type=int, default=202)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--contrast", type=float, default=2.0)
    return parser


def config_from_args(args) -> ExperimentConfig:
    overrides = {field: getattr(args, flag, None) for flag, field in FLAGS.items()}
    if args.config:
        return ExperimentConfig.from_file(args.config, **overrides)
    return ExperimentConfig.from_dict({k: v for k, v in overrides.items() if v is not None})


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _summary(result) -> str:
    rep = result.report
    return (f"N={result.problem.N} q={result.problem.config.q} p={result.p} mode={result.mode} "
            f"N_it={rep.iterations} converged={rep.converged} "
            f"T_fact={rep.T_fact:.3f}s T_it={rep.T_it:.3f}s T_total={rep.T_total:.3f}s")


def cmd_solve(args) -> int:
    cfg = config_from_args(args)
    result = solve_problem(build_problem(cfg))
    if cfg.out:
        write_artifacts(result, cfg.out)
    print(_summary(result))
    return EXIT_OK if result.report.converged else EXIT_NOT_CONVERGED


def cmd_pml_study(args) -> int:
    cfg = config_from_args(args)
    ok = True
    rows = []
    for w in _floats(args.wavelengths):
        res = solve_problem(build_problem(dataclasses.replace(cfg, pml_wavelengths=w)))
        ok &= res.report.converged
        rows.append((w, res.problem.grid.n_pml, res.report.iterations, res.report.converged))
        print(f"pml_wavelengths={w:g} n_pml={rows[-1][1]} N_it={rows[-1][2]} converged={rows[-1][3]}")
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "pml_study.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["pml_wavelengths", "n_pml", "N_it", "converged"])
            w.writerows(rows)
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def cmd_scaling_study(args) -> int:
    cfg = config_from_args(args)
    ok = True
    first = True
    for q in _ints(args.qs):
        res = solve_problem(build_problem(dataclasses.replace(cfg, q=q, r=q)),
                            cfg.workers if cfg.workers is not None else q)
        ok &= res.report.converged
        print(_summary(res))
        if cfg.out:
            write_artifacts(res, cfg.out, append=not first)
        first = False
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def cmd_oracle_check(args) -> int:
    cfg = config_from_args(args)
    problem = build_problem(cfg)
    try:
        reference = direct_solve(problem)
    except OracleTooLarge as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    result = solve_problem(problem)
    if cfg.out:
        write_artifacts(result, cfg.out)
    print(_summary(result))
    print(f"relative_error={relative_error(result.solution, reference):.3e}")
    return EXIT_OK if result.report.converged else EXIT_NOT_CONVERGED


def cmd_gen_model(args) -> int:
    grid = Grid2D.unit_square(args.n, 1)
    model = generate_model(args.model, {"seed": args.seed, "contrast": args.contrast}, grid)
    write_model(args.path, model.values, grid.h)
    print(f"wrote {args.model} model {model.values.shape[1]}x{model.values.shape[0]} "
          f"(m in [{np.min(model.values):.4g}, {np.max(model.values):.4g}]) to {args.path}")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "pml-study": cmd_pml_study,
    "scaling-study": cmd_scaling_study,
    "oracle-check": cmd_oracle_check,
    "gen-model": cmd_gen_model,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError, FormatError) as exc:
        print(f"lsweeps: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
