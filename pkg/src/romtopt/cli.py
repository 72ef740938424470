"""Command-line interface.

Verbs:

* ``run``        one problem/method pair, writing run.csv, report.json and
                 final density snapshots into the output directory;
* ``bench``      the full problem x method matrix;
* ``reference``  build (and cache) the long full-order reference run;
* ``table``      assemble a convergence table from saved run directories;
* ``export``     convert a saved density CSV to PGM or VTK.

Every configuration key can be set in a flat ``key = value`` file passed
with ``--config`` and overridden by individual flags.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .problems import builtin_names, builtin_problem
from .report import ReferenceCache, RunReport, export_density, load_density_csv, report_table
from .runner import METHODS, RunConfig, build_reference, run

CONFIG_FLAGS = {
    "tau": float,
    "nu_cost": float,
    "n_max": int,
    "window": int,
    "max_iters": int,
    "max_inner": int,
    "reference_iters": int,
    "seed": int,
    "stop_eps": float,
    "snapshot_every": int,
}


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key=value config file")
    p.add_argument("--eps", type=float, nargs="+", help="cutoff tolerances")
    for name, typ in CONFIG_FLAGS.items():
        p.add_argument(f"--{name.replace('_', '-')}", type=typ, dest=name)


def _build_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {}
    for name in CONFIG_FLAGS:
        val = getattr(args, name, None)
        if val is not None:
            overrides[name] = val
    if getattr(args, "eps", None):
        overrides["eps"] = tuple(args.eps)
    return cfg.with_overrides(overrides)


def _cache(args) -> ReferenceCache:
    return ReferenceCache(args.ref_dir)


def cmd_run(args) -> int:
    cfg = _build_config(args)
    report = run(
        args.problem,
        args.method,
        config=cfg,
        reference_cache=_cache(args),
        allow_reference_run=not args.no_reference_run,
    )
    out = Path(args.out)
    report.save(out)
    print(f"{args.problem}/{args.method}: J = {report.final_objective:.6g} "
          f"(J* = {report.j_star:.6g}), {report.n_hdm} HDM / {report.n_rom} ROM solves")
    for eps in cfg.eps:
        c = report.cutoff(eps)
        if c.reached:
            print(f"  eps={eps:g}: iteration {c.iteration}, "
                  f"{c.n_hdm} HDM + {c.n_rom} ROM, cost {c.c_eps:.4g}")
        else:
            print(f"  eps={eps:g}: not reached")
    print(f"wrote {out / 'run.csv'}")
    return 0


def cmd_bench(args) -> int:
    cfg = _build_config(args)
    cache = _cache(args)
    reports = []
    for problem in args.problems:
        for method in args.methods:
            rep = run(problem, method, config=cfg, reference_cache=cache,
                      allow_reference_run=not args.no_reference_run)
            rep.save(Path(args.out) / f"{problem}_{method}")
            reports.append(rep)
            print(f"done {problem}/{method}: J = {rep.final_objective:.6g}")
    text, csv_text = report_table(reports, list(cfg.eps), nu=cfg.nu_cost)
    (Path(args.out) / "table.csv").write_text(csv_text)
    print(text, end="")
    return 0


def cmd_reference(args) -> int:
    cfg = _build_config(args)
    spec = builtin_problem(args.problem)
    data = build_reference(spec, cfg, cache=_cache(args))
    print(f"{args.problem}: J* = {data['j_star']:.8g} "
          f"({len(data['j_history']) - 1} iterations)")
    return 0


def cmd_table(args) -> int:
    cfg = _build_config(args)
    reports = []
    for run_dir in args.runs:
        meta = json.loads((Path(run_dir) / "report.json").read_text())
        rows = []
        from .report import IterationRow

        for line in (Path(run_dir) / "run.csv").read_text().splitlines()[1:]:
            toks = line.split(",")
            rows.append(
                IterationRow(
                    k=int(toks[0]), j=float(toks[1]), delta=float(toks[2]),
                    rho_ratio=float(toks[3]), accepted=int(toks[4]),
                    theta=float(toks[5]), n_hdm=int(toks[6]), n_rom=int(toks[7]),
                )
            )
        reports.append(
            RunReport(
                problem=meta["problem"], method=meta["method"], rows=rows,
                config=meta["config"], j_star=meta["j_star"],
            )
        )
    text, csv_text = report_table(reports, list(cfg.eps), nu=cfg.nu_cost)
    if args.out:
        Path(args.out).write_text(csv_text)
    print(text, end="")
    return 0


def cmd_export(args) -> int:
    rho = load_density_csv(args.density)
    export_density(rho, args.nx, args.ny, args.out, args.format)
    print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="romtopt",
        description="reduced-model-accelerated 2D compliance topology optimization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one problem/method pair")
    p_run.add_argument("--problem", required=True, choices=builtin_names())
    p_run.add_argument("--method", required=True, choices=METHODS)
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--ref-dir", default="refs", help="reference cache directory")
    p_run.add_argument("--no-reference-run", action="store_true",
                       help="fail instead of computing a missing reference")
    _add_config_args(p_run)
    p_run.set_defaults(func=cmd_run)

    p_bench = sub.add_parser("bench", help="run the problem x method matrix")
    p_bench.add_argument("--problems", nargs="+", default=list(builtin_names()[:3]),
                         choices=builtin_names())
    p_bench.add_argument("--methods", nargs="+", default=list(METHODS),
                         choices=METHODS)
    p_bench.add_argument("--out", default="bench_out")
    p_bench.add_argument("--ref-dir", default="refs")
    p_bench.add_argument("--no-reference-run", action="store_true")
    _add_config_args(p_bench)
    p_bench.set_defaults(func=cmd_bench)

    p_ref = sub.add_parser("reference", help="build and cache the reference run")
    p_ref.add_argument("--problem", required=True, choices=builtin_names())
    p_ref.add_argument("--ref-dir", default="refs")
    _add_config_args(p_ref)
    p_ref.set_defaults(func=cmd_reference)

    p_table = sub.add_parser("table", help="tabulate saved runs")
    p_table.add_argument("runs", nargs="+", help="run output directories")
    p_table.add_argument("--out", help="write table CSV here")
    _add_config_args(p_table)
    p_table.set_defaults(func=cmd_table)

    p_exp = sub.add_parser("export", help="convert a density CSV")
    p_exp.add_argument("density", help="density CSV written by a run")
    p_exp.add_argument("out", help="output file")
    p_exp.add_argument("--format", default="pgm", choices=("pgm", "vtk", "csv"))
    p_exp.add_argument("--nx", type=int, required=True)
    p_exp.add_argument("--ny", type=int, required=True)
    p_exp.set_defaults(func=cmd_export)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
