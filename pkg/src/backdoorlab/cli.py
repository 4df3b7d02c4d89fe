"""Command-line entry point.

Exit codes: 0 on success, 2 on a configuration error, 3 when an operation is
called outside its domain.  ``BACKDOORLAB_OUT`` and ``BACKDOORLAB_SEED``
supply defaults for ``--out`` and ``--seed``.
"""

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from ._version import __version__
from .diagnostics import DIAGNOSTIC_HEADER, diagnostic_rows, relative_change
from .distributions import Dataset, sample_clean
from .exceptions import ConfigError, PreconditionError
from .generative import default_generative_spec, evaluate_generative_attack
from .harness import (
    AUDIT_HEADER,
    ExperimentConfig,
    run_bound_audit,
    run_figure4,
    run_sweep,
    write_json,
    write_sweep,
    write_table,
)
from .learners import default_bandwidth_grid, fit_kernel_smoother
from .poisoning import Trigger, poison_dataset, read_xyz_csv
from .risk import BASELINE, REFERENCES, RiskReport, run_replication
from .seeding import derive_seed

EXIT_CONFIG = 2
EXIT_PRECONDITION = 3


def _global_flags(default=None):
    # Subcommands suppress defaults so flags given before the subcommand survive.
    p = argparse.ArgumentParser(add_help=False, argument_default=default)
    p.add_argument("--config", metavar="PATH", help="experiment configuration (JSON)")
    p.add_argument("--seed", type=int, metavar="U64", help="master seed")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--format", choices=("csv", "json"), help="table format (default csv)")
    return p


def build_parser():
    common = _global_flags(argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="backdoorlab", parents=[_global_flags()])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text)

    p = add("poison", "sample clean data and poison it with one trigger cell")
    p.add_argument("--cell", type=int, default=0)
    p = add("fit", "fit a kernel smoother to a CSV of x_1..x_p,y[,z]")
    p.add_argument("--input", required=True)
    p.add_argument("--bandwidth", type=float, default=None)
    p = add("risk", "one replication of clean, backdoor and poisoned risks for one cell")
    p.add_argument("--cell", type=int, default=0)
    p.add_argument("--rep", type=int, default=0)
    p = add("bounds", "empirical risks joined with the risk bounds, per cell")
    p.add_argument("--jobs", type=int, default=1)
    p = add("sweep", "aggregate risks over a trigger grid")
    p.add_argument("--jobs", type=int, default=1)
    p = add("figure4", "the benchmark 3 x 5 trigger sweep")
    p.add_argument("--jobs", type=int, default=1)
    p = add("diagnose", "per-dimension relative change of a trigger")
    p.add_argument("--input", help="clean CSV (x_1..x_p, y)")
    p.add_argument("--trigger", help="comma-separated trigger vector")
    p.add_argument("--backdoored", help="CSV of backdoored inputs")
    p.add_argument("--cell", type=int, default=0)
    p = add("generative-demo", "conditional-table backdoor on a degenerate input direction")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--rho", type=float, default=0.2)
    p.add_argument("--target", type=int, default=7)
    return parser


def _resolve(args):
    out = args.out or os.environ.get("BACKDOORLAB_OUT") or "out"
    seed = args.seed
    if seed is None and os.environ.get("BACKDOORLAB_SEED"):
        try:
            seed = int(os.environ["BACKDOORLAB_SEED"])
        except ValueError as exc:
            raise ConfigError("must be an integer", "BACKDOORLAB_SEED") from exc
    if seed is not None and not 0 <= seed < 2**64:
        raise ConfigError("seed must fit in 64 unsigned bits", "seed")
    return Path(out), seed, args.format or "csv"


def _config(args, seed, required=True):
    if not args.config:
        if required:
            raise ConfigError("this command needs --config", "config")
        return None
    try:
        cfg = ExperimentConfig.from_json(args.config)
    except FileNotFoundError as exc:
        raise ConfigError("file not found", args.config) from exc
    return cfg.with_seed(seed) if seed is not None else cfg


def _cell(cfg, index):
    cells = cfg.cells()
    if not 0 <= index < len(cells):
        raise ConfigError(f"cell index out of range (0..{len(cells) - 1})", "cell")
    return cells[index]


def _ext(fmt):
    return "json" if fmt == "json" else "csv"


def cmd_poison(args, out, seed, fmt):
    cfg = _config(args, seed)
    cell = _cell(cfg, args.cell)
    s = cfg.master_seed
    clean = sample_clean(cfg.distribution, cfg.n, derive_seed(s, "clean-train", 0))
    poisoned = poison_dataset(clean, cfg.rho, cell.trigger, derive_seed(s, "poison", 0, cell.index))
    path = out / f"poisoned.{_ext(fmt)}"
    p = cfg.distribution.p
    header = [f"x_{j + 1}" for j in range(p)] + ["y", "z"]
    rows = [list(map(float, x)) + [int(y), int(z)]
            for x, y, z in zip(poisoned.X, poisoned.y, poisoned.z)]
    write_table(path, header, rows, fmt)
    return [path]


def cmd_fit(args, out, seed, fmt):
    X, y, _ = read_xyz_csv(args.input)
    s = 0 if seed is None else seed
    model = fit_kernel_smoother(Dataset(X, y), bandwidth=args.bandwidth, seed=s)
    summary = model.summary()
    summary["selection"] = "fixed" if args.bandwidth is not None else "5-fold CV, squared error"
    if args.bandwidth is None:
        summary["grid"] = default_bandwidth_grid(X, seed=s).tolist()
    summary["tool_version"] = __version__
    path = out / "fit.json"
    write_json(path, summary)
    return [path]


def cmd_risk(args, out, seed, fmt):
    cfg = _config(args, seed)
    cell = _cell(cfg, args.cell)
    exp = cfg.experiment(cell, cfg.references + (BASELINE,))
    res = run_replication(exp, args.rep, cfg.master_seed, cell.index)
    header = ("norm", "angle_deg") + RiskReport.CSV_HEADER + ("config_hash",)
    rows = []
    for ref in REFERENCES + (BASELINE,):
        for loss in cfg.losses:
            r = res.reports.get((ref, loss.label))
            if r is not None:
                rows.append([cell.norm, cell.angle_deg] + r.row() + [cfg.config_hash])
    path = out / f"risk.{_ext(fmt)}"
    write_table(path, header, rows, fmt)
    return [path]


def cmd_bounds(args, out, seed, fmt):
    cfg = _config(args, seed)
    rows = run_bound_audit(cfg, n_jobs=args.jobs)
    path = out / f"bounds.{_ext(fmt)}"
    write_table(path, AUDIT_HEADER, [r.row() for r in rows], fmt)
    return [path]


def cmd_sweep(args, out, seed, fmt):
    cfg = _config(args, seed)
    return write_sweep(run_sweep(cfg, n_jobs=args.jobs), out, "sweep", fmt, plot=True)


def cmd_figure4(args, out, seed, fmt):
    cfg = _config(args, seed, required=False)
    s = seed if seed is not None else (cfg.master_seed if cfg else 0)
    return write_sweep(run_figure4(s, n_jobs=args.jobs), out, "figure4", fmt, plot=True)


def _parse_vector(text):
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise ConfigError("expected comma-separated numbers", "trigger") from exc


def cmd_diagnose(args, out, seed, fmt):
    cfg = _config(args, seed, required=False)
    if args.input:
        X, _, _ = read_xyz_csv(args.input)
    elif cfg is not None:
        X = sample_clean(cfg.distribution, cfg.n, derive_seed(cfg.master_seed, "clean-train", 0)).X
    else:
        raise ConfigError("give --input or --config", "input")
    if args.backdoored:
        B, _, _ = read_xyz_csv(args.backdoored)
        diags = relative_change(X, backdoored=B)
    elif args.trigger:
        diags = relative_change(X, trigger=Trigger(_parse_vector(args.trigger)))
    elif cfg is not None:
        diags = relative_change(X, trigger=_cell(cfg, args.cell).trigger)
    else:
        raise ConfigError("give --trigger, --backdoored or --config", "trigger")
    path = out / f"diagnostics.{_ext(fmt)}"
    write_table(path, DIAGNOSTIC_HEADER, diagnostic_rows(diags), fmt)
    return [path]


def cmd_generative_demo(args, out, seed, fmt):
    spec = default_generative_spec()
    if not 0 <= args.target < spec.q:
        raise PreconditionError(f"target symbol must lie in 0..{spec.q - 1}")
    target = np.zeros(spec.q)
    target[args.target] = 1.0
    s = 0 if seed is None else seed
    res = evaluate_generative_attack(spec, args.rho, np.array([0.0, 1.0]), target, args.n,
                                     seed=derive_seed(s, "generative", 0))
    paths = [out / f"generative.{_ext(fmt)}", out / "generative_table.json",
             out / "generative_manifest.json"]
    header = ("key", "count", "tv_gap", "band")
    rows = [[" ".join(map(str, g["key"])), g["count"], g["tv_gap"], g["band"]]
            for g in res["per_key"]]
    write_table(paths[0], header, rows, fmt)
    res["table"].to_json(paths[1])
    write_json(paths[2], {
        "tool_version": __version__, "seed": s, "n": args.n, "rho": args.rho,
        "trigger": [0.0, 1.0], "target_symbol": args.target,
        "risk_clean_inputs": res["risk_clean_inputs"],
        "risk_triggered_inputs": res["risk_triggered_inputs"],
        "loss": "power(2)", "reference_measure": "uniform",
        "learner": "empirical conditional frequency table (stand-in for a trained "
                   "generative model), quantization step 0.5",
    })
    return paths


COMMANDS = {
    "poison": cmd_poison, "fit": cmd_fit, "risk": cmd_risk, "bounds": cmd_bounds,
    "sweep": cmd_sweep, "figure4": cmd_figure4, "diagnose": cmd_diagnose,
    "generative-demo": cmd_generative_demo,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        out, seed, fmt = _resolve(args)
        out.mkdir(parents=True, exist_ok=True)
        for path in COMMANDS[args.command](args, out, seed, fmt):
            print(path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PreconditionError as exc:
        print(f"precondition violated: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    return 0


if __name__ == "__main__":
    sys.exit(main())
