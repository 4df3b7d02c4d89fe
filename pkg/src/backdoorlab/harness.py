"""Experiment configuration, sweeps, bound audits and CSV persistence.

A sweep is the Cartesian product of a trigger grid with a list of losses.
Every (cell, replication) pair is an independent task whose random draws are
seeded from ``(master_seed, purpose, replication, cell)``, so results are
identical whether tasks run serially or in worker processes.  Output files
carry the config hash and tool version and contain no timestamps; identical
inputs give identical bytes.
"""

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._version import __version__
from .distributions import GaussianClassPair, benchmark_model
from .exceptions import ConfigError, PreconditionError
from .poisoning import Trigger, make_trigger
from .risk import (
    BASELINE,
    REFERENCES,
    Experiment,
    LearnerConfig,
    LossSpec,
    aggregate,
    run_replication,
)
from .seeding import derive_seed
from .theory import (
    BoundInputs,
    bound_report,
    check_norm_condition,
    default_lower_constants,
    lemma1_audit,
    theorem1_upper,
)

CONFIG_KEYS = {"distribution", "n", "rho", "trigger", "learner", "losses", "references",
               "n_test", "reps", "master_seed", "kappa", "zero_one_target"}
REQUIRED_KEYS = {"distribution", "n", "rho", "trigger"}

FIGURE4_NORMS = (1.0, 3.0, 5.0)
FIGURE4_ANGLES = (0.0, 45.0, 90.0, 135.0, 180.0)


# --------------------------------------------------------------------------
# configuration

def _number(value, path, kind=float, low=None, high=None, low_open=False, high_open=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", path)
    if kind is int and not float(value).is_integer():
        raise ConfigError(f"expected an integer, got {value!r}", path)
    v = kind(value)
    if not math.isfinite(v):
        raise ConfigError("must be finite", path)
    if low is not None and (v <= low if low_open else v < low):
        raise ConfigError(f"must be {'>' if low_open else '>='} {low}, got {v}", path)
    if high is not None and (v >= high if high_open else v > high):
        raise ConfigError(f"must be {'<' if high_open else '<='} {high}, got {v}", path)
    return v


def _nonempty_list(value, path):
    if not isinstance(value, list) or not value:
        raise ConfigError("expected a nonempty list", path)
    return value


def _check_keys(doc, allowed, path, required=()):
    if not isinstance(doc, dict):
        raise ConfigError("expected a JSON object", path)
    prefix = f"{path}." if path else ""
    for k in doc:
        if k not in allowed:
            raise ConfigError("unknown key", f"{prefix}{k}")
    for k in required:
        if k not in doc:
            raise ConfigError("missing required key", f"{prefix}{k}")


@dataclass(frozen=True)
class TriggerCell:
    index: int
    norm: float
    angle_deg: float
    trigger: Trigger


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """A validated sweep configuration.

    ``trigger_grid`` holds either ``{"norms": [...], "angles_deg": [...]}`` or
    ``{"vectors": [[...], ...]}``.  Cells are enumerated norm-major for the
    former and in list order for the latter.
    """

    distribution: GaussianClassPair
    n: int
    rho: float
    trigger_grid: dict
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    losses: tuple = (LossSpec.zero_one(),)
    references: tuple = REFERENCES
    n_test: int = 1000
    reps: int = 20
    master_seed: int = 0
    kappa: float = 1.5
    zero_one_target: str = "label"

    @classmethod
    def from_dict(cls, doc):
        _check_keys(doc, CONFIG_KEYS, "", REQUIRED_KEYS)
        dist = doc["distribution"]
        if dist == "benchmark":
            model = benchmark_model()
        else:
            try:
                model = GaussianClassPair.from_dict(dist)
            except ConfigError as exc:
                raise ConfigError(str(exc), "distribution") from exc
        n = _number(doc["n"], "n", int, low=2)
        rho = _number(doc["rho"], "rho", low=0.0, high=1.0, low_open=True, high_open=True)
        grid = cls._parse_trigger(doc["trigger"], model)
        learner = cls._parse_learner(doc.get("learner", {}))
        losses = tuple(cls._parse_loss(v, f"losses[{i}]")
                       for i, v in enumerate(_nonempty_list(doc.get("losses", ["zero-one"]),
                                                            "losses")))
        if len({l.label for l in losses}) != len(losses):
            raise ConfigError("duplicate loss", "losses")
        refs = _nonempty_list(doc.get("references", list(REFERENCES)), "references")
        for i, r in enumerate(refs):
            if r not in REFERENCES:
                raise ConfigError(f"unknown reference {r!r}", f"references[{i}]")
        if len(set(refs)) != len(refs):
            raise ConfigError("duplicate reference", "references")
        target = doc.get("zero_one_target", "label")
        if target not in ("label", "bayes"):
            raise ConfigError("must be 'label' or 'bayes'", "zero_one_target")
        return cls(
            distribution=model, n=n, rho=rho, trigger_grid=grid, learner=learner,
            losses=losses, references=tuple(r for r in REFERENCES if r in refs),
            n_test=_number(doc.get("n_test", 1000), "n_test", int, low=2),
            reps=_number(doc.get("reps", 20), "reps", int, low=1),
            master_seed=_number(doc.get("master_seed", 0), "master_seed", int, low=0,
                                high=2**64 - 1),
            kappa=_number(doc.get("kappa", 1.5), "kappa", low=1.0),
            zero_one_target=target)

    @staticmethod
    def _parse_trigger(doc, model):
        if isinstance(doc, dict) and "vectors" in doc:
            _check_keys(doc, {"vectors"}, "trigger")
            vecs = _nonempty_list(doc["vectors"], "trigger.vectors")
            out = []
            for i, v in enumerate(vecs):
                path = f"trigger.vectors[{i}]"
                v = _nonempty_list(v, path)
                if len(v) != model.p:
                    raise ConfigError(f"expected {model.p} components", path)
                vals = [_number(x, f"{path}[{j}]") for j, x in enumerate(v)]
                if not any(vals):
                    raise ConfigError("trigger must be nonzero", path)
                out.append(vals)
            return {"vectors": out}
        _check_keys(doc, {"norms", "angles_deg"}, "trigger", ("norms", "angles_deg"))
        norms = [_number(v, f"trigger.norms[{i}]", low=0.0, low_open=True)
                 for i, v in enumerate(_nonempty_list(doc["norms"], "trigger.norms"))]
        angles = [_number(v, f"trigger.angles_deg[{i}]")
                  for i, v in enumerate(_nonempty_list(doc["angles_deg"], "trigger.angles_deg"))]
        if model.p != 2:
            raise ConfigError("norm/angle grids need p = 2; give explicit vectors", "trigger")
        return {"norms": norms, "angles_deg": angles}

    @staticmethod
    def _parse_learner(doc):
        _check_keys(doc, {"kind", "grid", "folds"}, "learner")
        kind = doc.get("kind", "kernel-smoother")
        if kind not in ("kernel-smoother", "knn"):
            raise ConfigError(f"unknown learner {kind!r}", "learner.kind")
        grid = doc.get("grid")
        if grid is not None:
            grid = [_number(g, f"learner.grid[{i}]", low=0.0, low_open=True)
                    for i, g in enumerate(_nonempty_list(grid, "learner.grid"))]
        folds = _number(doc.get("folds", 5), "learner.folds", int, low=2)
        return LearnerConfig(kind, grid, folds)

    @staticmethod
    def _parse_loss(text, path):
        if not isinstance(text, str):
            raise ConfigError("expected a loss name such as 'zero-one' or 'power:1'", path)
        try:
            return LossSpec.parse(text)
        except PreconditionError as exc:
            raise ConfigError(str(exc), path) from exc

    @classmethod
    def from_json(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}", str(path)) from exc
        return cls.from_dict(doc)

    def to_dict(self):
        return {
            "distribution": self.distribution.to_dict(),
            "n": self.n,
            "rho": self.rho,
            "trigger": self.trigger_grid,
            "learner": {"kind": self.learner.kind, "folds": self.learner.folds,
                        "grid": list(self.learner.grid) if self.learner.grid else None},
            "losses": [l.label for l in self.losses],
            "references": list(self.references),
            "n_test": self.n_test,
            "reps": self.reps,
            "master_seed": self.master_seed,
            "kappa": self.kappa,
            "zero_one_target": self.zero_one_target,
        }

    def with_seed(self, seed):
        d = self.to_dict()
        d["master_seed"] = int(seed)
        return ExperimentConfig.from_dict(d)

    @property
    def config_hash(self):
        """SHA-256 of the canonical JSON form (sorted keys, no whitespace)."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def cells(self):
        model = self.distribution
        if "vectors" in self.trigger_grid:
            out = []
            diff = model.mean_difference
            for i, v in enumerate(self.trigger_grid["vectors"]):
                t = Trigger(v)
                cos = float(np.clip(t.cosine_with(diff), -1.0, 1.0))
                out.append(TriggerCell(i, t.norm(), math.degrees(math.acos(cos)), t))
            return out
        return [TriggerCell(i * len(self.trigger_grid["angles_deg"]) + j, s, a,
                            make_trigger(s, a, model))
                for i, s in enumerate(self.trigger_grid["norms"])
                for j, a in enumerate(self.trigger_grid["angles_deg"])]

    def experiment(self, cell, references):
        return Experiment(self.distribution, self.n, self.rho, cell.trigger, self.learner,
                          self.losses, self.n_test, tuple(references), self.zero_one_target)


def figure4_config(master_seed=0):
    """The benchmark grid: 3 norms by 5 angles, 20 replications, zero-one loss."""
    return ExperimentConfig.from_dict({
        "distribution": "benchmark", "n": 100, "rho": 0.2,
        "trigger": {"norms": list(FIGURE4_NORMS), "angles_deg": list(FIGURE4_ANGLES)},
        "losses": ["zero-one"], "references": ["clean", "backdoor"],
        "n_test": 1000, "reps": 20, "master_seed": int(master_seed), "kappa": 1.5})


# --------------------------------------------------------------------------
# execution

def _run_tasks(tasks, master_seed, n_jobs):
    """``tasks`` is a list of ``(experiment, rep, cell)``; results in task order."""
    if n_jobs == 1:
        return [run_replication(e, r, master_seed, c) for e, r, c in tasks]
    exps, reps, cells = zip(*tasks)
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(run_replication, exps, reps, [master_seed] * len(tasks), cells,
                             chunksize=max(1, len(tasks) // (4 * n_jobs))))


@dataclass
class SweepResult:
    config: ExperimentConfig
    rows: list
    cell_aggregates: dict
    baseline: dict
    cell_results: dict
    baseline_results: list

    @property
    def config_hash(self):
        return self.config.config_hash

    def manifest(self):
        return build_manifest(self)


@dataclass(frozen=True)
class SweepRow:
    norm: float
    angle_deg: float
    reference: str
    loss: str
    mean: float
    ci_half_width: float
    reps: int
    baseline_clean_error: float
    success_flag: object
    config_hash: str
    seed: int

    HEADER = ("norm", "angle_deg", "reference", "loss", "mean", "ci_half_width", "reps",
              "baseline_clean_error", "success_flag", "config_hash", "seed", "tool_version")

    def values(self):
        return [self.norm, self.angle_deg, self.reference, self.loss, self.mean,
                self.ci_half_width, self.reps, self.baseline_clean_error, self.success_flag,
                self.config_hash, self.seed, __version__]


def _success(aggs, loss, base, kappa):
    cl, bd = aggs.get(("clean", loss)), aggs.get(("backdoor", loss))
    if cl is None or bd is None:
        return None
    worst = max(cl.mean, bd.mean)
    return bool(worst <= kappa * base) if base > 0 else worst == 0.0


def run_sweep(config, n_jobs=1):
    """Aggregate risks for every trigger cell and loss, plus the clean baseline.

    Rows come out cell by cell in grid order, references in the order
    clean, backdoor, poisoned, losses in config order; the baseline rows
    (one per loss, empty norm and angle) come last.
    """
    cells = config.cells()
    seed = config.master_seed
    tasks = [(config.experiment(c, config.references), r, c.index)
             for c in cells for r in range(config.reps)]
    tasks += [(config.experiment(cells[0], (BASELINE,)), r, -1) for r in range(config.reps)]
    results = _run_tasks(tasks, seed, n_jobs)
    k = config.reps
    cell_results = {c.index: results[i * k:(i + 1) * k] for i, c in enumerate(cells)}
    base_results = results[len(cells) * k:]
    baseline = aggregate(base_results)
    aggs = {idx: aggregate(res) for idx, res in cell_results.items()}
    h = config.config_hash
    rows = []
    for c in cells:
        for ref in config.references:
            for loss in config.losses:
                a = aggs[c.index][(ref, loss.label)]
                base = baseline[(BASELINE, loss.label)].mean
                rows.append(SweepRow(c.norm, c.angle_deg, ref, loss.label, a.mean,
                                     a.ci_half_width, a.reps, base,
                                     _success(aggs[c.index], loss.label, base, config.kappa),
                                     h, seed))
    for loss in config.losses:
        b = baseline[(BASELINE, loss.label)]
        rows.append(SweepRow(None, None, BASELINE, loss.label, b.mean, b.ci_half_width,
                             b.reps, b.mean, None, h, seed))
    return SweepResult(config, rows, aggs, baseline, cell_results, base_results)


def run_figure4(master_seed=0, n_jobs=1):
    """The benchmark sweep: 15 cells with clean and backdoor zero-one risk,
    plus one baseline row."""
    return run_sweep(figure4_config(master_seed), n_jobs=n_jobs)


PLOT_HEADER = ("norm", "angle_deg", "reference", "loss", "mean", "ci_low", "ci_high",
               "config_hash", "tool_version")


def plot_rows(result):
    """One row per plotted point (cell mean with its 95% interval)."""
    return [[r.norm, r.angle_deg, r.reference, r.loss, r.mean, r.mean - r.ci_half_width,
             r.mean + r.ci_half_width, r.config_hash, __version__] for r in result.rows]


def build_manifest(result):
    cfg = result.config
    fits = {}
    for c in cfg.cells():
        fits[str(c.index)] = [r.summaries.get("poisoned") for r in result.cell_results[c.index]]
    return {
        "tool_version": __version__,
        "config_hash": cfg.config_hash,
        "config": cfg.to_dict(),
        "learner": cfg.learner.describe(),
        "seeding": "SeedSequence over (master_seed, crc32(purpose), replication, cell)",
        "ci": "normal 95% interval over replications, 1.96 * sd / sqrt(reps)",
        "cells": [{"index": c.index, "norm": c.norm, "angle_deg": c.angle_deg,
                   "eta": c.trigger.eta.tolist()} for c in cfg.cells()],
        "poisoned_fits": fits,
        "clean_fits": [r.summaries.get("clean") for r in result.baseline_results],
    }


# --------------------------------------------------------------------------
# bound audit

AUDIT_HEADER = (
    "norm", "angle_deg", "norm_condition", "r_cl", "r_bd", "r_poi", "se_cl", "se_bd",
    "se_poi", "h_max", "g1", "ub_cl", "ub_bd", "lb_cl", "lb_bd",
    "upper_cl_holds", "upper_bd_holds", "upper_cl_holds_all_reps",
    "upper_bd_holds_all_reps", "lower_cl_holds", "lower_bd_holds",
    "lemma1_class0_holds", "lemma1_class1_holds", "lemma1_two_sided_condition",
    "config_hash", "seed", "tool_version")
FLAG_COLUMNS = AUDIT_HEADER[15:23]

NA = "n/a"


@dataclass
class AuditRow:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def row(self):
        return [self.values.get(k) for k in AUDIT_HEADER[:-1]] + [__version__]


def _upper_flag(emp, se_emp, r_poi, se_poi, rho, h_max, which):
    """Empirical risk against the upper bound built from the same fit's
    poisoned risk, with the Monte-Carlo error of both terms combined."""
    ub = theorem1_upper(BoundInputs(r_poi=r_poi, rho=rho, h_max=h_max))
    ub = ub[0] if which == "cl" else ub[1]
    scale = 1.0 - rho if which == "cl" else rho
    se = math.hypot(se_emp, se_poi / scale)
    return emp <= ub + 3.0 * se


def run_bound_audit(config, n_jobs=1, c_radius=1.0, lemma_n_mc=1_000_000):
    """Join empirical power(1) risks with both risk bounds and the slab
    lemma, cell by cell.

    Upper-bound flags compare ``r_hat <= ub + 3 sigma`` where ``ub`` is
    recomputed from the matching poisoned-risk estimate and ``sigma`` combines
    both Monte-Carlo errors; ``*_all_reps`` repeats that check for every
    replication.  Lower-bound flags are ``lb - 3 sigma <= r_hat``.  Cells that
    fail the norm condition get ``n/a`` for every flag, as do lower bounds
    when ``||eta|| <= 2 c``.
    """
    loss = LossSpec.power(1)
    if loss.label not in [l.label for l in config.losses]:
        raise ConfigError("the bound audit needs the power:1 loss", "losses")
    d = config.to_dict()
    d["references"] = list(REFERENCES)
    d["losses"] = [loss.label]
    cfg = ExperimentConfig.from_dict(d)
    cells = cfg.cells()
    tasks = [(cfg.experiment(c, REFERENCES), r, c.index) for c in cells for r in range(cfg.reps)]
    results = _run_tasks(tasks, cfg.master_seed, n_jobs)
    C1, C2 = default_lower_constants(cfg.distribution, beta=1.0, c_radius=c_radius)
    key = loss.label
    rows = []
    for i, c in enumerate(cells):
        res = results[i * cfg.reps:(i + 1) * cfg.reps]
        agg = aggregate(res)
        cl, bd, poi = agg[("clean", key)], agg[("backdoor", key)], agg[("poisoned", key)]
        ok = check_norm_condition(c.trigger, cfg.distribution)
        rep = bound_report(cfg.distribution, c.trigger, poi.mean, cfg.rho, loss, C1=C1, C2=C2,
                           c_radius=c_radius)
        v = {"norm": c.norm, "angle_deg": c.angle_deg, "norm_condition": ok,
             "r_cl": cl.mean, "r_bd": bd.mean, "r_poi": poi.mean,
             "se_cl": cl.mc_stderr, "se_bd": bd.mc_stderr, "se_poi": poi.mc_stderr,
             "h_max": rep.inputs.h_max, "g1": rep.inputs.g1,
             "ub_cl": rep.ub_cl, "ub_bd": rep.ub_bd, "lb_cl": rep.lb_cl, "lb_bd": rep.lb_bd,
             "lemma1_two_sided_condition":
                 abs(float(c.trigger.eta @ cfg.distribution.mean_difference)) <= 0.25 * c.norm ** 2,
             "config_hash": cfg.config_hash, "seed": cfg.master_seed}
        if not ok:
            for k in FLAG_COLUMNS:
                v[k] = NA
            rows.append(AuditRow(v))
            continue
        h = rep.inputs.h_max
        for which, ref, a in (("cl", "clean", cl), ("bd", "backdoor", bd)):
            v[f"upper_{which}_holds"] = _upper_flag(a.mean, a.mc_stderr, poi.mean,
                                                    poi.mc_stderr, cfg.rho, h, which)
            per_rep = []
            for r in res:
                e, p = r.reports[(ref, key)], r.reports[("poisoned", key)]
                per_rep.append(_upper_flag(e.estimate, e.stderr, p.estimate, p.stderr,
                                           cfg.rho, h, which))
            v[f"upper_{which}_holds_all_reps"] = all(per_rep)
            lb = rep.lb_cl if which == "cl" else rep.lb_bd
            if math.isnan(lb):
                v[f"lower_{which}_holds"] = NA
            else:
                se = math.hypot(a.mc_stderr, C2 * poi.mc_stderr)
                v[f"lower_{which}_holds"] = lb - 3.0 * se <= a.mean
        for cls in (0, 1):
            audit = lemma1_audit(cfg.distribution, cls, c.trigger, n_mc=lemma_n_mc,
                                 seed=derive_seed(cfg.master_seed, "lemma1", c.index, cls))
            v[f"lemma1_class{cls}_holds"] = audit["holds"]
        rows.append(AuditRow(v))
    return rows


# --------------------------------------------------------------------------
# persistence

def format_value(v):
    """Shortest round-trip text for floats, lowercase booleans, empty for None."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])


def _json_safe(v):
    if isinstance(v, dict):
        return {str(k): _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.ndarray):
        return _json_safe(v.tolist())
    return v


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_json_safe(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_table(path, header, rows, fmt="csv"):
    """CSV with a header, or a JSON list of objects keyed by the header."""
    if fmt == "json":
        write_json(path, [dict(zip(header, r)) for r in rows])
    elif fmt == "csv":
        write_csv(path, header, rows)
    else:
        raise ConfigError(f"unknown output format {fmt!r}", "format")


def write_sweep(result, out_dir, stem="sweep", fmt="csv", plot=False):
    """Write the sweep table, its manifest and optionally the plot data.
    Returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = "json" if fmt == "json" else "csv"
    paths = [out / f"{stem}.{ext}"]
    write_table(paths[0], SweepRow.HEADER, [r.values() for r in result.rows], fmt)
    if plot:
        paths.append(out / f"{stem}_plot.{ext}")
        write_table(paths[-1], PLOT_HEADER, plot_rows(result), fmt)
    paths.append(out / f"{stem}_manifest.json")
    write_json(paths[-1], result.manifest())
    return paths
