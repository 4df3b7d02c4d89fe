"""Monte-Carlo estimates of clean, backdoor and poisoned risks.

Power losses ``|a - b|**gamma`` compare predicted probabilities with the
reference regression function (clean posterior, the constant 0 for backdoor
inputs, or the poisoned posterior).  The zero-one loss compares the induced
classifier with labels: by default the sampled test labels (the ordinary test
error), optionally the Bayes label of the reference regression function.
"""

import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .distributions import clean_regression_fn, sample_clean
from .exceptions import PreconditionError
from .learners import KernelSmoother, KNNProbability
from .poisoning import (
    TARGET_LABEL,
    poison_dataset,
    poisoned_regression_fn,
    sample_backdoor_inputs,
    sample_poisoned,
)
from .seeding import derive_seed, make_rng

REFERENCES = ("clean", "backdoor", "poisoned")
BASELINE = "baseline"
Z95 = 1.96


@dataclass(frozen=True)
class LossSpec:
    """``kind`` is ``"power"`` (with exponent ``gamma``) or ``"zero-one"``."""

    kind: str
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("power", "zero-one"):
            raise PreconditionError(f"unknown loss kind {self.kind!r}")
        if self.kind == "power" and not self.gamma > 0:
            raise PreconditionError("power loss exponent must be positive")

    @classmethod
    def power(cls, gamma):
        return cls("power", float(gamma))

    @classmethod
    def zero_one(cls):
        return cls("zero-one", 1.0)

    @classmethod
    def parse(cls, text):
        """Parse ``"zero-one"``, ``"power(2)"`` or ``"power:2"``."""
        text = str(text).strip()
        if text == "zero-one":
            return cls.zero_one()
        m = re.fullmatch(r"power[(:]\s*([0-9.eE+-]+)\s*\)?", text)
        if not m:
            raise PreconditionError(f"cannot parse loss {text!r}")
        return cls.power(float(m.group(1)))

    @property
    def alpha(self):
        return min(self.gamma, 1.0) if self.kind == "power" else None

    @property
    def beta(self):
        return max(self.gamma, 1.0) if self.kind == "power" else None

    @property
    def C(self):
        return 1.0

    @property
    def C_beta(self):
        return 1.0

    @property
    def label(self):
        if self.kind == "zero-one":
            return "zero-one"
        g = self.gamma
        return f"power({int(g) if float(g).is_integer() else g})"

    def __str__(self):
        return self.label


def loss_value(spec, a, b):
    """Elementwise loss between predictions ``a`` and targets ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if spec.kind == "zero-one":
        if not (np.all(np.isin(a, (0, 1))) and np.all(np.isin(b, (0, 1)))):
            raise PreconditionError("zero-one loss takes labels in {0, 1}")
        out = (a != b).astype(float)
    else:
        if np.any((a < 0) | (a > 1) | (b < 0) | (b > 1)):
            raise PreconditionError("power losses take arguments in [0, 1]")
        out = np.abs(a - b) ** spec.gamma
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RiskReport:
    reference: str
    estimate: float
    stderr: float
    n_test: int
    loss: LossSpec
    seed: int = 0

    CSV_HEADER = ("reference", "loss", "estimate", "stderr", "n_test", "seed")

    def row(self):
        return [self.reference, self.loss.label, self.estimate, self.stderr,
                self.n_test, self.seed]


def _test_sample(clean_model, rho, trigger, reference, n_test, seed):
    """Test inputs and their sampled labels for one reference distribution."""
    if reference == "clean":
        ds = sample_clean(clean_model, n_test, seed)
        return ds.X, ds.y
    if reference == "backdoor":
        X = sample_backdoor_inputs(clean_model, trigger, n_test, seed)
        return X, np.full(n_test, TARGET_LABEL)
    if reference == "poisoned":
        pd = sample_poisoned(clean_model, rho, trigger, n_test, seed)
        return pd.X, pd.y
    raise PreconditionError(f"unknown reference {reference!r}")


def _reference_fn(clean_model, rho, trigger, reference, X):
    if reference == "clean":
        return clean_regression_fn(clean_model, X)
    if reference == "backdoor":
        return np.zeros(X.shape[0])
    return poisoned_regression_fn(clean_model, rho, trigger, X)


def _mean_se(values):
    values = np.asarray(values, dtype=float)
    n = values.size
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(np.mean(values)), se


def risk_reports(model_fit, clean_model, rho, trigger, reference, losses, n_test=1000,
                 seed=None, target="label"):
    """One test draw, several losses.  See :func:`estimate_risk`."""
    n_test = int(n_test)
    if n_test < 1:
        raise PreconditionError("n_test must be at least 1")
    if target not in ("label", "bayes"):
        raise PreconditionError("zero-one target must be 'label' or 'bayes'")
    seed = int(seed) if seed is not None else int(make_rng(None).integers(2**63))
    X, labels = _test_sample(clean_model, rho, trigger, reference, n_test, seed)
    prob = np.asarray(model_fit.predict_prob(X), dtype=float)
    ref_vals = None
    out = []
    for loss in losses:
        if loss.kind == "zero-one":
            pred = (prob > 0.5).astype(int)
            if target == "label":
                truth = labels
            else:
                if ref_vals is None:
                    ref_vals = _reference_fn(clean_model, rho, trigger, reference, X)
                truth = (ref_vals > 0.5).astype(int)
            vals = loss_value(loss, pred, truth)
        else:
            if ref_vals is None:
                ref_vals = _reference_fn(clean_model, rho, trigger, reference, X)
            vals = loss_value(loss, prob, ref_vals)
        est, se = _mean_se(vals)
        out.append(RiskReport(reference, est, se, n_test, loss, seed))
    return out


def estimate_risk(model_fit, clean_model, rho, trigger, reference, loss, n_test=1000,
                  seed=None, target="label"):
    """Monte-Carlo risk of a fitted probability model.

    Parameters
    ----------
    model_fit : fitted estimator exposing ``predict_prob``
    clean_model : GaussianClassPair
    rho, trigger : poisoning parameters (used by the backdoor/poisoned references)
    reference : {"clean", "backdoor", "poisoned"}
        Test inputs come from the clean, backdoor or poisoned input law.
    loss : LossSpec
    n_test : int
    seed : int
    target : {"label", "bayes"}
        What the zero-one loss compares against.

    Returns
    -------
    RiskReport
        ``stderr`` is the sample standard deviation of the per-point losses
        divided by ``sqrt(n_test)``.
    """
    return risk_reports(model_fit, clean_model, rho, trigger, reference, [loss],
                        n_test, seed, target)[0]


@dataclass(frozen=True)
class LearnerConfig:
    """Which estimator to fit and how to tune it."""

    kind: str = "kernel-smoother"
    grid: tuple = None
    folds: int = 5

    def __post_init__(self):
        if self.kind not in ("kernel-smoother", "knn"):
            raise PreconditionError(f"unknown learner {self.kind!r}")
        if self.grid is not None:
            object.__setattr__(self, "grid", tuple(float(g) for g in self.grid))

    def build(self, seed):
        if self.kind == "knn":
            return KNNProbability(k_grid=self.grid and [int(g) for g in self.grid],
                                  folds=self.folds, random_state=seed)
        return KernelSmoother(bandwidth_grid=self.grid, folds=self.folds, random_state=seed)

    def describe(self):
        d = {"kind": self.kind, "folds": self.folds,
             "grid": list(self.grid) if self.grid is not None else "default",
             "cv_loss": "held-out squared error", "cv_tie_break": "smaller value; errors within 1e-12 count as tied",
             "fold_seeding": "derived from (master_seed, purpose, replication, cell)"}
        if self.kind == "kernel-smoother" and self.grid is None:
            d["default_grid"] = ("geometric, 16 points, from min(0.05 d, median nearest-neighbor "
                                 "distance) to 4 d, d the median pairwise distance of a "
                                 "256-point subsample")
        return d


@dataclass(frozen=True)
class Experiment:
    model: object
    n: int
    rho: float
    trigger: object
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    losses: tuple = (LossSpec.zero_one(),)
    n_test: int = 1000
    references: tuple = REFERENCES + (BASELINE,)
    zero_one_target: str = "label"


@dataclass
class ReplicationResult:
    rep: int
    reports: dict
    summaries: dict


def run_replication(exp, rep, master_seed, cell=0):
    """Fit clean and poisoned models on one fresh training set and score them.

    Clean training data and test inputs are seeded by ``(master_seed, rep)``
    only, so every sweep cell sees the same clean sample within a replication;
    poison flags and CV folds also depend on ``cell``.
    """
    clean = sample_clean(exp.model, exp.n, derive_seed(master_seed, "clean-train", rep))
    reports = {}
    summaries = {}
    cell_refs = [r for r in exp.references if r in REFERENCES]
    if cell_refs:
        poisoned = poison_dataset(clean, exp.rho, exp.trigger,
                                  derive_seed(master_seed, "poison", rep, cell))
        fit = exp.learner.build(derive_seed(master_seed, "cv-poisoned", rep, cell))
        fit.fit(poisoned.learner_view())
        summaries["poisoned"] = fit.summary()
        for ref in cell_refs:
            seed = derive_seed(master_seed, f"test-{ref}", rep)
            for r in risk_reports(fit, exp.model, exp.rho, exp.trigger, ref, exp.losses,
                                  exp.n_test, seed, exp.zero_one_target):
                reports[(ref, r.loss.label)] = r
    if BASELINE in exp.references:
        base = exp.learner.build(derive_seed(master_seed, "cv-clean", rep))
        base.fit(clean)
        summaries["clean"] = base.summary()
        seed = derive_seed(master_seed, "test-clean", rep)
        for r in risk_reports(base, exp.model, exp.rho, exp.trigger, "clean", exp.losses,
                              exp.n_test, seed, exp.zero_one_target):
            reports[(BASELINE, r.loss.label)] = RiskReport(
                BASELINE, r.estimate, r.stderr, r.n_test, r.loss, r.seed)
    return ReplicationResult(rep, reports, summaries)


@dataclass(frozen=True)
class AggregateRisk:
    """Mean over replications with a normal 95% interval."""

    reference: str
    loss: LossSpec
    mean: float
    sd: float
    ci_half_width: float
    reps: int
    mc_stderr: float
    values: tuple

    @property
    def ci(self):
        return (self.mean - self.ci_half_width, self.mean + self.ci_half_width)


def aggregate(results):
    """Fold replication results in replication-index order."""
    results = sorted(results, key=lambda r: r.rep)
    if not results:
        raise PreconditionError("nothing to aggregate")
    out = {}
    for key in results[0].reports:
        vals = np.array([r.reports[key].estimate for r in results])
        ses = np.array([r.reports[key].stderr for r in results])
        k = vals.size
        sd = float(np.std(vals, ddof=1)) if k > 1 else 0.0
        out[key] = AggregateRisk(
            reference=key[0], loss=results[0].reports[key].loss,
            mean=float(np.mean(vals)), sd=sd,
            ci_half_width=Z95 * sd / math.sqrt(k),
            reps=k, mc_stderr=float(np.sqrt(np.sum(ses ** 2)) / k),
            values=tuple(float(v) for v in vals))
    return out


@dataclass
class ReplicationSummary:
    aggregates: dict
    results: list

    def __getitem__(self, key):
        return self.aggregates[key]


def replicate(exp, reps, master_seed, cell=0, n_jobs=1):
    """Run ``reps`` independent replications and aggregate them.

    With ``n_jobs > 1`` replications run in worker processes; results are
    reduced in replication order, so the output does not depend on ``n_jobs``.
    """
    reps = int(reps)
    if reps < 1:
        raise PreconditionError("need at least one replication")
    if n_jobs == 1:
        results = [run_replication(exp, r, master_seed, cell) for r in range(reps)]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run_replication, [exp] * reps, range(reps),
                                    [master_seed] * reps, [cell] * reps))
    return ReplicationSummary(aggregate(results), results)


def judge_success(r_cl, r_bd, clean_baseline, kappa=1.5):
    """True when both poisoned-model risks are within ``kappa`` times the
    clean model's clean risk."""
    if not clean_baseline > 0:
        raise PreconditionError("clean baseline risk must be positive")
    if kappa < 1:
        raise PreconditionError("kappa must be at least 1")
    return bool(max(r_cl, r_bd) <= kappa * clean_baseline)
