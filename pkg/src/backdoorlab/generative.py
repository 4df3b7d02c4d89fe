"""Backdoors in conditional generative models, at table scale.

Inputs live on a finite set of support points that all share a zero-variance
direction; outputs are symbols from a finite alphabet.  The learner is the
empirical conditional frequency table over quantized inputs.  A trigger along
the degenerate direction moves backdoored inputs into quantization cells that
clean data never occupies, so the clean conditionals are untouched while the
triggered cells learn the target distribution.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import PreconditionError
from .poisoning import Trigger
from .risk import LossSpec, loss_value
from .seeding import make_rng

DEFAULT_STEP = 0.5
PROB_TOL = 1e-9


def _check_prob(v, name="probability vector"):
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size == 0 or np.any(v < 0) or abs(v.sum() - 1.0) > PROB_TOL:
        raise PreconditionError(f"{name} must be nonnegative and sum to 1")
    return v


@dataclass(frozen=True, eq=False)
class GenerativeModelSpec:
    """Clean joint law: input support points, their probabilities, and one
    output distribution per support point (rows of ``conditional``)."""

    support: np.ndarray
    input_probs: np.ndarray
    conditional: np.ndarray

    def __post_init__(self):
        S = np.atleast_2d(np.array(self.support, dtype=float))
        pi = _check_prob(self.input_probs, "input_probs")
        C = np.atleast_2d(np.array(self.conditional, dtype=float))
        if S.shape[0] != pi.size or C.shape[0] != pi.size:
            raise PreconditionError("support, input_probs and conditional disagree in length")
        for row in C:
            _check_prob(row, "conditional row")
        for a in (S, pi, C):
            a.setflags(write=False)
        object.__setattr__(self, "support", S)
        object.__setattr__(self, "input_probs", pi)
        object.__setattr__(self, "conditional", C)

    @property
    def p(self):
        return self.support.shape[1]

    @property
    def q(self):
        return self.conditional.shape[1]

    def sample(self, n, seed=None):
        rng = make_rng(seed)
        idx = rng.choice(self.input_probs.size, size=int(n), p=self.input_probs)
        u = rng.random(int(n))
        cdf = np.cumsum(self.conditional, axis=1)
        y = np.minimum((u[:, None] >= cdf[idx]).sum(axis=1), self.q - 1)
        return GenerativePairs(self.support[idx], y, self.q)


def default_generative_spec(k=10, q=10, peak=0.7):
    """``k`` inputs at ``(j, 0)``; input ``j`` emits symbol ``j mod q`` with
    probability ``peak`` and the rest uniformly.  The second coordinate never
    varies."""
    support = np.column_stack([np.arange(k, dtype=float), np.zeros(k)])
    cond = np.full((k, q), (1.0 - peak) / (q - 1))
    cond[np.arange(k), np.arange(k) % q] = peak
    return GenerativeModelSpec(support, np.full(k, 1.0 / k), cond)


@dataclass(frozen=True, eq=False)
class GenerativePairs:
    """Inputs ``X`` (``(n, p)``) with output symbols ``y`` in ``range(q)``."""

    X: np.ndarray
    y: np.ndarray
    q: int
    flags: np.ndarray = None

    def __post_init__(self):
        X = np.atleast_2d(np.array(self.X, dtype=float))
        y = np.array(self.y, dtype=np.int64).reshape(-1)
        if X.shape[0] != y.size:
            raise PreconditionError("one output per input is required")
        if y.size and (y.min() < 0 or y.max() >= self.q):
            raise PreconditionError("output symbol outside the alphabet")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.y.size

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x_{j + 1}" for j in range(self.X.shape[1])] + ["y"])
            for x, y in zip(self.X, self.y):
                w.writerow([repr(float(v)) for v in x] + [int(y)])

    @classmethod
    def from_csv(cls, path, q):
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        xi = [i for i, h in enumerate(header) if h.startswith("x_")]
        yi = header.index("y")
        X = np.array([[float(r[i]) for i in xi] for r in body]).reshape(len(body), len(xi))
        return cls(X, [int(r[yi]) for r in body], q)


def _along_variance(X, eta):
    u = eta / np.linalg.norm(eta)
    proj = X @ u
    return float(np.var(proj, ddof=1)) if proj.size > 1 else 0.0


def poison_generative(clean, rho, trigger, target_dist, seed=None, flags=None, var_tol=1e-12):
    """Flag each pair with probability ``rho``; flagged pairs get input ``x + eta``
    and an output drawn from ``target_dist``.

    The clean inputs must have zero sample variance along the trigger.
    """
    eta = trigger.eta if isinstance(trigger, Trigger) else np.asarray(trigger, dtype=float)
    if not float(np.linalg.norm(eta)) > 0:
        raise PreconditionError("the trigger must be a nonzero shift along a degenerate direction")
    if eta.size != clean.X.shape[1]:
        raise PreconditionError("trigger dimension does not match the inputs")
    if _along_variance(clean.X, eta) > var_tol:
        raise PreconditionError(
            "the trigger must point along a direction in which clean inputs have zero variance")
    target = _check_prob(target_dist, "target_dist")
    if target.size != clean.q:
        raise PreconditionError("target_dist does not match the output alphabet")
    if not 0.0 <= float(rho) < 1.0 and flags is None:
        raise PreconditionError("rho must lie in [0, 1)")
    rng = make_rng(seed)
    n = len(clean)
    z = rng.random(n) < rho if flags is None else np.asarray(flags, dtype=bool).reshape(-1)
    new_y = rng.choice(clean.q, size=n, p=target)
    X = clean.X + np.where(z[:, None], eta, 0.0)
    y = np.where(z, new_y, clean.y)
    return GenerativePairs(X, y, clean.q, flags=z)


def _key(x, step):
    return tuple(int(v) for v in np.round(np.asarray(x, dtype=float) / step))


@dataclass
class ConditionalTable:
    """Empirical output frequencies per quantized input cell."""

    step: float
    q: int
    probs: dict
    counts: dict
    reference: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.reference is None:
            self.reference = np.full(self.q, 1.0 / self.q)
        self._keys = sorted(self.probs)
        self._key_arr = np.array(self._keys, dtype=float) * self.step

    def key_for(self, x):
        """Quantized key of ``x``; unseen keys map to the nearest seen key
        (ties go to the lexicographically smallest key)."""
        k = _key(x, self.step)
        if k in self.probs:
            return k
        d = np.sum((self._key_arr - np.asarray(k, dtype=float) * self.step) ** 2, axis=1)
        best = np.flatnonzero(d == d.min())
        return min(self._keys[i] for i in best)

    def predict(self, x):
        return self.probs[self.key_for(x)]

    def to_json(self, path=None):
        doc = {"quantization_step": self.step, "alphabet_size": self.q,
               "reference": self.reference.tolist(),
               "cells": [{"key": list(k), "count": int(self.counts[k]),
                          "probs": self.probs[k].tolist()} for k in self._keys]}
        text = json.dumps(doc, indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text


def fit_conditional_table(pairs, quantization_step=DEFAULT_STEP):
    """Count outputs per input cell and normalize."""
    if len(pairs) == 0:
        raise PreconditionError("cannot fit a table on no pairs")
    if not quantization_step > 0:
        raise PreconditionError("quantization step must be positive")
    keys = np.round(pairs.X / quantization_step).astype(np.int64)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    counts = np.zeros((len(uniq), pairs.q))
    np.add.at(counts, (inv, pairs.y), 1.0)
    probs, tot = {}, {}
    for i, k in enumerate(uniq):
        key = tuple(int(v) for v in k)
        tot[key] = int(counts[i].sum())
        probs[key] = counts[i] / counts[i].sum()
    return ConditionalTable(float(quantization_step), pairs.q, probs, tot)


def generative_loss(f, g, reference=None, loss=None):
    """``sum_y loss(f(y), g(y)) * reference(y)``; uniform reference and
    squared loss by default."""
    f = np.asarray(f, dtype=float).reshape(-1)
    g = np.asarray(g, dtype=float).reshape(-1)
    if f.size != g.size:
        raise PreconditionError("alphabet mismatch")
    p = np.full(f.size, 1.0 / f.size) if reference is None else _check_prob(reference, "reference")
    if p.size != f.size:
        raise PreconditionError("reference measure does not match the alphabet")
    loss = loss or LossSpec.power(2)
    return float(np.sum(loss_value(loss, f, g) * p))


def tv_band(probs, count, sigmas=3.0):
    """Half the sum of per-symbol ``sigmas``-sigma multinomial deviations."""
    probs = np.asarray(probs, dtype=float)
    return 0.5 * float(np.sum(sigmas * np.sqrt(probs * (1.0 - probs) / max(count, 1))))


def evaluate_generative_attack(spec, rho, trigger, target_dist, n, seed=None,
                               quantization_step=DEFAULT_STEP, loss=None, reference=None):
    """Fit a table on poisoned pairs and report the two generative risks.

    ``risk_clean_inputs`` averages the loss between the fitted and true clean
    conditionals over the clean input law; ``risk_triggered_inputs`` averages
    the loss between the fitted conditional at ``x + eta`` and the target.
    Also returned: the per-key total-variation gap to the true conditional and
    its 3-sigma multinomial band.
    """
    rng = make_rng(seed)
    clean = spec.sample(n, rng)
    poisoned = poison_generative(clean, rho, trigger, target_dist, seed=rng)
    table = fit_conditional_table(poisoned, quantization_step)
    eta = trigger.eta if isinstance(trigger, Trigger) else np.asarray(trigger, dtype=float)
    target = _check_prob(target_dist)
    loss = loss or LossSpec.power(2)
    r_clean = r_trig = 0.0
    gaps = []
    for x, w, truth in zip(spec.support, spec.input_probs, spec.conditional):
        fitted = table.predict(x)
        r_clean += w * generative_loss(fitted, truth, reference, loss)
        r_trig += w * generative_loss(table.predict(x + eta), target, reference, loss)
        key = table.key_for(x)
        gap = 0.5 * float(np.sum(np.abs(fitted - truth)))
        gaps.append({"key": list(key), "count": table.counts[key], "tv_gap": gap,
                     "band": tv_band(truth, table.counts[key])})
    return {"risk_clean_inputs": float(r_clean), "risk_triggered_inputs": float(r_trig),
            "per_key": gaps, "table": table,
            "n_flagged": int(np.sum(poisoned.flags)), "n": int(n)}


def clean_key_tv_gaps(clean, poisoned, quantization_step=DEFAULT_STEP):
    """TV gap between clean-fit and poisoned-fit tables at every clean key,
    with a 3-sigma band for the difference of two frequency estimates."""
    a = fit_conditional_table(clean, quantization_step)
    b = fit_conditional_table(poisoned, quantization_step)
    out = []
    for k in sorted(a.probs):
        if k not in b.probs:
            continue
        pa, pb = a.probs[k], b.probs[k]
        pooled = 0.5 * (pa + pb)
        band = 0.5 * float(np.sum(3.0 * np.sqrt(
            pooled * (1 - pooled) * (1.0 / a.counts[k] + 1.0 / b.counts[k]))))
        out.append({"key": list(k), "tv_gap": 0.5 * float(np.sum(np.abs(pa - pb))),
                    "band": band})
    return out
