"""Threat model: constant additive triggers with target label 0.

A poisoned training set is produced point by point: each point is flagged
independently with probability ``rho``; flagged inputs are shifted by the
trigger and relabeled 0.  Label-1 targeting is the same construction with the
two classes swapped, so only target 0 is implemented.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .distributions import (
    Dataset,
    _as_points,
    _log_density_points,
    clean_regression_fn,
    sample_inputs,
)
from .exceptions import OffSupportError, PreconditionError
from .seeding import make_rng

TARGET_LABEL = 0


@dataclass(frozen=True, eq=False)
class Trigger:
    """Additive trigger ``eta``; backdoored points always get label 0."""

    eta: np.ndarray

    def __post_init__(self):
        eta = np.array(self.eta, dtype=float).reshape(-1)
        if not np.all(np.isfinite(eta)):
            raise PreconditionError("trigger must be finite")
        eta.setflags(write=False)
        object.__setattr__(self, "eta", eta)

    @property
    def target_label(self):
        return TARGET_LABEL

    @property
    def p(self):
        return self.eta.size

    def norm(self):
        return float(np.linalg.norm(self.eta))

    def cosine_with(self, v):
        v = np.asarray(v, dtype=float).reshape(-1)
        den = self.norm() * float(np.linalg.norm(v))
        if den == 0.0:
            raise PreconditionError("cosine undefined for a zero vector")
        return float(self.eta @ v) / den

    def __repr__(self):
        return f"Trigger(eta={self.eta.tolist()})"


def make_trigger(norm, angle_deg, model, plane=None):
    """Trigger of length ``norm`` at ``angle_deg`` from ``mean1 - mean0``.

    The angle is measured counterclockwise from the unit vector ``d`` along
    ``mean1 - mean0``.  In two dimensions the rotation plane is the standard
    one (``d`` rotated by +90 degrees is ``(-d_y, d_x)``); in higher dimensions
    ``plane`` must give a second vector spanning the rotation plane with ``d``.
    """
    if norm <= 0:
        raise PreconditionError("trigger norm must be positive")
    diff = model.mean_difference
    sep = float(np.linalg.norm(diff))
    if sep == 0.0:
        raise PreconditionError("class means coincide; angle is undefined")
    d = diff / sep
    if plane is None:
        if model.p != 2:
            raise PreconditionError(
                "angle parametrization needs p = 2 or an explicit rotation plane")
        w = np.array([-d[1], d[0]])
    else:
        v = np.asarray(plane, dtype=float).reshape(-1)
        w = v - (v @ d) * d
        if np.linalg.norm(w) < 1e-12:
            raise PreconditionError("rotation plane vector is parallel to mean1 - mean0")
        w = w / np.linalg.norm(w)
    theta = np.deg2rad(angle_deg)
    return Trigger(norm * (np.cos(theta) * d + np.sin(theta) * w))


@dataclass(frozen=True, eq=False)
class PoisonedDataset:
    """Poisoned training data plus the per-point poison flags.

    The flags are kept for diagnostics only; learners see :meth:`learner_view`.
    """

    X: np.ndarray
    y: np.ndarray
    z: np.ndarray
    rho: float
    trigger: Trigger

    def __post_init__(self):
        base = Dataset(self.X, self.y)
        z = np.array(self.z, dtype=bool).reshape(-1)
        if z.shape[0] != base.n:
            raise PreconditionError("one poison flag per point is required")
        if np.any(base.y[z] != TARGET_LABEL):
            raise PreconditionError("flagged points must carry the target label")
        z.setflags(write=False)
        object.__setattr__(self, "X", base.X)
        object.__setattr__(self, "y", base.y)
        object.__setattr__(self, "z", z)

    def __len__(self):
        return self.X.shape[0]

    @property
    def flags(self):
        return self.z

    @property
    def points(self):
        return Dataset(self.X, self.y).points

    def learner_view(self):
        return Dataset(self.X, self.y)

    def to_csv(self, path):
        """Write columns ``x_1..x_p, y, z`` with a header row."""
        p = self.X.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x_{j + 1}" for j in range(p)] + ["y", "z"])
            for x, y, z in zip(self.X, self.y, self.z):
                w.writerow([repr(float(v)) for v in x] + [int(y), int(z)])

    @classmethod
    def from_csv(cls, path, rho, trigger):
        X, y, z = read_xyz_csv(path)
        return cls(X, y, z, rho, trigger)


def read_xyz_csv(path):
    """Read a CSV with header ``x_1..x_p, y[, z]`` into arrays."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise PreconditionError(f"{path}: empty file, header row is mandatory")
    header = rows[0]
    xcols = [i for i, h in enumerate(header) if h.startswith("x_")]
    if not xcols or "y" not in header:
        raise PreconditionError(f"{path}: header must contain x_1..x_p and y")
    yi = header.index("y")
    zi = header.index("z") if "z" in header else None
    body = rows[1:]
    X = np.array([[float(r[i]) for i in xcols] for r in body], dtype=float).reshape(len(body), len(xcols))
    y = np.array([int(r[yi]) for r in body], dtype=np.int64)
    z = None if zi is None else np.array([int(r[zi]) for r in body], dtype=bool)
    return X, y, z


def _check_rho(rho):
    if not 0.0 < float(rho) < 1.0:
        raise PreconditionError(f"rho must lie strictly inside (0, 1), got {rho}")


def poison_dataset(clean, rho, trigger, seed=None, flags=None):
    """Flag each point with probability ``rho``; shift and relabel the flagged ones.

    ``flags`` overrides the random draw (useful to force specific points).
    """
    _check_rho(rho)
    if trigger.p != clean.p:
        raise PreconditionError("trigger dimension does not match the data")
    if flags is None:
        z = make_rng(seed).random(clean.n) < rho
    else:
        z = np.asarray(flags, dtype=bool).reshape(-1)
        if z.shape[0] != clean.n:
            raise PreconditionError("one flag per point is required")
    X = clean.X + np.where(z[:, None], trigger.eta, 0.0)
    y = np.where(z, TARGET_LABEL, clean.y)
    return PoisonedDataset(X, y, z, float(rho), trigger)


def sample_backdoor_inputs(model, trigger, n, seed=None):
    """Clean inputs plus the trigger, as an ``(n, p)`` array."""
    if int(n) < 1:
        raise PreconditionError("n must be at least 1")
    X, _ = sample_inputs(model, int(n), make_rng(seed))
    return X + trigger.eta


def sample_poisoned(model, rho, trigger, n, seed=None):
    """Draw ``n`` labeled points from the poisoned mixture, flags included."""
    _check_rho(rho)
    rng = make_rng(seed)
    X, y = sample_inputs(model, int(n), rng)
    return poison_dataset(Dataset(X, y), rho, trigger, seed=rng)


def _poisoned_logs(model, rho, trigger, pts):
    l1 = np.log(model.prior1)
    l0 = np.log1p(-model.prior1)
    shifted = pts - trigger.eta
    a1 = l1 + _log_density_points(model, 1, pts)
    a0 = l0 + _log_density_points(model, 0, pts)
    b1 = l1 + _log_density_points(model, 1, shifted)
    b0 = l0 + _log_density_points(model, 0, shifted)
    with np.errstate(divide="ignore"):
        clean_part = np.log1p(-rho) + np.logaddexp(a1, a0)
        bd_part = np.log(rho) + np.logaddexp(b1, b0)
    return np.log1p(-rho) + a1, np.logaddexp(clean_part, bd_part)


def poisoned_input_density(model, rho, trigger, x):
    """Input density of the poisoned mixture at ``x``.

    ``(1 - rho) * mu_X(x) + rho * mu_X(x - eta)`` with ``mu_X`` the clean
    input density.  ``rho = 0`` is accepted and returns the clean density.
    """
    if not 0.0 <= float(rho) < 1.0:
        raise PreconditionError("rho must lie in [0, 1)")
    pts, single = _as_points(model, x)
    if trigger.p != model.p:
        raise PreconditionError("trigger dimension does not match the model")
    _, logden = _poisoned_logs(model, float(rho), trigger, pts)
    out = np.exp(logden)
    return float(out[0]) if single else out


def poisoned_regression_fn(model, rho, trigger, x):
    """``P(Y = 1 | X = x)`` under the poisoned mixture.

    Only clean label-1 mass contributes to the numerator, so the value never
    exceeds the clean regression function.
    """
    if not 0.0 <= float(rho) < 1.0:
        raise PreconditionError("rho must lie in [0, 1)")
    pts, single = _as_points(model, x)
    if rho == 0:
        return clean_regression_fn(model, x)
    num, den = _poisoned_logs(model, float(rho), trigger, pts)
    if np.any(np.isneginf(den)):
        raise OffSupportError("point is off the support of the poisoned distribution")
    out = np.exp(num - den)
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if single else out


def backdoor_regression_fn(x):
    """Regression function of backdoor data: identically the target label."""
    x = np.asarray(x, dtype=float)
    return 0.0 if x.ndim == 1 else np.zeros(x.shape[0])
