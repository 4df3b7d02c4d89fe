"""Per-dimension attack diagnostics.

The relative change of dimension ``i`` is ``|delta_i| / std_i``: the clean vs
backdoor difference divided by the clean standard deviation.  Large values in
low-variance dimensions mark triggers that exploit weak directions; an
infinite value marks a trigger that moves a dimension in which the clean data
never varies.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .distributions import Dataset, eigen_directions
from .exceptions import PreconditionError
from .poisoning import Trigger


@dataclass(frozen=True)
class DimensionDiagnostic:
    dim: int
    variance: float
    std: float
    delta: float
    relative_change: float

    @property
    def degenerate(self):
        return self.std == 0.0

    @property
    def infinite(self):
        return bool(np.isinf(self.relative_change))


def _inputs(data):
    if isinstance(data, Dataset):
        return data.X
    if hasattr(data, "learner_view"):
        return data.X
    X = np.asarray(data, dtype=float)
    return X.reshape(-1, 1) if X.ndim == 1 else X


def relative_change(clean, backdoored=None, trigger=None):
    """Per-dimension relative change between clean and backdoored data.

    Pass exactly one of ``backdoored`` (a dataset or input array; the mean
    difference per dimension is used) or ``trigger`` (the shift is ``|eta_i|``
    exactly).  Standard deviations come from the clean data with divisor
    ``n - 1``.  A zero std with a zero shift gives 0, with a nonzero shift
    ``inf``.
    """
    if (backdoored is None) == (trigger is None):
        raise PreconditionError("give exactly one of backdoored data or a trigger")
    X = _inputs(clean)
    if X.shape[0] < 2:
        raise PreconditionError("need at least two clean points for a standard deviation")
    if trigger is not None:
        eta = trigger.eta if isinstance(trigger, Trigger) else np.asarray(trigger, dtype=float)
        if eta.size != X.shape[1]:
            raise PreconditionError("trigger dimension does not match the data")
        delta = np.abs(eta)
    else:
        B = _inputs(backdoored)
        if B.shape[1] != X.shape[1]:
            raise PreconditionError("clean and backdoored data differ in dimension")
        delta = np.abs(B.mean(axis=0) - X.mean(axis=0))
    var = X.var(axis=0, ddof=1)
    std = np.sqrt(var)
    out = []
    for i in range(X.shape[1]):
        if std[i] == 0.0:
            rc = 0.0 if delta[i] == 0.0 else np.inf
        else:
            rc = float(delta[i] / std[i])
        out.append(DimensionDiagnostic(i, float(var[i]), float(std[i]), float(delta[i]), rc))
    return out


def degenerate_directions(data_or_covariance, tol=1e-9):
    """Eigen-directions whose variance is at most ``tol``, smallest first.

    A :class:`Dataset` (or anything with ``X``) uses its sample covariance; a
    square array is taken to be a covariance matrix.  Returns a list of
    ``(direction, variance)`` pairs.
    """
    if isinstance(data_or_covariance, Dataset) or hasattr(data_or_covariance, "learner_view"):
        X = data_or_covariance.X
        if X.shape[0] < 2:
            raise PreconditionError("need at least two points to estimate a covariance")
        cov = np.atleast_2d(np.cov(X, rowvar=False))
        vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
        vals = np.clip(vals, 0.0, None)
        for j in range(vecs.shape[1]):
            k = int(np.argmax(np.abs(vecs[:, j])))
            if vecs[k, j] < 0:
                vecs[:, j] = -vecs[:, j]
    else:
        eig = eigen_directions(data_or_covariance)
        vals, vecs = eig.values[::-1], eig.vectors[:, ::-1]
    order = np.argsort(vals, kind="stable")
    return [(vecs[:, j].copy(), float(vals[j])) for j in order if vals[j] <= tol]


DIAGNOSTIC_HEADER = ("dim", "variance", "relative_change", "degenerate_flag")


def diagnostic_rows(diags):
    return [[d.dim, d.variance, d.relative_change, int(d.degenerate)] for d in diags]


def write_diagnostics_csv(diags, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIAGNOSTIC_HEADER)
        for row in diagnostic_rows(diags):
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
