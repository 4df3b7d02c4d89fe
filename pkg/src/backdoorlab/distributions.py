"""Clean data distribution: two Gaussian classes sharing one covariance.

Degenerate (rank-deficient) covariances are supported throughout.  Sampling
happens in the eigenbasis, so null directions carry exactly zero variance, and
densities are taken with respect to Lebesgue measure on the support subspace
``m_i + range(covariance)``.  A point whose component along some null
eigenvector exceeds :data:`OFF_SUPPORT_TOL` has density zero.
"""

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.stats import norm as _std_normal

from .exceptions import (
    DegenerateModelError,
    InvalidCovarianceError,
    OffSupportError,
    PreconditionError,
)
from .seeding import make_rng

SYMMETRY_RTOL = 1e-12
EIGEN_CLAMP_TOL = 1e-12
OFF_SUPPORT_TOL = 1e-9
GRID_RESOLUTION = 201
_LOG_2PI = np.log(2.0 * np.pi)


class LabeledPoint(NamedTuple):
    x: np.ndarray
    y: int


class EigenDecomposition(NamedTuple):
    """Eigenvalues in descending order and matching unit eigenvectors (columns)."""

    values: np.ndarray
    vectors: np.ndarray
    degenerate: bool
    rank: int

    @property
    def smallest_direction(self):
        return self.vectors[:, -1]


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_symmetric(covariance):
    cov = np.asarray(covariance, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise InvalidCovarianceError(f"covariance must be square, got shape {cov.shape}")
    if not np.all(np.isfinite(cov)):
        raise InvalidCovarianceError("covariance has non-finite entries")
    scale = max(np.max(np.abs(cov)), 1e-300)
    if np.max(np.abs(cov - cov.T)) > SYMMETRY_RTOL * scale:
        raise InvalidCovarianceError("covariance is not symmetric")
    return 0.5 * (cov + cov.T)


def eigen_directions(covariance):
    """Eigen-decompose a symmetric PSD matrix.

    Eigenvalues are returned in descending order.  Each eigenvector is signed
    so its largest-magnitude component is positive (first such component on
    ties).  Eigenvalues within ``1e-12 * max|eigenvalue|`` of zero are clamped
    to zero; more negative ones raise :class:`InvalidCovarianceError`.
    """
    cov = _check_symmetric(covariance)
    vals, vecs = np.linalg.eigh(cov)
    vals = vals[::-1].copy()
    vecs = vecs[:, ::-1].copy()
    scale = max(np.max(np.abs(vals)), 1.0) if vals.size else 1.0
    tol = EIGEN_CLAMP_TOL * scale
    if np.any(vals < -tol):
        raise InvalidCovarianceError(
            f"covariance has a negative eigenvalue {vals.min():.3g}")
    vals[np.abs(vals) <= tol] = 0.0
    for j in range(vecs.shape[1]):
        k = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[k, j] < 0:
            vecs[:, j] = -vecs[:, j]
    rank = int(np.count_nonzero(vals > 0))
    return EigenDecomposition(vals, vecs, rank < len(vals), rank)


@dataclass(frozen=True, eq=False)
class GaussianClassPair:
    """Two Gaussian classes ``N(mean0, covariance)`` and ``N(mean1, covariance)``.

    ``prior1`` is ``P(Y = 1)``.
    """

    mean0: np.ndarray
    mean1: np.ndarray
    covariance: np.ndarray
    prior1: float = 0.5
    eigen: EigenDecomposition = field(init=False, repr=False)

    def __post_init__(self):
        m0 = _frozen(self.mean0).reshape(-1)
        m1 = _frozen(self.mean1).reshape(-1)
        if m0.shape != m1.shape:
            raise PreconditionError("mean0 and mean1 have different dimensions")
        if not (np.all(np.isfinite(m0)) and np.all(np.isfinite(m1))):
            raise PreconditionError("means must be finite")
        cov = _check_symmetric(self.covariance)
        if cov.shape != (m0.size, m0.size):
            raise InvalidCovarianceError(
                f"covariance shape {cov.shape} does not match dimension {m0.size}")
        prior = float(self.prior1)
        if not 0.0 < prior < 1.0:
            raise PreconditionError(f"prior1 must lie strictly inside (0, 1), got {prior}")
        eig = eigen_directions(cov)
        object.__setattr__(self, "mean0", m0)
        object.__setattr__(self, "mean1", m1)
        object.__setattr__(self, "covariance", _frozen(cov))
        object.__setattr__(self, "prior1", prior)
        object.__setattr__(self, "eigen", eig)

    @property
    def p(self):
        return self.mean0.size

    @property
    def degenerate(self):
        return self.eigen.degenerate

    @property
    def mean_difference(self):
        """``mean1 - mean0``."""
        return self.mean1 - self.mean0

    def mean(self, cls):
        if cls not in (0, 1):
            raise PreconditionError(f"class must be 0 or 1, got {cls!r}")
        return self.mean1 if cls == 1 else self.mean0

    # -- serialization -------------------------------------------------
    def to_dict(self):
        return {
            "mean0": self.mean0.tolist(),
            "mean1": self.mean1.tolist(),
            "covariance": self.covariance.tolist(),
            "prior1": self.prior1,
        }

    @classmethod
    def from_dict(cls, d):
        from .exceptions import ConfigError

        if not isinstance(d, dict):
            raise ConfigError("distribution must be a JSON object")
        required = {"mean0", "mean1", "covariance", "prior1"}
        unknown = set(d) - required
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}")
        missing = required - set(d)
        if missing:
            raise ConfigError(f"missing keys {sorted(missing)}")
        try:
            return cls(d["mean0"], d["mean1"], d["covariance"], d["prior1"])
        except (PreconditionError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def benchmark_model():
    """The two-dimensional synthetic setup: classes at (3, 0) and (-3, 0),
    covariance ``diag(3, 1/2)``, balanced classes."""
    return GaussianClassPair(
        mean0=[3.0, 0.0], mean1=[-3.0, 0.0],
        covariance=[[3.0, 0.0], [0.0, 0.5]], prior1=0.5)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labeled points stored column-wise: ``X`` is ``(n, p)``, ``y`` is ``(n,)``."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = np.array(self.y).reshape(-1)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise PreconditionError("X must be (n, p) with one label per row")
        if not np.all(np.isfinite(X)):
            raise PreconditionError("inputs must be finite")
        if y.size and not np.all(np.isin(y, (0, 1))):
            raise PreconditionError("labels must be 0 or 1")
        X.setflags(write=False)
        y = y.astype(np.int64)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.X.shape[0]

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def points(self):
        return [LabeledPoint(x, int(y)) for x, y in zip(self.X, self.y)]


def _sample_class(model, cls, z):
    eig = model.eigen
    return model.mean(cls) + (z * np.sqrt(eig.values)) @ eig.vectors.T


def sample_inputs(model, n, rng):
    """Draw ``(X, Y)`` arrays: labels first, then one standard normal row per point."""
    y = (rng.random(n) < model.prior1).astype(np.int64)
    z = rng.standard_normal((n, model.p))
    X = np.where(y[:, None] == 1, _sample_class(model, 1, z), _sample_class(model, 0, z))
    return X, y


def sample_class(model, cls, n, seed=None):
    """Draw ``n`` inputs from one class-conditional distribution."""
    rng = make_rng(seed)
    return _sample_class(model, cls, rng.standard_normal((n, model.p)))


def sample_clean(model, n, seed=None):
    """Draw ``n`` IID labeled points from the clean distribution."""
    if int(n) < 1:
        raise PreconditionError("n must be at least 1")
    X, y = sample_inputs(model, int(n), make_rng(seed))
    return Dataset(X, y)


def _as_points(model, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x.reshape(1, -1) if single else x
    if pts.ndim != 2 or pts.shape[1] != model.p:
        raise PreconditionError(
            f"expected points of dimension {model.p}, got shape {x.shape}")
    return pts, single


def _log_density_points(model, cls, pts):
    eig = model.eigen
    coords = (pts - model.mean(cls)) @ eig.vectors
    pos = eig.values > 0
    sig = eig.values[pos]
    quad = np.sum(coords[:, pos] ** 2 / sig, axis=1)
    logd = -0.5 * (eig.rank * _LOG_2PI + np.sum(np.log(sig)) + quad)
    if eig.degenerate:
        off = np.any(np.abs(coords[:, ~pos]) > OFF_SUPPORT_TOL, axis=1)
        logd = np.where(off, -np.inf, logd)
    return logd


def class_log_density(model, cls, x):
    """Natural log of :func:`class_density`; ``-inf`` off the support."""
    pts, single = _as_points(model, x)
    out = _log_density_points(model, cls, pts)
    return float(out[0]) if single else out


def class_density(model, cls, x):
    """Density of class ``cls`` at ``x`` (a point or an ``(n, p)`` array)."""
    pts, single = _as_points(model, x)
    out = np.exp(_log_density_points(model, cls, pts))
    return float(out[0]) if single else out


def input_log_density(model, x):
    """Log of the clean input marginal ``prior1*nu1 + (1-prior1)*nu0``."""
    pts, single = _as_points(model, x)
    out = np.logaddexp(np.log(model.prior1) + _log_density_points(model, 1, pts),
                       np.log1p(-model.prior1) + _log_density_points(model, 0, pts))
    return float(out[0]) if single else out


def input_density(model, x):
    pts, single = _as_points(model, x)
    out = np.exp(input_log_density(model, pts))
    return float(out[0]) if single else out


def clean_regression_fn(model, x):
    """``P(Y = 1 | X = x)`` under the clean distribution.

    Computed from log-densities, so far-out points on a full-rank model do not
    underflow.  Raises :class:`OffSupportError` where both classes have zero
    density.
    """
    pts, single = _as_points(model, x)
    a = np.log(model.prior1) + _log_density_points(model, 1, pts)
    b = np.log1p(-model.prior1) + _log_density_points(model, 0, pts)
    if np.any(np.isneginf(a) & np.isneginf(b)):
        raise OffSupportError("posterior undefined: point is off the support of both classes")
    with np.errstate(invalid="ignore", over="ignore"):
        out = np.where(np.isneginf(b), 1.0, 1.0 / (1.0 + np.exp(b - a)))
    return float(out[0]) if single else out


def bayes_label(model, x):
    f = clean_regression_fn(model, x)
    return (np.asarray(f) > 0.5).astype(np.int64) if np.ndim(f) else int(f > 0.5)


def _unit(eta):
    eta = np.asarray(eta, dtype=float).reshape(-1)
    s = np.linalg.norm(eta)
    if not np.isfinite(s) or s == 0.0:
        raise PreconditionError("direction vector must be nonzero and finite")
    return eta / s


def directional_variance(model, eta):
    """``u^T Sigma u`` for the unit vector ``u`` along ``eta``."""
    u = _unit(eta)
    if u.size != model.p:
        raise PreconditionError("direction has the wrong dimension")
    return float(max(u @ model.covariance @ u, 0.0))


def tail_h(model, cls, eta, r, method="closed-form", n_mc=1_000_000, seed=None):
    """Two-sided tail ``P(|(X - m_cls)^T eta| >= r * ||eta||)`` for ``X ~ nu_cls``.

    ``method`` is ``"closed-form"`` (Gaussian formula) or ``"monte-carlo"``.
    Along a zero-variance direction the tail is 1 at ``r = 0`` and 0 beyond.
    """
    if r < 0:
        raise PreconditionError("r must be nonnegative")
    u = _unit(eta)
    if u.size != model.p:
        raise PreconditionError("direction has the wrong dimension")
    if method == "closed-form":
        v = directional_variance(model, eta)
        if v <= EIGEN_CLAMP_TOL * max(float(np.max(model.eigen.values)), 1.0):
            return 1.0 if r == 0 else 0.0
        return float(min(1.0, 2.0 * _std_normal.sf(r / np.sqrt(v))))
    if method == "monte-carlo":
        X = sample_class(model, cls, int(n_mc), seed)
        proj = np.abs((X - model.mean(cls)) @ u)
        return float(np.mean(proj >= r))
    raise PreconditionError(f"unknown tail method {method!r}")


def _gaussian_g_lower_bound(model, eta):
    eig = model.eigen
    if eig.degenerate:
        raise DegenerateModelError("the analytic density bound needs a full-rank covariance")
    eta = np.asarray(eta, dtype=float).reshape(-1)
    quad = float(eta @ np.linalg.solve(model.covariance, eta))
    sigma_p = float(eig.values[-1])
    log_peak = -0.5 * (model.p * _LOG_2PI + np.sum(np.log(eig.values)))
    return float(np.exp(log_peak - quad - (eta @ eta) / (4.0 * sigma_p)))


def _ball_grid(p, resolution):
    t = np.linspace(-1.0, 1.0, resolution)
    mesh = np.stack(np.meshgrid(*([t] * p), indexing="ij"), axis=-1).reshape(-1, p)
    return mesh[np.sum(mesh ** 2, axis=1) <= 1.0 + 1e-12]


def _grid_min(model, cls, eta, r, resolution):
    t = np.linspace(-1.0, 1.0, resolution)
    best = np.inf
    m = model.mean(cls)
    # chunk along the first axis so p = 3 at 201 points per axis stays small
    rest = _ball_grid(model.p - 1, resolution) if model.p > 1 else np.zeros((1, 0))
    for t0 in t:
        room = 1.0 - t0 * t0
        if room < -1e-12:
            continue
        keep = rest[np.sum(rest ** 2, axis=1) <= room + 1e-12]
        if keep.size == 0 and model.p > 1:
            continue
        offs = np.column_stack([np.full(len(keep), t0), keep])
        pts = m - (eta + r * offs)
        best = min(best, float(np.min(_log_density_points(model, cls, pts))))
    return float(np.exp(best))


def _ascent_min(model, cls, eta, r, iterations=200, restarts=10, seed=0):
    # minimizing a Gaussian density over the ball == maximizing the
    # Mahalanobis quadratic x^T Sigma^{-1} x, a convex function
    prec = np.linalg.pinv(model.covariance)
    lam = max(float(np.linalg.eigvalsh(prec).max()), 1e-300)
    rng = make_rng(seed)

    def project(x):
        d = x - eta
        nd = np.linalg.norm(d)
        return x if nd <= r else eta + d * (r / nd)

    starts = [eta.copy()] + [project(eta + r * rng.standard_normal(model.p))
                             for _ in range(restarts - 1)]
    best = np.inf
    m = model.mean(cls)
    for x in starts:
        for _ in range(iterations):
            x = project(x + (2.0 / lam) * (prec @ x))
            best = min(best, float(_log_density_points(model, cls, (m - x)[None])[0]))
    return float(np.exp(best))


def min_density_g(model, cls, eta, r, method="auto", resolution=GRID_RESOLUTION, seed=0):
    """Smallest value of ``nu_cls(m_cls - x)`` over the ball ``||x - eta|| <= r``.

    Methods: ``"grid"`` (``resolution`` points per axis over the ball),
    ``"projected-ascent"``, ``"gaussian-analytic-lb"`` (closed-form lower bound,
    needs ``||eta|| >= 2 r`` and a full-rank covariance) and ``"auto"`` (grid
    for ``p <= 3``, ascent otherwise).  For a degenerate model any ball with
    ``r > 0`` reaches off-support points, so the minimum is 0.
    """
    if r < 0:
        raise PreconditionError("r must be nonnegative")
    eta = np.asarray(eta, dtype=float).reshape(-1)
    if eta.size != model.p:
        raise PreconditionError("eta has the wrong dimension")
    if method == "gaussian-analytic-lb":
        if np.linalg.norm(eta) < 2.0 * r:
            raise PreconditionError("analytic bound needs ||eta|| >= 2 r")
        return _gaussian_g_lower_bound(model, eta)
    if model.degenerate and r > 0:
        return 0.0
    if r == 0:
        return class_density(model, cls, model.mean(cls) - eta)
    if method == "auto":
        method = "grid" if model.p <= 3 else "projected-ascent"
    if method == "grid":
        return _grid_min(model, cls, eta, float(r), int(resolution))
    if method == "projected-ascent":
        return _ascent_min(model, cls, eta, float(r), seed=seed)
    raise PreconditionError(f"unknown min-density method {method!r}")
