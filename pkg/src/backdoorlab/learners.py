"""Nonparametric probability estimators for binary labels.

Both estimators follow the scikit-learn estimator API: hyperparameters are set
in ``__init__``, learned state gets a trailing underscore, and ``fit`` returns
``self``.  ``predict_prob`` returns the estimated ``P(Y = 1 | x)`` as a 1-D
array; ``predict_proba`` returns the usual two-column form.
"""

import numpy as np
from scipy.spatial.distance import cdist, pdist
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import KFold
from sklearn.neighbors import NearestNeighbors
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .distributions import Dataset
from .exceptions import PreconditionError
from .seeding import make_rng

UNDERFLOW_FLOOR = 1e-300
FALLBACK_PROB = 0.5
GRID_POINTS = 16
GRID_LOW, GRID_HIGH = 0.05, 4.0
SUBSAMPLE = 256
CV_TIE_TOL = 1e-12


def _xy(data, y=None):
    if isinstance(data, Dataset):
        return data.X, data.y
    if hasattr(data, "learner_view"):
        view = data.learner_view()
        return view.X, view.y
    return data, y


def _check_labels(y):
    y = np.asarray(y, dtype=float)
    if np.any((y < 0) | (y > 1)):
        raise PreconditionError("labels must lie in [0, 1]")
    return y


def _nw_from_sqdist(sqdist, y, bandwidth):
    """Nadaraya-Watson ratio from squared distances (queries x train)."""
    w = np.exp(-0.5 * sqdist / (bandwidth * bandwidth))
    den = w.sum(axis=1)
    num = w @ y
    out = np.full(den.shape, FALLBACK_PROB)
    ok = den >= UNDERFLOW_FLOOR
    out[ok] = np.clip(num[ok] / den[ok], 0.0, 1.0)
    return out


def median_pairwise_distance(X, seed=0, subsample=SUBSAMPLE):
    X = np.asarray(X, dtype=float)
    if X.shape[0] > subsample:
        idx = make_rng(seed).choice(X.shape[0], subsample, replace=False)
        X = X[np.sort(idx)]
    if X.shape[0] < 2:
        return 1.0
    d = float(np.median(pdist(X)))
    return d if d > 0 else 1.0


def median_nn_distance(X, seed=0, subsample=SUBSAMPLE):
    """Median distance from a subsample of points to their nearest other point in ``X``."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] < 2:
        return np.inf
    q = X
    if X.shape[0] > subsample:
        q = X[np.sort(make_rng(seed).choice(X.shape[0], subsample, replace=False))]
    dist, _ = NearestNeighbors(n_neighbors=2).fit(X).kneighbors(q)
    d = float(np.median(dist[:, 1]))
    return d if d > 0 else np.inf


def default_bandwidth_grid(X, seed=0, low=GRID_LOW, high=GRID_HIGH, num=GRID_POINTS):
    """Geometric grid of ``num`` bandwidths up to ``high * d``, ``d`` the median
    pairwise distance of (a subsample of) ``X``.

    The grid starts at ``low * d`` or at the median nearest-neighbor distance,
    whichever is smaller, so data concentrated on a thin set (a degenerate
    direction) still gets bandwidths fine enough to resolve it.
    """
    d = median_pairwise_distance(X, seed=seed)
    start = min(low * d, median_nn_distance(X, seed=seed))
    return np.geomspace(start, high * d, num)


def _folds(n, folds, seed):
    if n < folds:
        raise PreconditionError(f"need at least {folds} points for {folds}-fold CV, got {n}")
    rs = int(make_rng(seed).integers(0, 2**31 - 1))
    return list(KFold(n_splits=folds, shuffle=True, random_state=rs).split(np.arange(n)))


def cv_errors(X, y, grid, folds=5, seed=0):
    """Mean held-out squared error for every bandwidth in ``grid`` (grid order)."""
    X = np.asarray(X, dtype=float)
    y = _check_labels(y)
    grid = np.asarray(grid, dtype=float).reshape(-1)
    errs = np.zeros(grid.size)
    for train, test in _folds(X.shape[0], folds, seed):
        sq = cdist(X[test], X[train], "sqeuclidean")
        for k, h in enumerate(grid):
            pred = _nw_from_sqdist(sq, y[train], h)
            errs[k] += np.sum((pred - y[test]) ** 2)
    return errs / X.shape[0]


def cv_bandwidth(data, grid=None, folds=5, seed=0, y=None):
    """Pick the bandwidth with the smallest ``folds``-fold CV squared error.

    Ties go to the smaller bandwidth.  ``data`` is a :class:`Dataset`, a
    poisoned dataset, or an input array with labels passed as ``y``.
    """
    X, y = _xy(data, y)
    X = np.asarray(X, dtype=float)
    if grid is None:
        grid = default_bandwidth_grid(X, seed=seed)
    grid = np.sort(np.asarray(grid, dtype=float).reshape(-1))
    if grid.size == 0:
        raise PreconditionError("bandwidth grid is empty")
    if np.any(grid <= 0):
        raise PreconditionError("bandwidths must be positive")
    if grid.size == 1:
        if X.shape[0] < folds:
            raise PreconditionError(f"need at least {folds} points for {folds}-fold CV")
        return float(grid[0])
    errs = cv_errors(X, y, grid, folds=folds, seed=seed)
    # errors equal up to rounding count as tied
    return float(grid[np.flatnonzero(errs <= errs.min() + CV_TIE_TOL)[0]])


class KernelSmoother(ClassifierMixin, BaseEstimator):
    """Nadaraya-Watson estimator with Gaussian kernel ``exp(-||u||^2 / 2)``.

    Parameters
    ----------
    bandwidth : float or None
        Fixed bandwidth. ``None`` selects one by cross-validation at fit time.
    bandwidth_grid : array-like or None
        Candidate bandwidths for CV; ``None`` uses :func:`default_bandwidth_grid`.
    folds : int
        Number of CV folds.
    random_state : int or None
        Seed for the CV fold partition and the grid subsample.

    Where every kernel weight underflows (total below ``1e-300``) the
    prediction falls back to 0.5.
    """

    def __init__(self, bandwidth=None, bandwidth_grid=None, folds=5, random_state=0):
        self.bandwidth = bandwidth
        self.bandwidth_grid = bandwidth_grid
        self.folds = folds
        self.random_state = random_state

    def fit(self, X, y=None):
        X, y = _xy(X, y)
        X, y = check_X_y(X, y, dtype=float)
        y = _check_labels(y)
        if self.bandwidth is not None:
            if not self.bandwidth > 0:
                raise PreconditionError("bandwidth must be positive")
            self.bandwidth_ = float(self.bandwidth)
        else:
            self.bandwidth_ = cv_bandwidth(X, self.bandwidth_grid, self.folds,
                                           self.random_state, y=y)
        self.X_ = X
        self.y_ = y
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def predict_prob(self, X):
        check_is_fitted(self, "X_")
        single = np.ndim(X) == 1
        X = check_array(np.atleast_2d(X), dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise PreconditionError("query dimension does not match the training data")
        out = np.empty(X.shape[0])
        for s in range(0, X.shape[0], 2048):
            sq = cdist(X[s:s + 2048], self.X_, "sqeuclidean")
            out[s:s + 2048] = _nw_from_sqdist(sq, self.y_, self.bandwidth_)
        return float(out[0]) if single else out

    def predict_proba(self, X):
        p1 = np.atleast_1d(self.predict_prob(np.atleast_2d(X)))
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        return classify(self, X)

    def summary(self):
        check_is_fitted(self, "X_")
        return {"learner": "kernel-smoother", "bandwidth": self.bandwidth_,
                "n": int(self.X_.shape[0]), "p": int(self.X_.shape[1])}


def default_k_grid(n):
    top = max(1, min(n - 1, int(4 * np.sqrt(n))))
    return sorted({int(k) for k in np.unique(np.geomspace(1, top, 12).round())})


class KNNProbability(ClassifierMixin, BaseEstimator):
    """k-nearest-neighbor label average, ``k`` chosen by the same CV as
    :class:`KernelSmoother`."""

    def __init__(self, k=None, k_grid=None, folds=5, random_state=0):
        self.k = k
        self.k_grid = k_grid
        self.folds = folds
        self.random_state = random_state

    def _cv_k(self, X, y):
        grid = sorted(self.k_grid) if self.k_grid is not None else default_k_grid(len(y))
        errs = np.zeros(len(grid))
        for train, test in _folds(len(y), self.folds, self.random_state):
            kmax = min(max(grid), len(train))
            nn = NearestNeighbors(n_neighbors=kmax).fit(X[train])
            _, idx = nn.kneighbors(X[test])
            lab = y[train][idx]
            for j, k in enumerate(grid):
                pred = lab[:, :min(k, kmax)].mean(axis=1)
                errs[j] += np.sum((pred - y[test]) ** 2)
        errs /= len(y)
        return int(grid[np.flatnonzero(errs <= errs.min() + CV_TIE_TOL)[0]])

    def fit(self, X, y=None):
        X, y = _xy(X, y)
        X, y = check_X_y(X, y, dtype=float)
        y = _check_labels(y)
        self.k_ = int(self.k) if self.k is not None else self._cv_k(X, y)
        if not 1 <= self.k_ <= len(y):
            raise PreconditionError("k must be between 1 and the number of points")
        self.nn_ = NearestNeighbors(n_neighbors=self.k_).fit(X)
        self.y_ = y
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def predict_prob(self, X):
        check_is_fitted(self, "nn_")
        single = np.ndim(X) == 1
        X = check_array(np.atleast_2d(X), dtype=float)
        _, idx = self.nn_.kneighbors(X)
        out = self.y_[idx].mean(axis=1)
        return float(out[0]) if single else out

    def predict_proba(self, X):
        p1 = np.atleast_1d(self.predict_prob(np.atleast_2d(X)))
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        return classify(self, X)

    def summary(self):
        check_is_fitted(self, "nn_")
        return {"learner": "knn", "k": self.k_, "n": int(len(self.y_)),
                "p": int(self.n_features_in_)}


def fit_kernel_smoother(data, bandwidth=None, grid=None, folds=5, seed=0):
    """Fit a :class:`KernelSmoother` on a dataset (fixed or CV bandwidth)."""
    X, y = _xy(data)
    if len(y) == 0:
        raise PreconditionError("cannot fit on an empty dataset")
    return KernelSmoother(bandwidth=bandwidth, bandwidth_grid=grid, folds=folds,
                          random_state=seed).fit(X, y)


def predict_prob(model, x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise PreconditionError("query must be finite")
    return model.predict_prob(x)


def classify(model, x):
    """Label 1 exactly when the predicted probability is strictly above 1/2."""
    p = predict_prob(model, x)
    if np.ndim(p) == 0:
        return int(p > 0.5)
    return (np.asarray(p) > 0.5).astype(np.int64)
