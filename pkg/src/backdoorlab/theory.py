"""Risk bounds and trigger-design formulas.

The finite-sample bounds take the poisoned-data risk ``r_poi`` and a bias term
built from the tail function ``h`` (upper bound) or the minimum-density
function ``g`` (lower bound).  For Gaussian classes the optimal trigger points
along the smallest-variance eigenvector, and the magnitude needed for success
grows like ``sqrt(ln n)``.
"""

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm as _std_normal

from .distributions import (
    _gaussian_g_lower_bound,
    eigen_directions,
    min_density_g,
    sample_class,
    tail_h,
)
from .exceptions import PreconditionError
from .poisoning import Trigger


class EigenvalueTieWarning(UserWarning):
    """The smallest eigenvalue is repeated, so the optimal direction is not unique."""


@dataclass(frozen=True)
class BoundInputs:
    r_poi: float
    rho: float
    alpha: float = 1.0
    beta: float = 1.0
    C: float = 1.0
    C_beta: float = 1.0
    h_max: float = 0.0
    g1: float = 0.0
    C1: float = 1.0
    C2: float = 1.0
    c_radius: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise PreconditionError(f"rho must lie strictly inside (0, 1), got {self.rho}")
        if not 0.0 < self.alpha <= 1.0 <= self.beta:
            raise PreconditionError("need 0 < alpha <= 1 <= beta")
        if not 0.0 <= self.h_max <= 1.0:
            raise PreconditionError("h_max must lie in [0, 1]")
        if self.r_poi < 0 or self.g1 < 0:
            raise PreconditionError("r_poi and g1 must be nonnegative")
        for name in ("C", "C_beta", "C1", "c_radius"):
            if not getattr(self, name) > 0:
                raise PreconditionError(f"{name} must be positive")
        if self.C2 < 0:
            raise PreconditionError("C2 must be nonnegative")


@dataclass(frozen=True)
class BoundReport:
    ub_cl: float
    ub_bd: float
    lb_cl: float
    lb_bd: float
    norm_condition_met: bool
    inputs: BoundInputs

    @property
    def lower_vacuous(self):
        return self.lb_cl <= 0 and self.lb_bd <= 0

    def as_dict(self):
        d = {k: getattr(self, k) for k in ("ub_cl", "ub_bd", "lb_cl", "lb_bd",
                                           "norm_condition_met")}
        d.update(asdict(self.inputs))
        return d


def _eta(trigger):
    return trigger.eta if isinstance(trigger, Trigger) else np.asarray(trigger, dtype=float)


def check_norm_condition(trigger, model):
    """``||eta|| >= 4 cos(eta, m1 - m0) ||m1 - m0||``, i.e. ``eta.eta >= 4 eta.(m1 - m0)``.

    Any trigger with a nonpositive cosine passes.
    """
    eta = _eta(trigger)
    diff = model.mean_difference
    s = float(np.linalg.norm(eta))
    if s == 0.0 or float(np.linalg.norm(diff)) == 0.0:
        raise PreconditionError("trigger and mean difference must be nonzero")
    return bool(s * s >= 4.0 * float(eta @ diff))


def theorem1_upper(inputs):
    """Upper bounds ``(ub_cl, ub_bd)`` on clean and backdoor risk."""
    b = inputs
    bias = b.C * b.h_max ** b.alpha
    ub_cl = b.r_poi / (1.0 - b.rho) + bias / (1.0 - b.rho) ** b.alpha
    ub_bd = b.r_poi / b.rho + bias / b.rho ** b.alpha
    return ub_cl, ub_bd


def theorem2_lower(inputs, eta_norm=None):
    """Lower bounds ``(lb_cl, lb_bd)``; either may be negative (vacuous).

    When ``eta_norm`` is given, ``eta_norm > 2 * c_radius`` is enforced.
    """
    b = inputs
    if eta_norm is not None and not eta_norm > 2.0 * b.c_radius:
        raise PreconditionError(
            f"lower bound needs ||eta|| > 2c (||eta|| = {eta_norm}, c = {b.c_radius})")
    penalty = b.C2 * b.r_poi ** (b.alpha / b.beta)
    core = b.C1 * b.g1 ** b.beta
    return b.rho ** b.beta * core - penalty, (1.0 - b.rho) ** b.beta * core - penalty


def default_lower_constants(model, beta=1.0, c_radius=1.0, n_mc=200_000, seed=0):
    """Conservative ``(C1, C2)``: ``C1 = (lam (1 - lam) P(||X - m1|| <= c))**beta``
    for ``X ~ nu_1``, and ``C2 = 1``.  The ball probability is estimated by Monte
    Carlo."""
    X = sample_class(model, 1, n_mc, seed)
    ball = float(np.mean(np.linalg.norm(X - model.mean1, axis=1) <= c_radius))
    lam = model.prior1
    return (lam * (1.0 - lam) * ball) ** beta, 1.0


def bias_h_max(model, trigger):
    """``max_i h_i(||eta|| / 4)``, the upper-bound bias ingredient."""
    eta = _eta(trigger)
    r = float(np.linalg.norm(eta)) / 4.0
    return max(tail_h(model, i, eta, r) for i in (0, 1))


def bound_report(model, trigger, r_poi, rho, loss=None, C1=None, C2=None, c_radius=1.0,
                 g_method="auto"):
    """Evaluate both theorems for one trigger.  Lower bounds are NaN when
    ``||eta|| <= 2 c``."""
    alpha = loss.alpha if loss is not None else 1.0
    beta = loss.beta if loss is not None else 1.0
    eta = _eta(trigger)
    s = float(np.linalg.norm(eta))
    if C1 is None or C2 is None:
        d1, d2 = default_lower_constants(model, beta=beta, c_radius=c_radius)
        C1 = d1 if C1 is None else C1
        C2 = d2 if C2 is None else C2
    g1 = min_density_g(model, 1, eta, c_radius, method=g_method)
    inputs = BoundInputs(r_poi=r_poi, rho=rho, alpha=alpha, beta=beta,
                         h_max=bias_h_max(model, trigger), g1=g1, C1=C1, C2=C2,
                         c_radius=c_radius)
    ub_cl, ub_bd = theorem1_upper(inputs)
    if s > 2.0 * c_radius:
        lb_cl, lb_bd = theorem2_lower(inputs, s)
    else:
        lb_cl = lb_bd = float("nan")
    return BoundReport(ub_cl, ub_bd, lb_cl, lb_bd, check_norm_condition(trigger, model), inputs)


def lemma1_audit(model, cls, trigger, n_mc=1_000_000, seed=0):
    """Monte-Carlo check that the class-``cls`` mass of the slab
    ``{x : |(x - m1).eta| >= ||eta||^2 / 2}`` is at most ``h_cls(||eta|| / 4)``.

    Returns a dict with ``lhs``, ``rhs``, ``stderr``, ``holds`` (``lhs <= rhs +
    3 stderr``), ``applicable`` and ``two_sided_condition``.  When the norm
    condition fails the audit is skipped and ``holds`` is ``None``.

    The containment argument behind the inequality needs
    ``|eta.(m1 - m0)| <= eta.eta / 4``; the norm condition only bounds the
    signed value, so for a trigger with negative cosine and small norm the
    class-0 mass of the slab can exceed the right-hand side.
    ``two_sided_condition`` reports whether the stronger condition holds.
    """
    eta = _eta(trigger)
    s = float(np.linalg.norm(eta))
    two_sided = bool(abs(float(eta @ model.mean_difference)) <= 0.25 * s * s)
    if not check_norm_condition(trigger, model):
        return {"lhs": float("nan"), "rhs": float("nan"), "stderr": float("nan"),
                "holds": None, "applicable": False, "two_sided_condition": two_sided}
    X = sample_class(model, cls, int(n_mc), seed)
    inside = np.abs((X - model.mean1) @ eta) >= 0.5 * s * s
    lhs = float(np.mean(inside))
    se = math.sqrt(max(lhs * (1.0 - lhs), 0.0) / n_mc)
    rhs = tail_h(model, cls, eta, s / 4.0)
    return {"lhs": lhs, "rhs": rhs, "stderr": se, "holds": bool(lhs <= rhs + 3.0 * se),
            "applicable": True, "two_sided_condition": two_sided}


def optimal_trigger(covariance, s):
    """``s`` times the eigenvector of the smallest eigenvalue.

    Warns with :class:`EigenvalueTieWarning` when that eigenvalue is repeated.
    """
    if not s > 0:
        raise PreconditionError("trigger magnitude must be positive")
    eig = eigen_directions(covariance)
    vals = eig.values
    if vals.size > 1 and math.isclose(vals[-1], vals[-2], rel_tol=1e-9, abs_tol=1e-15):
        warnings.warn("smallest eigenvalue is repeated; returning the last eigenvector",
                      EigenvalueTieWarning, stacklevel=2)
    return Trigger(s * eig.smallest_direction)


def magnitude_threshold(sigma_p, gamma, n, regime="success"):
    """Trigger norm separating success from failure along the weakest direction.

    ``"success"``: ``sqrt(32 sigma_p gamma ln n)``.  ``"failure"``:
    ``sqrt(2 sigma_p gamma ln n)``, the supremum of the proven failure regime.
    Norms in between are not classified.
    """
    if n < 2:
        raise PreconditionError("n must be at least 2")
    if not (sigma_p > 0 and gamma > 0):
        raise PreconditionError("sigma_p and gamma must be positive")
    const = {"success": 32.0, "failure": 2.0}.get(regime)
    if const is None:
        raise PreconditionError(f"unknown regime {regime!r}")
    return math.sqrt(const * sigma_p * gamma * math.log(n))


def mills_bound(z):
    """Upper bound ``sqrt(2/pi) exp(-z^2/2) / z`` on the standard normal tail."""
    if not z > 0:
        raise PreconditionError("z must be positive")
    return math.sqrt(2.0 / math.pi) * math.exp(-0.5 * z * z) / z


def normal_tail(z):
    return float(_std_normal.sf(z))


def gaussian_g_lower_bound(model, cls, trigger, c_radius=None):
    """Closed-form lower bound on the minimum density over the ball of radius
    ``||eta|| / 2`` (hence over any radius ``c <= ||eta|| / 2``)."""
    eta = _eta(trigger)
    if c_radius is not None and float(np.linalg.norm(eta)) < 2.0 * c_radius:
        raise PreconditionError("bound needs ||eta|| >= 2 c")
    model.mean(cls)
    return _gaussian_g_lower_bound(model, eta)
