import math
import warnings

import numpy as np
import pytest

import oracles
from backdoorlab.distributions import GaussianClassPair, min_density_g, tail_h
from backdoorlab.exceptions import DegenerateModelError, PreconditionError
from backdoorlab.poisoning import Trigger, make_trigger
from backdoorlab.theory import (
    BoundInputs,
    EigenvalueTieWarning,
    bias_h_max,
    bound_report,
    check_norm_condition,
    default_lower_constants,
    gaussian_g_lower_bound,
    lemma1_audit,
    magnitude_threshold,
    mills_bound,
    normal_tail,
    optimal_trigger,
    theorem1_upper,
    theorem2_lower,
)
from conftest import random_spd


class TestNormCondition:
    def test_orthogonal_passes(self, bench):
        for s in (0.1, 1.0, 50.0):
            assert check_norm_condition(Trigger([0.0, s]), bench)

    def test_parallel_short_fails(self, bench):
        assert not check_norm_condition(make_trigger(5, 0, bench), bench)

    def test_antiparallel_passes(self, bench):
        assert check_norm_condition(make_trigger(0.5, 180, bench), bench)

    def test_zero_vector(self, bench):
        with pytest.raises(PreconditionError):
            check_norm_condition(Trigger([0.0, 0.0]), bench)


class TestUpperBound:
    def test_no_bias(self):
        assert theorem1_upper(BoundInputs(r_poi=0.05, rho=0.2)) == pytest.approx((0.0625, 0.25))

    def test_example(self):
        ub_cl, ub_bd = theorem1_upper(BoundInputs(r_poi=0.05, rho=0.2, h_max=0.1))
        assert ub_cl == pytest.approx(0.1875)
        assert ub_bd == pytest.approx(0.75)

    def test_symmetric_at_half(self):
        ub_cl, ub_bd = theorem1_upper(BoundInputs(r_poi=0.07, rho=0.5, h_max=0.3, alpha=0.5))
        assert ub_cl == ub_bd

    @pytest.mark.parametrize("rho", [0.0, 1.0])
    def test_rho_bounds(self, rho):
        with pytest.raises(PreconditionError):
            BoundInputs(r_poi=0.1, rho=rho)

    def test_exponent_order(self):
        with pytest.raises(PreconditionError):
            BoundInputs(r_poi=0.1, rho=0.2, alpha=1.5)
        with pytest.raises(PreconditionError):
            BoundInputs(r_poi=0.1, rho=0.2, beta=0.5)


class TestLowerBound:
    def test_example(self):
        b = BoundInputs(r_poi=0.3, rho=0.2, beta=2.0, C1=1.0, g1=0.1, C2=0.0)
        lb_cl, lb_bd = theorem2_lower(b)
        assert lb_cl == pytest.approx(4e-4)
        assert lb_bd == pytest.approx(0.64 * 0.01)

    def test_large_risk_is_vacuous(self):
        lb_cl, lb_bd = theorem2_lower(BoundInputs(r_poi=0.5, rho=0.2, g1=0.01))
        assert lb_cl < 0 and lb_bd < 0

    def test_zero_density(self):
        lb_cl, lb_bd = theorem2_lower(BoundInputs(r_poi=0.0, rho=0.2, g1=0.0))
        assert lb_cl <= 0 and lb_bd <= 0

    def test_radius_precondition(self):
        with pytest.raises(PreconditionError):
            theorem2_lower(BoundInputs(r_poi=0.1, rho=0.2, c_radius=1.0), eta_norm=2.0)

    def test_default_constants(self, bench):
        C1, C2 = default_lower_constants(bench, c_radius=1.0, n_mc=100_000, seed=0)
        # P(||X - m1|| <= 1) for X ~ N(m1, diag(3, 0.5))
        assert 0.0 < C1 < 0.25
        assert C2 == 1.0


class TestBoundReport:
    def test_small_trigger_has_no_lower_bound(self, bench):
        rep = bound_report(bench, Trigger([0.0, 1.0]), r_poi=0.05, rho=0.2, C1=0.01, C2=1.0)
        assert math.isnan(rep.lb_cl) and math.isnan(rep.lb_bd)
        assert rep.ub_cl >= 0.05 / 0.8

    def test_large_orthogonal_trigger_has_small_bias(self, bench):
        rep = bound_report(bench, Trigger([0.0, 14.0]), r_poi=0.05, rho=0.2, C1=0.01, C2=1.0)
        assert rep.inputs.h_max < 1e-3
        assert rep.norm_condition_met
        assert "ub_bd" in rep.as_dict()

    def test_bias_matches_tail(self, bench):
        eta = np.array([1.0, 2.0])
        s = np.linalg.norm(eta)
        expect = max(tail_h(bench, 0, eta, s / 4), tail_h(bench, 1, eta, s / 4))
        assert bias_h_max(bench, Trigger(eta)) == expect


class TestSlabAudit:
    def test_orthogonal_trigger(self, bench):
        for cls in (0, 1):
            out = lemma1_audit(bench, cls, Trigger([0.0, 3.0]), n_mc=10**6, seed=cls)
            assert out["applicable"] and out["holds"] and out["two_sided_condition"]

    def test_class_one_matches_half_radius_tail(self, bench):
        eta = Trigger([0.0, 1.5])
        out = lemma1_audit(bench, 1, eta, n_mc=10**6, seed=3)
        exact = tail_h(bench, 1, eta.eta, 0.75)
        assert abs(out["lhs"] - exact) <= 4 * out["stderr"]
        assert exact <= out["rhs"]

    def test_large_trigger(self, bench):
        out = lemma1_audit(bench, 0, Trigger([0.0, 20.0]), n_mc=10**5, seed=0)
        assert out["lhs"] == 0.0 and out["rhs"] < 1e-10

    def test_skipped_when_condition_fails(self, bench):
        out = lemma1_audit(bench, 0, make_trigger(1, 0, bench), n_mc=100, seed=0)
        assert out["holds"] is None and not out["applicable"]

    def test_negative_cosine_short_trigger_breaks_inequality(self, bench):
        # passes the signed condition but not |eta.(m1 - m0)| <= ||eta||^2 / 4
        out = lemma1_audit(bench, 0, make_trigger(3, 180, bench), n_mc=10**5, seed=0)
        assert out["applicable"] and not out["two_sided_condition"]
        assert out["holds"] is False


class TestOptimalTrigger:
    def test_benchmark(self):
        np.testing.assert_allclose(optimal_trigger(np.diag([3.0, 0.5]), 1.0).eta, [0.0, 1.0])

    def test_isotropic_warns(self):
        with pytest.warns(EigenvalueTieWarning):
            t = optimal_trigger(np.eye(2), 2.0)
        assert t.norm() == pytest.approx(2.0)

    def test_degenerate(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            t = optimal_trigger(np.diag([1.0, 0.0]), 0.01)
        np.testing.assert_allclose(t.eta, [0.0, 0.01])

    def test_bad_magnitude(self):
        with pytest.raises(PreconditionError):
            optimal_trigger(np.eye(2), 0.0)

    @pytest.mark.parametrize("s", [1.0, 3.0, 5.0])
    def test_minimizes_bias_over_directions(self, bench, s):
        best = bias_h_max(bench, optimal_trigger(bench.covariance, s))
        for th in np.linspace(0, 2 * np.pi, 36, endpoint=False):
            d = np.array([np.cos(th), np.sin(th)])
            assert best <= bias_h_max(bench, Trigger(s * d)) + 1e-15


class TestThreshold:
    def test_example(self):
        assert magnitude_threshold(0.5, 0.5, 100) == pytest.approx(oracles.THRESHOLD_N100,
                                                                   rel=1e-14)

    def test_unit_log(self):
        assert magnitude_threshold(1.0, 1.0, math.e) == pytest.approx(math.sqrt(32), rel=1e-14)

    def test_failure_below_success(self):
        for n in (2, 10, 1000):
            assert magnitude_threshold(0.3, 2.0, n, "failure") < magnitude_threshold(0.3, 2.0, n)

    @pytest.mark.parametrize("n", [3, 50, 1234])
    def test_sqrt_log_growth(self, n):
        ratio = magnitude_threshold(0.5, 0.5, n * n) / magnitude_threshold(0.5, 0.5, n)
        assert abs(ratio - math.sqrt(2)) <= 1e-12

    def test_rejects(self):
        with pytest.raises(PreconditionError):
            magnitude_threshold(0.5, 0.5, 1)
        with pytest.raises(PreconditionError):
            magnitude_threshold(0.5, 0.5, 10, "maybe")


class TestMills:
    def test_value(self):
        assert mills_bound(1.0) == pytest.approx(oracles.MILLS_AT_1, rel=1e-14)

    def test_dominates_tail(self):
        assert normal_tail(1.0) == pytest.approx(oracles.NORMAL_SF_AT_1, rel=1e-12)
        for z in np.linspace(0.05, 8, 60):
            assert normal_tail(z) <= mills_bound(z)

    def test_decreasing(self):
        z = np.linspace(1, 20, 50)
        assert np.all(np.diff([mills_bound(v) for v in z]) < 0)

    def test_rejects(self):
        with pytest.raises(PreconditionError):
            mills_bound(0.0)


class TestGaussianGLowerBound:
    def test_zero_trigger_is_peak(self, bench):
        assert gaussian_g_lower_bound(bench, 1, Trigger([0.0, 0.0])) == pytest.approx(
            oracles.PEAK_DENSITY_BENCH, rel=1e-12)

    def test_example(self, bench):
        assert gaussian_g_lower_bound(bench, 1, Trigger([0.0, 1.0])) == pytest.approx(
            oracles.G_LOWER_BENCH_ETA01, rel=1e-12)

    def test_rank_deficient(self, degenerate):
        with pytest.raises(DegenerateModelError):
            gaussian_g_lower_bound(degenerate, 1, Trigger([0.0, 1.0]))

    def test_dominated_by_grid(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            S = random_spd(rng, 2)
            m = GaussianClassPair(rng.normal(size=2), rng.normal(size=2), S)
            eta = rng.normal(size=2) * rng.uniform(0.3, 2.0)
            s = float(np.linalg.norm(eta))
            for cls in (0, 1):
                lb = gaussian_g_lower_bound(m, cls, Trigger(eta))
                assert lb <= min_density_g(m, cls, eta, s / 2, method="grid") * (1 + 1e-9)
