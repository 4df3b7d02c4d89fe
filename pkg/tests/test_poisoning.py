import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from backdoorlab.distributions import Dataset, clean_regression_fn, input_density, sample_clean
from backdoorlab.exceptions import OffSupportError, PreconditionError
from backdoorlab.poisoning import (
    PoisonedDataset,
    Trigger,
    backdoor_regression_fn,
    make_trigger,
    poison_dataset,
    poisoned_input_density,
    poisoned_regression_fn,
    read_xyz_csv,
    sample_backdoor_inputs,
)


class TestTrigger:
    def test_accessors(self):
        t = Trigger([3.0, 4.0])
        assert t.norm() == 5.0
        assert t.target_label == 0
        assert t.cosine_with([1.0, 0.0]) == pytest.approx(0.6)

    def test_rejects_non_finite(self):
        with pytest.raises(PreconditionError):
            Trigger([np.nan, 1.0])

    @pytest.mark.parametrize("norm,angle,expected", [
        (3, 0, (-3.0, 0.0)),
        (1, 90, (0.0, -1.0)),
        (5, 180, (5.0, 0.0)),
    ])
    def test_benchmark_angles(self, bench, norm, angle, expected):
        np.testing.assert_allclose(make_trigger(norm, angle, bench).eta, expected, atol=1e-12)

    def test_matches_rotation_matrix(self, bench):
        d = bench.mean_difference / np.linalg.norm(bench.mean_difference)
        for angle in (0, 45, 90, 135, 180, 270):
            th = np.deg2rad(angle)
            R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
            np.testing.assert_allclose(make_trigger(2.0, angle, bench).eta, 2.0 * R @ d,
                                       atol=1e-12)

    def test_needs_plane_beyond_two_dims(self):
        from backdoorlab.distributions import GaussianClassPair

        m = GaussianClassPair(np.zeros(3), np.ones(3), np.eye(3))
        with pytest.raises(PreconditionError):
            make_trigger(1.0, 90, m)
        t = make_trigger(1.0, 90, m, plane=[1.0, 0.0, 0.0])
        assert t.cosine_with(m.mean_difference) == pytest.approx(0.0, abs=1e-12)
        assert t.norm() == pytest.approx(1.0)

    def test_coincident_means(self):
        from backdoorlab.distributions import GaussianClassPair

        with pytest.raises(PreconditionError):
            make_trigger(1.0, 0, GaussianClassPair([0, 0], [0, 0], np.eye(2)))


class TestPoisonDataset:
    def test_forced_flag(self):
        clean = Dataset([[1.0, 1.0]], [1])
        out = poison_dataset(clean, 0.2, Trigger([0.0, 2.0]), flags=[True])
        np.testing.assert_array_equal(out.X, [[1.0, 3.0]])
        assert out.y.tolist() == [0]

    def test_no_flags_is_identity(self, bench):
        clean = sample_clean(bench, 20, seed=1)
        out = poison_dataset(clean, 0.2, Trigger([0.0, 2.0]), flags=np.zeros(20, bool))
        np.testing.assert_array_equal(out.X, clean.X)
        np.testing.assert_array_equal(out.y, clean.y)

    def test_flag_fraction(self, bench):
        clean = sample_clean(bench, 10**5, seed=2)
        out = poison_dataset(clean, 0.2, Trigger([0.0, 1.0]), seed=3)
        assert abs(out.flags.mean() - 0.2) <= 3 * np.sqrt(0.16 / 10**5)

    @pytest.mark.parametrize("rho", [0.0, 1.0, 1.5])
    def test_rho_outside_open_interval(self, bench, rho):
        clean = sample_clean(bench, 5, seed=0)
        with pytest.raises(PreconditionError):
            poison_dataset(clean, rho, Trigger([0.0, 1.0]), seed=0)

    def test_dimension_mismatch(self, bench):
        clean = sample_clean(bench, 5, seed=0)
        with pytest.raises(PreconditionError):
            poison_dataset(clean, 0.2, Trigger([0.0, 1.0, 2.0]), seed=0)

    def test_flagged_points_must_carry_target_label(self):
        with pytest.raises(PreconditionError):
            PoisonedDataset([[0.0]], [1], [True], 0.2, Trigger([1.0]))

    def test_per_point_locality(self, bench):
        clean = sample_clean(bench, 30, seed=4)
        eta = Trigger([0.5, -0.5])
        out = poison_dataset(clean, 0.3, eta, seed=9)
        for i in range(30):
            if out.flags[i]:
                np.testing.assert_array_equal(out.X[i], clean.X[i] + eta.eta)
                assert out.y[i] == 0
            else:
                np.testing.assert_array_equal(out.X[i], clean.X[i])
                assert out.y[i] == clean.y[i]

    def test_conditional_laws(self, bench):
        clean = sample_clean(bench, 40_000, seed=5)
        out = poison_dataset(clean, 0.2, Trigger([0.0, 1.0]), seed=6)
        kept = out.X[~out.flags]
        moved = out.X[out.flags]
        # unflagged inputs keep the clean law, flagged ones are shifted copies
        assert abs(kept[:, 1].mean()) <= 3 * np.sqrt(0.5 / len(kept))
        assert abs(moved[:, 1].mean() - 1.0) <= 3 * np.sqrt(0.5 / len(moved))

    def test_csv_round_trip(self, bench, tmp_path):
        clean = sample_clean(bench, 25, seed=7)
        out = poison_dataset(clean, 0.4, Trigger([0.1, 0.2]), seed=8)
        path = tmp_path / "poisoned.csv"
        out.to_csv(path)
        text = path.read_bytes()
        assert b"\r\n" not in text
        assert text.splitlines()[0] == b"x_1,x_2,y,z"
        again = PoisonedDataset.from_csv(path, out.rho, out.trigger)
        np.testing.assert_array_equal(again.X, out.X)
        np.testing.assert_array_equal(again.y, out.y)
        np.testing.assert_array_equal(again.z, out.z)
        X, y, z = read_xyz_csv(path)
        np.testing.assert_array_equal(X, out.X)


class TestBackdoorInputs:
    def test_zero_trigger_matches_clean(self, bench):
        a = sample_backdoor_inputs(bench, Trigger([0.0, 0.0]), 50_000, seed=1)
        b = sample_clean(bench, 50_000, seed=2).X
        diff = a.mean(axis=0) - b.mean(axis=0)
        sd = np.sqrt((a.var(axis=0) + b.var(axis=0)) / 50_000)
        assert np.all(np.abs(diff) <= 3 * sd)

    def test_shifted_mean(self, bench):
        X = sample_backdoor_inputs(bench, Trigger([0.0, 1.0]), 10**5, seed=3)
        assert abs(X[:, 1].mean() - 1.0) <= 3 * np.sqrt(0.5 / 10**5)

    def test_deterministic(self, bench):
        t = Trigger([0.0, 1.0])
        a = sample_backdoor_inputs(bench, t, 10, seed=4)
        b = sample_backdoor_inputs(bench, t, 10, seed=4)
        assert a.tobytes() == b.tobytes()


class TestPoisonedRegression:
    def test_zero_rho_is_clean(self, bench):
        rng = np.random.default_rng(0)
        x = rng.normal(0, 3, size=(100, 2))
        np.testing.assert_allclose(poisoned_regression_fn(bench, 0.0, Trigger([0.0, 1.0]), x),
                                   clean_regression_fn(bench, x), rtol=1e-14, atol=0)

    def test_far_backdoor_mass_leaves_clean_posterior(self, bench):
        x = bench.mean1
        v = poisoned_regression_fn(bench, 0.2, Trigger([0.0, 6.0]), x)
        assert v == pytest.approx(clean_regression_fn(bench, x), abs=1e-6)

    def test_pointwise_dominance(self, bench):
        rng = np.random.default_rng(1)
        x = rng.normal(0, 4, size=(1000, 2))
        t = Trigger([1.0, 2.0])
        assert np.all(poisoned_regression_fn(bench, 0.3, t, x)
                      <= clean_regression_fn(bench, x) * (1 + 1e-12))

    def test_backdoor_reference_is_zero(self, bench):
        assert np.all(backdoor_regression_fn(np.ones((3, 2))) == 0.0)

    def test_degenerate_off_support(self, degenerate):
        with pytest.raises(OffSupportError):
            poisoned_regression_fn(degenerate, 0.2, Trigger([0.0, 0.1]), [0.0, 0.05])

    def test_degenerate_on_backdoor_support(self, degenerate):
        # only backdoor mass lives at x2 = 0.1, and it all carries label 0
        assert poisoned_regression_fn(degenerate, 0.2, Trigger([0.0, 0.1]), [-3.0, 0.1]) == 0.0


class TestPoisonedDensity:
    def test_zero_rho(self, bench):
        x = np.array([[0.3, 0.2], [-1.0, 2.0]])
        np.testing.assert_array_equal(poisoned_input_density(bench, 0.0, Trigger([1.0, 1.0]), x),
                                      input_density(bench, x))

    def test_zero_trigger(self, bench):
        x = np.array([[0.3, 0.2], [-1.0, 2.0]])
        np.testing.assert_allclose(poisoned_input_density(bench, 0.4, Trigger([0.0, 0.0]), x),
                                   input_density(bench, x), rtol=1e-14)

    def test_mixture_formula(self, bench):
        t = Trigger([0.5, -1.0])
        x = np.array([[0.1, 0.7]])
        expect = 0.8 * input_density(bench, x) + 0.2 * input_density(bench, x - t.eta)
        np.testing.assert_allclose(poisoned_input_density(bench, 0.2, t, x), expect, rtol=1e-14)

    def test_integrates_to_one(self, bench):
        t = Trigger([0.0, 1.0])

        def f(x2, x1):
            return float(poisoned_input_density(bench, 0.2, t, [x1, x2]))

        total, _ = integrate.dblquad(f, -15, 15, -8, 9, epsabs=1e-8)
        assert total == pytest.approx(1.0, abs=1e-3)


def test_identity_backdoor_vs_clean_gap(bench):
    """E_bd f_poi = (1 - rho)/rho * E_cl |f_poi - f_cl| by change of variables."""
    rho, t = 0.2, Trigger([0.0, 1.0])
    X = sample_clean(bench, 10**5, seed=10).X
    lhs = poisoned_regression_fn(bench, rho, t, X + t.eta)
    rhs = (1 - rho) / rho * np.abs(poisoned_regression_fn(bench, rho, t, X)
                                   - clean_regression_fn(bench, X))
    diff = lhs - rhs
    # same draws on both sides; the identity holds in expectation
    assert abs(diff.mean()) <= 3 * diff.std(ddof=1) / np.sqrt(diff.size)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(-4, 4), st.floats(-4, 4))
def test_poisoned_posterior_in_unit_interval(rho, a, b):
    from backdoorlab.distributions import benchmark_model

    m = benchmark_model()
    x = np.array([[a, b], [b, a]])
    v = poisoned_regression_fn(m, rho, Trigger([a, b]), x)
    assert np.all((v >= 0) & (v <= 1))
