import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from backdoorlab.distributions import Dataset, GaussianClassPair, sample_clean
from backdoorlab.exceptions import PreconditionError
from backdoorlab.poisoning import Trigger
from backdoorlab.diagnostics import (
    DIAGNOSTIC_HEADER,
    degenerate_directions,
    relative_change,
    write_diagnostics_csv,
)


class TestRelativeChange:
    def test_benchmark_orthogonal_trigger(self, bench):
        clean = sample_clean(bench, 20_000, seed=0)
        d = relative_change(clean, trigger=Trigger([0.0, 1.0]))
        assert d[0].relative_change == 0.0
        assert d[1].relative_change == pytest.approx(np.sqrt(2.0), rel=0.02)
        assert d[1].delta == 1.0

    def test_zero_trigger(self, bench):
        clean = sample_clean(bench, 100, seed=1)
        assert all(x.relative_change == 0.0 for x in relative_change(clean, trigger=[0.0, 0.0]))

    def test_degenerate_dimension_is_infinite(self, degenerate):
        clean = sample_clean(degenerate, 200, seed=2)
        d = relative_change(clean, trigger=Trigger([0.0, 0.1]))
        assert d[1].infinite and d[1].degenerate
        assert not d[0].infinite

    def test_degenerate_untouched_is_zero(self, degenerate):
        clean = sample_clean(degenerate, 200, seed=2)
        assert relative_change(clean, trigger=Trigger([1.0, 0.0]))[1].relative_change == 0.0

    def test_paired_datasets_use_mean_difference(self):
        X = np.array([[0.0, 1.0], [2.0, 3.0], [4.0, 2.0]])
        B = X + np.array([1.5, -0.5])
        d = relative_change(X, backdoored=B)
        assert d[0].relative_change == pytest.approx(1.5 / 2.0)
        assert d[1].relative_change == pytest.approx(0.5 / 1.0)

    def test_needs_one_of(self):
        X = np.zeros((3, 2))
        with pytest.raises(PreconditionError):
            relative_change(X)
        with pytest.raises(PreconditionError):
            relative_change(X, backdoored=X, trigger=[0.0, 0.0])

    def test_errors(self):
        with pytest.raises(PreconditionError):
            relative_change(np.zeros((1, 2)), trigger=[0.0, 1.0])
        with pytest.raises(PreconditionError):
            relative_change(np.zeros((4, 2)), trigger=[0.0, 1.0, 2.0])
        with pytest.raises(PreconditionError):
            relative_change(np.zeros((4, 2)), backdoored=np.zeros((4, 3)))

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-100, 100), st.floats(-100, 100))
    def test_translation_invariance(self, a, b):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(50, 2))
        B = X + rng.normal(size=(50, 2)) * 0.3 + 0.5
        shift = np.array([a, b])
        base = [d.relative_change for d in relative_change(X, backdoored=B)]
        moved = [d.relative_change for d in relative_change(X + shift, backdoored=B + shift)]
        np.testing.assert_allclose(moved, base, rtol=1e-6, atol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.01, 100))
    def test_scale_invariance(self, kappa):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(40, 3))
        eta = np.array([0.2, -1.0, 0.7])
        scale = np.array([kappa, 1.0, 1.0])
        base = [d.relative_change for d in relative_change(X, trigger=eta)]
        scaled = [d.relative_change for d in relative_change(X * scale, trigger=eta * scale)]
        np.testing.assert_allclose(scaled, base, rtol=1e-12)


class TestDegenerateDirections:
    def test_singular_covariance(self):
        out = degenerate_directions(np.diag([1.0, 0.0]))
        assert len(out) == 1
        np.testing.assert_allclose(out[0][0], [0.0, 1.0])
        assert out[0][1] == 0.0

    def test_full_rank(self):
        assert degenerate_directions(np.diag([3.0, 0.5])) == []

    def test_near_degenerate_samples(self):
        m = GaussianClassPair([0.0, 0.0], [1.0, 0.0], np.diag([1.0, 1e-14]))
        out = degenerate_directions(sample_clean(m, 1000, seed=3), tol=1e-10)
        assert len(out) == 1
        assert abs(out[0][0][1]) == pytest.approx(1.0, abs=1e-6)

    def test_sorted_ascending(self):
        out = degenerate_directions(np.diag([0.0, 1e-12, 5.0]), tol=1e-9)
        assert [v for _, v in out] == sorted(v for _, v in out)
        assert len(out) == 2

    def test_too_few_points(self):
        with pytest.raises(PreconditionError):
            degenerate_directions(Dataset([[0.0, 1.0]], [1]))


def test_csv_output(degenerate, tmp_path):
    clean = sample_clean(degenerate, 50, seed=4)
    diags = relative_change(clean, trigger=Trigger([0.0, 0.1]))
    path = tmp_path / "diag.csv"
    write_diagnostics_csv(diags, path)
    assert b"\r\n" not in path.read_bytes()
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == DIAGNOSTIC_HEADER
    assert rows[2][2] == "inf" and rows[2][3] == "1"
    assert float(rows[1][1]) == diags[0].variance
