import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treegate.adjust import (
    adjust_bh,
    adjust_bonferroni,
    adjust_hommel,
    family_error_rate,
)

from _oracles import bh_stepup_reject, closed_testing_hommel

grid_pvalues = st.lists(
    st.integers(1, 100).map(lambda i: i / 100.0), min_size=1, max_size=8
)


def test_bonferroni_examples():
    np.testing.assert_allclose(adjust_bonferroni([0.5]), [0.5])
    np.testing.assert_allclose(adjust_bonferroni([0.01, 0.2]), [0.02, 0.4])
    # threshold view: adjusted p <= alpha iff raw p <= alpha / m
    raw = np.full(100, 0.0005)
    assert np.all(adjust_bonferroni(raw) <= 0.05)
    assert np.all(adjust_bonferroni(raw + 1e-6) > 0.05)


def test_hommel_examples():
    np.testing.assert_array_equal(adjust_hommel([0.4, 0.9]), [0.8, 0.9])
    # (3 * 0.2) / 3 is one ulp off 0.2 in binary floating point
    np.testing.assert_allclose(adjust_hommel([0.2, 0.2, 0.2]), [0.2, 0.2, 0.2], rtol=1e-15)
    np.testing.assert_array_equal(adjust_hommel([0.03]), [0.03])


def test_bh_examples():
    np.testing.assert_allclose(
        adjust_bh([0.01, 0.03, 0.04, 0.05]), [0.04, 0.05, 0.05, 0.05]
    )
    np.testing.assert_allclose(adjust_bh([0.5]), [0.5])
    np.testing.assert_allclose(adjust_bh([0.05, 0.05]), [0.05, 0.05])


def test_family_error_rate_values():
    assert family_error_rate(0.05, 100) == pytest.approx(0.9941, abs=0.0002)
    assert family_error_rate(0.05, 1) == pytest.approx(0.05)
    assert family_error_rate(0.05, 9) == pytest.approx(0.3698, abs=0.0001)


def test_family_error_rate_rejects_dependent_model():
    with pytest.raises(ValueError):
        family_error_rate(0.05, 10, independent=False)
    with pytest.raises(ValueError):
        family_error_rate(0.05, 0)


@pytest.mark.parametrize("bad", [[], [1.5], [-0.1], [np.nan]])
def test_input_validation(bad):
    with pytest.raises(ValueError):
        adjust_bonferroni(bad)


@given(grid_pvalues)
@settings(max_examples=200, deadline=None)
def test_hommel_matches_closed_testing_oracle(pvals):
    np.testing.assert_array_equal(
        adjust_hommel(pvals), closed_testing_hommel(pvals)
    )


@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=10))
@settings(max_examples=150, deadline=None)
def test_adjusted_at_least_raw_and_clamped(pvals):
    raw = np.asarray(pvals)
    for fn in (adjust_bonferroni, adjust_hommel, adjust_bh):
        adjusted = fn(pvals)
        assert np.all(adjusted >= raw - 1e-15)
        assert np.all(adjusted <= 1.0)


@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=10))
@settings(max_examples=150, deadline=None)
def test_hommel_no_more_conservative_than_bonferroni(pvals):
    assert np.all(adjust_hommel(pvals) <= adjust_bonferroni(pvals) + 1e-12)


@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=10))
@settings(max_examples=150, deadline=None)
def test_sorted_adjusted_monotone_in_sorted_raw(pvals):
    order = np.argsort(pvals, kind="stable")
    for fn in (adjust_bonferroni, adjust_hommel, adjust_bh):
        ranked = fn(pvals)[order]
        assert np.all(np.diff(ranked) >= -1e-12)


# p-values on a prime-denominator grid can never sit exactly on an
# alpha*j/m rejection boundary, so the two formulations cannot be split
# by float rounding
@given(
    st.lists(st.integers(1, 996).map(lambda i: i / 997.0), min_size=1, max_size=9),
    st.sampled_from([0.01, 0.05, 0.1, 0.25]),
)
@settings(max_examples=100, deadline=None)
def test_bh_adjusted_reproduces_stepup_rule(pvals, alpha):
    adjusted = adjust_bh(pvals)
    assert {i for i, p in enumerate(adjusted) if p <= alpha} == bh_stepup_reject(
        pvals, alpha
    )
