import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import binomial_lower, binomial_upper
from twopoint.datadriven import (
    Dataset,
    binomial_tail,
    cross_validate,
    derive_seed,
    empirical_moments,
    evaluate_J,
    format_pvalue,
    generate_truncated_mvn,
    robustness_index,
    sign_test,
    solve_saa,
)
from twopoint.errors import CapabilityError, DataError
from twopoint.risk import CVaR, Expectation, VaR


def test_zero_spread_samples_equal_mean():
    d = generate_truncated_mvn([5.0, 2.0], [0.0, 0.0], 0.5, 10, seed=1)
    assert np.all(d.samples == [5.0, 2.0])


def test_sample_mean_band():
    d = generate_truncated_mvn([20.0], [math.sqrt(20.0)], 0.0, 1000, seed=7)
    assert abs(d.samples.mean() - 20.0) <= 3 * math.sqrt(20.0) / math.sqrt(1000)
    assert np.all(d.samples >= 0)


def test_generator_is_deterministic():
    a = generate_truncated_mvn([10.0, 8.0], [3.0, 2.0], 0.4, 50, seed=3)
    b = generate_truncated_mvn([10.0, 8.0], [3.0, 2.0], 0.4, 50, seed=3)
    assert np.array_equal(a.samples, b.samples)
    r = generate_truncated_mvn([1.0, 1.0], [3.0, 2.0], 0.4, 50, seed=3, mode="reject")
    assert np.all(r.samples >= 0) and r.n == 50


def test_derive_seed_is_stable():
    assert derive_seed(0, "a", 1) == derive_seed(0, "a", 1)
    assert derive_seed(0, "a", 1) != derive_seed(0, "a", 2)


def test_empirical_moments():
    m = empirical_moments(Dataset([[0.0], [20.0]]))
    assert m.mu.tolist() == [10.0] and m.sigma.tolist() == [10.0]
    m = empirical_moments(Dataset([[7.0, 3.0]]))
    assert m.mu.tolist() == [7.0, 3.0] and m.sigma.tolist() == [0.0, 0.0]
    m = empirical_moments(Dataset([[0.0], [10.0], [20.0]]))
    assert m.sigma[0] == pytest.approx(math.sqrt(200 / 3), rel=1e-15)


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset([[-1.0]])
    with pytest.raises(DataError):
        Dataset(np.zeros((0, 2)))


def test_saa_examples(newsvendor):
    x, val = solve_saa(newsvendor, Dataset([[10.0]]))
    assert x[0] == pytest.approx(10.0, abs=1e-6) and val == pytest.approx(-20.0, abs=1e-7)
    x, val = solve_saa(newsvendor, Dataset([[0.0], [0.0]]))
    assert x[0] == pytest.approx(0.0, abs=1e-6) and val == pytest.approx(0.0, abs=1e-7)
    x, val = solve_saa(newsvendor, Dataset([[0.0], [11.0]]), Expectation())
    assert x[0] == pytest.approx(11.0, abs=1e-6) and val == pytest.approx(-5.5, abs=1e-7)
    with pytest.raises(CapabilityError):
        solve_saa(newsvendor, Dataset([[1.0]]), VaR(0.1))


def test_out_of_sample_cost(newsvendor):
    assert evaluate_J(newsvendor, [10.0], Dataset([[10.0]])) == pytest.approx(-20.0, abs=1e-7)
    assert evaluate_J(newsvendor, [0.0], Dataset([[10.0]])) == 0.0
    data = Dataset([[0.0]] + [[11.0]] * 10)
    assert evaluate_J(newsvendor, [11.0], data, CVaR(0.05)) == pytest.approx(11.0, abs=1e-7)


def test_cv_identical_rows_tie_to_origin(newsvendor):
    res = cross_validate(newsvendor, Dataset([[10.0]] * 10), Expectation(), folds=5, seed=0)
    assert (res.kappa_star, res.eta_star) == (0.0, 0.0)


def test_cv_argmin_and_determinism(newsvendor):
    d = generate_truncated_mvn([10.0], [3.0], 0.0, 40, seed=11)
    a = cross_validate(newsvendor, d, CVaR(0.05), folds=5, seed=2, grid=(0.0, 1.0))
    b = cross_validate(newsvendor, d, CVaR(0.05), folds=5, seed=2, grid=(0.0, 1.0))
    i, j = a.grid.index(a.kappa_star), a.grid.index(a.eta_star)
    assert a.costs[i, j] == a.costs.min()
    assert a.to_dict() == b.to_dict()


def test_cv_needs_enough_rows(newsvendor):
    with pytest.raises(DataError):
        cross_validate(newsvendor, Dataset([[1.0]] * 3), folds=5)


def test_robustness_index_values():
    assert robustness_index(-10.0, -10.0, -50.0) == 0.0
    assert robustness_index(-50.0, -40.0, -100.0) == pytest.approx(0.1)
    assert robustness_index(-40.0, -50.0, -100.0) == pytest.approx(-0.1)
    assert math.isnan(robustness_index(-1.0, -2.0, 0.0))


def test_sign_test_examples():
    assert binomial_tail(10, 8, "plus") == Fraction(56, 1024)
    assert binomial_tail(1, 1, "plus") == Fraction(1, 2)
    assert binomial_tail(10, 5, "plus") >= Fraction(1, 2)
    res = sign_test([-1.0] * 8 + [1.0] * 2)
    assert res.n == 10 and res.k_neg == 8 and res.p_exact == Fraction(56, 1024)
    assert not sign_test([0.0, 0.0]).defined


def test_pvalue_below_float_range():
    p = binomial_tail(2000, 2000, "plus")
    assert float(p) == 0.0
    assert format_pvalue(p).endswith("e-603")


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 14), st.data())
def test_binomial_tail_against_enumeration(n, data):
    k = data.draw(st.integers(0, n))
    assert binomial_tail(n, k, "plus") == binomial_upper(n, k)
    assert binomial_tail(n, k, "minus") == binomial_lower(n, k)
