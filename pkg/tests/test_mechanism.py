import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twopoint.errors import DomainError
from twopoint.mechanism import (
    MechanismParams,
    TwoPointDistribution,
    build_two_point,
    moment_membership,
    moment_outer,
    outer_membership,
    params_from_ratios,
    tau_max,
    wasserstein_sigma_hat,
)
from twopoint.model import MomentInfo, ScaleIndex, WassersteinInfo

R10 = math.sqrt(10.0)


def test_tau_max_values():
    assert tau_max([10.0], [R10]) == pytest.approx(10 / 11, abs=1e-15)
    assert tau_max([10.0], [0.0]) == 1.0
    assert tau_max([20.0, 40.0], [math.sqrt(20), math.sqrt(40)]) == pytest.approx(20 / 21, abs=1e-15)


def test_tau_max_zero_mean_with_spread():
    with pytest.raises(DomainError):
        tau_max([0.0, 5.0], [1.0, 1.0])


def test_extreme_atoms():
    d2 = build_two_point([10.0], MechanismParams([R10], 10 / 11))
    assert d2.d_l[0] == pytest.approx(0.0, abs=1e-12)
    assert d2.d_h[0] == pytest.approx(11.0, abs=1e-12)
    assert d2.tau == pytest.approx(10 / 11, abs=1e-15)


def test_tau_as_fraction_pair():
    assert MechanismParams([R10], (10, 11)).tau == 10 / 11


def test_dirac_when_tau_zero():
    d2 = build_two_point([10.0], MechanismParams([R10], 0.0))
    assert d2.is_dirac
    assert d2.atoms()[0][0].tolist() == [10.0]


def test_scaled_atoms_k4():
    d2 = build_two_point([10.0], MechanismParams([R10], 10 / 11), ScaleIndex(4.0, 1.0))
    # d_l = 40 - sqrt(10) * 2 sqrt(10), d_h = 40 + 2 sqrt(10) / sqrt(10)
    assert d2.d_l[0] == pytest.approx(20.0, abs=1e-12)
    assert d2.d_h[0] == pytest.approx(42.0, abs=1e-12)


def test_tau_above_max_rejected():
    with pytest.raises(DomainError):
        build_two_point([10.0], MechanismParams([R10], 0.95))


def test_ratio_grid_bounds():
    with pytest.raises(DomainError):
        params_from_ratios([10.0], [R10], 1.5, 0.5)
    p = params_from_ratios([10.0], [R10], 0.0, 1.0)
    assert p.tau == 0.0


def test_wasserstein_sigma_hat():
    assert wasserstein_sigma_hat(WassersteinInfo([1.0], [[1.0]], 0.0))[0] == pytest.approx(math.sqrt(2))
    assert wasserstein_sigma_hat(WassersteinInfo([1.0], [[0.0]], 0.0))[0] == 0.0
    sh = wasserstein_sigma_hat(WassersteinInfo([1.0, 2.0], np.diag([2.0, 3.0]), 1.0))
    assert sh == pytest.approx([math.sqrt(12)] * 2)


def test_outer_membership():
    w = WassersteinInfo([10.0, 5.0], np.diag([2.0, 3.0]), 1.0)
    m = moment_outer(w)
    d2 = build_two_point(m.mu, params_from_ratios(m.mu, m.sigma, 0.8, 0.5))
    assert outer_membership(d2.mean(), d2.variance(), w)
    assert outer_membership(w.mu_hat, [0.0, 0.0], w)
    assert not outer_membership(w.mu_hat + [2.0, 0.0], [0.0, 0.0], w)


def test_atom_order_enforced():
    with pytest.raises(DomainError):
        TwoPointDistribution([5.0], [4.0], 0.5)


@settings(max_examples=300, deadline=None)
@given(
    st.floats(0.5, 100),
    st.floats(0.05, 1.0),
    st.one_of(st.just(0.0), st.floats(1e-6, 1.0)),
    st.floats(1.0, 50.0),
    st.floats(1.0, 1.99),
)
def test_moment_identities(mu, ratio, eta, k, s):
    sigma = ratio * mu
    p = params_from_ratios([mu], [sigma], 1.0, eta)
    idx = ScaleIndex(k, s)
    d2 = build_two_point([mu], p, idx)
    assert d2.d_l[0] >= 0
    assert d2.mean()[0] == pytest.approx(k * mu, rel=1e-9)
    if not d2.is_dirac:
        assert d2.variance()[0] == pytest.approx(k**s * sigma**2, rel=1e-9)
    ok = moment_membership(d2, MomentInfo([mu], [sigma]), idx)
    assert all(ok.values())


def test_small_tau_converges_to_mean():
    mu, vs = 10.0, R10
    for tau in (1e-2, 1e-4, 1e-6):
        d2 = build_two_point([mu], MechanismParams([vs], tau))
        assert abs(d2.d_l[0] - mu) <= 2 * math.sqrt(tau) * vs
        assert tau * d2.d_h[0] <= mu + vs
