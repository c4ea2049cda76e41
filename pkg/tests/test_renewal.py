import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from decaylab.errors import CostCapExceeded, LatticeDetected, ValidationError
from decaylab.ifs_core import cantor, gauss24, uniform
from decaylab.measure import increments, self_conformal
from decaylab.renewal import (Mollifier, PSI_MASS, detect_lattice, equidistribution_limit,
                              equidistribution_test, lyapunov_exponent, mollify, overshoot_check,
                              renewal_apply, renewal_limit, residue_cutoff, walk_sample,
                              walk_samples)


@pytest.fixture(scope="module")
def gauss_nu():
    return self_conformal(gauss24())


@pytest.fixture(scope="module")
def cantor_nu():
    return self_conformal(cantor())


def test_cantor_walk_is_deterministic(cantor_nu):
    w = walk_sample(cantor_nu, 5)
    assert w.tau == math.ceil(5 / math.log(3)) == 5
    assert w.S_tau == pytest.approx(5 * math.log(3), abs=1e-12)


def test_gauss_overshoot_window(gauss_nu):
    w = walk_samples(gauss_nu, 10, 10000, seed=0)
    assert np.all(w.S_tau >= 10) and np.all(w.S_tau <= 10 + math.log(25) + 1e-9)
    assert np.all(w.beta >= w.tau)


def test_small_level_stops_at_once(gauss_nu):
    w = walk_samples(gauss_nu, 0.5 * gauss_nu.ifs.D, 1000, seed=0)
    assert np.all(w.tau == 1)


def test_walk_reproducible(gauss_nu):
    a = walk_samples(gauss_nu, 8, 500, seed=3)
    b = walk_samples(gauss_nu, 8, 500, seed=3)
    assert np.array_equal(a.S_tau, b.S_tau) and np.array_equal(a.tail, b.tail)


def test_overshoot_check_small_levels(gauss_nu):
    for k in (1, 2, 3, 6):
        assert overshoot_check(gauss_nu, k, 20000, seed=k).ok


def test_renewal_bound_for_window(gauss_nu):
    Dp = gauss_nu.ifs.D_prime

    def f(y, x):
        return ((x >= -Dp) & (x <= 0)).astype(float) + 0 * y
    vals = [renewal_apply(gauss_nu, f, 0.3, t, (-Dp, 0)).value for t in (2, 4, 6, 8)]
    # every walk spends at most D'/D + 1 generations in a window of length D'
    assert max(vals) <= Dp / gauss_nu.ifs.D + 1


def test_renewal_zero_function(gauss_nu):
    r = renewal_apply(gauss_nu, lambda y, x: 0 * x, 0.3, 5, (0, 1))
    assert r.value == 0 and r.method == "exact"


def test_renewal_cost_cap(gauss_nu):
    with pytest.raises(CostCapExceeded):
        renewal_apply(gauss_nu, lambda y, x: 0 * x, 0.3, 40, (0, 1), method="exact", cap=1e3)


def test_renewal_lattice_periodicity(cantor_nu):
    def f(y, x):
        return np.exp(-x ** 2) * (np.abs(x) <= 3) + 0 * y
    a = renewal_apply(cantor_nu, f, 0.1, 4.0, (-3, 3)).value
    b = renewal_apply(cantor_nu, f, 0.1, 4.0 + math.log(3), (-3, 3)).value
    assert a == pytest.approx(b, abs=1e-9)


def test_exact_and_monte_carlo_agree(gauss_nu):
    def f(y, x):
        return np.where((x >= 0) & (x <= 1), np.sin(np.pi * x) * (1 + y), 0.0)
    e = renewal_apply(gauss_nu, f, 0.3, 6, (0, 1), method="exact")
    m = renewal_apply(gauss_nu, f, 0.3, 6, (0, 1), method="mc", n_samples=100000)
    assert abs(e.value - m.value) <= 4 * m.stderr


def test_unit_window_limit(gauss_nu):
    def f(y, u):
        return np.where((u >= 0) & (u <= 1), 1.0, 0.0) + 0 * y
    lim = renewal_limit(gauss_nu, f, 10, (0, 1), n_samples=2000)
    assert lim.value == pytest.approx(1 / lyapunov_exponent(gauss_nu), rel=1e-9)
    assert renewal_limit(gauss_nu, lambda y, u: 0 * u, 10, (0, 1)).value == 0


def test_renewal_approaches_limit(gauss_nu):
    def f(y, u):
        return np.where((u >= 0) & (u <= 1), np.sin(np.pi * u) ** 2, 0.0) + 0 * y
    lim = renewal_limit(gauss_nu, f, 10, (0, 1), n_samples=2000).value
    gaps = [abs(renewal_apply(gauss_nu, f, 0.3, t, (0, 1)).value - lim) for t in (1, 6)]
    assert gaps[1] < gaps[0]


def test_constant_test_function_is_exact(gauss_nu):
    tab = residue_cutoff(gauss_nu, np.ones_like, 8, 20000, seed=0)
    assert np.all(tab.estimates == 1.0) and tab.limit == 1.0
    res = equidistribution_test(gauss_nu, np.ones_like, [6, 8], 5000, seed=0)
    assert np.all(res.errors == 0)


def test_linear_test_function_limit(gauss_nu):
    y = increments(gauss_nu, 400000, 30, seed=5)
    chi = y.mean()
    mc = (y ** 2).mean() / (2 * chi)
    se = (y ** 2).std() / math.sqrt(y.size) / (2 * chi)
    lim = equidistribution_limit(gauss_nu, lambda u: u)
    assert abs(lim - mc) <= 4 * se
    # the walk approaches the limit slowly and with oscillation (near-lattice increments)
    gaps = [abs(walk_samples(gauss_nu, k, 100000, seed=1, tail_len=0).overshoot.mean() - lim)
            for k in (12, 160)]
    assert gaps[1] < gaps[0]


def test_residue_needs_large_level(gauss_nu):
    with pytest.raises(ValidationError):
        residue_cutoff(gauss_nu, np.ones_like, 2, 100, seed=0)


def test_lattice_detection(cantor_nu, gauss_nu):
    assert detect_lattice(cantor_nu) == pytest.approx(math.log(3))
    assert detect_lattice(self_conformal(uniform())) == pytest.approx(math.log(2))
    assert detect_lattice(gauss_nu) is None
    with pytest.raises(LatticeDetected):
        equidistribution_test(cantor_nu, np.ones_like, [6, 8], 1000, seed=0)


def test_cantor_overshoot_degenerate(cantor_nu):
    k = 7.3
    tab = residue_cutoff(cantor_nu, lambda u: u, k, 1000, seed=0)
    expected = math.ceil(k / math.log(3)) * math.log(3) - k
    assert np.allclose(tab.estimates, expected, atol=1e-12)


def test_kernel_mass():
    psi = Mollifier(0.5)
    x = np.linspace(-psi.radius, psi.radius, 200001)
    assert np.trapezoid(psi(x), x) == pytest.approx(1.0, abs=1e-8)
    assert PSI_MASS * psi.C0 == pytest.approx(1.0)


def test_mollify_constant_interior():
    x = np.linspace(0, 4, 4001)
    out = mollify(x, np.ones_like(x), 0.3)
    half = int(0.09 / 0.001) + 1
    assert np.max(np.abs(out[half:-half] - 1)) < 1e-14


def test_mollify_indicator_half():
    x = np.linspace(0, 4, 4001)
    a, b, delta = 1.0, 2.0, 0.3
    ind = ((x >= a) & (x <= b)).astype(float)
    out = mollify(x, ind, delta)
    inside = (x >= a) & (x <= b)
    assert out[inside].min() >= 0.5


def test_mollify_preserves_integral():
    x = np.linspace(0, 4, 4001)
    v = np.where(np.abs(x - 2) < 1, np.cos(np.pi * (x - 2) / 2) ** 2, 0.0)
    assert mollify(x, v, 0.3).sum() == pytest.approx(v.sum(), abs=1e-10)


def test_mollify_checks():
    x = np.linspace(0, 1, 101)
    with pytest.raises(ValidationError):
        mollify(x, x, 1.5)
    with pytest.raises(ValidationError):
        mollify(x, x, 0.1)
    with pytest.raises(ValidationError):
        mollify(np.r_[0.0, 0.5, 0.6], np.zeros(3), 0.5)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 14), st.integers(0, 2 ** 31))
def test_overshoot_invariant_property(k, seed):
    nu = self_conformal(gauss24())
    w = walk_samples(nu, k, 200, seed=seed)
    o = w.overshoot
    assert np.all(o >= -1e-9) and np.all(o <= nu.ifs.D_prime + 1e-9)
    assert np.all(w.beta >= w.tau)
