import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from decaylab.errors import ValidationError
from decaylab.ifs_core import cantor, gauss24, uniform
from decaylab.measure import (decay_exponent, fourier_cylinder, fourier_mc, frostman_exponent,
                              lyapunov, lyapunov_cylinder, sample_points, self_conformal)


@pytest.fixture(scope="module")
def cantor_nu():
    return self_conformal(cantor())


@pytest.fixture(scope="module")
def gauss_nu():
    return self_conformal(gauss24())


def test_weights_validated():
    with pytest.raises(ValidationError):
        self_conformal(cantor(), [Fraction(1, 2), Fraction(1, 3)])
    with pytest.raises(ValidationError):
        self_conformal(cantor(), [1.0])
    assert self_conformal(cantor()).exact


def test_cantor_samples_avoid_middle_third(cantor_nu):
    x = sample_points(cantor_nu, 20000, 30, seed=1)
    assert x.min() >= 0 and x.max() <= 1
    assert not np.any((x > 1 / 3) & (x < 2 / 3))


def test_gauss_samples_in_hull(gauss_nu):
    x = sample_points(gauss_nu, 20000, 20, seed=1)
    assert x.min() >= 0.2 - 1e-12 and x.max() <= 0.5 + 1e-12


def test_sampling_is_deterministic(gauss_nu):
    a = sample_points(gauss_nu, 1000, 20, seed=4)
    b = sample_points(gauss_nu, 1000, 20, seed=4)
    assert np.array_equal(a, b)


def test_zero_frequency(gauss_nu):
    e = fourier_cylinder(gauss_nu, 0)
    assert e.value == 1 and e.error_bound == 0
    m = fourier_mc(gauss_nu, 0, 1000, 10, 0)
    assert m.value == 1 and m.stderr == (0.0, 0.0)


def test_cantor_powers_of_three(cantor_nu):
    f1 = abs(fourier_cylinder(cantor_nu, 1, 1e-7).value)
    for j in range(1, 7):
        assert abs(abs(fourier_cylinder(cantor_nu, 3 ** j, 1e-7).value) - f1) <= 2e-7


def test_tolerance_self_consistency(gauss_nu):
    a = fourier_cylinder(gauss_nu, 10, 1e-6).value
    b = fourier_cylinder(gauss_nu, 10, 1e-8).value
    assert abs(a - b) <= 2e-6


def test_uniform_measure_vanishes_at_integers():
    nu = self_conformal(uniform())
    for q in (1, 2, 7):
        assert abs(fourier_cylinder(nu, q, 1e-3).value) < 1e-10


def test_monte_carlo_cross_check(cantor_nu):
    c = fourier_cylinder(cantor_nu, 1, 1e-8).value
    e = fourier_mc(cantor_nu, 1, 200000, 40, seed=2)
    assert abs(c - e.value) <= 4 * math.hypot(*e.stderr)


def test_decay_exponent_contrast(cantor_nu, gauss_nu):
    fc = decay_exponent(cantor_nu, 3, 3 ** 6, 5, tol=1e-3)
    assert abs(fc.alpha) < 0.05
    fg = decay_exponent(gauss_nu, 16, 4096, 8, tol=1e-3)
    assert fg.alpha > 0


def test_decay_exponent_arguments(cantor_nu):
    with pytest.raises(ValidationError):
        decay_exponent(cantor_nu, 3, 10, 4)


def test_frostman_uniform():
    fit = frostman_exponent(self_conformal(uniform()), np.geomspace(1e-1, 1e-3, 12), 400000, 0)
    assert fit.d == pytest.approx(1.0, abs=0.05)


def test_frostman_cantor(cantor_nu):
    fit = frostman_exponent(cantor_nu, np.geomspace(1e-1, 1e-3, 12), 400000, 0)
    assert fit.d == pytest.approx(math.log(2) / math.log(3), abs=0.05)


def test_lyapunov_values(cantor_nu, gauss_nu):
    est = lyapunov(cantor_nu, 10000, 20, 0)
    assert est.chi == pytest.approx(math.log(3), abs=1e-12) and est.stderr < 1e-12
    assert lyapunov_cylinder(self_conformal(uniform())) == pytest.approx(math.log(2), abs=1e-12)
    g = gauss24()
    a, b = lyapunov(gauss_nu, 50000, 20, 1), lyapunov(gauss_nu, 50000, 20, 2)
    assert g.D <= a.chi <= g.D_prime
    assert abs(a.chi - b.chi) <= 4 * math.hypot(a.stderr, b.stderr)
    assert abs(a.chi - lyapunov_cylinder(gauss_nu)) <= 4 * a.stderr


@settings(max_examples=20, deadline=None)
@given(st.floats(-200, 200))
def test_transform_bounded_and_conjugate(q):
    nu = self_conformal(gauss24())
    a = fourier_cylinder(nu, q, 1e-6).value
    b = fourier_cylinder(nu, -q, 1e-6).value
    assert abs(a) <= 1 + 1e-6
    assert abs(a - b.conjugate()) <= 2e-6
