import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from decaylab.errors import OrientationReversing, ValidationError
from decaylab.ifs_core import affine, cantor, gauss24, validate_ifs
from decaylab.measure import fourier_cylinder, self_conformal
from decaylab.pipeline import (decay_report, k_of_q, linearization_gap, oscillatory_bound,
                               predicted_rates, schedule, second_iterate)


@pytest.fixture(scope="module")
def smooth_nu():
    # orientation preserving and non-linear: the second iterate of GAUSS24
    return second_iterate(self_conformal(gauss24()))


def test_schedule_inverse():
    eps = 0.05
    q = math.exp(10 * (1 + eps / 7))
    assert k_of_q(q, eps) == pytest.approx(10, abs=1e-12)
    e = schedule([q], eps)[0]
    assert e.r == pytest.approx(math.exp(-10 * eps / 100), rel=1e-12)


def test_schedule_edge_cases():
    assert schedule([]) == []
    with pytest.raises(ValidationError):
        schedule([0.5])
    with pytest.raises(ValidationError):
        schedule([10], eps=0)


@settings(max_examples=50)
@given(st.floats(1e-3, 1.0), st.floats(1.5, 1e12))
def test_linearization_rate_positive(eps, q):
    assert predicted_rates(eps)["linearization"] > 0
    assert predicted_rates(eps)["equidistribution"] > 0
    k = k_of_q(q, eps)
    assert math.exp(k * (1 + eps / 7)) == pytest.approx(q, rel=1e-9)


def test_second_iterate_same_measure():
    nu = self_conformal(gauss24())
    nu2 = second_iterate(nu)
    assert nu2.ifs.orientation_preserving and sum(nu2.p) == 1
    for q in (1.0, 7.5):
        a = fourier_cylinder(nu, q, 1e-8).value
        b = fourier_cylinder(nu2, q, 1e-8).value
        assert abs(a - b) < 1e-7


def test_linearization_needs_preserving_maps():
    with pytest.raises(OrientationReversing):
        linearization_gap(self_conformal(gauss24()), 10, 2, 100, 0)


def test_linearization_small_frequency(smooth_nu):
    g = linearization_gap(smooth_nu, 1.0, 1.0, 500, seed=0)
    assert g.lhs == pytest.approx(abs(fourier_cylinder(smooth_nu, 1.0, 1e-8).value) ** 2, abs=1e-5)
    assert g.ok


def test_linearization_scheduled(smooth_nu):
    for e in schedule([50.0, 400.0], 0.05):
        g = linearization_gap(smooth_nu, e.q, e.k, 500, seed=1)
        assert g.ok and g.bracket_ok


def test_linearization_affine_preserving():
    nu = self_conformal(validate_ifs([affine(0.3, 0.0), affine(0.4, 0.6)]))
    g = linearization_gap(nu, 30.0, k_of_q(30.0, 0.05), 500, seed=0)
    assert g.ok


def test_oscillatory_large_radius(smooth_nu):
    b = oscillatory_bound(smooth_nu, 20.0, 2.5, 2.0, 500, seed=0)
    assert b.sup_mass == 1


def test_oscillatory_low_frequency(smooth_nu):
    b = oscillatory_bound(smooth_nu, 1e-6, 6.0, 0.5, 2000, seed=0)
    assert b.integral_estimate == pytest.approx(smooth_nu.ifs.D_prime, rel=0.05)


def test_empty_report():
    r = decay_report(self_conformal(cantor()), ())
    assert r.empty and r.entries == [] and r.linearization == []


def test_cantor_report_flags_lattice():
    r = decay_report(self_conformal(cantor()), (3, 3 ** 6), blocks=5, n_points=3, n_mc=200)
    assert r.lattice_span == pytest.approx(math.log(3))
    assert abs(r.alpha) < 0.05
    assert r.notes


def test_report_sensitivity_table():
    r = decay_report(self_conformal(gauss24()), (16, 1024), n_points=3, n_mc=200, tol=1e-3)
    assert r.linearization_measure == "second iterate"
    assert [row["eps"] for row in r.sensitivity] == [0.02, 0.05, 0.1]
    for row in r.sensitivity:
        assert row["alpha_k"] == pytest.approx(r.alpha * (1 + row["eps"] / 7))
    assert np.isfinite(r.alpha)
