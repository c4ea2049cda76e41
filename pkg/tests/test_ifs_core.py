import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from decaylab.errors import (AlphabetTooLarge, BudgetExhausted, EndpointInAttractor,
                             NotAContraction, NotUNI, OrientationReversing, SharedFixedPoint,
                             ValidationError)
from decaylab.ifs_core import (affine, build_map, cantor, compose_word, cylinder_interval,
                               distortion_constant, find_uni_quadruple, gauss24, gauss_map, induce,
                               uni_functional, uniform, validate_ifs, word_jet)


def test_affine_map_basics():
    m = build_map({"kind": "affine", "params": {"r": 1 / 3, "t": 0}})
    x = np.linspace(0, 1, 7)
    assert np.allclose(m.value(x), x / 3)
    assert np.allclose(m.deriv(x), 1 / 3)
    assert np.all(m.deriv2(x) == 0)


def test_moebius_map_derivative():
    m = build_map({"kind": "moebius", "params": {"a": 2}})
    x = np.linspace(0, 1, 11)
    assert np.allclose(m.deriv(x), -1 / (2 + x) ** 2, rtol=1e-14)
    assert math.isclose(m.stats.sup_abs_deriv, 1 / 4, rel_tol=1e-12)
    assert math.isclose(m.stats.inf_abs_deriv, 1 / 9, rel_tol=1e-12)


def test_expanding_map_rejected():
    with pytest.raises(NotAContraction):
        affine(1.1, 0)


def test_unknown_kind_rejected():
    with pytest.raises(ValidationError):
        build_map({"kind": "spline", "params": {}})


def test_reference_constants():
    c = cantor()
    assert c.rho == pytest.approx(1 / 3) and c.rho_min == pytest.approx(1 / 3)
    assert c.D == pytest.approx(math.log(3)) and c.D_prime == pytest.approx(math.log(3))
    g = gauss24()
    assert g.rho == pytest.approx(1 / 4, rel=1e-12)
    assert g.rho_min == pytest.approx(1 / 25, rel=1e-12)
    assert g.D == pytest.approx(math.log(4)) and g.D_prime == pytest.approx(math.log(25))


def test_shared_fixed_point():
    with pytest.raises(SharedFixedPoint):
        validate_ifs([affine(0.5, 0), affine(0.5, 0)])


def test_endpoint_rule_only_when_strict():
    validate_ifs(cantor().maps)
    with pytest.raises(EndpointInAttractor):
        validate_ifs(cantor().maps, strict_endpoints=True)


def test_reversing_maps_can_be_refused():
    with pytest.raises(OrientationReversing):
        build_map({"kind": "moebius", "params": {"a": 2}}, allow_reversing=False)
    with pytest.raises(OrientationReversing):
        validate_ifs([gauss_map(2.0), gauss_map(4.0)], allow_reversing=False)


def test_composition_affine():
    f = compose_word(cantor(), (0, 1))
    x = np.linspace(0, 1, 5)
    assert np.allclose(f.value(x), x / 9 + 2 / 9)


def test_word_derivative_gauss():
    _, d, _ = word_jet(gauss24(), (1,), 0.0)
    assert d == pytest.approx(-1 / 16)
    _, d, _ = word_jet(gauss24(), (0,), 0.0)
    assert d == pytest.approx(-1 / 4)


def test_cylinders():
    c = cantor()
    assert cylinder_interval(c, (1,)) == pytest.approx((2 / 3, 1))
    assert cylinder_interval(c, (0, 1)) == pytest.approx((2 / 9, 1 / 3))
    assert cylinder_interval(gauss24(), (1,)) == pytest.approx((1 / 5, 1 / 4))


def test_distortion():
    L, _ = distortion_constant(cantor(), 4)
    assert L == pytest.approx(1.0)
    L, bound = distortion_constant(gauss24(), 1)
    assert L == pytest.approx(2.25, rel=1e-9)
    assert bound == pytest.approx(math.exp(4 / 3), rel=1e-9)


def test_uni_functional_closed_form():
    g = gauss24()
    assert uni_functional(g, (0,), (1,), 0.0) == pytest.approx(-0.5, abs=1e-14)
    assert uni_functional(g, (0,), (1,), 1.0) == pytest.approx(-4 / 15, abs=1e-14)


def test_uni_functional_vanishes_for_affine():
    x = np.linspace(0, 1, 33)
    assert np.max(np.abs(uni_functional(cantor(), (0, 1), (1, 1, 0), x))) < 1e-14


def test_induce():
    c2 = induce(cantor(), 2)
    assert c2.n == 4
    assert all(m.stats.sup_abs_deriv == pytest.approx(1 / 9) for m in c2.maps)
    assert induce(gauss24(), 2).rho <= 1 / 16 + 1e-12
    with pytest.raises(AlphabetTooLarge):
        induce(cantor(), 13)


def test_quadruple_search_outcomes():
    with pytest.raises(NotUNI):
        find_uni_quadruple(uniform())
    with pytest.raises(BudgetExhausted):
        find_uni_quadruple(gauss24(), search_budget=0)
    q = find_uni_quadruple(gauss24(), mode="claim")
    lo, hi = q.base_bounds
    assert 0.2 <= lo <= hi <= 0.6
    assert q.N == 2 and 0 < q.m <= q.m_prime


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=6), st.floats(0, 1))
def test_jet_matches_composite(word, x):
    g = gauss24()
    v, d, _ = word_jet(g, word, x)
    f = compose_word(g, word)
    assert v == pytest.approx(float(f.value(x)), rel=1e-12)
    assert d == pytest.approx(float(f.deriv(x)), rel=1e-10)
    assert abs(d) <= g.rho ** len(word) * (1 + 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.45), st.floats(0.05, 0.45))
def test_affine_pairs_have_no_uni(r1, r2):
    ifs = validate_ifs([affine(r1, 0.0), affine(r2, 1 - r2)])
    x = np.linspace(0, 1, 17)
    assert np.max(np.abs(uni_functional(ifs, (0, 1), (1, 0), x))) < 1e-12
