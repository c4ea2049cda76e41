import math

import numpy as np
import pytest

from decaylab.errors import GridMismatch, SeriesDiverging, StripExceeded, ValidationError
from decaylab.ifs_core import cantor, gauss24
from decaylab.measure import integrate, self_conformal
from decaylab.transfer_op import (apply_op, cheb_nodes, discretize, discretize_iterate, power_norm,
                                  probe_set, resolvent_probe, spectral_gap_scan)


@pytest.fixture(scope="module")
def gauss_nu():
    return self_conformal(gauss24())


def test_constants_fixed_at_zero():
    op = discretize(self_conformal(cantor()), 0, M=64)
    assert np.max(np.abs(apply_op(op, np.ones(64)) - 1)) < 1e-13


def test_leading_eigenvalue_one(gauss_nu):
    op = discretize(gauss_nu, 0, M=128)
    v = np.cos(op.grid) + 2
    for _ in range(200):
        w = op.matrix @ v
        lam = np.vdot(v, w) / np.vdot(v, v)
        v = w / np.max(np.abs(w))
    assert abs(lam - 1) < 1e-10


def test_strip_and_grid_checks(gauss_nu):
    with pytest.raises(StripExceeded):
        discretize(gauss_nu, 0.05 / 2 + 0.05, M=32)
    op = discretize(gauss_nu, 1j, M=32)
    with pytest.raises(GridMismatch):
        apply_op(op, np.ones(31))
    with pytest.raises(ValidationError):
        discretize(gauss_nu, 0, M=8)


def test_cantor_constant_twist():
    b = 7.3
    op = discretize(self_conformal(cantor()), 1j * b, M=64)
    out = apply_op(op, np.ones(64))
    expected = np.exp(2j * np.pi * b * math.log(3))
    assert np.max(np.abs(out - expected)) < 1e-12


def test_interpolation_is_spectral(gauss_nu):
    op = discretize(gauss_nu, 0, M=64)
    lo, hi = gauss_nu.ifs.hull
    y = np.linspace(lo, hi, 17)
    assert np.max(np.abs(op.interp(y) @ np.sin(3 * op.grid) - np.sin(3 * y))) < 1e-12


def test_iterate_matches_square(gauss_nu):
    s = 0.01 + 20j
    op = discretize(gauss_nu, s, M=128)
    op2 = discretize_iterate(gauss_nu, s, 128, 2)
    g = np.cos(5 * op.grid)
    assert np.max(np.abs(op2.matrix @ g - op.matrix @ (op.matrix @ g))) < 1e-9


def test_power_norm_at_zero(gauss_nu):
    op = discretize(gauss_nu, 0, M=64)
    rep = power_norm(op, np.ones(64), 10)
    assert np.allclose(rep.norms, 1, atol=1e-12) and rep.alpha == pytest.approx(1, abs=1e-10)


def test_contraction_at_high_frequency(gauss_nu):
    op = discretize(gauss_nu, 100j, M=256)
    assert power_norm(op, probe_set(op), 30).alpha < 1


def test_scan(gauss_nu):
    assert spectral_gap_scan(gauss_nu, 0, []).rows == []
    res = spectral_gap_scan(self_conformal(cantor()), 0, [20 / math.log(3)], n=20, M=128)
    assert res.alphas()[0] >= 0.999
    with pytest.raises(ValidationError):
        spectral_gap_scan(gauss_nu, 0, [0.5])


def test_grid_refinement_stable(gauss_nu):
    a = spectral_gap_scan(gauss_nu, 0, [50], n=30, M=256).alphas()[0]
    b = spectral_gap_scan(gauss_nu, 0, [50], n=30, M=512).alphas()[0]
    assert abs(a - b) <= 0.02


def test_resolvent_far_from_pole(gauss_nu):
    r = resolvent_probe(gauss_nu, 0.01, 30.0, truncation_n=400, M=128)
    assert np.isfinite(r.remainder_norm)
    with pytest.raises(SeriesDiverging):
        resolvent_probe(gauss_nu, 0.0, 0.0, truncation_n=50, M=64)


def test_resolvent_pole_scaling(gauss_nu):
    chi = integrate(gauss_nu, lambda x: sum(
        0.5 * -np.log(np.abs(m.deriv(x))) for m in gauss_nu.ifs.maps))
    c = [resolvent_probe(gauss_nu, s, 0.0, truncation_n=20000, M=64).rank_one_coeff
         for s in (0.002, 0.004)]
    # (I - P_{-s})^{-1} 1 ~ 1 / (2 pi chi s) near the pole
    for s, v in zip((0.002, 0.004), c):
        assert abs(v.real * 2 * math.pi * chi * s - 1) < 0.05
    assert abs(c[0] / c[1]) == pytest.approx(2, rel=0.05)


def test_nodes_span_interval():
    x = cheb_nodes(16, 0.2, 0.5)
    assert x[0] == pytest.approx(0.2) and x[-1] == pytest.approx(0.5)
