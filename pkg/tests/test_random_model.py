import math

import numpy as np
import pytest
from scipy import stats

from decaylab.errors import (ConeViolation, EpsilonTooLarge, PrefixTooShort,
                             SeparationUnsatisfied)
from decaylab.ifs_core import find_uni_quadruple, gauss24, induce, validate_ifs
from decaylab.measure import self_conformal
from decaylab.random_model import (apply_local_transfer, build_model,
                                   check_operator_disintegration, dolgopyat_apply,
                                   federer_constant, local_operator, marginal_residuals,
                                   quadruple_parent, sample_mu_omega, sample_omega,
                                   triadic_partition, word_weight_residual)


@pytest.fixture(scope="module")
def quad():
    return find_uni_quadruple(gauss24())


@pytest.fixture(scope="module")
def five(quad):
    nu, idx = quadruple_parent(gauss24(), quad, extra=1)
    return build_model(nu, idx)


@pytest.fixture(scope="module")
def four(quad):
    nu, idx = quadruple_parent(gauss24(), quad)
    return build_model(nu, idx)


@pytest.fixture(scope="module")
def square():
    g = gauss24()
    return build_model(self_conformal(induce(g, 2)), find_uni_quadruple(g, mode="claim"))


def test_marginal_identity_exact(five):
    assert all(r == 0 for r in marginal_residuals(five))
    assert word_weight_residual(five, 2) == 0


def test_four_map_selection_vector(four):
    p = four.nu.p
    assert four.n_families == 4
    assert four.q[0] == four.q[1] == p[0] / 2 + p[1] / 2


def test_overlapping_extra_map_rejected():
    g = gauss24()
    # x -> 1/(2+x) covers [1/3, 1/2] and meets one map of each pair
    ifs = validate_ifs(list(induce(g, 2).maps) + [g.maps[0]])
    with pytest.raises(SeparationUnsatisfied):
        build_model(self_conformal(ifs), (1, 2, 0, 3))


def test_operator_disintegration(five):
    x = np.linspace(0, 1, 41)

    def g(y):
        return np.exp(np.sin(4 * y))
    assert check_operator_disintegration(five, 0, 1, g, x) < 1e-13
    assert check_operator_disintegration(five, 0.01 + 5j, 2, g, x) < 1e-10


def test_constant_omega_support(four):
    fam = four.families[0]
    om = (0,) * 30
    x = sample_mu_omega(four, om, 30, 5000, seed=0)
    imgs = [tuple(sorted(four.maps[a].value(np.array([0.0, 1.0])))) for a in fam]
    inside = np.zeros(x.size, bool)
    for lo, hi in imgs:
        inside |= (x >= lo - 1e-12) & (x <= hi + 1e-12)
    assert inside.all()


def test_mu_omega_self_similarity(five):
    om = sample_omega(five, 30, seed=2)
    x = sample_mu_omega(five, om, 25, 100000, seed=1)
    # mixture over the first family of pushed mu_{sigma omega}
    y = sample_mu_omega(five, om[1:], 24, 100000, seed=7)
    rng = np.random.default_rng(3)
    u = np.searchsorted(five.cum_pt(om[0])[:-1], rng.random(y.size), side="right")
    fam = five.families[om[0]]
    z = np.empty_like(y)
    for k, a in enumerate(fam):
        z[u == k] = five.maps[a].value(y[u == k])
    assert stats.ks_2samp(x, z).statistic < 0.02


def test_local_operator_composition(square):
    om = sample_omega(square, 10, seed=5)
    s = 0.01 + 20j
    op2 = local_operator(square, om, 2, s, 256)
    a = local_operator(square, om, 1, s, 256)
    b = local_operator(square, om[1:], 1, s, 256)
    g = np.cos(5 * op2.grid)
    assert np.max(np.abs(op2.matrix @ g - b.matrix @ (a.matrix @ g))) < 1e-9


def test_local_weights_sum_to_one(square):
    om = sample_omega(square, 5, seed=1)
    out = apply_local_transfer(square, om, 2, 0, np.ones(64))
    assert np.allclose(out, 1, atol=1e-12)
    with pytest.raises(PrefixTooShort):
        local_operator(square, om[:1], 2, 0, 64)


def test_federer_trivial_cases(square):
    om = sample_omega(square, 40, seed=1)
    assert federer_constant(square, om, 1.0, depth=15).C == 1
    big = federer_constant(square, om, 2.0, radii=[2.0], depth=15, min_count=1)
    assert big.C == 1


def test_federer_depth_stable(square):
    om = sample_omega(square, 40, seed=9)
    a = federer_constant(square, om, 2.0, depth=15).C
    b = federer_constant(square, om, 2.0, depth=20).C
    assert abs(a / b - 1) <= 0.1


def test_partition_bounds(square):
    om = sample_omega(square, 40, seed=4)
    part = triadic_partition(square, om, 1 / 50)
    lengths = np.diff(part.edges)
    assert np.all(lengths >= part.A1_prime * part.eps - 1e-15)
    assert np.all(lengths <= part.A1 * part.eps + 1e-15)
    assert part.triple_ok
    with pytest.raises(EpsilonTooLarge):
        triadic_partition(square, om, 0.5)


def test_dolgopyat_trivial_inputs(square):
    om = sample_omega(square, 40, seed=3)
    one = (lambda x: np.ones_like(x), lambda x: np.zeros_like(x))
    fone = (lambda x: np.ones_like(x, dtype=complex), lambda x: np.zeros_like(x, dtype=complex))
    r = dolgopyat_apply(square, om, 1j * 100, 1, one, fone, n_samples=20000)
    assert r.cone_ok and r.domination_ok and r.l2_ratio <= 1


def test_dolgopyat_cone_violation(square):
    om = sample_omega(square, 40, seed=3)
    H = (lambda x: np.exp(-1e6 * x), lambda x: -1e6 * np.exp(-1e6 * x))
    f = (lambda x: 0 * x + 0j, lambda x: 0 * x + 0j)
    with pytest.raises(ConeViolation):
        dolgopyat_apply(square, om, 1j * 100, 1, H, f, A=2.0)


def test_dolgopyat_contracts(square):
    b = 100
    om = sample_omega(square, 40, seed=3)
    one = (lambda x: np.ones_like(x), lambda x: np.zeros_like(x))
    f = (lambda x: np.exp(2j * np.pi * b * x), lambda x: 2j * np.pi * b * np.exp(2j * np.pi * b * x))
    r = dolgopyat_apply(square, om, 1j * b, 1, one, f)
    assert r.l2_ratio + 4 * r.l2_stderr < 1 - 1e-3
    assert math.isfinite(r.A) and r.theta > 0
