import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldgmq.density import (LAMBDA, ErasureDensity, HistDensity, bec, cn_power, density_cn, density_entropy,
                           density_mi, density_mix, density_vn, from_magnitudes, prior_density_u,
                           sample_density, symmetry_residual, to_hist, vn_power)
from ldgmq.de import boxplus_rows
from ldgmq.errors import ModelError
from ldgmq.groups import h2
from ldgmq.source import MaryErasure, MaryHamming, MseUniform, TestChannel


def bsc(p):
    return from_magnitudes([math.log((1 - p) / p)], [1.0])


def test_erasure_closed_forms():
    assert density_cn(bec(0.3), bec(0.6)).x == pytest.approx(0.18)
    assert density_vn(bec(0.3), bec(0.6)).x == pytest.approx(1 - 0.7 * 0.4)
    assert density_mix([0.25, 0.75], [bec(0.2), bec(0.6)]).x == pytest.approx(0.5)
    assert isinstance(vn_power(bec(0.4), 3), ErasureDensity)
    assert cn_power(bec(0.4), 0).x == 1.0 and vn_power(bec(0.4), 0).x == 0.0


def test_erasure_agrees_with_histogram_path():
    a, b = bec(0.37), bec(0.81)
    assert density_mi(density_cn(to_hist(a), to_hist(b))) == pytest.approx(0.37 * 0.81, abs=1e-12)
    assert density_mi(density_vn(to_hist(a), to_hist(b))) == pytest.approx(1 - 0.63 * 0.19, abs=1e-12)


def test_neutral_elements():
    d = bsc(0.2)
    c = density_cn(d, bec(1.0))
    v = density_vn(d, bec(0.0))
    for r in (c, v):
        assert np.allclose(r.q, d.q, atol=1e-15) and r.inf == pytest.approx(d.inf)


def test_mi_examples():
    assert density_mi(bec(0.37)) == 0.37
    assert density_mi(bec(1.0)) == 1.0 and density_mi(bec(0.0)) == 0.0
    assert density_mi(to_hist(bec(1.0))) == 1.0
    want = 1 - float(h2(0.11))
    assert density_mi(bsc(0.11)) == pytest.approx(want, abs=1e-12)
    assert density_mi(bsc(0.11)) == pytest.approx(0.500084, abs=1e-6)
    assert density_entropy(bsc(0.11)) == pytest.approx(1 - want, abs=1e-12)


def test_cn_against_sampling():
    rng = np.random.default_rng(0)
    n = 2_000_000
    d1, d2 = bsc(0.08), from_magnitudes([0.5, 2.0, 4.0], [0.3, 0.5, 0.2])
    s = np.stack([sample_density(d1, n, rng), sample_density(d2, n, rng)], axis=1)
    out = boxplus_rows(s)
    mc = float(np.mean(1 - h2(1 / (1 + np.exp(np.abs(out))))))
    assert density_mi(density_cn(d1, d2)) == pytest.approx(mc, abs=1e-3)
    vn = s.sum(axis=1)
    mc = float(np.mean(1 - h2(1 / (1 + np.exp(np.minimum(np.abs(vn), 700))))))
    assert density_mi(density_vn(d1, d2)) == pytest.approx(mc, abs=1e-3)


def test_clamping_recorded():
    d = from_magnitudes([LAMBDA + 5.0, 1.0], [0.5, 0.5])
    assert d.clamped == pytest.approx(0.5) and d.inf == pytest.approx(0.5)
    big = from_magnitudes([20.0], [1.0])
    v = density_vn(big, big)
    assert v.clamped > 0 and v.total == pytest.approx(1.0, abs=1e-12)


def test_prior_density_examples():
    assert prior_density_u(TestChannel(MaryErasure(2, 0.3), math.inf)) == bec(0.7)
    assert density_mi(prior_density_u(TestChannel(MaryErasure(2, 0.3), math.inf))) == pytest.approx(0.7)
    assert prior_density_u(TestChannel(MseUniform(2), 0.0)) == bec(0.0)
    d = prior_density_u(TestChannel(MseUniform(2), 3.7114))
    assert density_mi(d) == pytest.approx(0.4143, abs=1e-3)
    ch = TestChannel(MaryHamming(2), 1.0)
    assert density_mi(prior_density_u(ch)) == pytest.approx(ch.R0, abs=1e-9)
    with pytest.raises(ModelError):
        prior_density_u(TestChannel(MaryHamming(3), 1.0))


def test_mix_requires_pmf():
    with pytest.raises(ValueError):
        density_mix([0.5, 0.6], [bec(0.1), bec(0.2)])


# ---------------------------------------------------------------- properties

mags = st.lists(st.floats(0.0, 25.0), min_size=1, max_size=6)
weights = st.lists(st.floats(0.05, 1.0), min_size=6, max_size=6)


def _dens(m, w):
    return from_magnitudes(m, w[:len(m)])


@settings(max_examples=40, deadline=None)
@given(mags, weights, mags, weights, st.floats(0.0, 1.0))
def test_ops_preserve_symmetry_and_mass(m1, w1, m2, w2, a):
    d1, d2 = _dens(m1, w1), _dens(m2, w2)
    for r in (density_vn(d1, d2), density_cn(d1, d2), density_mix([a, 1 - a], [d1, d2])):
        assert isinstance(r, HistDensity)
        assert symmetry_residual(r) < 1e-9
        assert r.total == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(mags, weights, mags, weights)
def test_information_combining_order(m1, w1, m2, w2):
    d1, d2 = _dens(m1, w1), _dens(m2, w2)
    i1, i2 = density_mi(d1), density_mi(d2)
    assert density_mi(density_vn(d1, d2)) >= max(i1, i2) - 1e-9
    assert density_mi(density_cn(d1, d2)) <= min(i1, i2) + 1e-9


@settings(max_examples=40, deadline=None)
@given(mags, weights)
def test_requantization_preserves_mi(m, w):
    w = np.array(w[:len(m)])
    direct = float(np.sum(w * (1 - h2(1 / (1 + np.exp(np.array(m)))))) / w.sum())
    assert density_mi(_dens(m, list(w))) == pytest.approx(direct, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_erasure_closure(x, y, a):
    for r in (density_vn(bec(x), bec(y)), density_cn(bec(x), bec(y)), density_mix([a, 1 - a], [bec(x), bec(y)])):
        assert isinstance(r, ErasureDensity)
    assert density_mix([a, 1 - a], [bec(x), bec(y)]).x == pytest.approx(a * x + (1 - a) * y)


def test_mass_conserved_through_repeated_powers():
    d = to_hist(bec(0.184))
    m = to_hist(bec(1.0))
    for _ in range(30):
        m = density_vn(bec(0.43), vn_power(density_cn(d, cn_power(m, 5)), 5))
        assert abs(m.total - 1.0) < 1e-12
