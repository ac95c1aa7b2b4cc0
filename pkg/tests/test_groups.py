import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldgmq.errors import Contradiction
from ldgmq.groups import (AffineSubspace, GroupTuple, Product, Z, Z2, Z2K, avg_entropy_function, cn_combine,
                          cn_minus, entropy_function, nu_combine, prob_tuple, tuple_entropy, tuple_mi,
                          vn_combine)


def tup(g, p):
    return GroupTuple(g, np.asarray(p, dtype=float))


def test_orders():
    assert Z(5).order == 5
    assert Z2K(3).order == 8
    assert Product([Z(3), Z2K(2)]).order == 12
    with pytest.raises(ValueError):
        Z(1)


def test_product_add_is_componentwise():
    g = Product([Z(3), Z2K(2)])
    for x, y in itertools.product(range(12), repeat=2):
        dx, dy = g.digits(x), g.digits(y)
        want = g.compose([(dx[0] + dy[0]) % 3, dx[1] ^ dy[1]])
        assert g.add(x, y) == want


def test_vn_examples():
    mu = tup(Z(3), [0.2, 0.5, 0.3])
    assert vn_combine(GroupTuple.uniform(Z(3)), mu).allclose(mu)
    r = vn_combine(prob_tuple(0.8), prob_tuple(0.8))
    assert np.allclose(r.p, [16 / 17, 1 / 17], atol=1e-15)
    with pytest.raises(Contradiction):
        vn_combine(GroupTuple.delta(Z2, 0), GroupTuple.delta(Z2, 1))


def test_cn_examples():
    g = Z(5)
    assert cn_combine(GroupTuple.delta(g, 3), GroupTuple.delta(g, 4)).allclose(GroupTuple.delta(g, 2))
    mu = tup(g, [0.1, 0.2, 0.3, 0.25, 0.15])
    assert cn_combine(GroupTuple.uniform(g), mu).allclose(GroupTuple.uniform(g))
    r = cn_combine(prob_tuple(0.9), prob_tuple(0.9))
    assert np.allclose(r.p, [0.82, 0.18], atol=1e-15)


def test_cn_delta_permutes():
    g = Z(4)
    mu = tup(g, [0.1, 0.2, 0.3, 0.4])
    assert np.allclose(cn_combine(GroupTuple.delta(g, 1), mu).p, [0.4, 0.1, 0.2, 0.3])


def test_cn_minus_inverts_shift():
    g = Z(4)
    mu = tup(g, [0.1, 0.2, 0.3, 0.4])
    d = GroupTuple.delta(g, 1)
    assert cn_minus(cn_combine(mu, d), d).allclose(mu)


def test_underflow_guard():
    a = tup(Z2, [1e-310, 1.0])
    r = a
    for _ in range(5):
        r = vn_combine(r, a)
    assert r.p[1] == 1.0 and r.p[0] >= 0


def test_entropy_examples():
    assert tuple_entropy(GroupTuple.uniform(Z2)) == pytest.approx(1.0)
    assert tuple_mi(GroupTuple.uniform(Z2)) == pytest.approx(0.0)
    assert tuple_entropy(GroupTuple.delta(Z(4), 2)) == 0.0
    assert tuple_mi(GroupTuple.delta(Z(4), 2)) == pytest.approx(2.0)
    h = -(0.11 * math.log2(0.11) + 0.89 * math.log2(0.89))
    assert tuple_entropy(prob_tuple(0.11)) == pytest.approx(h, abs=1e-12)
    assert tuple_entropy(prob_tuple(0.11)) == pytest.approx(0.499916, abs=1e-6)


def test_entropy_function_examples():
    g = Z2K(2)
    u = GroupTuple.uniform(g)
    assert avg_entropy_function(u, 1) == pytest.approx(1.0)
    assert avg_entropy_function(u, 2) == pytest.approx(2.0)
    d = GroupTuple.delta(g, 2)
    assert all(avg_entropy_function(d, k) == 0 for k in range(3))
    s = tup(g, [0.5, 0, 0, 0.5])  # {00, 11}
    assert entropy_function(s, [0]) == pytest.approx(1.0)
    assert entropy_function(s, [1]) == pytest.approx(1.0)
    assert avg_entropy_function(s, 2) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        entropy_function(s, [2])


def _repetition():
    return AffineSubspace(Product([Z2] * 3), [(1, 1, 1)], None)


def _parity():
    return AffineSubspace(Product([Z2] * 3), [(1, 1, 0), (0, 1, 1)], None)


def test_nu_repetition_and_parity():
    a, b = prob_tuple(0.3), prob_tuple(0.85)
    assert nu_combine(_repetition(), 2, [a, b]).allclose(vn_combine(a, b))
    assert nu_combine(_parity(), 2, [a, b]).allclose(cn_combine(a, b))


def test_nu_random_subspace_brute_force():
    rng = np.random.default_rng(7)
    amb = Product([Z2] * 5)
    for _ in range(10):
        gens = [tuple(rng.integers(0, 2, 5)) for _ in range(2)]
        off = tuple(rng.integers(0, 2, 5))
        C = AffineSubspace(amb, gens, off)
        lam = [prob_tuple(float(p)) for p in rng.random(5)]
        i = int(rng.integers(5))
        # independent enumeration of the coset
        pts = set()
        for c in itertools.product(range(2), repeat=2):
            x = np.array(off)
            for ci, g in zip(c, gens):
                if ci:
                    x = x ^ np.array(g)
            pts.add(tuple(int(v) for v in x))
        acc = np.zeros(2)
        for x in pts:
            acc[x[i]] += np.prod([lam[j].p[x[j]] for j in range(5) if j != i])
        assert np.allclose(nu_combine(C, i, lam).p, acc / acc.sum(), atol=1e-12)


def test_affine_membership_and_size():
    C = _parity()
    assert len(C) == 4
    assert (1, 1, 0) in C and (1, 0, 0) not in C


# ---------------------------------------------------------------- properties

def tuples(order):
    return st.lists(st.floats(0.01, 1.0), min_size=order, max_size=order).map(np.array)


@settings(max_examples=60, deadline=None)
@given(tuples(4), tuples(4), tuples(4), st.sampled_from([Z(4), Z2K(2)]))
def test_combines_associative_commutative(p, q, r, g):
    a, b, c = tup(g, p), tup(g, q), tup(g, r)
    for op in (vn_combine, cn_combine):
        assert op(a, b).allclose(op(b, a))
        assert op(op(a, b), c).allclose(op(a, op(b, c)))
        assert abs(op(a, b).p.sum() - 1) < 1e-12


@settings(max_examples=40, deadline=None)
@given(tuples(8))
def test_entropy_function_monotone(p):
    mu = tup(Z2K(3), p)
    hs = [avg_entropy_function(mu, k) for k in range(4)]
    assert hs[0] == 0 and hs[3] == pytest.approx(tuple_entropy(mu))
    assert all(x <= y + 1e-12 for x, y in zip(hs, hs[1:]))
    for S in itertools.combinations(range(3), 2):
        assert entropy_function(mu, S[:1]) <= entropy_function(mu, S) + 1e-12


def test_symmetric_tuple_bayes_inversion():
    # llr l ~ N(2, 4) given u = 0 is symmetric; p(u = 0 | l) must equal lambda(0)
    rng = np.random.default_rng(3)
    n = 400_000
    u = rng.integers(0, 2, n)
    ell = rng.normal(2.0, 2.0, n) * np.where(u == 0, 1, -1)
    lam0 = 1 / (1 + np.exp(-ell))
    bins = np.linspace(0.05, 0.95, 10)
    idx = np.digitize(lam0, bins)
    for k in range(1, len(bins)):
        sel = idx == k
        if sel.sum() < 2000:
            continue
        frac = np.mean(u[sel] == 0)
        se = math.sqrt(frac * (1 - frac) / sel.sum())
        assert abs(frac - lam0[sel].mean()) < 3 * se + 1e-3
