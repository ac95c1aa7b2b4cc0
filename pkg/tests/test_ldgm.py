import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldgmq.errors import ConfigError
from ldgmq.ldgm import (DegreeDistribution, LdgmCode, code_from_matrix, codeword_bits, encode, gray_map,
                        neighborhood, round_distribution, sample_code)


def test_dd_invariants():
    dd = DegreeDistribution.from_w(4, {2: 0.5, 3: 0.5})
    assert sum(dd.v.values()) == pytest.approx(1.0, abs=1e-12)
    assert dd.R == pytest.approx(2.5 / 4)
    assert DegreeDistribution.from_v(dd.db, dd.v).w == pytest.approx(dd.w)
    dd2 = DegreeDistribution.regular(4, 2, K=2)
    assert dd2.R == pytest.approx(1.0)
    assert sum(dd2.v.values()) == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        DegreeDistribution(4, {2: 1.0}, 0.7)
    with pytest.raises(ConfigError):
        DegreeDistribution(1, {2: 1.0}, 2.0)


def test_round_regular():
    r = round_distribution(DegreeDistribution.regular(4, 2), 100)
    assert r.nb == 50 and r.counts == {2: 100} and not r.repairs


def test_round_mixed_balanced():
    r = round_distribution(DegreeDistribution.from_w(2, {2: 0.5, 3: 0.5}), 7)
    assert r.counts in ({2: 4, 3: 3}, {2: 3, 3: 4})
    assert sum(d * c for d, c in r.counts.items()) % 2 == 0


def test_round_repair_recorded():
    dd = DegreeDistribution.from_w(4, {2: 0.5, 3: 0.5})
    r = round_distribution(dd, 7)
    assert r.repairs
    assert sum(d * c for d, c in r.counts.items()) == r.nb * 4
    assert sum(r.counts.values()) == 7


@settings(max_examples=30, deadline=None)
@given(st.integers(20, 400))
def test_rounding_deviation_bound(n):
    dd = DegreeDistribution.from_w(3, {2: 0.3, 3: 0.45, 5: 0.25})
    r = round_distribution(dd, n)
    moved = len(r.repairs)
    for d, x in dd.w.items():
        assert abs(r.w_n.get(d, 0.0) - x) <= (1 + moved) / n + 1e-12


def test_sample_code_structure():
    dd = DegreeDistribution.from_w(4, {2: 0.5, 3: 0.5})
    code = sample_code(dd, 200, seed=3)
    r = round_distribution(dd, 200)
    assert code.nb == r.nb
    vals, cnt = np.unique(code.col_degree, return_counts=True)
    assert dict(zip(vals.tolist(), cnt.tolist())) == r.counts
    assert int(code.col_degree.sum()) == code.nb * dd.db  # socket conservation
    rows = code.dense().sum(axis=1)
    assert np.all(rows <= dd.db) and np.all((dd.db - rows) % 2 == 0)  # parity collapse
    cols = code.dense().sum(axis=0)
    assert np.all((code.col_degree - cols) % 2 == 0)


def test_sample_code_symbol_columns_share_degree():
    code = sample_code(DegreeDistribution.from_w(4, {2: 0.5, 3: 0.5}, K=2), 60, seed=1)
    deg = code.col_degree.reshape(code.n, 2)
    assert np.all(deg[:, 0] == deg[:, 1])


def test_sample_deterministic_and_serializable():
    dd = DegreeDistribution.regular(4, 2)
    a, b = sample_code(dd, 50, seed=9), sample_code(dd, 50, seed=9)
    assert np.array_equal(a.dense(), b.dense()) and np.array_equal(a.a, b.a)
    c = LdgmCode.from_json(a.to_json())
    assert np.array_equal(c.dense(), a.dense()) and np.array_equal(c.a, a.a)


def test_adjacency_consistent():
    code = sample_code(DegreeDistribution.regular(5, 3), 40, seed=2)
    G = code.dense()
    for i in range(code.nb):
        assert sorted(code.row_cols(i).tolist()) == np.flatnonzero(G[i]).tolist()
    for s in range(code.nc):
        assert sorted(code.col_rows(s).tolist()) == np.flatnonzero(G[:, s]).tolist()


def test_encode_against_dense_oracle():
    rng = np.random.default_rng(0)
    for K in (1, 2):
        code = sample_code(DegreeDistribution.regular(4, 2, K=K), 32, seed=int(rng.integers(99)))
        for _ in range(5):
            b = rng.integers(0, 2, code.nb)
            c = (b @ code.dense().astype(np.int64) + code.a) % 2
            assert np.array_equal(codeword_bits(code, b), c)
            sym = c.reshape(code.n, K) @ (1 << np.arange(K - 1, -1, -1))
            want = code.group.add(code.phi[sym ^ code.eps], code.delta)
            assert np.array_equal(encode(code, b), want)


def test_encode_zero_and_linearity():
    code = sample_code(DegreeDistribution.regular(4, 2), 40, seed=4)
    assert np.array_equal(encode(code, np.zeros(code.nb, dtype=int)), code.a)
    rng = np.random.default_rng(1)
    b1, b2 = rng.integers(0, 2, code.nb), rng.integers(0, 2, code.nb)
    zero_a = code_from_matrix(code.dense())
    lhs = codeword_bits(code, b1 ^ b2)
    rhs = codeword_bits(code, b1) ^ codeword_bits(zero_a, b2)
    assert np.array_equal(lhs, rhs)


def test_gray_map():
    assert gray_map(1).tolist() == [0, 1]
    phi = gray_map(2)
    assert [phi[0b00], phi[0b01], phi[0b11], phi[0b10]] == [0, 1, 2, 3]
    for K in range(1, 9):
        assert sorted(gray_map(K).tolist()) == list(range(1 << K))


def test_coverage_exhaustive():
    # for every G, each u in Z2^n is reached by exactly 2^nb pairs (b, a)
    for n, nb in [(2, 1), (3, 2)]:
        for bits in itertools.product((0, 1), repeat=n * nb):
            G = np.array(bits, dtype=np.uint8).reshape(nb, n)
            hits = np.zeros(1 << n, dtype=int)
            for a in itertools.product((0, 1), repeat=n):
                code = code_from_matrix(G, a=np.array(a))
                for b in itertools.product((0, 1), repeat=nb):
                    u = encode(code, np.array(b))
                    hits[int("".join(map(str, u)), 2)] += 1
            assert np.all(hits == 2 ** nb)


def test_neighborhood_examples():
    code = code_from_matrix(np.eye(3, dtype=np.uint8))
    nb = neighborhood(code, ("b", 0), 0)
    assert nb.loop_free and nb.border_b == {0}
    loopy = code_from_matrix(np.array([[1, 1], [1, 1]]))
    assert not neighborhood(loopy, ("b", 0), 1).loop_free
    tree = code_from_matrix(np.array([[1, 1, 0], [0, 1, 1]]))
    n1 = neighborhood(tree, ("b", 0), 1)
    assert n1.loop_free and n1.interior_b == {0} and n1.border_b == {1}
    assert neighborhood(tree, ("a", 1), 1).loop_free


def test_loopy_fraction_decreases_with_n():
    dd = DegreeDistribution.regular(4, 2)

    def frac(n, reps=4):
        bad = tot = 0
        for s in range(reps):
            code = sample_code(dd, n, seed=s)
            for i in range(0, code.nb, max(1, code.nb // 40)):
                bad += not neighborhood(code, ("b", i), 2).loop_free
                tot += 1
        return bad / tot

    assert frac(40) > frac(1000)
