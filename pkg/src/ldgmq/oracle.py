"""Brute-force ground truth for tiny codes.

Marginals are computed by enumerating every information vector b.  The
scrambling bits a enter one symbol factor each, so their sums are taken in
closed form per symbol; everything is accumulated in the log domain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import Contradiction, SizeExceeded
from .groups import GroupTuple, Z2, h2
from .ldgm import LdgmCode, code_from_matrix, codeword_bits, encode, neighborhood
from .quantizer import bp_ext_b, ext_a_upper, llr_to_p0, symbol_priors
from .source import TestChannel, sample_test_channel_pair

MAX_BITS = 26
CHUNK = 1 << 16
NEG = -np.inf


def _check_size(code: LdgmCode):
    if code.nb + code.nc > MAX_BITS:
        raise SizeExceeded(f"nb + nc = {code.nb + code.nc} exceeds {MAX_BITS}")


def _log(p):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(p, dtype=float))


def _lse(a, axis=-1):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(a - m), axis=axis))


def _row_masks(code: LdgmCode) -> list[int]:
    masks = [0] * code.nb
    for r, c in zip(code.edge_row.tolist(), code.edge_col.tolist()):
        masks[r] ^= 1 << c
    return masks


def _symbols(code: LdgmCode, cmask: np.ndarray) -> np.ndarray:
    """Packed per-symbol bit vectors for an array of codeword masks."""
    K = code.K
    out = np.zeros((len(cmask), code.n), dtype=np.int64)
    for j in range(code.n):
        for k in range(K):
            out[:, j] |= ((cmask >> (j * K + k)) & 1) << (K - 1 - k)
    return out


def _a_vectors(code: LdgmCode, pa_log: np.ndarray) -> np.ndarray:
    """log prod_k pa[jK+k, bit_k(av)] for every symbol j and packed av."""
    K = code.K
    av = np.arange(1 << K)
    out = np.zeros((code.n, 1 << K))
    for k in range(K):
        bit = (av >> (K - 1 - k)) & 1
        out += pa_log[k::K][:, bit] if K > 1 else pa_log[:, bit]
    return out


def _sym_factor(code, logP, logA, skip_bit=None):
    """log Q_j(ct) = log sum_av A_j(av) P_j(ct ^ av), optionally with one a-bit held fixed."""
    M = 1 << code.K
    ct = np.arange(M)
    x = ct[:, None] ^ ct[None, :]  # [ct, av] -> ct ^ av
    terms = logA[:, None, :] + logP[:, x]  # (n, ct, av)
    if skip_bit is None:
        return _lse(terms, axis=2)
    k = skip_bit
    bit = (ct >> (code.K - 1 - k)) & 1
    return np.stack([_lse(terms[:, :, bit == v], axis=2) for v in (0, 1)], axis=-1)


def _enumerate(code, pb_log, extra_fn):
    """Yield (B, cmask, logw_b) over all b in chunks."""
    masks = np.array(_row_masks(code), dtype=np.int64)
    total = 1 << code.nb
    for lo in range(0, total, CHUNK):
        B = np.arange(lo, min(total, lo + CHUNK), dtype=np.int64)
        cm = np.zeros_like(B)
        lw = np.zeros(len(B))
        for i in range(code.nb):
            bit = (B >> i) & 1
            cm ^= bit * masks[i]
            lw += pb_log[i, bit]
        yield B, cm, lw


def nu_b(code: LdgmCode, pb, pa, pu, i: int) -> np.ndarray:
    """Exact nu(C; priors) at b_i; returns the normalized pair (p0, p1)."""
    _check_size(code)
    pb_log = _log(pb).copy()
    pb_log[i] = 0.0
    logP = _log(symbol_priors(code, np.asarray(pu, dtype=float)))
    logQ = _sym_factor(code, logP, _a_vectors(code, _log(pa)))
    acc = [[], []]
    for B, cm, lw in _enumerate(code, pb_log, None):
        ct = _symbols(code, cm)
        lw = lw + np.take_along_axis(logQ, ct.T, axis=1).sum(axis=0)
        bit = (B >> i) & 1
        for v in (0, 1):
            sel = lw[bit == v]
            acc[v].append(_lse(sel) if sel.size else NEG)
    out = np.array([_lse(np.array(acc[0])), _lse(np.array(acc[1]))])
    return _finish(out)


def nu_a(code: LdgmCode, pb, pa, pu, s: int) -> np.ndarray:
    """Exact nu(C; priors) at a_s; returns (p0, p1)."""
    _check_size(code)
    K = code.K
    j, k = divmod(s, K)
    pa_log = _log(pa).copy()
    pa_log[s] = 0.0
    logP = _log(symbol_priors(code, np.asarray(pu, dtype=float)))
    logA = _a_vectors(code, pa_log)
    logQ = _sym_factor(code, logP, logA)
    logQs = _sym_factor(code, logP[j:j + 1], logA[j:j + 1], skip_bit=k)[0]  # (ct, v)
    acc = [[], []]
    for B, cm, lw in _enumerate(code, _log(pb), None):
        ct = _symbols(code, cm)
        q = np.take_along_axis(logQ, ct.T, axis=1)
        q[j] = 0.0
        base = lw + q.sum(axis=0)
        for v in (0, 1):
            acc[v].append(_lse(base + logQs[ct[:, j], v]))
    out = np.array([_lse(np.array(acc[0])), _lse(np.array(acc[1]))])
    return _finish(out)


def _finish(logv):
    if np.all(logv == NEG):
        raise Contradiction("no consistent configuration")
    logv = logv - np.max(logv)
    p = np.exp(logv)
    return p / p.sum()


def _delta_rows(bits, m=2):
    out = np.zeros((len(bits), m))
    out[np.arange(len(bits)), np.asarray(bits, dtype=np.int64)] = 1.0
    return out


# ---------------------------------------------------------------- instances

@dataclass
class OracleInstance:
    code: LdgmCode
    ch: TestChannel
    y: np.ndarray

    def __post_init__(self):
        _check_size(self.code)
        self.y = np.asarray(self.y)

    @property
    def pu(self) -> np.ndarray:
        return self.ch.priors(self.y)


def exact_ext_b(inst: OracleInstance, a, decided, i: int) -> GroupTuple:
    """True b-extrinsic with a fixed and b_1..b_{i-1} decided (0-based i)."""
    code = inst.code
    decided = list(decided)[:i]
    pb = np.full((code.nb, 2), 0.5)
    if decided:
        pb[:len(decided)] = _delta_rows(decided)
    return GroupTuple(Z2, nu_b(code, pb, _delta_rows(a), inst.pu, i))


def exact_ext_a(inst: OracleInstance, decided, j: int) -> GroupTuple:
    """True a-extrinsic with a_1..a_{j-1} decided and every b free."""
    code = inst.code
    decided = list(decided)[:j]
    pa = np.full((code.nc, 2), 0.5)
    if decided:
        pa[:len(decided)] = _delta_rows(decided)
    return GroupTuple(Z2, nu_a(code, np.full((code.nb, 2), 0.5), pa, inst.pu, j))


@dataclass
class TpqResult:
    a: np.ndarray
    b: np.ndarray
    u: np.ndarray
    distortion: float
    entropy_sum: float


def tpq_run(inst: OracleInstance, omega_a, omega_b) -> TpqResult:
    """True probabilistic quantizer: a-steps, then b-steps, on exact extrinsics."""
    code = inst.code
    a, b = [], []
    hsum = 0.0
    for j in range(code.nc):
        p0 = exact_ext_a(inst, a, j).p[0]
        hsum += float(h2(p0))
        a.append(int(omega_a[j] >= p0))
    for i in range(code.nb):
        p0 = exact_ext_b(inst, a, b, i).p[0]
        hsum += float(h2(p0))
        b.append(int(omega_b[i] >= p0))
    a = np.array(a, dtype=np.uint8)
    b = np.array(b, dtype=np.int64)
    u = encode(_with_a(code, a), b)
    dist = float(np.mean(inst.ch.problem.distortion(inst.y)[np.arange(code.n), u]))
    return TpqResult(a, b, u, dist, hsum)


def _with_a(code: LdgmCode, a) -> LdgmCode:
    return LdgmCode(code.n, code.K, code.nb, code.edge_row, code.edge_col,
                    np.asarray(a, dtype=np.uint8), code.group, code.phi, code.eps, code.delta,
                    code.dd, code.seed, code.phi_kind, code.repairs, code.col_degree)


# ---------------------------------------------------------------- batched TPQ

BATCH_MAX_BITS = 16


def _joint_table(code: LdgmCode):
    """u(b, a) for every joint index idx = b + a * 2^nb."""
    nbits = code.nb + code.nc
    if nbits > BATCH_MAX_BITS:
        raise SizeExceeded("batched TPQ is limited to nb + nc <= 16")
    idx = np.arange(1 << nbits, dtype=np.int64)
    B = idx & ((1 << code.nb) - 1)
    A = idx >> code.nb
    masks = np.array(_row_masks(code), dtype=np.int64)
    cm = A.copy()
    for i in range(code.nb):
        cm ^= ((B >> i) & 1) * masks[i]
    ct = _symbols(code, cm)
    U = code.group.add(code.phi[ct ^ code.eps[None, :]], code.delta[None, :])
    return idx, U


def tpq_batch(code: LdgmCode, ch: TestChannel, ys, omega_a, omega_b):
    """Vectorized TPQ over S source sequences (rows of ``ys``).

    Returns dict with arrays a (S, nc), b (S, nb), u (S, n), distortion (S,),
    entropy_sum (S,).
    """
    ys = np.asarray(ys)
    S = ys.shape[0]
    idx, U = _joint_table(code)
    logpu = ch.problem.log_prior(ys.reshape(-1), ch.t).reshape(S, code.n, -1)
    logw = np.zeros((S, len(idx)))
    for j in range(code.n):
        logw += logpu[:, j, U[:, j]]
    alive = np.ones_like(logw, dtype=bool)
    hsum = np.zeros(S)
    a = np.zeros((S, code.nc), dtype=np.int64)
    b = np.zeros((S, code.nb), dtype=np.int64)
    order = [(code.nb + s, a, s) for s in range(code.nc)] + [(i, b, i) for i in range(code.nb)]
    omegas = np.concatenate([np.asarray(omega_a), np.asarray(omega_b)], axis=1)
    for step, (pos, store, col) in enumerate(order):
        bit = (idx >> pos) & 1
        lw = np.where(alive, logw, NEG)
        l0 = _lse(np.where(bit[None, :] == 0, lw, NEG))
        l1 = _lse(np.where(bit[None, :] == 1, lw, NEG))
        if np.any((l0 == NEG) & (l1 == NEG)):
            raise Contradiction("TPQ reached an empty conditional")
        with np.errstate(over="ignore", invalid="ignore"):
            p0 = np.where(l1 == NEG, 1.0, np.where(l0 == NEG, 0.0, 1.0 / (1.0 + np.exp(l1 - l0))))
        hsum += h2(p0)
        v = (omegas[:, step] >= p0).astype(np.int64)
        store[:, col] = v
        alive &= bit[None, :] == v[:, None]
    final = np.argmax(alive, axis=1)
    u = U[final]
    d = ch.problem.distortion(ys.reshape(-1)).reshape(S, code.n, -1)
    dist = np.take_along_axis(d, u[:, :, None], axis=2)[:, :, 0].mean(axis=1)
    return {"a": a, "b": b, "u": u, "distortion": dist, "entropy_sum": hsum}


def area_identity_check(code: LdgmCode, ch: TestChannel, samples: int, seed=None,
                        batch: int = 20000) -> dict:
    """Monte-Carlo sum of TPQ extrinsic entropies vs nb + n H(u|y)."""
    rng = np.random.default_rng(seed)
    vals = []
    left = samples
    while left > 0:
        s = min(batch, left)
        ys = ch.problem.sample_y(s * code.n, rng).reshape(s, code.n)
        r = tpq_batch(code, ch, ys, rng.random((s, code.nc)), rng.random((s, code.nb)))
        vals.append(r["entropy_sum"])
        left -= s
    v = np.concatenate(vals)
    rhs = code.nb + code.n * ch.H_u_given_y
    return {"lhs": float(v.mean()), "rhs": float(rhs), "stderr": float(v.std(ddof=1) / math.sqrt(len(v))),
            "samples": int(len(v))}


# ---------------------------------------------------------------- BP versus exact

def reference_path(code: LdgmCode, ch: TestChannel, rng):
    """Reference (u*, y, b*, a*) with u*, y from the test channel and b* uniform.

    a* is chosen so that encoding b* reproduces u*.
    """
    u, y = sample_test_channel_pair(ch, code.n, rng)
    b = rng.integers(0, 2, size=code.nb)
    inv = np.argsort(code.phi)
    sym = inv[code.group.sub(u, code.delta)] ^ code.eps
    K = code.K
    want = ((sym[:, None] >> np.arange(K - 1, -1, -1)[None, :]) & 1).reshape(-1)
    c0 = codeword_bits(_with_a(code, np.zeros(code.nc, dtype=np.uint8)), b)
    a = (c0 ^ want).astype(np.uint8)
    return u, y, b, a


def bp_vs_exact_b(code: LdgmCode, ch: TestChannel, y, b_ref, i: int, L: int, upper: bool,
                  decided_prefix: int | None = None) -> dict:
    """Compare the BP b-extrinsic after L iterations with nu under Table I priors.

    The code's scrambling sequence plays the role of a*.  Bits before
    ``decided_prefix`` (default i) carry sure priors at b*.
    """
    decided_prefix = i if decided_prefix is None else decided_prefix
    nb_ = neighborhood(code, ("b", i), L)
    pu = ch.priors(y)
    b_ref = np.asarray(b_ref)
    prior_b = np.zeros(code.nb)
    prior_b[:decided_prefix] = np.where(b_ref[:decided_prefix] == 1, -np.inf, np.inf)
    init = np.where(b_ref == 1, -np.inf, np.inf) if upper else None
    ext = bp_ext_b(code, pu, prior_b, L, init_bc=init)
    bp0 = float(llr_to_p0(ext[i]))

    actual = np.full((code.nb, 2), 0.5)
    actual[:decided_prefix] = _delta_rows(b_ref[:decided_prefix])
    pb = _delta_rows(b_ref) if upper else np.full((code.nb, 2), 0.5)
    inside_b = sorted(nb_.interior_b)
    pb[inside_b] = actual[inside_b]
    inside_c = sorted(nb_.checks)
    a_star = _delta_rows(code.a)
    pa = a_star.copy() if upper else np.full((code.nc, 2), 0.5)
    pa[inside_c] = a_star[inside_c]
    pu_t = pu.copy() if upper else np.full_like(pu, 1.0 / pu.shape[1])
    syms = sorted({s // code.K for s in inside_c})
    pu_t[syms] = pu[syms]
    ex0 = float(nu_b(code, pb, pa, pu_t, i)[0])
    return {"bp": bp0, "exact": ex0, "loop_free": nb_.loop_free, "dev": abs(bp0 - ex0)}


def bp_vs_exact_a(code: LdgmCode, ch: TestChannel, y, b_ref, a_ref, s: int, L: int) -> dict:
    """Compare the upper a-extrinsic (hard-b initialization) with nu under Table II priors."""
    nb_ = neighborhood(code, ("a", s), L)
    pu = ch.priors(y)
    a_ref = np.asarray(a_ref)
    prior_a = np.zeros(code.nc)
    prior_a[:s] = np.where(a_ref[:s] == 1, -np.inf, np.inf)
    ext = ext_a_upper(code, pu, b_ref, prior_a, L)
    bp0 = float(llr_to_p0(ext[s]))

    pb = _delta_rows(b_ref)
    pb[sorted(nb_.interior_b)] = 0.5
    actual_a = np.full((code.nc, 2), 0.5)
    actual_a[:s] = _delta_rows(a_ref[:s])
    pa = _delta_rows(a_ref)
    inside_c = sorted(nb_.checks)
    pa[inside_c] = actual_a[inside_c]
    ex0 = float(nu_a(code, pb, pa, pu, s)[0])
    return {"bp": bp0, "exact": ex0, "loop_free": nb_.loop_free, "dev": abs(bp0 - ex0)}


def random_small_code(rng, max_bits: int = 20) -> LdgmCode:
    """Random sparse binary generator matrix with nb + nc <= max_bits."""
    while True:
        nb = int(rng.integers(2, 7))
        nc = int(rng.integers(3, max_bits - nb + 1))
        G = (rng.random((nb, nc)) < rng.uniform(0.15, 0.4)).astype(np.uint8)
        if G.sum() >= 2:
            return code_from_matrix(G, a=rng.integers(0, 2, size=nc))


def random_loop_free_case(rng, kind: str = "b", max_bits: int = 20, max_tries: int = 500):
    """Random (code, node, L) whose depth-L neighborhood is a tree."""
    for _ in range(max_tries):
        code = random_small_code(rng, max_bits)
        L = int(rng.integers(1, 4))
        node = int(rng.integers(0, code.nb if kind == "b" else code.nc))
        if neighborhood(code, (kind, node), L).loop_free:
            return code, node, L
    raise RuntimeError("no loop-free instance found")
