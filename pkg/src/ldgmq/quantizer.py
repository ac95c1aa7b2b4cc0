"""BP-guided decimation quantizer for LDGM codes (binary and 2^K-ary).

Binary messages are carried as LLRs ln(mu(0)/mu(1)); the sure tuples are the
exact values +inf / -inf and the unknown tuple is 0.  Check-node combining
works on (sign, -ln tanh(|l|/2)) with sure and unknown inputs counted
separately, so erasure-type problems keep every message in {Δ0, Δ1, Δ*}.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DecimationContradiction
from .ldgm import LdgmCode, encode
from .source import TestChannel

TINY_PHI = 1e-300


# ---------------------------------------------------------------- kernels

def phi_transform(x):
    """-ln tanh(x/2) for x >= 0; self-inverse.  phi(0)=inf, phi(inf)=0."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        out = np.log1p(2.0 / np.expm1(x))
    return out


def llr_to_p0(llr):
    llr = np.asarray(llr, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        return np.where(llr >= 0, 1.0 / (1.0 + np.exp(-llr)), np.exp(llr) / (1.0 + np.exp(llr)))


def p0_to_llr(p0):
    p0 = np.asarray(p0, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(p0) - np.log1p(-p0)


def binary_mi(llr):
    """1 - H(mu) in bits for LLR-valued binary tuples."""
    from .groups import h2
    return 1.0 - h2(llr_to_p0(llr))


def _boxplus_parts(v):
    v = np.asarray(v, dtype=float)
    neg = (v < 0).astype(np.int64)
    sure = np.isinf(v).astype(np.int64)
    zero = (v == 0).astype(np.int64)
    mag = np.abs(v)
    ph = np.zeros_like(mag)
    soft = (sure == 0) & (zero == 0)
    ph[soft] = np.maximum(phi_transform(mag[soft]), TINY_PHI)
    return neg, sure, zero, ph


def _boxplus_finish(neg, sure, zero, ph, cnt):
    out = np.where(neg % 2 == 1, -1.0, 1.0)
    mag = phi_transform(np.maximum(ph, TINY_PHI))
    mag = np.where(sure == cnt, np.inf, mag)
    return np.where(zero > 0, 0.0, out * mag)


def boxplus_groups(v, groups, n_groups, extra=None):
    """Check-node ⊕ over edge groups.

    Returns ``(per_edge_excluding_self, per_group_total)``.  ``extra`` is a
    per-group input included in the per-edge outputs but not in the totals.
    """
    neg, sure, zero, ph = _boxplus_parts(v)
    bc = lambda w: np.bincount(groups, weights=w, minlength=n_groups)
    Gneg = bc(neg).astype(np.int64)
    Gsure = bc(sure).astype(np.int64)
    Gzero = bc(zero).astype(np.int64)
    Gph = bc(ph)
    Gcnt = np.bincount(groups, minlength=n_groups).astype(np.int64)
    total = _boxplus_finish(Gneg, Gsure, Gzero, Gph, Gcnt)
    if extra is not None:
        en, es, ez, ep = _boxplus_parts(extra)
        Gneg, Gsure, Gzero, Gph, Gcnt = Gneg + en, Gsure + es, Gzero + ez, Gph + ep, Gcnt + 1
    g = groups
    per_edge = _boxplus_finish(Gneg[g] - neg, Gsure[g] - sure, Gzero[g] - zero,
                               np.maximum(Gph[g] - ph, 0.0), Gcnt[g] - 1)
    return per_edge, total


def sum_groups(v, groups, n_groups, prior):
    """Variable-node ⊙ over edge groups (LLR sums with ±inf bookkeeping).

    Returns ``(per_edge_excluding_self, per_edge_conflict, total, total_conflict)``.
    """
    v = np.asarray(v, dtype=float)
    pos = (v == np.inf).astype(np.int64)
    ng = (v == -np.inf).astype(np.int64)
    fin = np.where(np.isfinite(v), v, 0.0)
    ppos = (prior == np.inf).astype(np.int64)
    pneg = (prior == -np.inf).astype(np.int64)
    pfin = np.where(np.isfinite(prior), prior, 0.0)
    Gpos = np.bincount(groups, weights=pos, minlength=n_groups).astype(np.int64) + ppos
    Gneg = np.bincount(groups, weights=ng, minlength=n_groups).astype(np.int64) + pneg
    Gfin = np.bincount(groups, weights=fin, minlength=n_groups) + pfin

    def finish(P, N, F):
        conflict = (P > 0) & (N > 0)
        out = np.where(P > 0, np.inf, np.where(N > 0, -np.inf, F))
        return np.where(conflict, 0.0, out), conflict

    total, tconf = finish(Gpos, Gneg, Gfin)
    g = groups
    per_edge, econf = finish(Gpos[g] - pos, Gneg[g] - ng, Gfin[g] - fin)
    return per_edge, econf, total, tconf


# ---------------------------------------------------------------- policy / state

@dataclass(frozen=True)
class DecimationPolicy:
    decimator: str = "GD"
    L: int = 100
    warmup: int = 5
    pace: float | None = None
    on_contradiction: str = "raise"
    reinit_iterations: int | None = None

    def __post_init__(self):
        if self.decimator not in ("PD", "GD"):
            raise ValueError("decimator must be PD or GD")
        if self.L < self.warmup or self.warmup < 0:
            raise ValueError("need 0 <= warmup <= L")
        if self.pace is not None and not 0 < self.pace <= 1:
            raise ValueError("pace must be in (0, 1]")
        if self.on_contradiction not in ("raise", "record"):
            raise ValueError("on_contradiction must be 'raise' or 'record'")

    @property
    def effective_pace(self) -> float:
        if self.pace is not None:
            return self.pace
        return 1.0 / max(1, self.L - self.warmup)

    def to_dict(self) -> dict:
        return {"decimator": self.decimator, "L": self.L, "warmup": self.warmup, "pace": self.pace,
                "on_contradiction": self.on_contradiction, "reinit_iterations": self.reinit_iterations}


@dataclass
class QuantizerState:
    m_bc: np.ndarray
    m_cb: np.ndarray
    prior_b: np.ndarray  # LLR per b; ±inf once decimated
    prior_u: np.ndarray  # P[j, ct]: prior over the symbol's bit vector
    ext: np.ndarray
    m_uc: np.ndarray  # LLR per check (K=1: prior LLR of u)
    decided: np.ndarray  # -1 undecided, else the bit
    iteration: int = 0
    contradictions: int = 0
    log: list = field(default_factory=list)

    @property
    def undecimated(self) -> np.ndarray:
        return np.flatnonzero(self.decided < 0)


def symbol_priors(code: LdgmCode, pu: np.ndarray) -> np.ndarray:
    """P[j, ct] = rho_u_j(phi_j(ct)) for every packed bit vector ct."""
    ct = np.arange(1 << code.K)
    idx = code.group.add(code.phi[ct[None, :] ^ code.eps[:, None]], code.delta[:, None])
    return np.take_along_axis(pu, idx, axis=1)


def init_state(code: LdgmCode, pu: np.ndarray) -> QuantizerState:
    P = symbol_priors(code, pu)
    m_uc = np.zeros(code.nc)
    if code.K == 1:
        with np.errstate(divide="ignore"):
            m_uc = np.log(P[:, 0]) - np.log(P[:, 1])
    return QuantizerState(
        m_bc=np.zeros(code.E), m_cb=np.zeros(code.E), prior_b=np.zeros(code.nb), prior_u=P,
        ext=np.zeros(code.nb), m_uc=m_uc, decided=np.full(code.nb, -1, dtype=np.int8))


def recovery_hook(state: QuantizerState) -> QuantizerState:
    """Extension point for prior adjustment between iterations; no-op."""
    return state


def _modulation_update(code: LdgmCode, state: QuantizerState, on_contradiction: str) -> int:
    """m_cu then m_uc through each symbol's phi-factor (K > 1)."""
    K = code.K
    _, tot = boxplus_groups(state.m_bc, code.edge_col, code.nc)
    m_cu = np.where(code.a == 1, -tot, tot).reshape(code.n, K)
    # log m_cu(c) for c = 0, 1
    lc0 = -np.logaddexp(0.0, -m_cu)
    lc1 = -np.logaddexp(0.0, m_cu)
    ct = np.arange(1 << K)
    with np.errstate(divide="ignore"):
        logP = np.log(state.prior_u)
    out = np.empty((code.n, K))
    bad = np.zeros(code.n, dtype=bool)
    for k in range(K):
        lw = logP.copy()
        for k2 in range(K):
            if k2 == k:
                continue
            bit = (ct >> (K - 1 - k2)) & 1
            lw = lw + np.where(bit[None, :] == 1, lc1[:, k2:k2 + 1], lc0[:, k2:k2 + 1])
        bitk = (ct >> (K - 1 - k)) & 1
        w0 = _logsumexp_rows(lw[:, bitk == 0])
        w1 = _logsumexp_rows(lw[:, bitk == 1])
        both = (w0 == -np.inf) & (w1 == -np.inf)
        bad |= both
        with np.errstate(invalid="ignore"):
            out[:, k] = np.where(both, 0.0, w0 - w1)
    if bad.any() and on_contradiction == "raise":
        raise DecimationContradiction("empty modulation-factor marginal",
                                      node=("u", int(np.flatnonzero(bad)[0])),
                                      round_index=state.iteration)
    state.m_uc = out.ravel()
    return int(bad.sum())


def _logsumexp_rows(a):
    m = a.max(axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.where(m == -np.inf, -np.inf, safe + np.log(np.exp(a - safe[:, None]).sum(axis=1)))


def bp_iteration(code: LdgmCode, state: QuantizerState, on_contradiction: str = "raise") -> QuantizerState:
    """One flooding sweep: (phi-factor), checks, variables, extrinsics."""
    conflicts = 0
    if code.K > 1:
        conflicts += _modulation_update(code, state, on_contradiction)
    prior_c = np.where(code.a == 1, -state.m_uc, state.m_uc)
    state.m_cb, _ = boxplus_groups(state.m_bc, code.edge_col, code.nc, extra=prior_c)
    m_bc, econf, ext, tconf = sum_groups(state.m_cb, code.edge_row, code.nb, state.prior_b)
    und_edge = state.decided[code.edge_row] < 0
    und = state.decided < 0
    bad_e = econf & und_edge
    bad_v = tconf & und
    if on_contradiction == "raise" and (bad_e.any() or bad_v.any()):
        node = int(code.edge_row[np.flatnonzero(bad_e)[0]]) if bad_e.any() else int(np.flatnonzero(bad_v)[0])
        raise DecimationContradiction("conflicting sure messages at a variable node",
                                      node=("b", node), round_index=state.iteration)
    fixed = np.where(state.decided[code.edge_row] == 1, -np.inf, np.inf)
    state.m_bc = np.where(und_edge, m_bc, fixed)
    state.ext = ext
    conflicts += int(bad_v.sum())
    state.contradictions = conflicts
    state.iteration += 1
    return state


def decimate(code: LdgmCode, state: QuantizerState, i: int, b: int) -> None:
    state.decided[i] = b
    state.prior_b[i] = -np.inf if b else np.inf
    lo, hi = code.row_ptr[i], code.row_ptr[i + 1]
    state.m_bc[lo:hi] = state.prior_b[i]


def decimate_pd(code: LdgmCode, state: QuantizerState, omega: float) -> tuple[int, int]:
    und = state.undecimated
    i = int(und[0])
    b = int(omega >= float(llr_to_p0(state.ext[i])))
    decimate(code, state, i, b)
    return i, b


def gd_order(ext: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Candidates sorted by certainty |LLR| (descending), ties by index."""
    mag = np.abs(ext[candidates])
    return candidates[np.lexsort((candidates, -mag))]


def decimate_gd(code: LdgmCode, state: QuantizerState) -> tuple[int, int]:
    i = int(gd_order(state.ext, state.undecimated)[0])
    b = int(state.ext[i] < 0)
    decimate(code, state, i, b)
    return i, b


# ---------------------------------------------------------------- driver

@dataclass
class QuantizeResult:
    b: np.ndarray
    u: np.ndarray
    distortion: float
    trace: list
    iterations: int
    forced: bool
    contradictions: int

    def trace_jsonl(self) -> str:
        return "\n".join(json.dumps(r, sort_keys=True) for r in self.trace)


def quantize(code: LdgmCode, ch: TestChannel, y, policy: DecimationPolicy | None = None,
             seed=None) -> QuantizeResult:
    policy = policy or DecimationPolicy()
    y = np.asarray(y)
    if len(y) != code.n:
        raise ValueError("source length must equal the code length")
    rng = np.random.default_rng(seed)
    state = init_state(code, ch.priors(y))
    per_round = max(1, math.ceil(policy.effective_pace * code.nb))
    trace = [{"recovery": "none", "policy": policy.to_dict()}]
    total_conf = 0
    forced = False

    def run_iteration():
        nonlocal total_conf
        recovery_hook(state)
        try:
            bp_iteration(code, state, policy.on_contradiction)
        except DecimationContradiction as e:
            e.round_index = state.iteration
            raise
        total_conf += state.contradictions

    while (state.decided < 0).any():
        if policy.reinit_iterations:
            und_edge = state.decided[code.edge_row] < 0
            state.m_bc[und_edge] = 0.0
            for _ in range(policy.reinit_iterations):
                run_iteration()
        else:
            run_iteration()
        und = state.undecimated
        rec = {"iter": state.iteration, "mean_ext_mi": float(np.mean(binary_mi(state.ext[und]))),
               "decimated": 0, "contradictions": state.contradictions}
        if state.iteration <= policy.warmup and not policy.reinit_iterations:
            trace.append(rec)
            continue
        if state.iteration >= policy.L:
            count = len(und)
            forced = count > per_round
        else:
            count = min(per_round, len(und))
        if policy.decimator == "GD":
            order = gd_order(state.ext, und)[:count]
            for i in order:
                decimate(code, state, int(i), int(state.ext[i] < 0))
        else:
            omegas = rng.random(count)
            for om in omegas:
                decimate_pd(code, state, float(om))
        rec["decimated"] = int(count)
        if forced:
            rec["forced"] = True
        trace.append(rec)
    b = state.decided.astype(np.int64)
    u = encode(code, b)
    dist = float(np.mean(ch.problem.distortion(y)[np.arange(code.n), u]))
    return QuantizeResult(b, u, dist, trace, state.iteration, forced, total_conf)


# ---------------------------------------------------------------- analysis BP

def bp_ext_b(code: LdgmCode, pu: np.ndarray, prior_b: np.ndarray, L: int,
             init_bc: np.ndarray | None = None, on_contradiction: str = "raise") -> np.ndarray:
    """Extrinsic LLRs of every b after L flooding iterations (K = 1 or K > 1).

    ``prior_b`` holds LLR priors (±inf for decimated bits); ``init_bc`` gives
    the starting b-to-check message per b (default Δ*).
    """
    state = init_state(code, pu)
    state.prior_b = np.asarray(prior_b, dtype=float).copy()
    if init_bc is not None:
        state.m_bc = np.asarray(init_bc, dtype=float)[code.edge_row].copy()
    for _ in range(L):
        # analysis mode: no node counts as decimated, priors act directly
        state.decided[:] = -1
        bp_iteration(code, state, on_contradiction)
    return state.ext


def ext_a_upper(code: LdgmCode, pu: np.ndarray, b_ref, prior_a: np.ndarray, L: int,
                on_contradiction: str = "raise") -> np.ndarray:
    """Upper a-extrinsic LLR per code bit after L iterations from hard b* messages (K = 1)."""
    if code.K != 1:
        raise ValueError("the a-extrinsic analysis is defined for binary codes")
    b_ref = np.asarray(b_ref)
    P = symbol_priors(code, pu)
    with np.errstate(divide="ignore"):
        Lu = np.log(P[:, 0]) - np.log(P[:, 1])
    # check factor sees rho_u ⊕ rho_a
    _, lua = boxplus_groups(np.concatenate([Lu, np.asarray(prior_a, dtype=float)]),
                            np.concatenate([np.arange(code.nc), np.arange(code.nc)]), code.nc)
    m_bc = np.where(b_ref[code.edge_row] == 1, -np.inf, np.inf)
    zero_prior = np.zeros(code.nb)
    for it in range(L):
        m_cb, _ = boxplus_groups(m_bc, code.edge_col, code.nc, extra=lua)
        m_bc, econf, _, _ = sum_groups(m_cb, code.edge_row, code.nb, zero_prior)
        if econf.any() and on_contradiction == "raise":
            raise DecimationContradiction("conflict in a-extrinsic BP", round_index=it)
    _, tot = boxplus_groups(m_bc, code.edge_col, code.nc)
    _, out = boxplus_groups(np.concatenate([tot, Lu]),
                            np.concatenate([np.arange(code.nc), np.arange(code.nc)]), code.nc)
    return out
