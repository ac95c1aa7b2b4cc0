"""Density evolution for decimation steps, EXIT sweeps and Monte-Carlo DE for 2^K codes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .density import (ErasureDensity, bec, cn_power, density_cn, density_mi, density_mix, density_vn,
                      vn_power)
from .groups import h2
from .ldgm import DegreeDistribution, gray_map
from .quantizer import phi_transform
from .source import TestChannel, sample_test_channel_pair

CONV_TOL = 1e-7
CONV_RUN = 3
GAP_TOL = 1e-4


@dataclass
class DeResult:
    density: object
    mi: list = field(default_factory=list)  # extrinsic MI after each iteration
    mi_cb: list = field(default_factory=list)
    mi_bc: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.mi)

    @property
    def final_mi(self) -> float:
        return self.mi[-1] if self.mi else density_mi(self.density)


def _check_mix(dd: DegreeDistribution, m_bc, extra=None):
    """Σ_d v_d (m_bc)^{⊕(d-1)}, optionally ⊕ extra."""
    v = dd.v
    parts = [cn_power(m_bc, d - 1) for d in v]
    out = density_mix(list(v.values()), parts)
    return out if extra is None else density_cn(extra, out)


class _Stop:
    def __init__(self, tol):
        self.tol, self.run, self.prev = tol, 0, None

    def __call__(self, mi) -> bool:
        if self.tol is None:
            return False
        if self.prev is not None and abs(mi - self.prev) < self.tol:
            self.run += 1
        else:
            self.run = 0
        self.prev = mi
        return self.run >= CONV_RUN


def de_bstep(dd: DegreeDistribution, du_pri, Ib_pri: float, L: int, init: str = "unknown",
             tol: float | None = None) -> DeResult:
    """Extrinsic density of an information bit after L iterations.

    ``init`` chooses the starting b-to-check density: "unknown" (lower curve)
    or "sure" (upper curve).  With ``tol`` the loop stops early once the MI
    settles.
    """
    if not 0.0 <= Ib_pri <= 1.0:
        raise ValueError("Ib_pri must lie in [0, 1]")
    if init not in ("unknown", "sure"):
        raise ValueError("init must be 'unknown' or 'sure'")
    m_bc = bec(0.0 if init == "unknown" else 1.0)
    prior_b = bec(Ib_pri)
    res = DeResult(None)
    stop = _Stop(tol)
    ext = None
    for _ in range(L):
        m_cb = _check_mix(dd, m_bc, du_pri)
        m_bc = density_vn(prior_b, vn_power(m_cb, dd.db - 1))
        ext = vn_power(m_cb, dd.db)
        res.mi_cb.append(density_mi(m_cb))
        res.mi_bc.append(density_mi(m_bc))
        res.mi.append(density_mi(ext))
        if stop(res.mi[-1]):
            res.converged = True
            break
    res.density = ext if ext is not None else vn_power(_check_mix(dd, m_bc, du_pri), dd.db)
    return res


def de_astep(dd: DegreeDistribution, du_pri, Ia_pri: float, L: int, tol: float | None = None) -> DeResult:
    """Upper extrinsic density of a scrambling bit after L iterations from sure b messages."""
    if not 0.0 <= Ia_pri <= 1.0:
        raise ValueError("Ia_pri must lie in [0, 1]")
    factor = density_cn(du_pri, bec(Ia_pri))
    m_bc = bec(1.0)
    res = DeResult(None)
    stop = _Stop(tol)

    def ext_of(m):
        w = dd.w
        return density_cn(du_pri, density_mix(list(w.values()), [cn_power(m, d) for d in w]))

    for _ in range(L):
        m_cb = _check_mix(dd, m_bc, factor)
        m_bc = vn_power(m_cb, dd.db - 1)
        res.mi_cb.append(density_mi(m_cb))
        res.mi_bc.append(density_mi(m_bc))
        res.mi.append(density_mi(ext_of(m_bc)))
        if stop(res.mi[-1]):
            res.converged = True
            break
    res.density = ext_of(m_bc)
    return res


# ---------------------------------------------------------------- EXIT sweeps

@dataclass
class ExitCurvePoint:
    Ib_pri: float
    I_lower: float
    I_upper: float
    l: int
    converged: bool
    verdict: str = "satisfied"
    margin: float = 0.0

    def as_row(self) -> list:
        return [self.Ib_pri, self.I_lower, self.I_upper, self.l, self.verdict]


def _verdict(gap: float, converged: bool, gap_tol: float) -> tuple[str, float]:
    margin = gap_tol - gap
    if gap <= gap_tol:
        return "satisfied", margin
    return ("violated" if converged else "inconclusive"), margin


def bp_exit_sweep(dd: DegreeDistribution, du_pri, grid, L: int, tol: float = CONV_TOL,
                  gap_tol: float = GAP_TOL) -> list[ExitCurvePoint]:
    """Lower and upper BP EXIT curves with a per-point synchronization verdict.

    A point is satisfied when the curves agree within ``gap_tol``; the point
    at Ib_pri = 0 additionally needs the upper MI itself below ``gap_tol``.
    A gap on a run that hit L without converging is inconclusive.
    """
    out = []
    for x in grid:
        x = float(x)
        lo = de_bstep(dd, du_pri, x, L, "unknown", tol)
        up = de_bstep(dd, du_pri, x, L, "sure", tol)
        conv = lo.converged and up.converged
        gap = up.final_mi - lo.final_mi
        if x == 0.0:
            gap = max(gap, up.final_mi)
        verdict, margin = _verdict(gap, conv, gap_tol)
        out.append(ExitCurvePoint(x, lo.final_mi, up.final_mi, max(lo.iterations, up.iterations), conv,
                                  verdict, margin))
    return out


def sweep_verdict(points: list[ExitCurvePoint]) -> str:
    vs = {p.verdict for p in points}
    if "violated" in vs:
        return "violated"
    if "inconclusive" in vs:
        return "inconclusive"
    return "satisfied"


# ---------------------------------------------------------------- Monte-Carlo DE

def boxplus_rows(llr: np.ndarray) -> np.ndarray:
    """Check-node combination along the last axis of an LLR array."""
    llr = np.asarray(llr, dtype=float)
    sign = np.prod(np.where(llr < 0, -1.0, 1.0), axis=-1)
    with np.errstate(over="ignore"):
        mag = phi_transform(np.sum(phi_transform(np.abs(llr)), axis=-1))
    return sign * mag


def population_mi(llr: np.ndarray) -> tuple[float, float]:
    """MI estimate (mean of 1 - H) and its standard error for reference-0 LLR samples."""
    a = np.abs(np.asarray(llr, dtype=float))
    with np.errstate(over="ignore"):
        vals = 1.0 - h2(1.0 / (1.0 + np.exp(a)))
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals)))


def _softplus(x):
    with np.errstate(over="ignore"):
        return np.logaddexp(0.0, x)


def _log_pair(llr):
    """(log p(0), log p(1)) for LLR arrays, exact at ±inf."""
    return -_softplus(-llr), -_softplus(llr)


@dataclass
class McDeResult:
    mi: float
    stderr: float
    ext: np.ndarray
    mi_cb: list = field(default_factory=list)
    se_cb: list = field(default_factory=list)
    mi_bc_in: list = field(default_factory=list)  # MI of the b-to-check population feeding each round
    ext_lower: np.ndarray | None = None
    warnings: list = field(default_factory=list)


def _modulation(K: int, phi):
    if phi is None or (isinstance(phi, str) and phi == "identity"):
        return np.arange(1 << K)
    if isinstance(phi, str) and phi == "gray":
        return gray_map(K)
    return np.asarray(phi)


def _cb_round(dd, ch, K, phi, pops, rng, N):
    """One pass through the symbol unit; returns new check-to-b populations (one per paired pop)."""
    degs = np.array(list(dd.v))
    d = rng.choice(degs, size=N, p=np.array(list(dd.v.values())))
    k = rng.integers(0, K, size=N)
    u, y = sample_test_channel_pair(ch, N, rng)
    grp = ch.group
    eps = rng.integers(0, 1 << K, size=N)
    delta = rng.integers(0, grp.order, size=N)
    inv = np.argsort(phi)
    ct_star = inv[grp.sub(u, delta)] ^ eps
    ct = np.arange(1 << K)
    idx = grp.add(phi[ct[None, :] ^ eps[:, None]], delta[:, None])
    with np.errstate(divide="ignore"):
        logP = np.log(np.take_along_axis(ch.priors(y), idx, axis=1))  # (N, 2^K) over ct
    bits = (ct[:, None] >> np.arange(K - 1, -1, -1)[None, :]) & 1  # [ct, k]
    ref_bits = (ct_star[:, None] >> np.arange(K - 1, -1, -1)[None, :]) & 1  # [N, k]
    # shared sample indices keep paired populations coupled
    dmax = int(degs.max())
    pick_cu = rng.integers(0, N, size=(N, K, dmax))
    pick_cb = rng.integers(0, N, size=(N, dmax))
    outs = []
    for pop in pops:
        logw = logP.copy()
        for kk in range(K):
            samp = pop[pick_cu[:, kk, :]]
            samp = np.where(np.arange(dmax)[None, :] < d[:, None], samp, np.inf)  # pad with sure-0
            ref0 = boxplus_rows(samp)
            actual = np.where(ref_bits[:, kk] == 1, -ref0, ref0)
            l0, l1 = _log_pair(actual)
            term = np.where(bits[None, :, kk] == 0, l0[:, None], l1[:, None])
            logw = logw + np.where((k != kk)[:, None], term, 0.0)
        sel = bits.T[k]  # (N, 2^K): bit k of each ct
        m0 = np.logaddexp.reduce(np.where(sel == 0, logw, -np.inf), axis=1)
        m1 = np.logaddexp.reduce(np.where(sel == 1, logw, -np.inf), axis=1)
        with np.errstate(invalid="ignore"):
            uc = np.where(m0 == m1, 0.0, m0 - m1)
        uc = np.where(ref_bits[np.arange(N), k] == 1, -uc, uc)
        samp = pop[pick_cb]
        samp = np.where(np.arange(dmax)[None, :] < (d - 1)[:, None], samp, np.inf)
        outs.append(boxplus_rows(np.concatenate([uc[:, None], samp], axis=1)))
    return outs


def _vn_round(pop_cb, prior, count, rng, N):
    pick = rng.integers(0, N, size=(N, count))
    return prior + pop_cb[pick].sum(axis=1)


def _mc_shard(dd, ch, K, phi, Ib_pri, L, N, inits, rng):
    pops = [np.full(N, np.inf if it == "sure" else 0.0) for it in inits]
    mi_bc, mi_cb, se_cb = [], [], []
    cbs = None
    for _ in range(L):
        mi_bc.append(population_mi(pops[0])[0])
        cbs = _cb_round(dd, ch, K, phi, pops, rng, N)
        m, se = population_mi(cbs[0])
        mi_cb.append(m)
        se_cb.append(se)
        prior = np.where(rng.random(N) < Ib_pri, np.inf, 0.0)
        pick = rng.integers(0, N, size=(N, dd.db - 1))
        pops = [prior + cb[pick].sum(axis=1) for cb in cbs]
    if cbs is None:
        cbs = _cb_round(dd, ch, K, phi, pops, rng, N)
    pick = rng.integers(0, N, size=(N, dd.db))
    return [cb[pick].sum(axis=1) for cb in cbs], mi_bc, mi_cb, se_cb


def mc_de_2k(dd: DegreeDistribution, ch: TestChannel, K: int, phi, Ib_pri: float, L: int,
             sample_count: int, init: str = "unknown", seed=None, paired: bool = False,
             shards: int = 8, target_se: float | None = None) -> McDeResult:
    """Population-dynamics DE of the b-step extrinsic for a 2^K-ary code.

    Populations hold reference-0 LLRs.  The population is split into
    independent shards; the reported MI is the shard mean and its standard
    error comes from the spread between shards, which also captures noise
    carried over from earlier iterations.  Per-round traces (``mi_cb``,
    ``se_cb``, ``mi_bc_in``) belong to the first shard and describe one
    sampling step given its input population.  With ``paired`` an upper
    (sure-init) and a lower (unknown-init) population run on the same tree
    samples, so the lower one is a degraded version of the upper one.
    """
    if ch.group.order != 1 << K:
        raise ValueError("channel alphabet size must be 2^K")
    shards = max(1, int(shards))
    N = int(sample_count) // shards
    if N < 2:
        raise ValueError("population too small for the requested number of shards")
    phi = _modulation(K, phi)
    inits = ["sure", "unknown"] if paired else [init]
    streams = np.random.SeedSequence(seed).spawn(shards)
    res = McDeResult(0.0, 0.0, np.empty(0))
    exts, lowers, mis = [], [], []
    for sh, ss in enumerate(streams):
        out, mi_bc, mi_cb, se_cb = _mc_shard(dd, ch, K, phi, Ib_pri, L, N, inits, np.random.default_rng(ss))
        if sh == 0:
            res.mi_bc_in, res.mi_cb, res.se_cb = mi_bc, mi_cb, se_cb
        exts.append(out[0])
        mis.append(population_mi(out[0])[0])
        if paired:
            lowers.append(out[1])
    res.ext = np.concatenate(exts)
    res.mi = float(np.mean(mis))
    if shards > 1:
        res.stderr = float(np.std(mis, ddof=1) / math.sqrt(shards))
    else:
        res.stderr = population_mi(res.ext)[1]
        res.warnings.append("single shard: stderr ignores noise carried across iterations")
    if paired:
        res.ext_lower = np.concatenate(lowers)
    if target_se is not None and res.stderr > target_se:
        res.warnings.append(f"stderr {res.stderr:.3g} exceeds target {target_se:.3g}; enlarge the population")
    return res


def degradation_gap(upper: np.ndarray, lower: np.ndarray) -> tuple[float, float, float]:
    """Paired-sample (E[(p1(0) - p2(0))^2], I1 - I2, stderr of the difference statistic)."""
    with np.errstate(over="ignore"):
        p1 = 1.0 / (1.0 + np.exp(-upper))
        p2 = 1.0 / (1.0 + np.exp(-lower))
    sq = (p1 - p2) ** 2
    with np.errstate(over="ignore"):
        i1 = 1.0 - h2(1.0 / (1.0 + np.exp(np.abs(upper))))
        i2 = 1.0 - h2(1.0 / (1.0 + np.exp(np.abs(lower))))
    stat = (math.log(2) / 2) * (i1 - i2) - sq
    return float(sq.mean()), float((i1 - i2).mean()), float(stat.std(ddof=1) / math.sqrt(len(stat)))
