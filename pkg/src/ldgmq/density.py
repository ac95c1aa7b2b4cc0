"""Symmetric message densities for binary BP analysis.

Every density is the law of an LLR message conditioned on reference bit 0.
Symmetry (mass at +x equals e^x times mass at -x) means the law of |LLR|
determines everything, so histograms store only magnitude masses on the grid
x_k = k * STEP, k = 0..NBINS, plus an atom at +inf.  The signed view splits
each magnitude mass as (e^x, 1) / (1 + e^x).  An erasure density keeps only
the mass x at +inf and 1 - x at 0 and has exact closed-form operations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ModelError
from .groups import h2
from .quantizer import phi_transform

LAMBDA = 30.0
NBINS = 2048
STEP = LAMBDA / NBINS
GRID = np.arange(NBINS + 1) * STEP
_H_AT = h2(1.0 / (1.0 + np.exp(GRID)))  # entropy of a tuple with |LLR| = x_k


@dataclass(frozen=True)
class ErasureDensity:
    x: float  # MI = mass of the sure atom

    def __post_init__(self):
        if not -1e-12 <= self.x <= 1 + 1e-12:
            raise ValueError("erasure MI must lie in [0, 1]")
        object.__setattr__(self, "x", float(min(1.0, max(0.0, self.x))))


@dataclass(frozen=True, eq=False)
class HistDensity:
    q: np.ndarray  # magnitude masses on GRID
    inf: float = 0.0
    clamped: float = 0.0  # mass pushed beyond LAMBDA into the inf atom

    def __post_init__(self):
        q = np.clip(np.asarray(self.q, dtype=float), 0.0, None)
        if q.shape != (NBINS + 1,):
            raise ValueError("histogram has the wrong length")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @property
    def total(self) -> float:
        return float(self.q.sum() + self.inf)


SymmetricDensity = ErasureDensity | HistDensity


def _normalized(q, inf, clamped) -> HistDensity:
    # rounding drift in total mass compounds geometrically across node powers
    tot = float(q.sum() + inf)
    return HistDensity(q / tot, inf / tot, clamped)


def bec(x: float) -> ErasureDensity:
    return ErasureDensity(x)


def to_hist(d) -> HistDensity:
    if isinstance(d, HistDensity):
        return d
    q = np.zeros(NBINS + 1)
    q[0] = 1.0 - d.x
    return HistDensity(q, d.x)


def _split(mag):
    """Two-bin requantization of finite magnitudes <= LAMBDA preserving mass and entropy.

    Returns (lower bin, weight on the lower bin); the rest goes to the next bin.
    """
    k = np.minimum(np.floor(mag / STEP).astype(np.int64), NBINS)
    hi = np.minimum(k + 1, NBINS)
    H = h2(1.0 / (1.0 + np.exp(mag)))
    gap = _H_AT[k] - _H_AT[hi]
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.where(gap > 0, (H - _H_AT[hi]) / gap, 1.0)
    return k, np.clip(theta, 0.0, 1.0)


def _deposit(q, mag, w):
    k, th = _split(mag)
    q += np.bincount(k, weights=w * th, minlength=NBINS + 1)
    q += np.bincount(np.minimum(k + 1, NBINS), weights=w * (1.0 - th), minlength=NBINS + 1)
    return q


def from_magnitudes(mag, w) -> HistDensity:
    """Histogram from |LLR| values with weights; values beyond LAMBDA go to the inf atom."""
    mag = np.abs(np.asarray(mag, dtype=float))
    w = np.asarray(w, dtype=float)
    tot = w.sum()
    big = ~np.isfinite(mag) | (mag > LAMBDA)
    q = _deposit(np.zeros(NBINS + 1), mag[~big], w[~big] / tot)
    clamp = float(w[big & np.isfinite(mag)].sum() / tot)
    return HistDensity(q, float(w[big].sum() / tot), clamp)


def signed_view(d) -> tuple[np.ndarray, np.ndarray, float]:
    """(llr grid -NBINS..NBINS, masses, +inf mass)."""
    h = to_hist(d)
    pos = h.q[1:] / (1.0 + np.exp(-GRID[1:]))
    neg = h.q[1:] - pos
    ell = np.concatenate([-GRID[:0:-1], GRID])
    return ell, np.concatenate([neg[::-1], [h.q[0]], pos]), h.inf


def symmetry_residual(d) -> float:
    """max |a(x) - e^x a(-x)| over the finite grid, relative to the largest mass."""
    ell, m, _ = signed_view(d)
    c = NBINS
    pos, neg = m[c + 1:], m[:c][::-1]
    scale = max(m.max(), 1e-300)
    # compare in the form a(-x) (1 + e^x) = q(x) to avoid overflow at large x
    return float(np.max(np.abs(pos * np.exp(-GRID[1:]) - neg), initial=0.0) / scale)


# ---------------------------------------------------------------- MI

def density_mi(d) -> float:
    if isinstance(d, ErasureDensity):
        return d.x
    return float(min(1.0, max(0.0, 1.0 - np.dot(d.q, _H_AT))))


def density_entropy(d) -> float:
    return 1.0 - density_mi(d)


# ---------------------------------------------------------------- combination

def _support(q):
    nz = np.flatnonzero(q > 0)
    return int(nz[-1]) if nz.size else -1


def density_vn(d1, d2):
    """Variable-node combination (LLR addition)."""
    if isinstance(d1, ErasureDensity) and isinstance(d2, ErasureDensity):
        return ErasureDensity(1.0 - (1.0 - d1.x) * (1.0 - d2.x))
    h1, h2_ = to_hist(d1), to_hist(d2)
    inf = 1.0 - (1.0 - h1.inf) * (1.0 - h2_.inf)
    m1, m2 = _support(h1.q), _support(h2_.q)
    if m1 < 0 or m2 < 0:
        return HistDensity(np.zeros(NBINS + 1), 1.0, h1.clamped + h2_.clamped)

    def signed(q, m):
        pos = q[1:m + 1] / (1.0 + np.exp(-GRID[1:m + 1]))
        return np.concatenate([(q[1:m + 1] - pos)[::-1], [q[0]], pos])

    c = np.convolve(signed(h1.q, m1), signed(h2_.q, m2))
    center = m1 + m2
    k = np.arange(len(c)) - center
    over = np.abs(k) > NBINS
    clamp = float(c[over].sum())
    c = np.where(over, 0.0, c)
    q = np.zeros(NBINS + 1)
    keep = ~over
    np.add.at(q, np.abs(k[keep]), c[keep])
    return _normalized(q, inf + clamp, h1.clamped + h2_.clamped + clamp)


@lru_cache(maxsize=1)
def _cn_table() -> tuple[np.ndarray, np.ndarray]:
    f = phi_transform(GRID)
    with np.errstate(over="ignore"):
        out = phi_transform(f[:, None] + f[None, :])
    k, th = _split(out)
    k = k.astype(np.int16)
    k.setflags(write=False)
    th.setflags(write=False)
    return k, th


def density_cn(d1, d2):
    """Check-node combination via the magnitude transform table."""
    if isinstance(d1, ErasureDensity) and isinstance(d2, ErasureDensity):
        return ErasureDensity(d1.x * d2.x)
    h1, h2_ = to_hist(d1), to_hist(d2)
    q = h1.inf * h2_.q + h2_.inf * h1.q
    i1, i2 = np.flatnonzero(h1.q > 0), np.flatnonzero(h2_.q > 0)
    if i1.size and i2.size:
        K, TH = _cn_table()
        sub = np.ix_(i1, i2)
        k = K[sub].ravel().astype(np.int64)
        th = TH[sub].ravel()
        w = np.outer(h1.q[i1], h2_.q[i2]).ravel()
        q = q + np.bincount(k, weights=w * th, minlength=NBINS + 1)
        q = q + np.bincount(np.minimum(k + 1, NBINS), weights=w * (1.0 - th), minlength=NBINS + 1)
    return _normalized(q, h1.inf * h2_.inf, h1.clamped + h2_.clamped)


def density_mix(weights, densities):
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("mixture weights must be a pmf")
    ds = list(densities)
    if all(isinstance(d, ErasureDensity) for d in ds):
        return ErasureDensity(float(sum(wi * d.x for wi, d in zip(w, ds))))
    hs = [to_hist(d) for d in ds]
    q = sum(wi * h.q for wi, h in zip(w, hs))
    return HistDensity(q, float(sum(wi * h.inf for wi, h in zip(w, hs))),
                       float(sum(wi * h.clamped for wi, h in zip(w, hs))))


def _power(d, k, op, unit):
    out = unit
    base = d
    first = True
    while k:
        if k & 1:
            out = base if first else op(out, base)
            first = False
        k >>= 1
        if k:
            base = op(base, base)
    return out


def vn_power(d, k: int):
    """d ⊙ ... ⊙ d (k copies); k = 0 gives the unknown density."""
    return _power(d, k, density_vn, ErasureDensity(0.0))


def cn_power(d, k: int):
    """d ⊕ ... ⊕ d (k copies); k = 0 gives the sure density."""
    return _power(d, k, density_cn, ErasureDensity(1.0))


# ---------------------------------------------------------------- priors

PRIOR_PANELS = 512
SYMMETRY_TOL = 1e-6


def prior_density_u(ch, panels: int = PRIOR_PANELS):
    """Density of the source prior LLR w.r.t. the reference symbol (binary problems)."""
    prob = ch.problem
    if prob.group.order != 2:
        raise ModelError("prior density is defined for binary reconstruction alphabets")
    if ch.t == 0:
        return ErasureDensity(0.0)
    if math.isinf(ch.t):
        return ErasureDensity(ch.R0)
    if prob.kind == "mse":
        ys, w = prob.y_nodes(panels, 0.0, float(prob.M))
    else:
        ys, w = prob.y_support()
    p = ch.priors(ys)
    with np.errstate(divide="ignore"):
        ell = np.log(p[:, 0]) - np.log(p[:, 1])
    wt = w * 2.0 * p[:, 0]  # p(y | u* = 0)
    wt = wt / wt.sum()
    # the two MI expressions agree only for symmetric densities
    fin = np.isfinite(ell)
    mi_a = 1.0 - float(np.sum(wt * h2(1.0 / (1.0 + np.exp(np.abs(np.where(fin, ell, 0.0))))) * fin))
    with np.errstate(over="ignore"):
        mi_b = 1.0 - float(np.sum(np.where(fin, wt * np.logaddexp(0.0, -np.where(fin, ell, 0.0)) / math.log(2), 0.0)))
    if abs(mi_a - mi_b) > SYMMETRY_TOL:
        raise ModelError(f"prior density is not symmetric (MI mismatch {abs(mi_a - mi_b):.3g})")
    if np.all(np.isin(np.abs(ell[wt > 0]), [0.0, np.inf])):
        return ErasureDensity(float(wt[np.isinf(ell)].sum()))
    return from_magnitudes(ell, wt)


def sample_density(d, n: int, rng) -> np.ndarray:
    """Draw n LLR samples (reference bit 0) from a density."""
    h = to_hist(d)
    ell, m, inf = signed_view(h)
    probs = np.concatenate([m, [inf]])
    probs = probs / probs.sum()
    idx = rng.choice(len(probs), size=n, p=probs)
    vals = np.concatenate([ell, [np.inf]])
    return vals[idx]
