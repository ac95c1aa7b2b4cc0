"""Erasure analysis: fixed-point curves, monotonicity, thresholds, areas, degree search.

For an erasure-type source the b-step DE collapses to scalars.  With x the
b-to-check MI at a fixed point:

    check MI      Iu * f(x)
    prior MI      Ib(x)    = 1 - (1 - x) / g(1 - Iu f(x))
    extrinsic MI  Ibext(x) = 1 - h(1 - Iu f(x))

with g(y) = y^(db-1) and h(y) = y^db.  ``f`` is a polynomial in x; for a
binary code f(x) = sum_d v_d x^(d-1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from math import comb

import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate, optimize

from .errors import ModelError, NonMonotoneBracket, NumericalFailure
from .groups import GroupTuple, avg_entropy_function
from .ldgm import DegreeDistribution, gray_map

MONO_GRID = 10_000
INCONCLUSIVE_BAND = 1e-10


@dataclass(frozen=True)
class Fgh:
    f: Polynomial
    db: int

    def g(self, y):
        return np.asarray(y, dtype=float) ** (self.db - 1)

    def h(self, y):
        return np.asarray(y, dtype=float) ** self.db

    def dg(self, y):
        return (self.db - 1) * np.asarray(y, dtype=float) ** (self.db - 2)

    def dh(self, y):
        return self.db * np.asarray(y, dtype=float) ** (self.db - 1)


def beq_f(dd: DegreeDistribution) -> Polynomial:
    coef = np.zeros(dd.max_degree)
    for d, vd in dd.v.items():
        coef[d - 1] += vd
    return Polynomial(coef)


def beq_fgh(dd: DegreeDistribution, f: Polynomial | None = None) -> Fgh:
    return Fgh(beq_f(dd) if f is None else f, dd.db)


# ---------------------------------------------------------------- scalar DE

@dataclass
class ScalarTrace:
    cb: list = field(default_factory=list)
    bc: list = field(default_factory=list)
    ext: list = field(default_factory=list)


def beq_recursion(dd: DegreeDistribution, Iu: float, Ib_pri: float, L: int, init: str = "unknown",
                  f: Polynomial | None = None) -> ScalarTrace:
    """Scalar b-step DE: MI per iteration of check-to-b, b-to-check and extrinsic messages."""
    fgh = beq_fgh(dd, f)
    x = 0.0 if init == "unknown" else 1.0
    tr = ScalarTrace()
    for _ in range(L):
        cb = Iu * float(fgh.f(x))
        x = 1.0 - (1.0 - Ib_pri) * (1.0 - cb) ** (dd.db - 1)
        tr.cb.append(cb)
        tr.bc.append(x)
        tr.ext.append(1.0 - (1.0 - cb) ** dd.db)
    return tr


def beq_astep_recursion(dd: DegreeDistribution, Iu: float, Ia_pri: float, L: int) -> ScalarTrace:
    """Scalar a-step DE from sure b messages; ``ext`` holds the a-extrinsic MI."""
    f = beq_f(dd)
    w = dd.w
    x = 1.0
    tr = ScalarTrace()
    for _ in range(L):
        cb = Iu * Ia_pri * float(f(x))
        x = 1.0 - (1.0 - cb) ** (dd.db - 1)
        tr.cb.append(cb)
        tr.bc.append(x)
        tr.ext.append(Iu * sum(wd * x ** d for d, wd in w.items()))
    return tr


def fixed_point(dd, Iu, Ib_pri, init="unknown", f=None, tol=1e-14, max_iter=1_000_000) -> float:
    """Limit of the scalar recursion (b-to-check MI) from the given start."""
    fgh = beq_fgh(dd, f)
    x = 0.0 if init == "unknown" else 1.0
    for _ in range(max_iter):
        nx = 1.0 - (1.0 - Ib_pri) * (1.0 - Iu * float(fgh.f(x))) ** (dd.db - 1)
        # rising iterates may start tiny and still escape, so their step is judged relative to x
        if abs(nx - x) < tol * (nx if nx > x else 1.0):
            return nx
        x = nx
    return x


# ---------------------------------------------------------------- EBP curve

@dataclass
class EbpCurve:
    x: np.ndarray
    Ib: np.ndarray
    Ibext: np.ndarray
    Iu: float
    dd: DegreeDistribution


def ib_of_x(fgh: Fgh, Iu: float, x):
    x = np.asarray(x, dtype=float)
    return 1.0 - (1.0 - x) / fgh.g(1.0 - Iu * fgh.f(x))


def ibext_of_x(fgh: Fgh, Iu: float, x):
    return 1.0 - fgh.h(1.0 - Iu * fgh.f(np.asarray(x, dtype=float)))


def dib_sign(fgh: Fgh, Iu: float, x):
    """Quantity with the sign of dIb/dx: y - (1-x) Iu f'(x) g'(y)/g(y) * y, y = 1 - Iu f(x).

    For g(y) = y^(db-1) this is 1 - Iu f(x) - (db-1)(1-x) Iu f'(x).
    """
    x = np.asarray(x, dtype=float)
    return 1.0 - Iu * fgh.f(x) - (fgh.db - 1) * (1.0 - x) * Iu * fgh.f.deriv()(x)


def dib_dx(fgh: Fgh, Iu: float, x):
    x = np.asarray(x, dtype=float)
    y = 1.0 - Iu * fgh.f(x)
    return (fgh.g(y) - (1.0 - x) * Iu * fgh.f.deriv()(x) * fgh.dg(y)) / fgh.g(y) ** 2


def ebp_curve(dd: DegreeDistribution, Iu: float, grid=None, f: Polynomial | None = None) -> EbpCurve:
    if not 0.0 <= Iu < 1.0:
        raise ValueError("Iu must lie in [0, 1)")
    x = np.linspace(0.0, 1.0, 1001) if grid is None else np.asarray(grid, dtype=float)
    fgh = beq_fgh(dd, f)
    return EbpCurve(x, ib_of_x(fgh, Iu, x), ibext_of_x(fgh, Iu, x), Iu, dd)


# ---------------------------------------------------------------- monotonicity

@dataclass
class MonotonicityReport:
    satisfied: bool
    verdict: str  # satisfied | violated | inconclusive
    margin: float
    witness_x: float
    ib_at_0: float


def _min_on_unit(fun, n=MONO_GRID):
    xs = np.linspace(0.0, 1.0, n + 1)
    vals = fun(xs)
    i = int(np.argmin(vals))
    best_x, best = float(xs[i]), float(vals[i])
    lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, n)]
    if hi > lo:
        r = optimize.minimize_scalar(lambda t: float(fun(np.array([t]))[0]), bounds=(lo, hi),
                                     method="bounded", options={"xatol": 1e-13})
        if r.fun < best:
            best_x, best = float(r.x), float(r.fun)
    return best_x, best


def monotonicity_check(dd: DegreeDistribution, Iu: float, f: Polynomial | None = None,
                       band: float = INCONCLUSIVE_BAND) -> MonotonicityReport:
    """Does the curve start at the origin and increase strictly in Ib?

    The margin is the worst value of a quantity sharing the sign of dIb/dx;
    margins within ``band`` of zero are reported as inconclusive.
    """
    fgh = beq_fgh(dd, f)
    ib0 = float(ib_of_x(fgh, Iu, 0.0))
    if ib0 < -band:
        return MonotonicityReport(False, "violated", ib0, 0.0, ib0)
    wx, margin = _min_on_unit(lambda x: dib_sign(fgh, Iu, x))
    if margin > band:
        return MonotonicityReport(True, "satisfied", margin, wx, ib0)
    if margin >= -band:
        return MonotonicityReport(False, "inconclusive", margin, wx, ib0)
    return MonotonicityReport(False, "violated", margin, wx, ib0)


def threshold_search(dd: DegreeDistribution, tol: float = 1e-9, f: Polynomial | None = None,
                     probe: int = 64) -> float:
    """Largest Iu whose curve passes the monotonicity check, by bisection.

    A coarse probe first confirms that the verdict switches once from
    satisfied to not satisfied; otherwise NonMonotoneBracket is raised.
    """
    fgh = beq_fgh(dd, f)
    if float(fgh.f(0.0)) > 0:
        raise ModelError("threshold search needs v_1 = 0")
    grid = np.linspace(0.0, 1.0 - 1e-9, probe + 1)
    ok = [monotonicity_check(dd, float(u), f).satisfied for u in grid]
    switch = [i for i in range(1, len(ok)) if ok[i] != ok[i - 1]]
    if not ok[0] or len(switch) > 1:
        raise NonMonotoneBracket(f"monotonicity verdict changes {len(switch)} times over Iu")
    if not switch:
        return float(grid[-1])
    lo, hi = float(grid[switch[0] - 1]), float(grid[switch[0]])
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if monotonicity_check(dd, mid, f).satisfied:
            lo = mid
        else:
            hi = mid
    return lo


def solvability_threshold(dd: DegreeDistribution, f: Polynomial | None = None, tol: float = 1e-10) -> float:
    """Largest Iu for which the curve stays in Ib > 0 for all x in (0, 1].

    Ib(x) <= 0 exactly when Iu >= (1 - (1-x)^(1/(db-1))) / f(x), so the
    boundary is the minimum of that ratio over x.
    """
    fgh = beq_fgh(dd, f)
    e = 1.0 / (dd.db - 1)

    def ratio(x):
        x = np.asarray(x, dtype=float)
        fx = fgh.f(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = (1.0 - (1.0 - x) ** e) / fx
        return np.where(fx > 0, r, np.inf)

    xs = np.linspace(1e-6, 1.0, 20001)
    vals = ratio(xs)
    i = int(np.argmin(vals))
    lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, len(xs) - 1)]
    r = optimize.minimize_scalar(lambda t: float(ratio(t)), bounds=(lo, hi), method="bounded",
                                 options={"xatol": tol})
    return float(min(r.fun, vals[i], 1.0))


# ---------------------------------------------------------------- areas

@dataclass
class AreaReport:
    A_ebp: float
    identity_residual: float
    bound: float  # Iu / R


def ebp_area(dd: DegreeDistribution, Iu: float) -> AreaReport:
    """Area under the fixed-point curve and the residual of its closed-form identity."""
    if dd.K != 1:
        raise ModelError("the area identity is stated for binary codes")
    fgh = beq_fgh(dd)
    fp = fgh.f.deriv()

    def integrand(x):
        y = 1.0 - Iu * float(fgh.f(x))
        return (1.0 - float(ib_of_x(fgh, Iu, x))) * float(fgh.dh(y)) * Iu * float(fp(x))

    if Iu == 0.0:
        val, err = 0.0, 0.0
    else:
        val, err = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-13, epsrel=1e-13, limit=200)
        if not np.isfinite(val) or err > 1e-9:
            raise NumericalFailure(f"quadrature error estimate {err:.3g}")
    v1 = dd.v.get(1, 0.0)
    A = float(ibext_of_x(fgh, Iu, 0.0)) + val
    resid = dd.db * Iu * v1 + val - Iu / dd.R
    return AreaReport(A, float(resid), Iu / dd.R)


def lower_curve_area(dd: DegreeDistribution, Iu: float, points: int = 401, f=None) -> float:
    """Trapezoid integral over Ib of the lower BP EXIT curve (converged scalar DE)."""
    fgh = beq_fgh(dd, f)
    ib = np.linspace(0.0, 1.0, points)
    vals = []
    for b in ib:
        x = fixed_point(dd, Iu, float(b), "unknown", f)
        vals.append(float(ibext_of_x(fgh, Iu, x)))
    return float(integrate.trapezoid(vals, ib))


# ---------------------------------------------------------------- 2^K erasure-like problems

@dataclass
class ErasureProfile:
    K: int
    h: np.ndarray  # h_0..h_K
    Ic: np.ndarray  # Ic_0..Ic_{K-1}
    Iu: float


def erasure_profile_2k(ch, phi=None, tol: float = 1e-9) -> ErasureProfile:
    """Average entropy functions of the prior composed with the modulation map.

    Expectation over the exact source law and over the additive dither.
    """
    prob = ch.problem
    K = int(round(math.log2(prob.group.order)))
    if prob.group.order != 1 << K:
        raise ModelError("alphabet size must be a power of two")
    if phi is None or (isinstance(phi, str) and phi == "identity"):
        phi = np.arange(1 << K)
    elif isinstance(phi, str) and phi == "gray":
        phi = gray_map(K)
    phi = np.asarray(phi)
    ys, py = prob.y_support()
    pri = ch.priors(ys)
    from .groups import Z2K
    g = Z2K(K)
    h = np.zeros(K + 1)
    deltas = np.arange(prob.group.order)
    for p_row, w in zip(pri, py):
        for dl in deltas:
            tup = GroupTuple(g, p_row[prob.group.add(phi, dl)])
            for ell in range(1, K + 1):
                h[ell] += w / len(deltas) * avg_entropy_function(tup, ell)
    Ic = 1.0 - np.diff(h)
    Iu = float(K - h[K])
    if abs(Iu - ch.R0) > tol:
        raise ModelError(f"sum of bit MIs {Iu} differs from I(u;y) = {ch.R0}")
    return ErasureProfile(K, h, Ic, Iu)


def alpha_poly(K: int, d: int, ell: int) -> Polynomial:
    """C(K-1, l) x^(d(l+1)-1) (1 - x^d)^(K-1-l)."""
    xd = Polynomial([0.0] * d + [1.0])
    p = Polynomial([0.0] * (d * (ell + 1) - 1) + [1.0]) * (1 - xd) ** (K - 1 - ell)
    return comb(K - 1, ell) * p


def f_erasure_2k(profile: ErasureProfile, dd: DegreeDistribution) -> Polynomial:
    K = profile.K
    out = Polynomial([0.0])
    for ell in range(K):
        for d, vd in dd.v.items():
            out = out + (profile.Ic[ell] / profile.Iu) * vd * alpha_poly(K, d, ell)
    return out


# ---------------------------------------------------------------- degree-distribution search

@dataclass
class DdSearchResult:
    dd: DegreeDistribution | None
    value: float  # Iu (max_iu) or R (min_rate)
    feasible: bool
    min_margin: float
    binding_x: list
    audit: dict = field(default_factory=dict)


def _basis(db: int, degrees, grid, K=1, profile=None):
    """Columns psi_d(x) with margin(x) = 1 - Iu sum_d v_d psi_d(x) = 1 - Iu (f + (db-1)(1-x) f')."""
    cols = []
    for d in degrees:
        if profile is None:
            f = Polynomial([0.0] * (d - 1) + [1.0])
        else:  # Ic already carries the Iu factor
            f = sum((profile.Ic[ell] * alpha_poly(K, d, ell) for ell in range(K)), Polynomial([0.0]))
        cols.append(f(grid) + (db - 1) * (1.0 - grid) * f.deriv()(grid))
    return np.stack(cols, axis=1)


def _lp(c, A_ub, b_ub, A_eq, b_eq):
    r = optimize.linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    return r


def dd_search(target: str, db: int, degrees, value: float, delta: float = 1e-6, K: int = 1,
              profile: ErasureProfile | None = None, grid_points: int = 2001, tol: float = 1e-9) -> DdSearchResult:
    """Degree distribution meeting the monotonicity conditions with margin ``delta``.

    target "max_iu": maximize Iu at rate ``value``; target "min_rate":
    minimize the rate at Iu = ``value``.  Degree 1 is excluded.
    """
    degrees = sorted({int(d) for d in degrees if int(d) >= 2})
    if not degrees:
        raise ModelError("need at least one check degree >= 2")
    grid = np.linspace(0.0, 1.0, grid_points)
    B = _basis(db, degrees, grid, K, profile)
    inv_d = np.array([1.0 / d for d in degrees])
    ones = np.ones((1, len(degrees)))

    def feasible(Iu, R=None, margin=delta):
        # Iu * B v <= 1 - margin; sum v = 1; optional rate row
        A_eq = [ones[0]]
        b_eq = [1.0]
        if R is not None:
            A_eq.append(inv_d)
            b_eq.append(K / (db * R))
        coef = Iu if profile is None else 1.0
        c = -inv_d if R is None else np.zeros(len(degrees))
        return _lp(c, coef * B, np.full(len(grid), 1.0 - margin), np.array(A_eq), np.array(b_eq))

    def accepted(Iu, x):
        # the LP solver tolerates small infeasibilities; re-check on the fine grid
        if x is None:
            return False
        v = {d: float(c) for d, c in zip(degrees, x) if c > 1e-15}
        s = sum(v.values())
        cand = DegreeDistribution.from_v(db, {d: c / s for d, c in v.items()}, K)
        f = None if profile is None else f_erasure_2k(profile, cand)
        return monotonicity_check(cand, Iu if profile is None else profile.Iu, f).margin >= delta

    if target == "max_iu":
        if profile is not None:
            raise ModelError("max_iu is defined for the binary erasure profile only")
        R = float(value)
        lo, hi = 0.0, 1.0
        best = None
        if not feasible(1e-12, R).success:
            return DdSearchResult(None, 0.0, False, float("nan"), [], {"reason": "rate unreachable with degrees"})
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            r = feasible(mid, R)
            if r.success and accepted(mid, r.x):
                lo, best = mid, r.x
            else:
                hi = mid
        if best is None:
            best = feasible(lo, R).x
        Iu = lo
    elif target == "min_rate":
        Iu = float(value)
        for margin in (delta, 10 * delta, 100 * delta):
            r = feasible(Iu, margin=margin)
            if not r.success or accepted(Iu, r.x):
                break
        if not r.success or not accepted(Iu, r.x):
            m = 1.0 - Iu * B
            worst = grid[np.argsort(m.min(axis=1))[:5]].tolist()
            return DdSearchResult(None, float("nan"), False, float("nan"), worst, {"reason": r.message})
        best = r.x
    else:
        raise ValueError("target must be 'max_iu' or 'min_rate'")
    v = {d: float(x) for d, x in zip(degrees, best) if x > 1e-15}
    s = sum(v.values())
    v = {d: x / s for d, x in v.items()}
    dd = DegreeDistribution.from_v(db, v, K)
    coef = Iu if profile is None else 1.0
    margins = 1.0 - coef * (B @ np.array([v.get(d, 0.0) for d in degrees]))
    order = np.argsort(margins)[:5]
    value_out = Iu if target == "max_iu" else dd.R
    return DdSearchResult(dd, float(value_out), True, float(margins.min()), grid[order].tolist(),
                          {"delta": delta, "grid_points": grid_points, "degrees": degrees})
