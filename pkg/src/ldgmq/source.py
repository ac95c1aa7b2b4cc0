"""Symmetric source-coding problems and their optimal test channels.

A problem fixes a reconstruction group G, a source alphabet with distribution
p(y) and a distortion d(u, y).  The test channel at slope ``t`` is
p(u|y) = exp(-t d(u, y)) / Q(y); ``t = math.inf`` is the exact erasure limit
where p(u|y) is uniform on the zero-distortion set.

Source samples are stored as numpy arrays:

* ``mse``: floats in [0, M)
* ``hamming``: integers in [0, M)
* ``erasure``: integers in [0, M), with ``-1`` for the erasure symbol
* ``erasure_k``: integer bit masks over Z2^K; bit ``u`` is set iff u lies in
  the affine subspace y
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ConfigError, DomainError, NumericalFailure
from .groups import GroupDescriptor, GroupTuple, Z, Z2K

ERASED = -1
_GL_NODES, _GL_WEIGHTS = leggauss(64)
QUAD_TOL = 1e-10
QUAD_MAX_PANELS = 1 << 12


class SymmetricProblem:
    kind: str = ""
    group: GroupDescriptor

    # -- to override
    def distortion(self, y) -> np.ndarray:
        """Matrix d[j, u] of distortions for every sample y_j and u in G."""
        raise NotImplementedError

    def sample_y(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def act(self, u, y):
        """Group action psi_u(y) with d(u, y) = d(0, psi_u(y))."""
        raise NotImplementedError

    def p_y(self, y) -> np.ndarray:
        """Density (continuous) or probability (discrete) of source samples."""
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError

    # -- shared
    @property
    def infinite_t_ok(self) -> bool:
        return False

    def y_support(self):
        """Finite support ``(ys, probs)``; None for continuous sources."""
        return None

    def stats(self, t: float) -> tuple[float, float]:
        """Return (D0, R0) at slope t; R0 in bits."""
        sup = self.y_support()
        if sup is None:
            raise NotImplementedError
        ys, w = sup
        return _stats_from(self, t, ys, w)

    def log_prior(self, y, t: float) -> np.ndarray:
        d = self.distortion(y)
        if math.isinf(t):
            if not self.infinite_t_ok:
                raise DomainError(f"t = inf is not defined for {self.kind}")
            lp = np.where(d == 0, 0.0, -np.inf)
        else:
            lp = -t * d
        return lp

    def priors(self, y, t: float) -> np.ndarray:
        """Normalized prior tuples p(u | y_j) as rows of an (n, |G|) array."""
        lp = self.log_prior(y, t)
        lp = lp - lp.max(axis=1, keepdims=True)
        p = np.exp(lp)
        return p / p.sum(axis=1, keepdims=True)


def _stats_from(problem, t, ys, w):
    p = problem.priors(ys, t)
    d = problem.distortion(ys)
    D = float(np.sum(w * np.sum(p * d, axis=1)))
    with np.errstate(divide="ignore", invalid="ignore"):
        H = -np.sum(np.where(p > 0, p * np.log2(p), 0.0), axis=1)
    R = math.log2(problem.group.order) - float(np.sum(w * H))
    return D, R


@dataclass(frozen=True)
class MseUniform(SymmetricProblem):
    M: int
    kind = "mse"

    def __post_init__(self):
        if self.M < 2:
            raise ConfigError("M must be >= 2")

    @property
    def group(self):
        return Z(self.M)

    def distortion(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        u = np.arange(self.M)
        diff = np.mod(y[:, None] - u[None, :] + self.M / 2, self.M) - self.M / 2
        return diff * diff

    def sample_y(self, n, rng):
        return rng.uniform(0.0, self.M, size=n)

    def act(self, u, y):
        return np.mod(np.asarray(y, dtype=float) - u, self.M)

    def p_y(self, y):
        y = np.asarray(y, dtype=float)
        return np.where((y >= 0) & (y < self.M), 1.0 / self.M, 0.0)

    def to_config(self):
        return {"kind": self.kind, "M": self.M}

    def y_nodes(self, panels: int, lo=0.0, hi=0.5):
        edges = np.linspace(lo, hi, panels + 1)
        half = np.diff(edges) / 2
        mid = (edges[:-1] + edges[1:]) / 2
        x = (half[:, None] * _GL_NODES[None, :] + mid[:, None]).ravel()
        wt = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
        return x, wt

    def stats(self, t):
        # The integrand is 1-periodic and even in y, so [0, 1/2] suffices.
        prev = None
        panels = 1
        while panels <= QUAD_MAX_PANELS:
            x, wt = self.y_nodes(panels)
            cur = _stats_from(self, t, x, 2.0 * wt)
            if prev is not None and max(abs(cur[0] - prev[0]), abs(cur[1] - prev[1])) < QUAD_TOL:
                return cur
            prev = cur
            panels *= 2
        raise NumericalFailure(f"quadrature did not converge at t={t}")


@dataclass(frozen=True)
class MaryHamming(SymmetricProblem):
    M: int
    kind = "hamming"

    @property
    def group(self):
        return Z(self.M)

    @property
    def infinite_t_ok(self):
        return True

    def distortion(self, y):
        y = np.atleast_1d(np.asarray(y))
        return (y[:, None] != np.arange(self.M)[None, :]).astype(float)

    def sample_y(self, n, rng):
        return rng.integers(0, self.M, size=n)

    def act(self, u, y):
        return np.mod(np.asarray(y) - u, self.M)

    def p_y(self, y):
        return np.full(np.shape(y), 1.0 / self.M)

    def y_support(self):
        return np.arange(self.M), np.full(self.M, 1.0 / self.M)

    def to_config(self):
        return {"kind": self.kind, "M": self.M}


@dataclass(frozen=True)
class MaryErasure(SymmetricProblem):
    M: int
    epsilon: float
    kind = "erasure"

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must be in [0, 1]")

    @property
    def group(self):
        return Z(self.M)

    @property
    def infinite_t_ok(self):
        return True

    def distortion(self, y):
        y = np.atleast_1d(np.asarray(y))
        d = (y[:, None] != np.arange(self.M)[None, :]).astype(float)
        d[y == ERASED] = 0.0
        return d

    def sample_y(self, n, rng):
        y = rng.integers(0, self.M, size=n)
        y[rng.random(n) < self.epsilon] = ERASED
        return y

    def act(self, u, y):
        y = np.asarray(y)
        return np.where(y == ERASED, ERASED, np.mod(y - u, self.M))

    def p_y(self, y):
        y = np.asarray(y)
        return np.where(y == ERASED, self.epsilon, (1 - self.epsilon) / self.M)

    def y_support(self):
        ys = np.concatenate([np.arange(self.M), [ERASED]])
        return ys, self.p_y(ys)

    def to_config(self):
        return {"kind": self.kind, "M": self.M, "epsilon": self.epsilon}


def linear_subspaces(K: int) -> list[int]:
    """All linear subspaces of Z2^K as membership bit masks."""
    found = set()
    for r in range(K + 1):
        for basis in itertools.combinations(range(1, 1 << K), r):
            span = {0}
            for b in basis:
                span |= {s ^ b for s in span}
            found.add(sum(1 << s for s in span))
    return sorted(found, key=lambda m: (bin(m).count("1"), m))


def shift_mask(mask: int, u: int, K: int) -> int:
    return sum(1 << (x ^ u) for x in range(1 << K) if (mask >> x) & 1)


@dataclass(frozen=True)
class ErasureLikeK(SymmetricProblem):
    """Source over affine subspaces of Z2^K with subset distortion.

    By default each of the K bits is erased independently with probability
    ``epsilon``.  Passing ``dim_pmf`` instead draws a subspace dimension from
    that pmf and a subspace of that dimension uniformly.
    """

    K: int
    epsilon: float = 0.5
    dim_pmf: tuple | None = None
    kind = "erasure_k"

    def __post_init__(self):
        if not 1 <= self.K <= 5:
            raise ConfigError("erasure_k supports 1 <= K <= 5")
        if self.dim_pmf is not None:
            pmf = tuple(float(x) for x in self.dim_pmf)
            if len(pmf) != self.K + 1 or abs(sum(pmf) - 1) > 1e-12 or min(pmf) < 0:
                raise ConfigError("dim_pmf must be a pmf over 0..K")
            object.__setattr__(self, "dim_pmf", pmf)
        elif not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must be in [0, 1]")

    @property
    def group(self):
        return Z2K(self.K)

    @property
    def infinite_t_ok(self):
        return True

    @cached_property
    def subspace_law(self) -> tuple[np.ndarray, np.ndarray]:
        """Linear subspaces (masks) and their probabilities."""
        K = self.K
        if self.dim_pmf is None:
            masks, probs = [], []
            for erased in itertools.product((0, 1), repeat=K):
                span = {0}
                for k, e in enumerate(erased):
                    if e:
                        span |= {s ^ (1 << k) for s in span}
                masks.append(sum(1 << s for s in span))
                ne = sum(erased)
                probs.append(self.epsilon ** ne * (1 - self.epsilon) ** (K - ne))
            return np.array(masks, dtype=np.int64), np.array(probs)
        subs = linear_subspaces(K)
        by_dim: dict[int, list[int]] = {}
        for m in subs:
            by_dim.setdefault(int(math.log2(bin(m).count("1"))), []).append(m)
        masks, probs = [], []
        for dim, p in enumerate(self.dim_pmf):
            for m in by_dim[dim]:
                masks.append(m)
                probs.append(p / len(by_dim[dim]))
        return np.array(masks, dtype=np.int64), np.array(probs)

    def distortion(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=np.int64))
        u = np.arange(1 << self.K, dtype=np.int64)
        return 1.0 - ((y[:, None] >> u[None, :]) & 1).astype(float)

    def sample_y(self, n, rng):
        masks, probs = self.subspace_law
        idx = rng.choice(len(masks), size=n, p=probs)
        off = rng.integers(0, 1 << self.K, size=n)
        return self._shift(masks[idx], off)

    def _shift(self, masks, offsets):
        masks = np.asarray(masks, dtype=np.int64)
        offsets = np.asarray(offsets, dtype=np.int64)
        out = np.zeros(np.broadcast(masks, offsets).shape, dtype=np.int64)
        for x in range(1 << self.K):
            bit = (masks >> x) & 1
            out |= bit << (x ^ offsets)
        return out

    def act(self, u, y):
        return self._shift(y, u)

    def y_support(self):
        masks, probs = self.subspace_law
        table: dict[int, float] = {}
        for m, p in zip(masks.tolist(), probs.tolist()):
            for off in range(1 << self.K):
                c = shift_mask(m, off, self.K)
                table[c] = table.get(c, 0.0) + p / (1 << self.K)
        ys = np.array(sorted(table), dtype=np.int64)
        return ys, np.array([table[c] for c in ys.tolist()])

    def p_y(self, y):
        ys, pr = self.y_support()
        lookup = dict(zip(ys.tolist(), pr.tolist()))
        return np.array([lookup.get(int(v), 0.0) for v in np.atleast_1d(y)])

    def to_config(self):
        cfg = {"kind": self.kind, "K": self.K}
        if self.dim_pmf is None:
            cfg["epsilon"] = self.epsilon
        else:
            cfg["dim_pmf"] = list(self.dim_pmf)
        return cfg


# ---------------------------------------------------------------- test channel

@dataclass(frozen=True)
class TestChannel:
    problem: SymmetricProblem
    t: float
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if not (self.t >= 0):
            raise DomainError("t must be nonnegative")
        if math.isinf(self.t) and not self.problem.infinite_t_ok:
            raise DomainError(f"t = inf is not defined for {self.problem.kind}")

    @property
    def group(self):
        return self.problem.group

    def _stats(self):
        if "s" not in self._cache:
            self._cache["s"] = self.problem.stats(self.t)
        return self._cache["s"]

    @property
    def D0(self) -> float:
        return self._stats()[0]

    @property
    def R0(self) -> float:
        return self._stats()[1]

    @property
    def H_u_given_y(self) -> float:
        return math.log2(self.group.order) - self.R0

    def priors(self, y) -> np.ndarray:
        return self.problem.priors(y, self.t)

    def to_config(self) -> dict:
        cfg = dict(self.problem.to_config())
        cfg["t"] = "inf" if math.isinf(self.t) else self.t
        return cfg


def d0(ch: TestChannel) -> float:
    return ch.D0


def r0(ch: TestChannel) -> float:
    return ch.R0


def max_rate(problem: SymmetricProblem) -> float:
    if problem.infinite_t_ok:
        return problem.stats(math.inf)[1]
    return math.log2(problem.group.order)


def t0(problem: SymmetricProblem, R: float, tol: float = 1e-10) -> float:
    """Slope t with R0(t) = R, by bisection (R0 increases with t)."""
    rmax = max_rate(problem)
    if not 0 < R < math.log2(problem.group.order) or R > rmax + 1e-12:
        raise DomainError(f"rate {R} outside the achievable range (0, {rmax})")
    if problem.infinite_t_ok and abs(R - rmax) <= 1e-12:
        return math.inf
    lo, hi = 0.0, 1.0
    while problem.stats(hi)[1] < R:
        lo, hi = hi, 2 * hi
        if hi > 1e6:
            if problem.infinite_t_ok:
                return math.inf
            raise NumericalFailure("could not bracket t0")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        r = problem.stats(mid)[1]
        if abs(r - R) <= tol:
            return mid
        if r < R:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            return mid
    raise NumericalFailure("bisection for t0 did not converge")


def ideal_mse(R: float, M: int) -> float:
    """Ideal distortion sigma_*^2(R) for an M-periodic source: (M/2^R)^2/(2 pi e)."""
    return (M / 2.0 ** R) ** 2 / (2 * math.pi * math.e)


def loss_at_t(M: int, t: float) -> tuple[float, float, float]:
    """(R, D, loss_dB) of the M-ary MSE test channel at slope t."""
    D, R = MseUniform(M).stats(t)
    return R, D, 10 * math.log10(D / ideal_mse(R, M))


def random_coding_loss(M: int, R: float) -> float:
    t = t0(MseUniform(M), R)
    D = MseUniform(M).stats(t)[0]
    return 10 * math.log10(D / ideal_mse(R, M))


def min_random_coding_loss(M: int, t_bounds=(0.2, 20.0)) -> dict:
    """Minimize the random-coding loss over the slope t."""
    from scipy.optimize import minimize_scalar

    res = minimize_scalar(lambda t: loss_at_t(M, t)[2], bounds=t_bounds,
                          method="bounded", options={"xatol": 1e-7})
    R, D, loss = loss_at_t(M, res.x)
    return {"M": M, "t": float(res.x), "R": R, "D0": D, "loss_db": loss}


# ---------------------------------------------------------------- priors and sampling

def prior_from_sample(ch: TestChannel, y) -> GroupTuple:
    p = ch.priors(np.atleast_1d(y))[0]
    return GroupTuple(ch.group, p)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_source(problem: SymmetricProblem, n: int, seed=None) -> np.ndarray:
    return problem.sample_y(n, _rng(seed))


def sample_from_rows(p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one index per row of a row-stochastic matrix."""
    c = np.cumsum(p, axis=1)
    r = rng.random(p.shape[0]) * c[:, -1]
    idx = (c < r[:, None]).sum(axis=1)
    return np.minimum(idx, p.shape[1] - 1)


def sample_test_channel_pair(ch: TestChannel, n: int, seed=None):
    """Draw (u*, y) i.i.d. from p(y) p(u|y), i.e. u* uniform and y ~ p(y|u*)."""
    rng = _rng(seed)
    y = ch.problem.sample_y(n, rng)
    u = sample_from_rows(ch.priors(y), rng)
    return u, y


# ---------------------------------------------------------------- config

def problem_from_config(cfg: dict) -> SymmetricProblem:
    kind = cfg.get("kind")
    try:
        if kind == "mse":
            return MseUniform(int(cfg["M"]))
        if kind == "hamming":
            return MaryHamming(int(cfg["M"]))
        if kind in ("erasure", "beq"):
            return MaryErasure(int(cfg.get("M", 2)), float(cfg["epsilon"]))
        if kind == "erasure_k":
            pmf = cfg.get("dim_pmf")
            return ErasureLikeK(int(cfg["K"]), float(cfg.get("epsilon", 0.5)),
                                tuple(pmf) if pmf is not None else None)
    except KeyError as e:
        raise ConfigError(f"problem config missing field {e}") from None
    raise ConfigError(f"unknown problem kind {kind!r}")


def _parse_t(v) -> float:
    if isinstance(v, str) and v.lower() in ("inf", "infinity"):
        return math.inf
    return float(v)


def channel_from_config(cfg: dict) -> TestChannel:
    problem = problem_from_config(cfg)
    if "t" in cfg:
        return TestChannel(problem, _parse_t(cfg["t"]))
    if "R" in cfg:
        return TestChannel(problem, t0(problem, float(cfg["R"])))
    if problem.infinite_t_ok:
        return TestChannel(problem, math.inf)
    raise ConfigError("channel config needs t or R")
