"""Finite abelian groups and normalized probability tuples over them.

Elements are canonical integers in ``[0, order)``.  For ``Z2K`` the integer is
a packed bit vector (bit ``k`` is ``(x >> k) & 1``) and addition is XOR.  For
``Z_M`` addition is modular.  A ``Product`` group uses a mixed-radix index with
the first factor as the least significant digit.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import Contradiction

UNDERFLOW = 1e-300


@dataclass(frozen=True)
class GroupDescriptor:
    kind: str
    param: int = 0
    factors: tuple = ()

    def __post_init__(self):
        if self.kind == "Z_M" and self.param < 2:
            raise ValueError("Z_M needs M >= 2")
        if self.kind == "Z2K" and self.param < 1:
            raise ValueError("Z2K needs K >= 1")
        if self.kind == "Product" and not self.factors:
            raise ValueError("empty product group")
        if self.kind not in ("Z_M", "Z2K", "Product"):
            raise ValueError(f"unknown group kind {self.kind!r}")

    @property
    def order(self) -> int:
        if self.kind == "Z_M":
            return self.param
        if self.kind == "Z2K":
            return 1 << self.param
        return math.prod(f.order for f in self.factors)

    # element-wise ops, vectorized over numpy integer arrays
    def add(self, a, b):
        a = np.asarray(a)
        b = np.asarray(b)
        if self.kind == "Z_M":
            return (a + b) % self.param
        if self.kind == "Z2K":
            return np.bitwise_xor(a, b)
        da, db_ = self.digits(a), self.digits(b)
        return self.compose([f.add(x, y) for f, x, y in zip(self.factors, da, db_)])

    def neg(self, a):
        a = np.asarray(a)
        if self.kind == "Z_M":
            return (-a) % self.param
        if self.kind == "Z2K":
            return a
        return self.compose([f.neg(x) for f, x in zip(self.factors, self.digits(a))])

    def sub(self, a, b):
        return self.add(a, self.neg(b))

    def digits(self, x):
        """Split product-group elements into per-factor elements."""
        x = np.asarray(x)
        out = []
        for f in self.factors:
            out.append(x % f.order)
            x = x // f.order
        return out

    def compose(self, digits):
        x = np.zeros_like(np.asarray(digits[0]))
        scale = 1
        for f, d in zip(self.factors, digits):
            x = x + scale * np.asarray(d)
            scale *= f.order
        return x

    def add_table(self) -> np.ndarray:
        return _add_table(self)


def Z(M: int) -> GroupDescriptor:
    return GroupDescriptor("Z_M", M)


def Z2K(K: int) -> GroupDescriptor:
    return GroupDescriptor("Z2K", K)


def Product(factors: Sequence[GroupDescriptor]) -> GroupDescriptor:
    return GroupDescriptor("Product", 0, tuple(factors))


Z2 = Z2K(1)


@lru_cache(maxsize=64)
def _add_table(g: GroupDescriptor) -> np.ndarray:
    e = np.arange(g.order)
    t = g.add(e[:, None], e[None, :])
    t.setflags(write=False)
    return t


def _normalize(p: np.ndarray) -> np.ndarray:
    s = p.sum()
    if not s > 0 or not np.isfinite(s):
        raise Contradiction("tuple has no mass")
    return p / s


@dataclass(frozen=True, eq=False)
class GroupTuple:
    """A normalized probability vector over a finite abelian group."""

    group: GroupDescriptor
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.shape != (self.group.order,):
            raise ValueError("tuple length must equal the group order")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("tuple components must be finite and nonnegative")
        p = _normalize(p.copy())
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @classmethod
    def delta(cls, group: GroupDescriptor, u: int) -> "GroupTuple":
        p = np.zeros(group.order)
        p[u] = 1.0
        return cls(group, p)

    @classmethod
    def uniform(cls, group: GroupDescriptor) -> "GroupTuple":
        return cls(group, np.ones(group.order))

    @classmethod
    def from_log(cls, group: GroupDescriptor, logp) -> "GroupTuple":
        logp = np.asarray(logp, dtype=float)
        m = np.max(logp)
        if m == -np.inf:
            raise Contradiction("tuple has no mass")
        return cls(group, np.exp(logp - m))

    def __getitem__(self, u):
        return self.p[u]

    def __repr__(self):
        return f"GroupTuple({self.group.kind}{self.group.param or ''}, {np.round(self.p, 6).tolist()})"

    def allclose(self, other: "GroupTuple", atol=1e-12) -> bool:
        return self.group == other.group and np.allclose(self.p, other.p, atol=atol, rtol=0)


def prob_tuple(p0: float) -> GroupTuple:
    """Binary tuple ``(p0, 1 - p0)``."""
    return GroupTuple(Z2, np.array([p0, 1.0 - p0]))


def _check_same(a: GroupTuple, b: GroupTuple):
    if a.group != b.group:
        raise ValueError("tuples live on different groups")


def _needs_log(*ps) -> bool:
    return any(np.any((p > 0) & (p < UNDERFLOW)) for p in ps)


def vn_combine(a: GroupTuple, b: GroupTuple) -> GroupTuple:
    """Pointwise product, normalized."""
    _check_same(a, b)
    prod = a.p * b.p
    if _needs_log(a.p, b.p) or np.any((prod == 0) & (a.p > 0) & (b.p > 0)):
        with np.errstate(divide="ignore"):
            return GroupTuple.from_log(a.group, np.log(a.p) + np.log(b.p))
    if not prod.sum() > 0:
        raise Contradiction("disjoint supports in variable-node product")
    return GroupTuple(a.group, prod)


def cn_combine(a: GroupTuple, b: GroupTuple) -> GroupTuple:
    """Group convolution: r(u) = sum over u1 + u2 = u of a(u1) b(u2)."""
    _check_same(a, b)
    g = a.group
    tab = g.add_table()
    if _needs_log(a.p, b.p):
        with np.errstate(divide="ignore"):
            la, lb = np.log(a.p), np.log(b.p)
        terms = la[:, None] + lb[None, :]
        out = np.full(g.order, -np.inf)
        for u in range(g.order):
            sel = terms[tab == u]
            m = sel.max()
            if m > -np.inf:
                out[u] = m + np.log(np.exp(sel - m).sum())
        return GroupTuple.from_log(g, out)
    out = np.zeros(g.order)
    np.add.at(out, tab.ravel(), np.outer(a.p, b.p).ravel())
    return GroupTuple(g, out)


def cn_minus(a: GroupTuple, b: GroupTuple) -> GroupTuple:
    """a ⊖ b, i.e. convolution of a with the reflected tuple of b."""
    g = b.group
    refl = b.p[g.neg(np.arange(g.order))]
    return cn_combine(a, GroupTuple(g, refl))


def tuple_entropy(mu: GroupTuple) -> float:
    p = mu.p[mu.p > 0]
    return float(-(p * np.log2(p)).sum())


def tuple_mi(mu: GroupTuple) -> float:
    return math.log2(mu.group.order) - tuple_entropy(mu)


def h2(p):
    """Binary entropy in bits, vectorized."""
    p = np.asarray(p, dtype=float)
    q = 1.0 - p
    with np.errstate(divide="ignore", invalid="ignore"):
        r = -(np.where(p > 0, p * np.log2(p), 0.0) + np.where(q > 0, q * np.log2(q), 0.0))
    return r


# ---------------------------------------------------------------- entropy functions

def _bits_of(mu: GroupTuple) -> int:
    if mu.group.kind != "Z2K":
        raise ValueError("entropy functions need a Z2K tuple")
    return mu.group.param


def entropy_function(mu: GroupTuple, S: Iterable[int]) -> float:
    """Joint entropy (bits) of the bit subset ``S`` under ``mu``."""
    K = _bits_of(mu)
    S = sorted(set(int(s) for s in S))
    if any(s < 0 or s >= K for s in S):
        raise ValueError(f"bit subset {S} out of range for K={K}")
    if not S:
        return 0.0
    x = np.arange(mu.group.order)
    key = np.zeros_like(x)
    for pos, s in enumerate(S):
        key |= ((x >> s) & 1) << pos
    marg = np.bincount(key, weights=mu.p, minlength=1 << len(S))
    marg = marg[marg > 0]
    return float(-(marg * np.log2(marg)).sum())


def avg_entropy_function(mu: GroupTuple, k: int) -> float:
    """Mean of the subset entropy over all bit subsets of size ``k``."""
    K = _bits_of(mu)
    if not 0 <= k <= K:
        raise ValueError("k out of range")
    subsets = list(itertools.combinations(range(K), k))
    return float(np.mean([entropy_function(mu, S) for S in subsets]))


# ---------------------------------------------------------------- affine subspaces

@dataclass(frozen=True, eq=False)
class AffineSubspace:
    """Coset ``offset + <generators>`` inside a product group.

    ``generators`` and ``offset`` are given as per-factor element tuples.
    """

    ambient: GroupDescriptor
    generators: tuple
    offset: tuple

    def __post_init__(self):
        if self.ambient.kind != "Product":
            object.__setattr__(self, "ambient", Product([self.ambient]))
        n = len(self.ambient.factors)
        gens = tuple(tuple(int(v) for v in g) for g in self.generators)
        off = tuple(int(v) for v in self.offset) if self.offset is not None else (0,) * n
        if any(len(g) != n for g in gens) or len(off) != n:
            raise ValueError("generator/offset length must match the number of factors")
        object.__setattr__(self, "generators", gens)
        object.__setattr__(self, "offset", off)
        object.__setattr__(self, "_elements", self._enumerate())

    def _add(self, x, y):
        return tuple(int(f.add(a, b)) for f, a, b in zip(self.ambient.factors, x, y))

    def _enumerate(self) -> np.ndarray:
        zero = (0,) * len(self.ambient.factors)
        seen = {zero}
        frontier = [zero]
        while frontier:
            nxt = []
            for x in frontier:
                for g in self.generators:
                    y = self._add(x, g)
                    if y not in seen:
                        seen.add(y)
                        nxt.append(y)
            frontier = nxt
        elems = sorted(self._add(x, self.offset) for x in seen)
        return np.array(elems, dtype=np.int64).reshape(len(elems), len(self.ambient.factors))

    @property
    def elements(self) -> np.ndarray:
        return self._elements

    def __len__(self):
        return len(self._elements)

    def __contains__(self, x) -> bool:
        x = tuple(int(v) for v in x)
        return any(tuple(e) == x for e in self._elements.tolist())


def nu_combine(C: AffineSubspace, i: int, lambdas: Sequence[GroupTuple | None]) -> GroupTuple:
    """Marginal at coordinate ``i`` of the product of the other tuples restricted to ``C``.

    ``lambdas`` has one entry per coordinate (entry ``i`` ignored) or omits
    coordinate ``i`` entirely.
    """
    n = len(C.ambient.factors)
    lam = list(lambdas)
    if len(lam) == n - 1:
        lam.insert(i, None)
    if len(lam) != n:
        raise ValueError("wrong number of tuples")
    E = C.elements
    logw = np.zeros(len(E))
    with np.errstate(divide="ignore"):
        for j in range(n):
            if j == i:
                continue
            if lam[j].group != C.ambient.factors[j]:
                raise ValueError(f"tuple {j} is over the wrong group")
            logw += np.log(lam[j].p[E[:, j]])
    gi = C.ambient.factors[i]
    out = np.full(gi.order, -np.inf)
    for u in range(gi.order):
        sel = logw[E[:, i] == u]
        if sel.size and sel.max() > -np.inf:
            m = sel.max()
            out[u] = m + np.log(np.exp(sel - m).sum())
    if np.all(out == -np.inf):
        raise Contradiction("no element of C has positive weight")
    return GroupTuple.from_log(gi, out)
