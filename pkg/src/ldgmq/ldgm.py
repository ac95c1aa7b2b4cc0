"""Degree distributions, random LDGM ensembles and factor-graph utilities.

Conventions
-----------
* ``nb`` information bits b, ``nc = n*K`` code bits c, ``c = bG + a`` over Z2.
* Symbol ``j`` owns columns ``j*K .. j*K+K-1``.  Its bit vector is packed into
  an integer with column ``j*K`` as the most significant bit, so the string
  ``"01"`` is the integer 1.
* ``u_j = phi(c_j ^ eps_j) + delta_j`` where ``+`` is the reconstruction
  group's addition.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .groups import GroupDescriptor, Z, Z2, Z2K


@dataclass(frozen=True)
class DegreeDistribution:
    """Row degree ``db`` and column-degree fractions ``w`` (per symbol)."""

    db: int
    w: dict
    R: float
    K: int = 1

    def __post_init__(self):
        w = {int(d): float(x) for d, x in self.w.items() if float(x) != 0.0}
        object.__setattr__(self, "w", dict(sorted(w.items())))
        if self.db < 2:
            raise ConfigError("db must be >= 2")
        if not w or any(d < 1 for d in w) or any(x < 0 for x in w.values()):
            raise ConfigError("column degrees must be >= 1 with nonnegative weights")
        if abs(sum(w.values()) - 1.0) > 1e-12:
            raise ConfigError("column-degree fractions must sum to 1")
        expect = self.K * sum(d * x for d, x in w.items()) / self.db
        if abs(expect - self.R) > 1e-12 * max(1.0, expect):
            raise ConfigError(f"rate {self.R} inconsistent with db and w (expected {expect})")

    @classmethod
    def from_w(cls, db: int, w: dict, K: int = 1) -> "DegreeDistribution":
        s = sum(w.values())
        w = {d: x / s for d, x in w.items()}
        return cls(db, w, K * sum(d * x for d, x in w.items()) / db, K)

    @classmethod
    def from_v(cls, db: int, v: dict, K: int = 1) -> "DegreeDistribution":
        s = sum(x / d for d, x in v.items())
        return cls.from_w(db, {d: (x / d) / s for d, x in v.items()}, K)

    @classmethod
    def regular(cls, db: int, dc: int, K: int = 1) -> "DegreeDistribution":
        return cls.from_w(db, {dc: 1.0}, K)

    @property
    def v(self) -> dict:
        return {d: self.K * d * x / (self.R * self.db) for d, x in self.w.items()}

    @property
    def degrees(self) -> list[int]:
        return list(self.w)

    @property
    def max_degree(self) -> int:
        return max(self.w)

    def to_dict(self) -> dict:
        return {"db": self.db, "w": {str(d): x for d, x in self.w.items()}, "R": self.R, "K": self.K}

    @classmethod
    def from_dict(cls, d: dict) -> "DegreeDistribution":
        K = int(d.get("K", 1))
        if "w" in d:
            w = {int(k): float(x) for k, x in d["w"].items()}
            if "R" in d:
                return cls(int(d["db"]), w, float(d["R"]), K)
            return cls.from_w(int(d["db"]), w, K)
        if "v" in d:
            return cls.from_v(int(d["db"]), {int(k): float(x) for k, x in d["v"].items()}, K)
        if "dc" in d:
            return cls.regular(int(d["db"]), int(d["dc"]), K)
        raise ConfigError("degree distribution needs w, v or dc")


@dataclass(frozen=True)
class RoundedDistribution:
    counts: dict
    nb: int
    n: int
    K: int
    repairs: list = field(default_factory=list)

    @property
    def R_n(self) -> float:
        return self.nb / self.n

    @property
    def w_n(self) -> dict:
        return {d: c / self.n for d, c in self.counts.items()}


def round_distribution(dd: DegreeDistribution, n: int) -> RoundedDistribution:
    """Integer column counts by largest remainder, then edge-balance repair."""
    if n < 1:
        raise ConfigError("n must be positive")
    degs = dd.degrees
    raw = {d: n * x for d, x in dd.w.items()}
    counts = {d: int(math.floor(r)) for d, r in raw.items()}
    short = n - sum(counts.values())
    for d in sorted(degs, key=lambda d: (-(raw[d] - counts[d]), -d))[:short]:
        counts[d] += 1

    # Moves between adjacent degrees, higher-degree direction first.
    if len(degs) > 1:
        pairs = list(zip(degs[:-1], degs[1:]))
    else:
        pairs = [(degs[0], degs[0] + 1)] + ([(degs[0] - 1, degs[0])] if degs[0] > 1 else [])
    moves = [(lo, hi) for lo, hi in pairs] + [(hi, lo) for lo, hi in pairs]

    def edges(c):
        return dd.K * sum(d * k for d, k in c.items())

    repairs = []
    r0 = edges(counts) % dd.db
    if r0:
        # shortest move sequence on residues mod db
        prev = {r0: None}
        q = deque([r0])
        while q and 0 not in prev:
            r = q.popleft()
            for mv in moves:
                r2 = (r + dd.K * (mv[1] - mv[0])) % dd.db
                if r2 not in prev:
                    prev[r2] = (r, mv)
                    q.append(r2)
        if 0 not in prev:
            raise ConfigError("cannot balance edge counts for this distribution")
        path = []
        r = 0
        while prev[r] is not None:
            r, mv = prev[r]
            path.append(mv)
        for src, dst in reversed(path):
            if counts.get(src, 0) <= 0:
                raise ConfigError("edge-balance repair ran out of columns")
            counts[src] -= 1
            counts[dst] = counts.get(dst, 0) + 1
            repairs.append({"from": src, "to": dst})
    counts = {d: c for d, c in sorted(counts.items()) if c > 0}
    return RoundedDistribution(counts, edges(counts) // dd.db, n, dd.K, repairs)


def gray_map(K: int) -> np.ndarray:
    """phi[bits] = i where bits is the binary-reflected Gray code of i."""
    i = np.arange(1 << K)
    phi = np.empty_like(i)
    phi[i ^ (i >> 1)] = i
    return phi


@dataclass(frozen=True, eq=False)
class LdgmCode:
    n: int
    K: int
    nb: int
    edge_row: np.ndarray  # edges sorted by (row, col)
    edge_col: np.ndarray
    a: np.ndarray
    group: GroupDescriptor
    phi: np.ndarray
    eps: np.ndarray
    delta: np.ndarray
    dd: DegreeDistribution | None = None
    seed: int | None = None
    phi_kind: str = "identity"
    repairs: tuple = ()
    col_degree: np.ndarray | None = None

    @property
    def nc(self) -> int:
        return self.n * self.K

    @property
    def E(self) -> int:
        return len(self.edge_row)

    @property
    def R_n(self) -> float:
        return self.nb / self.n

    def __post_init__(self):
        row_ptr = np.zeros(self.nb + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.edge_row, minlength=self.nb), out=row_ptr[1:])
        order = np.lexsort((self.edge_row, self.edge_col))
        col_ptr = np.zeros(self.nc + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.edge_col, minlength=self.nc), out=col_ptr[1:])
        object.__setattr__(self, "row_ptr", row_ptr)
        object.__setattr__(self, "col_order", order)  # edge ids grouped by column
        object.__setattr__(self, "col_ptr", col_ptr)

    def row_cols(self, i: int) -> np.ndarray:
        return self.edge_col[self.row_ptr[i]:self.row_ptr[i + 1]]

    def col_rows(self, s: int) -> np.ndarray:
        return self.edge_row[self.col_order[self.col_ptr[s]:self.col_ptr[s + 1]]]

    def dense(self) -> np.ndarray:
        G = np.zeros((self.nb, self.nc), dtype=np.uint8)
        G[self.edge_row, self.edge_col] = 1
        return G

    def to_dict(self) -> dict:
        if self.dd is None or self.seed is None:
            raise ConfigError("only sampled codes can be serialized")
        return {"n": self.n, "K": self.K, "R": self.dd.R, "db": self.dd.db,
                "w": {str(d): x for d, x in self.dd.w.items()}, "seed": self.seed,
                "phi": self.phi_kind, "group": self.group.kind}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "LdgmCode":
        K = int(d["K"])
        dd = DegreeDistribution(int(d["db"]), {int(k): x for k, x in d["w"].items()}, float(d["R"]), K)
        return sample_code(dd, int(d["n"]), K, int(d["seed"]), phi=d.get("phi"),
                           group=d.get("group"))

    @classmethod
    def from_json(cls, s: str) -> "LdgmCode":
        return cls.from_dict(json.loads(s))


def _symbol_group(K: int, group) -> GroupDescriptor:
    if isinstance(group, GroupDescriptor):
        return group
    if K == 1:
        return Z2
    if group in (None, "Z_M"):
        return Z(1 << K)
    if group == "Z2K":
        return Z2K(K)
    raise ConfigError(f"unknown symbol group {group!r}")


def _phi_for(K: int, g: GroupDescriptor, phi) -> tuple[np.ndarray, str]:
    if phi is None:
        phi = "gray" if g.kind == "Z_M" and K > 1 else "identity"
    if isinstance(phi, str):
        if phi == "gray":
            return gray_map(K), "gray"
        if phi == "identity":
            return np.arange(1 << K), "identity"
        raise ConfigError(f"unknown modulation map {phi!r}")
    return np.asarray(phi), "custom"


def sample_code(dd: DegreeDistribution, n: int, K: int | None = None, seed: int = 0,
                phi=None, group=None, dither: bool | None = None) -> LdgmCode:
    """Configuration-model LDGM code with parity-collapsed multi-edges."""
    K = dd.K if K is None else K
    if K != dd.K:
        dd = DegreeDistribution.from_w(dd.db, dd.w, K)
    rounded = round_distribution(dd, n)
    rng = np.random.default_rng(seed)
    sym_deg = np.concatenate([np.full(c, d, dtype=np.int64) for d, c in rounded.counts.items()])
    sym_deg = rng.permutation(sym_deg)
    col_deg = np.repeat(sym_deg, K)
    nb = rounded.nb
    E = nb * dd.db
    col_sockets = np.repeat(np.arange(n * K), col_deg)
    assert len(col_sockets) == E
    row_sockets = np.repeat(np.arange(nb), dd.db)
    col_sockets = col_sockets[rng.permutation(E)]
    key = row_sockets * (n * K) + col_sockets
    uniq, mult = np.unique(key, return_counts=True)
    keep = uniq[mult % 2 == 1]
    a = rng.integers(0, 2, size=n * K, dtype=np.uint8)
    g = _symbol_group(K, group)
    phi_arr, phi_kind = _phi_for(K, g, phi)
    if dither is None:
        dither = K > 1
    if dither:
        eps = rng.integers(0, 1 << K, size=n)
        delta = rng.integers(0, g.order, size=n)
    else:
        eps = np.zeros(n, dtype=np.int64)
        delta = np.zeros(n, dtype=np.int64)
    return LdgmCode(n, K, nb, keep // (n * K), keep % (n * K), a, g, phi_arr, eps, delta,
                    dd, seed, phi_kind, tuple(rounded.repairs), col_deg)


def code_from_matrix(G, a=None, K: int = 1, group=None, phi=None, eps=None, delta=None) -> LdgmCode:
    """Build a code from an explicit dense binary matrix (tests and tiny oracles)."""
    G = np.asarray(G, dtype=np.uint8) % 2
    nb, nc = G.shape
    if nc % K:
        raise ConfigError("column count must be a multiple of K")
    n = nc // K
    rows, cols = np.nonzero(G)
    a = np.zeros(nc, dtype=np.uint8) if a is None else np.asarray(a, dtype=np.uint8)
    g = _symbol_group(K, group)
    phi_arr, phi_kind = _phi_for(K, g, phi)
    eps = np.zeros(n, dtype=np.int64) if eps is None else np.asarray(eps)
    delta = np.zeros(n, dtype=np.int64) if delta is None else np.asarray(delta)
    return LdgmCode(n, K, nb, rows.astype(np.int64), cols.astype(np.int64), a, g, phi_arr,
                    eps, delta, phi_kind=phi_kind, col_degree=G.sum(axis=0))


def codeword_bits(code: LdgmCode, b) -> np.ndarray:
    b = np.asarray(b, dtype=np.int64)
    if b.shape[-1] != code.nb:
        raise ConfigError("b has the wrong length")
    par = np.bincount(code.edge_col, weights=b[code.edge_row], minlength=code.nc).astype(np.int64) % 2
    return (par ^ code.a).astype(np.uint8)


def pack_symbols(code: LdgmCode, c) -> np.ndarray:
    c = np.asarray(c, dtype=np.int64).reshape(code.n, code.K)
    w = 1 << np.arange(code.K - 1, -1, -1)
    return c @ w


def modulate(code: LdgmCode, sym_bits) -> np.ndarray:
    """u_j = phi(c_j ^ eps_j) + delta_j."""
    return code.group.add(code.phi[np.asarray(sym_bits) ^ code.eps], code.delta)


def encode(code: LdgmCode, b) -> np.ndarray:
    return modulate(code, pack_symbols(code, codeword_bits(code, b)))


# ---------------------------------------------------------------- neighborhoods

@dataclass
class Neighborhood:
    root: tuple
    L: int
    nodes: set
    interior_b: set
    border_b: set
    checks: set
    loop_free: bool


def neighborhood(code: LdgmCode, node: tuple, L: int) -> Neighborhood:
    """Depth-L computation tree of a b-node ("b", i) or a-node ("a", s).

    A b-node at level l > 0 reaches its checks; each check reaches its a-node,
    its other b-nodes at level l - 1 and, for K > 1, its symbol factor whose
    sibling checks lead to further b-nodes at level l - 1.  Level-0 b-nodes
    are the border.  The expansion is loop-free iff no node is reached twice.
    """
    kind, idx = node
    K = code.K
    seen = {node}
    loop_free = True
    interior_b, border_b, checks = set(), set(), set()

    def visit(x):
        nonlocal loop_free
        if x in seen:
            loop_free = False
            return False
        seen.add(x)
        return True

    q: deque = deque()

    def expand_check(s, from_b, level):
        # level is the level given to b-nodes found through this check
        checks.add(s)
        visit(("a", s))
        for i2 in code.col_rows(s):
            i2 = int(i2)
            if i2 != from_b and visit(("b", i2)):
                q.append((i2, s, level))
        if K > 1:
            j = s // K
            if visit(("u", j)):
                for s2 in range(j * K, j * K + K):
                    if s2 != s and visit(("c", s2)):
                        checks.add(s2)
                        visit(("a", s2))
                        for i2 in code.col_rows(s2):
                            if visit(("b", int(i2))):
                                q.append((int(i2), s2, level))

    if kind == "b":
        q.append((idx, None, L))
    elif kind == "a":
        seen.discard(node)  # re-added by expand_check
        visit(("c", idx))
        expand_check(idx, None, L)
    else:
        raise ValueError("node must be ('b', i) or ('a', s)")
    while q:
        i, parent, level = q.popleft()
        if level == 0:
            border_b.add(i)
            continue
        interior_b.add(i)
        for s in code.row_cols(i):
            s = int(s)
            if s == parent:
                continue
            if visit(("c", s)):
                expand_check(s, i, level - 1)
    return Neighborhood(node, L, seen, interior_b, border_b, checks, loop_free)
