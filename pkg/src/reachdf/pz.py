"""Intervals, zonotopes and polynomial zonotopes.

A polynomial zonotope is stored as a generator array ``G`` of shape
``(*batch, N, *value_shape)`` together with an integer exponent matrix ``E``
of shape ``(N, m)`` over a sorted vector of indeterminate ids.  Row 0 of ``E``
is always the all-zeros exponent, so ``G[..., 0, ...]`` is the center.

Leading batch axes let one object hold many structurally identical sets
(for example one set per time cell).  Each batch element is an independent
set; indeterminate ids are shared by name only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

# Reserved indeterminate ids.  Trajectory parameter k_j uses k_id(j); every
# time cell uses TIME_ID for its own time indeterminate.
TIME_ID = 0
K_ID_BASE = 1
MAX_JOINTS = 1 << 16
FRESH_ID_BASE = 1 << 20


def k_id(j: int) -> int:
    """Reserved indeterminate id of trajectory parameter ``k_j``."""
    if not 0 <= j < MAX_JOINTS:
        raise ValueError(f"joint index {j} out of range")
    return K_ID_BASE + j


class IdRegistry:
    """Monotone counter handing out globally unique indeterminate ids."""

    def __init__(self, start: int = FRESH_ID_BASE):
        self._next = int(start)

    def fresh(self, n: int = 1) -> np.ndarray:
        out = np.arange(self._next, self._next + n, dtype=np.int64)
        self._next += n
        return out

    def reset(self, start: int = FRESH_ID_BASE) -> None:
        self._next = int(start)


REGISTRY = IdRegistry()


def fresh_ids(n: int = 1) -> np.ndarray:
    return REGISTRY.fresh(n)


# ---------------------------------------------------------------------------
# Intervals


@dataclass(frozen=True)
class Interval:
    """Closed interval ``[lo, hi]``; ``lo``/``hi`` may be numpy arrays."""

    lo: np.ndarray | float
    hi: np.ndarray | float

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if np.any(lo > hi):
            raise ValueError("interval with lo > hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def mid(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def rad(self):
        return 0.5 * (self.hi - self.lo)

    def mag(self):
        """Largest absolute value in the interval."""
        return np.maximum(np.abs(self.lo), np.abs(self.hi))

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x >= self.lo - tol) & (x <= self.hi + tol)

    def __add__(self, other):
        if isinstance(other, Interval):
            return Interval(self.lo + other.lo, self.hi + other.hi)
        return Interval(self.lo + other, self.hi + other)

    __radd__ = __add__

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if not isinstance(other, Interval):
            other = Interval(other, other)
        cands = np.stack(
            np.broadcast_arrays(
                self.lo * other.lo, self.lo * other.hi,
                self.hi * other.lo, self.hi * other.hi,
            )
        )
        return Interval(cands.min(axis=0), cands.max(axis=0))

    __rmul__ = __mul__

    def __truediv__(self, s: float):
        if s > 0:
            return Interval(self.lo / s, self.hi / s)
        return Interval(self.hi / s, self.lo / s)

    def __pow__(self, n: int):
        if n < 0:
            raise ValueError("negative powers are not supported")
        if n == 0:
            return Interval(np.ones_like(self.lo), np.ones_like(self.hi))
        lo_n, hi_n = self.lo**n, self.hi**n
        if n % 2:
            return Interval(lo_n, hi_n)
        straddles = (self.lo <= 0) & (self.hi >= 0)
        lo = np.where(straddles, 0.0, np.minimum(lo_n, hi_n))
        return Interval(lo, np.maximum(lo_n, hi_n))

    def sin(self):
        return Interval(*_sin_range(self.lo, self.hi))

    def cos(self):
        return Interval(*_sin_range(self.lo + math.pi / 2, self.hi + math.pi / 2))


def _sin_range(lo, hi):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    s_lo, s_hi = np.sin(lo), np.sin(hi)
    out_lo = np.minimum(s_lo, s_hi)
    out_hi = np.maximum(s_lo, s_hi)
    # sin peaks at pi/2 + 2 pi m and bottoms at -pi/2 + 2 pi m
    has_max = np.floor((hi - math.pi / 2) / (2 * math.pi)) >= np.ceil((lo - math.pi / 2) / (2 * math.pi))
    has_min = np.floor((hi + math.pi / 2) / (2 * math.pi)) >= np.ceil((lo + math.pi / 2) / (2 * math.pi))
    out_hi = np.where(has_max, 1.0, out_hi)
    out_lo = np.where(has_min, -1.0, out_lo)
    return out_lo, out_hi


# ---------------------------------------------------------------------------
# Zonotopes


class Zonotope:
    """Zonotope ``{c + G beta : |beta|_inf <= 1}``.

    ``center`` has shape ``(*batch, n)`` and ``generators`` ``(*batch, n_g, n)``.
    ``n_g == 0`` is a point.
    """

    __slots__ = ("center", "generators")

    def __init__(self, center, generators=None):
        c = np.asarray(center, dtype=float)
        if c.ndim == 0:
            c = c.reshape(1)
        if generators is None:
            g = np.zeros(c.shape[:-1] + (0, c.shape[-1]))
        else:
            g = np.asarray(generators, dtype=float)
            if g.ndim == 1:
                g = g.reshape(-1, 1) if c.shape[-1] == 1 else g.reshape(1, -1)
            if g.size == 0:
                g = g.reshape(c.shape[:-1] + (0, c.shape[-1]))
        if g.shape[-1] != c.shape[-1]:
            raise ValueError(
                f"generator dimension {g.shape[-1]} does not match center dimension {c.shape[-1]}"
            )
        self.center = c
        self.generators = g

    @property
    def dim(self) -> int:
        return self.center.shape[-1]

    @property
    def n_generators(self) -> int:
        return self.generators.shape[-2]

    @property
    def batch_shape(self) -> tuple:
        return self.center.shape[:-1]

    def __getitem__(self, idx):
        return Zonotope(self.center[idx], self.generators[idx])

    def __add__(self, other):
        if isinstance(other, Zonotope):
            bs = np.broadcast_shapes(self.batch_shape, other.batch_shape)
            g1 = np.broadcast_to(self.generators, bs + self.generators.shape[-2:])
            g2 = np.broadcast_to(other.generators, bs + other.generators.shape[-2:])
            return Zonotope(self.center + other.center, np.concatenate([g1, g2], axis=-2))
        return Zonotope(self.center + np.asarray(other, dtype=float), self.generators)

    def bounds(self):
        r = np.abs(self.generators).sum(axis=-2)
        return self.center - r, self.center + r

    def drop_zero_generators(self, tol: float = 0.0) -> "Zonotope":
        g = self.generators
        if g.shape[-2] == 0:
            return self
        keep = np.abs(g).reshape(-1, g.shape[-2], g.shape[-1]).max(axis=(0, 2)) > tol
        return Zonotope(self.center, g[..., keep, :])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        beta = rng.uniform(-1.0, 1.0, size=(n, self.n_generators))
        return self.center + beta @ self.generators

    def to_pz(self) -> "PolyZonotope":
        """Polynomial zonotope with one fresh indeterminate per generator."""
        ng = self.n_generators
        ids = fresh_ids(ng)
        E = np.vstack([np.zeros((1, ng), dtype=np.int64), np.eye(ng, dtype=np.int64)])
        G = np.concatenate([self.center[..., None, :], self.generators], axis=-2)
        return PolyZonotope(G, E, ids)

    def __repr__(self):
        return f"Zonotope(center={self.center!r}, generators={self.generators!r})"


# ---------------------------------------------------------------------------
# Polynomial zonotopes


def _unique_rows(E: np.ndarray):
    """Sorted unique exponent rows and the inverse map (lexicographic order)."""
    base = int(E.max()) + 1 if E.size else 1
    if base ** E.shape[1] < 2**62:
        weights = base ** np.arange(E.shape[1] - 1, -1, -1, dtype=np.int64)
        keys = E @ weights
        _, first, inv = np.unique(keys, return_index=True, return_inverse=True)
        return E[first], inv.reshape(-1)
    uniq, inv = np.unique(E, axis=0, return_inverse=True)
    return uniq, inv.reshape(-1)


def _merge(G: np.ndarray, E: np.ndarray, ids: np.ndarray, vndim: int):
    """Merge equal exponent rows, drop zero terms and unused ids.

    Guarantees row 0 is the all-zeros exponent.
    """
    tax = G.ndim - 1 - vndim  # term axis
    N = E.shape[0]
    if N == 0:
        raise ValueError("polynomial zonotope needs at least a center row")
    if E.shape[1] == 0:
        G = G.sum(axis=tax, keepdims=True)
        return G, np.zeros((1, 0), dtype=np.int64), ids[:0]
    uniq, inv = _unique_rows(E)
    if len(uniq) < N:
        order = np.argsort(inv, kind="stable")
        starts = np.searchsorted(inv[order], np.arange(len(uniq)))
        G = np.add.reduceat(np.take(G, order, axis=tax), starts, axis=tax)
    else:
        G = np.take(G, np.argsort(inv, kind="stable"), axis=tax)
    E = uniq
    if E[0].any():
        E = np.vstack([np.zeros((1, E.shape[1]), dtype=np.int64), E])
        zshape = list(G.shape)
        zshape[tax] = 1
        G = np.concatenate([np.zeros(zshape), G], axis=tax)
    # drop non-center terms whose generator is zero everywhere
    moved = np.moveaxis(G, tax, 0).reshape(G.shape[tax], -1)
    nz = np.any(moved != 0.0, axis=1)
    nz[0] = True
    if not nz.all():
        G = np.compress(nz, G, axis=tax)
        E = E[nz]
    used = E.any(axis=0)
    if not used.all():
        E = E[:, used]
        ids = ids[used]
    return G, np.ascontiguousarray(E), ids


def _align(E1, ids1, E2, ids2):
    """Bring two exponent matrices to a common id set."""
    if np.array_equal(ids1, ids2):
        return E1, E2, ids1
    ids = np.union1d(ids1, ids2).astype(np.int64)
    A = np.zeros((E1.shape[0], len(ids)), dtype=np.int64)
    B = np.zeros((E2.shape[0], len(ids)), dtype=np.int64)
    A[:, np.searchsorted(ids, ids1)] = E1
    B[:, np.searchsorted(ids, ids2)] = E2
    return A, B, ids


def _pad_batch(G, bnd):
    """Prepend singleton batch axes so G has ``bnd`` batch axes."""
    return G.reshape((1,) * bnd + G.shape) if bnd else G


class PolyZonotope:
    """Vector-valued polynomial zonotope ``sum_i g_i x^{alpha_i}``.

    Parameters
    ----------
    generators : array ``(*batch, N, n)``
    exponents : int array ``(N, m)``
    ids : int array ``(m,)`` of indeterminate ids
    """

    vndim = 1
    __slots__ = ("G", "E", "ids")

    def __init__(self, generators, exponents=None, ids=None, *, merge: bool = True):
        G = np.asarray(generators, dtype=float)
        if G.ndim < 1 + self.vndim:
            raise ValueError("generator array lacks a term axis")
        N = G.shape[G.ndim - 1 - self.vndim]
        if exponents is None:
            E = np.zeros((N, 0), dtype=np.int64)
            ids = np.zeros(0, dtype=np.int64)
        else:
            E = np.asarray(exponents, dtype=np.int64).reshape(N, -1)
            ids = np.asarray(ids if ids is not None else [], dtype=np.int64).reshape(-1)
        if E.shape[1] != len(ids):
            raise ValueError("exponent columns and ids disagree")
        if np.any(E < 0):
            raise ValueError("exponents must be nonnegative")
        if len(np.unique(ids)) != len(ids):
            raise ValueError("duplicate indeterminate ids")
        if len(ids) and np.any(np.diff(ids) < 0):
            order = np.argsort(ids)
            ids, E = ids[order], E[:, order]
        if merge:
            G, E, ids = _merge(G, E, ids, self.vndim)
        self.G = G
        self.E = E
        self.ids = ids

    # -- construction -----------------------------------------------------
    @classmethod
    def point(cls, c):
        c = np.asarray(c, dtype=float)
        if cls.vndim == 1 and c.ndim == 0:
            c = c.reshape(1)
        tax = c.ndim - cls.vndim
        return cls(np.expand_dims(c, tax))

    @classmethod
    def indeterminate(cls, idx: int, scale=1.0, center=0.0):
        """Scalar ``center + scale * x_idx``."""
        scale = np.asarray(scale, dtype=float)
        center = np.asarray(center, dtype=float)
        center, scale = np.broadcast_arrays(center, scale)
        G = np.stack([center, scale], axis=-1)[..., None]
        return cls(G, [[0], [1]], [idx])

    @classmethod
    def from_interval(cls, lo, hi):
        """Box ``[lo, hi]`` with fresh independent indeterminates."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        n = lo.shape[-1]
        ids = fresh_ids(n)
        c = 0.5 * (lo + hi)
        r = 0.5 * (hi - lo)
        G = np.concatenate([c[..., None, :], r[..., None, :] * np.eye(n)], axis=-2)
        E = np.vstack([np.zeros((1, n), dtype=np.int64), np.eye(n, dtype=np.int64)])
        return cls(G, E, ids)

    @classmethod
    def stack(cls, parts: Sequence["PolyZonotope"]) -> "PolyZonotope":
        """Cartesian product of scalar PZs (shared ids keep their dependence)."""
        return _embed(parts, lambda k, i: (k,), (len(parts),), PolyZonotope)

    # -- views --------------------------------------------------------------
    @property
    def term_axis(self) -> int:
        return self.G.ndim - 1 - self.vndim

    @property
    def batch_shape(self) -> tuple:
        return self.G.shape[: self.term_axis]

    @property
    def value_shape(self) -> tuple:
        return self.G.shape[self.term_axis + 1:]

    @property
    def dim(self) -> int:
        return self.value_shape[0]

    @property
    def n_terms(self) -> int:
        return self.E.shape[0]

    @property
    def center(self) -> np.ndarray:
        return np.take(self.G, 0, axis=self.term_axis)

    def terms(self):
        """Non-center generators, shape ``(*batch, N-1, *value)``."""
        return np.take(self.G, np.arange(1, self.n_terms), axis=self.term_axis)

    def __getitem__(self, idx):
        """Index the batch axes."""
        if not isinstance(idx, tuple):
            idx = (idx,)
        G = self.G[idx + (Ellipsis,)]
        out = type(self).__new__(type(self))
        out.G, out.E, out.ids = G, self.E, self.ids
        if out.G.ndim < 1 + self.vndim:
            raise IndexError("indexing removed the term axis")
        return out

    def component(self, i: int) -> "PolyZonotope":
        """Scalar PZ of vector component ``i``."""
        return PolyZonotope(self.G[..., i:i + 1], self.E, self.ids)

    def _like(self, G, E, ids, merge=True):
        return type(self)(G, E, ids, merge=merge)

    # -- evaluation -------------------------------------------------------
    def evaluate(self, assignment: dict) -> np.ndarray:
        """Evaluate at ``{id: value}``; every id must be assigned.

        Values may be scalars or arrays broadcasting against the batch shape.
        """
        vals = []
        for i in self.ids:
            if int(i) not in assignment:
                raise KeyError(f"indeterminate {int(i)} not assigned")
            vals.append(np.asarray(assignment[int(i)], dtype=float))
        mono = np.ones(self.batch_shape + (self.n_terms,))
        for col, v in enumerate(vals):
            v = np.asarray(v)
            mono = mono * v[..., None] ** self.E[:, col]
        mono = mono.reshape(mono.shape + (1,) * self.vndim)
        return (mono * self.G).sum(axis=-1 - self.vndim)

    def bounds(self):
        """Elementwise ``(inf, sup)`` from absolute generator sums."""
        r = np.abs(self.terms()).sum(axis=self.term_axis)
        c = self.center
        return c - r, c + r

    # -- arithmetic -------------------------------------------------------
    def _binary_prep(self, other):
        E1, E2, ids = _align(self.E, self.ids, other.E, other.ids)
        bnd = max(len(self.batch_shape), len(other.batch_shape))
        G1 = _pad_batch(self.G, bnd - len(self.batch_shape))
        G2 = _pad_batch(other.G, bnd - len(other.batch_shape))
        return G1, E1, G2, E2, ids, bnd

    def __add__(self, other):
        if not isinstance(other, PolyZonotope):
            other = np.asarray(other, dtype=float)
            if other.ndim < self.vndim:
                other = np.broadcast_to(other, self.value_shape)
            other = type(self).point(other)
        if self.vndim != other.vndim or self.value_shape != other.value_shape:
            raise ValueError(f"dimension mismatch: {self.value_shape} vs {other.value_shape}")
        G1, E1, G2, E2, ids, bnd = self._binary_prep(other)
        bs = np.broadcast_shapes(G1.shape[:bnd], G2.shape[:bnd])
        G1 = np.broadcast_to(G1, bs + G1.shape[bnd:])
        G2 = np.broadcast_to(G2, bs + G2.shape[bnd:])
        G = np.concatenate([G1, G2], axis=bnd)
        return self._like(G, np.vstack([E1, E2]), ids)

    __radd__ = __add__

    def __neg__(self):
        return self._like(-self.G, self.E, self.ids, merge=False)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, s):
        """Multiply by a constant broadcasting over ``(*batch, *value)``."""
        s = np.asarray(s, dtype=float)
        s = np.expand_dims(s, axis=s.ndim - self.vndim) if s.ndim >= self.vndim else s
        return self._like(self.G * s, self.E, self.ids)

    def __mul__(self, other):
        if not isinstance(other, PolyZonotope):
            return self.scale(other)
        return pz_mul(self, other)

    def __rmul__(self, other):
        if not isinstance(other, PolyZonotope):
            return self.scale(other)
        return pz_mul(other, self)

    def __matmul__(self, other):
        return pz_mul(self, other)

    def __rmatmul__(self, M):
        """Constant matrix times this vector PZ."""
        M = np.asarray(M, dtype=float)
        G = np.einsum("...ij,...nj->...ni", M, self.G) if M.ndim > 2 else self.G @ M.T
        return PolyZonotope(G, self.E, self.ids)

    # -- set operations ---------------------------------------------------
    def slice(self, idx: int, sigma) -> "PolyZonotope":
        return pz_slice(self, idx, sigma)

    def reduce(self, budget: int) -> "PolyZonotope":
        return pz_reduce(self, budget)

    def __repr__(self):
        return (
            f"{type(self).__name__}(batch={self.batch_shape}, value={self.value_shape}, "
            f"terms={self.n_terms}, ids={self.ids.tolist()})"
        )


class MatPolyZonotope(PolyZonotope):
    """Matrix-valued polynomial zonotope; generators ``(*batch, N, rows, cols)``."""

    vndim = 2
    __slots__ = ()

    @property
    def rows(self) -> int:
        return self.value_shape[0]

    @property
    def cols(self) -> int:
        return self.value_shape[1]

    @classmethod
    def from_entries(cls, entries) -> "MatPolyZonotope":
        """Assemble from a nested list of scalar PZs or constants."""
        rows, cols = len(entries), len(entries[0])
        flat = []
        for r in range(rows):
            if len(entries[r]) != cols:
                raise ValueError("ragged entry list")
            for c in range(cols):
                e = entries[r][c]
                if not isinstance(e, PolyZonotope):
                    e = PolyZonotope.point(np.asarray([e], dtype=float))
                flat.append(e)
        return _embed(flat, lambda k, i: divmod(k, cols), (rows, cols), cls)

    @classmethod
    def identity(cls, n: int):
        return cls.point(np.eye(n))

    def entry(self, r: int, c: int) -> PolyZonotope:
        return PolyZonotope(self.G[..., r, c][..., None], self.E, self.ids)

    def __rmatmul__(self, M):
        M = np.asarray(M, dtype=float)
        return MatPolyZonotope(np.matmul(M, self.G), self.E, self.ids)

    def transpose(self) -> "MatPolyZonotope":
        return MatPolyZonotope(np.swapaxes(self.G, -1, -2), self.E, self.ids, merge=False)


def _embed(parts, place, vshape, cls):
    """Place scalar PZs into slots of a larger value shape under one id set."""
    ids = np.zeros(0, dtype=np.int64)
    for p in parts:
        ids = np.union1d(ids, p.ids)
    ids = ids.astype(np.int64)
    bs = np.broadcast_shapes(*[p.batch_shape for p in parts])
    Gs, Es = [], []
    for k, p in enumerate(parts):
        E = np.zeros((p.n_terms, len(ids)), dtype=np.int64)
        E[:, np.searchsorted(ids, p.ids)] = p.E
        g = np.broadcast_to(p.G[..., 0], bs + (p.n_terms,))
        G = np.zeros(bs + (p.n_terms,) + vshape)
        G[(Ellipsis, slice(None)) + tuple(place(k, 0))] = g
        Gs.append(G)
        Es.append(E)
    return cls(np.concatenate(Gs, axis=len(bs)), np.vstack(Es), ids)


# ---------------------------------------------------------------------------
# Operations


def pz_add(P1: PolyZonotope, P2: PolyZonotope) -> PolyZonotope:
    """Exact Minkowski sum under a common representation."""
    return P1 + P2


def pz_mul(P1: PolyZonotope, P2: PolyZonotope) -> PolyZonotope:
    """Exact product of two polynomial zonotopes.

    Supported shapes: scalar x anything (elementwise), vector x vector of
    equal length (elementwise), matrix x matrix and matrix x vector.
    """
    G1, E1, G2, E2, ids, bnd = P1._binary_prep(P2)
    n1, n2 = E1.shape[0], E2.shape[0]
    v1, v2 = P1.value_shape, P2.value_shape
    a = G1.reshape(G1.shape[:bnd] + (n1, 1) + v1)
    b = G2.reshape(G2.shape[:bnd] + (1, n2) + v2)
    if P1.vndim == 2 and P2.vndim == 2:
        if v1[1] != v2[0]:
            raise ValueError(f"shape mismatch: {v1} @ {v2}")
        G, cls = np.matmul(a, b), MatPolyZonotope
    elif P1.vndim == 2 and P2.vndim == 1:
        if v1[1] != v2[0]:
            raise ValueError(f"shape mismatch: {v1} @ {v2}")
        G, cls = np.matmul(a, b[..., None])[..., 0], PolyZonotope
    elif P1.vndim == 1 and v1 == (1,):
        a = a.reshape(a.shape + (1,) * (P2.vndim - 1))
        G, cls = a * b, type(P2)
    elif P2.vndim == 1 and v2 == (1,):
        b = b.reshape(b.shape + (1,) * (P1.vndim - 1))
        G, cls = a * b, type(P1)
    elif P1.vndim == 1 and P2.vndim == 1 and v1 == v2:
        G, cls = a * b, PolyZonotope
    else:
        raise ValueError(f"shape mismatch: {v1} x {v2}")
    bs = G.shape[:bnd]
    G = G.reshape(bs + (n1 * n2,) + G.shape[bnd + 2:])
    E = (E1[:, None, :] + E2[None, :, :]).reshape(n1 * n2, len(ids))
    return cls(G, E, ids)


def pz_slice(P: PolyZonotope, idx: int, sigma) -> PolyZonotope:
    """Substitute ``sigma`` for indeterminate ``idx``.

    ``sigma`` may be an array broadcasting against the batch shape.
    """
    sigma = np.asarray(sigma, dtype=float)
    if np.any(np.abs(sigma) > 1.0):
        raise ValueError(f"slice value outside [-1, 1]: {sigma}")
    hit = np.nonzero(P.ids == idx)[0]
    if len(hit) == 0:
        return P
    col = int(hit[0])
    e = P.E[:, col]
    factor = sigma[..., None] ** e  # (*sigma_batch, N)
    factor = factor.reshape(factor.shape + (1,) * P.vndim)
    G = P.G * factor
    E = np.delete(P.E, col, axis=1)
    ids = np.delete(P.ids, col)
    return P._like(G, E, ids)


def pz_slice_many(P: PolyZonotope, assignment: dict) -> PolyZonotope:
    for idx, sigma in assignment.items():
        P = pz_slice(P, idx, sigma)
    return P


def pz_bounds(P: PolyZonotope):
    return P.bounds()


def pz_reduce(P: PolyZonotope, budget: int) -> PolyZonotope:
    """Keep the ``budget`` largest terms and box the rest.

    Terms are ranked by the infinity norm of their generator (max over batch
    elements); ties keep the lower term index.  The discarded terms are
    replaced by an axis-aligned box over fresh independent indeterminates,
    one per value entry.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    nt = P.n_terms - 1
    if nt <= budget:
        return P
    tax = P.term_axis
    T = np.moveaxis(P.terms(), tax, 0).reshape(nt, -1)
    norms = np.abs(T).max(axis=1)
    order = np.argsort(-norms, kind="stable")
    keep = np.sort(order[:budget]) + 1
    drop = order[budget:] + 1
    b = np.abs(np.take(P.G, drop, axis=tax)).sum(axis=tax)  # (*batch, *value)
    nv = int(np.prod(P.value_shape))
    new_ids = fresh_ids(nv)
    Gbox = np.moveaxis(
        (b.reshape(P.batch_shape + (nv,))[..., :, None] * np.eye(nv)).reshape(
            P.batch_shape + (nv,) + P.value_shape
        ),
        len(P.batch_shape),
        tax,
    )
    rows = np.concatenate([[0], keep])
    Gk = np.take(P.G, rows, axis=tax)
    G = np.concatenate([Gk, Gbox], axis=tax)
    m = len(P.ids)
    E = np.zeros((len(rows) + nv, m + nv), dtype=np.int64)
    E[: len(rows), :m] = P.E[rows]
    E[len(rows):, m:] = np.eye(nv, dtype=np.int64)
    return P._like(G, E, np.concatenate([P.ids, new_ids]))


_SIN_DERIVS = (np.sin, np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x))


def pz_trig(fname: str, P: PolyZonotope, degree: int = 6, budget: int | None = None) -> PolyZonotope:
    """Overapproximate ``sin(P)`` or ``cos(P)`` for a scalar PZ.

    Taylor expansion of order ``degree`` around the center plus a Lagrange
    remainder evaluated with interval arithmetic and appended as a fresh
    independent term.  ``budget`` (optional) reduces every power of the
    centered set.
    """
    if P.value_shape != (1,):
        raise ValueError("pz_trig needs a scalar polynomial zonotope")
    if degree < 1:
        raise ValueError("degree must be >= 1")
    shift = {"sin": 0, "cos": 1}[fname]
    c = P.center  # (*batch, 1)
    D = P - c
    out = PolyZonotope.point(_SIN_DERIVS[shift](c))
    power = None
    fact = 1.0
    for n in range(1, degree + 1):
        power = D if power is None else pz_mul(power, D)
        if budget is not None:
            power = pz_reduce(power, budget)
        fact *= n
        coeff = _SIN_DERIVS[(shift + n) % 4](c) / fact
        out = out + power.scale(coeff)
    lo, hi = P.bounds()
    rho = np.abs(P.terms()).sum(axis=P.term_axis)
    d1 = degree + 1
    which = (shift + d1) % 4
    deriv = Interval(lo, hi).sin() if which % 2 == 0 else Interval(lo, hi).cos()
    if which >= 2:
        deriv = -deriv
    rem = deriv * (Interval(-rho, rho) ** d1) / math.factorial(d1)
    rid = fresh_ids(1)
    Grem = np.stack([np.asarray(rem.mid), np.asarray(rem.rad)], axis=-2)
    out = out + PolyZonotope(Grem, [[0], [1]], rid)
    return out


def pz_to_zonotope(P: PolyZonotope) -> Zonotope:
    """Zonotope enclosure: center g_0 and one generator per remaining term.

    A term ``g x^alpha`` always lies on the segment ``g * [-1, 1]``, so
    terms of higher or mixed degree become plain generators as well.
    """
    if P.vndim != 1:
        raise ValueError("only vector PZs convert to zonotopes")
    return Zonotope(P.center, P.terms())


def pz_where(mask, A: PolyZonotope, B: PolyZonotope) -> PolyZonotope:
    """Batchwise select: element ``b`` is ``A[b]`` where ``mask[b]`` else ``B[b]``."""
    E1, E2, ids = _align(A.E, A.ids, B.E, B.ids)
    E = np.vstack([E1, E2])
    bnd = max(len(A.batch_shape), len(B.batch_shape))
    GA = _pad_batch(A.G, bnd - len(A.batch_shape))
    GB = _pad_batch(B.G, bnd - len(B.batch_shape))
    bs = np.broadcast_shapes(GA.shape[:bnd], GB.shape[:bnd], np.shape(mask))
    GA = np.broadcast_to(GA, bs + GA.shape[bnd:])
    GB = np.broadcast_to(GB, bs + GB.shape[bnd:])
    m = np.broadcast_to(np.asarray(mask, bool), bs).reshape(bs + (1,) * (1 + A.vndim))
    G = np.concatenate([np.where(m, GA, 0.0), np.where(m, 0.0, GB)], axis=bnd)
    return A._like(G, E, ids)


def pz_hull_pair(A: PolyZonotope, B: PolyZonotope) -> PolyZonotope:
    """PZ containing both ``A`` and ``B`` at every shared assignment.

    ``(A + B)/2 + s (A - B)/2`` with a fresh indeterminate ``s``.
    """
    s = PolyZonotope.indeterminate(int(fresh_ids(1)[0]))
    return (A + B).scale(0.5) + pz_mul(s, (A - B).scale(0.5))


def sample_assignment(P: PolyZonotope, rng: np.random.Generator, size: Iterable[int] = ()) -> dict:
    size = tuple(size)
    return {int(i): rng.uniform(-1.0, 1.0, size=size) for i in P.ids}
