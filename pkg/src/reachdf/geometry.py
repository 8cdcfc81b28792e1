"""Convex hulls, halfspace forms and exact point/zonotope distances (2D and 3D)."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .pz import Zonotope

BOUNDARY_TOL = 1e-9
INFLATE = 1e-9
VERTEX_GEN_CAP = 12


@dataclass(frozen=True)
class Halfspace:
    normal: np.ndarray
    offset: float

    def __post_init__(self):
        if np.linalg.norm(self.normal) <= 0:
            raise ValueError("halfspace normal must be nonzero")


@dataclass
class ConvexPolytope:
    """Bounded convex polytope in both forms: ``{p : A p <= b}`` and vertices.

    Rows of ``A`` are unit outward normals.  ``faces`` holds vertex-index
    triangles for 3D hulls.
    """

    A: np.ndarray
    b: np.ndarray
    vertices: np.ndarray
    faces: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def halfspaces(self) -> list:
        return [Halfspace(a, float(bb)) for a, bb in zip(self.A, self.b)]

    def violation(self, p) -> np.ndarray:
        """Largest normalized constraint violation ``max_h (A_h p - b_h)/|A_h|``."""
        p = np.asarray(p, dtype=float)
        norms = np.linalg.norm(self.A, axis=1)
        return ((p @ self.A.T - self.b) / norms).max(axis=-1)

    def contains(self, p, tol: float = BOUNDARY_TOL) -> np.ndarray:
        return self.violation(p) <= tol


# ---------------------------------------------------------------------------
# Hulls


def _cross2(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _monotone_chain(pts: np.ndarray) -> np.ndarray:
    """Indices of the CCW hull, collinear points dropped."""
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    P = pts[order].tolist()
    # drop exact duplicates
    uniq, idx = [], []
    for i, p in enumerate(P):
        if not uniq or p != uniq[-1]:
            uniq.append(p)
            idx.append(order[i])
    if len(uniq) < 3:
        return np.asarray(idx)

    def half(seq, ids):
        out, out_ids = [], []
        for p, i in zip(seq, ids):
            while len(out) >= 2 and _cross2(out[-2], out[-1], p) <= 0:
                out.pop()
                out_ids.pop()
            out.append(p)
            out_ids.append(i)
        return out_ids

    lower = half(uniq, idx)
    upper = half(uniq[::-1], idx[::-1])
    return np.asarray(lower[:-1] + upper[:-1])


def _inflate(points: np.ndarray) -> np.ndarray:
    n = points.shape[1]
    shifts = np.array(np.meshgrid(*[[-INFLATE, INFLATE]] * n, indexing="ij")).reshape(n, -1).T
    return (points[:, None, :] + shifts[None]).reshape(-1, n)


def _interior_filter(points: np.ndarray) -> np.ndarray:
    """Drop points strictly inside the octagon of extreme points (Akl-Toussaint)."""
    if len(points) < 64:
        return points
    D = np.array([[1, 0], [1, 1], [0, 1], [-1, 1], [-1, 0], [-1, -1], [0, -1], [1, -1]], dtype=float)
    ext = points[np.argmax(points @ D.T, axis=0)]
    ext = ext[_monotone_chain(ext)]
    if len(ext) < 3:
        return points
    E = np.roll(ext, -1, axis=0) - ext
    rel = points[:, None, :] - ext[None]
    cross = E[None, :, 0] * rel[..., 1] - E[None, :, 1] * rel[..., 0]
    strictly_inside = np.all(cross > 1e-12 * (1.0 + np.abs(points).max()), axis=1)
    return points[~strictly_inside]


def _hull_indices_2d(points: np.ndarray) -> np.ndarray:
    """CCW hull indices; qhull for speed, the monotone chain when qhull rejects the input."""
    if len(points) >= 3:
        try:
            return ConvexHull(points).vertices  # CCW in 2D
        except QhullError:
            pass
    return _monotone_chain(points)


def _hull2d(points: np.ndarray) -> ConvexPolytope:
    points = _interior_filter(points)
    idx = _hull_indices_2d(points)
    V = points[idx]
    if len(V) < 3 or abs(_polygon_area(V)) <= 0.0:
        V = points[idx] if len(idx) else points
        return _hull2d(_inflate(V))
    E = np.roll(V, -1, axis=0) - V
    normals = np.stack([E[:, 1], -E[:, 0]], axis=1)
    lens = np.linalg.norm(normals, axis=1)
    keep = lens > 0
    A = normals[keep] / lens[keep, None]
    b = np.einsum("ij,ij->i", A, V[keep])
    return ConvexPolytope(A, b, V)


def _polygon_area(V):
    x, y = V[:, 0], V[:, 1]
    return 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _hull3d(points: np.ndarray) -> ConvexPolytope:
    try:
        h = ConvexHull(points)
    except QhullError:
        return _hull3d(_inflate(points))
    if h.volume <= 0:
        return _hull3d(_inflate(points))
    A = h.equations[:, :3]
    b = -h.equations[:, 3]
    # qhull may split a facet into several coplanar triangles; keep all, they are consistent
    used = np.unique(h.simplices)
    remap = -np.ones(len(points), dtype=int)
    remap[used] = np.arange(len(used))
    V = points[used]
    faces = remap[h.simplices]
    # orient faces so the normal points outward
    n = np.cross(V[faces[:, 1]] - V[faces[:, 0]], V[faces[:, 2]] - V[faces[:, 0]])
    flip = np.einsum("ij,ij->i", n, A) < 0
    faces[flip] = faces[flip][:, ::-1]
    return ConvexPolytope(A, b, V, faces)


def convex_hull(points) -> ConvexPolytope:
    """Convex hull in vertex and halfspace form.

    Both dimensions use qhull, with Andrew's monotone chain as the 2D fallback.  Degenerate inputs
    (collinear/coplanar) are inflated by a 1e-9 box and retried.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] not in (2, 3):
        raise ValueError("points must be (n, 2) or (n, 3)")
    if len(pts) == 0:
        raise ValueError("no points")
    if pts.shape[1] == 2:
        return _hull2d(pts)
    return _hull3d(pts)


# ---------------------------------------------------------------------------
# Point-to-polytope distances


def _segment_dist(c, P0, P1):
    d = P1 - P0
    dd = np.einsum("ij,ij->i", d, d)
    t = np.where(dd > 0, np.einsum("ij,ij->i", c - P0, d) / np.where(dd > 0, dd, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    proj = P0 + t[:, None] * d
    return np.linalg.norm(c - proj, axis=1)


def _triangle_dist(c, A, B, C):
    """Distance from point ``c`` to each triangle ``(A_i, B_i, C_i)``."""
    n = np.cross(B - A, C - A)
    nn = np.einsum("ij,ij->i", n, n)
    ok = nn > 0
    w = c - A
    s = np.where(ok, np.einsum("ij,ij->i", w, n) / np.where(ok, nn, 1.0), 0.0)
    proj = c - s[:, None] * n
    # barycentric inside test
    def side(P, Q):
        return np.einsum("ij,ij->i", np.cross(Q - P, proj - P), n)

    inside = ok & (side(A, B) >= 0) & (side(B, C) >= 0) & (side(C, A) >= 0)
    plane = np.abs(s) * np.sqrt(nn)
    edge = np.minimum(np.minimum(_segment_dist(c, A, B), _segment_dist(c, B, C)), _segment_dist(c, C, A))
    return np.where(inside, plane, edge)


def boundary_distance(c, P: ConvexPolytope) -> float:
    """Euclidean distance from ``c`` to the boundary of ``P`` (any side)."""
    c = np.asarray(c, dtype=float)
    V = P.vertices
    if P.dim == 2:
        return float(_segment_dist(c, V, np.roll(V, -1, axis=0)).min())
    f = P.faces
    return float(_triangle_dist(c, V[f[:, 0]], V[f[:, 1]], V[f[:, 2]]).min())


def point_polytope_distance(c, P: ConvexPolytope) -> float:
    """Exact ``min_{p in P} |p - c|`` for ``c`` outside ``P``."""
    if P.contains(c, tol=0.0):
        raise ValueError("point lies inside the polytope")
    return boundary_distance(c, P)


def penetration_distance(c, P: ConvexPolytope) -> float:
    """Distance from an interior point to the boundary, ``min_h (b_h - A_h c)/|A_h|``."""
    c = np.asarray(c, dtype=float)
    v = P.violation(c)
    if v > 0.0:
        raise ValueError("point lies outside the polytope")
    return float(-v)


def signed_point_distance(c, P: ConvexPolytope, tol: float = BOUNDARY_TOL) -> float:
    """Positive outside, negative inside, 0 within ``tol`` of the boundary."""
    v = float(P.violation(np.asarray(c, dtype=float)))
    if v > tol:
        return boundary_distance(c, P)
    if v < -tol:
        return v
    return 0.0


def signed_point_distances(C, P: ConvexPolytope, tol: float = BOUNDARY_TOL) -> np.ndarray:
    """Batched :func:`signed_point_distance` for points ``C`` of shape ``(N, n)``."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    v = P.violation(C)
    out = np.where(v < -tol, v, 0.0)
    far = np.nonzero(v > tol)[0]
    if len(far) and P.dim == 2:
        V = P.vertices
        d = np.roll(V, -1, axis=0) - V
        dd = np.einsum("ij,ij->i", d, d)
        rel = C[far, None, :] - V[None]  # (m, nv, 2)
        t = np.where(dd > 0, np.einsum("mvi,vi->mv", rel, d) / np.where(dd > 0, dd, 1.0), 0.0)
        t = np.clip(t, 0.0, 1.0)
        out[far] = np.linalg.norm(rel - t[..., None] * d, axis=-1).min(axis=1)
    else:
        for i in far:
            out[i] = boundary_distance(C[i], P)
    return out


# ---------------------------------------------------------------------------
# Zonotopes


def zono_vertices_2d(center, generators) -> np.ndarray:
    """Candidate vertices ``(*batch, 2 n_g, 2)`` of batched 2D zonotopes, CCW.

    Parallel or zero generators produce repeated/collinear points; every true
    vertex is included.
    """
    c = np.asarray(center, dtype=float)
    G = np.asarray(generators, dtype=float)
    ng = G.shape[-2]
    if ng == 0:
        return c[..., None, :]
    flip = (G[..., 1] < 0) | ((G[..., 1] == 0) & (G[..., 0] < 0))
    G = np.where(flip[..., None], -G, G)
    ang = np.arctan2(G[..., 1], G[..., 0])
    order = np.argsort(ang, axis=-1, kind="stable")
    Gs = np.take_along_axis(G, order[..., None], axis=-2)
    start = c - G.sum(axis=-2)
    steps = np.concatenate([2 * Gs, -2 * Gs], axis=-2)
    path = np.cumsum(steps, axis=-2)[..., :-1, :]
    return np.concatenate([start[..., None, :], start[..., None, :] + path], axis=-2)


def zono_vertices(Z: Zonotope) -> np.ndarray:
    """Exact vertex set of a single 2D or 3D zonotope."""
    if Z.dim not in (2, 3):
        raise ValueError("only 2D and 3D zonotopes are supported")
    Z = Z.drop_zero_generators()
    if Z.n_generators == 0:
        return Z.center[None, :].copy()
    if Z.dim == 2:
        cand = zono_vertices_2d(Z.center, Z.generators)
        idx = _monotone_chain(cand)
        return cand[idx]
    if Z.n_generators > VERTEX_GEN_CAP:
        raise ValueError(f"{Z.n_generators} generators exceed the cap of {VERTEX_GEN_CAP}; reduce first")
    ng = Z.n_generators
    signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * ng, indexing="ij")).reshape(ng, -1).T
    cand = Z.center + signs @ Z.generators
    try:
        h = ConvexHull(cand)
        return cand[h.vertices]
    except QhullError:
        # flat zonotope: drop duplicates, keep extreme points along a basis
        return np.unique(np.round(cand, 14), axis=0)


def zono_halfspaces(Z: Zonotope):
    """Supporting halfspaces ``(A, b)`` that cut out ``Z`` exactly.

    Includes all facet normals plus extra valid support directions so
    degenerate (flat) zonotopes are handled too.
    """
    G = Z.drop_zero_generators().generators
    n = Z.dim
    eye = np.eye(n)
    dirs = [eye]
    if len(G):
        dirs.append(G)
    if n == 2:
        if len(G):
            dirs.append(np.stack([-G[:, 1], G[:, 0]], axis=1))
    elif n == 3:
        for g in G:
            cg = np.cross(g, eye)
            dirs.append(cg)
            dirs.append(np.cross(g, cg))
        for i, j in combinations(range(len(G)), 2):
            nij = np.cross(G[i], G[j])
            dirs.append(np.stack([nij, np.cross(G[i], nij), np.cross(G[j], nij)]))
    else:
        raise ValueError("only 2D and 3D zonotopes are supported")
    D = np.concatenate(dirs, axis=0)
    lens = np.linalg.norm(D, axis=1)
    D = D[lens > 1e-12] / lens[lens > 1e-12, None]
    D = np.concatenate([D, -D], axis=0)
    b = D @ Z.center + np.abs(D @ G.T).sum(axis=1) if len(G) else D @ Z.center
    return D, b


def point_in_zonotope(p, Z: Zonotope, tol: float = BOUNDARY_TOL) -> bool:
    A, b = zono_halfspaces(Z)
    return bool(np.all(A @ np.asarray(p, dtype=float) - b <= tol))


def buffered(Z1: Zonotope, Z2: Zonotope) -> Zonotope:
    """``(c_2, G_1 u G_2)``."""
    return Zonotope(Z2.center, np.concatenate([Z1.generators, Z2.generators], axis=-2))


def zono_intersects(Z1: Zonotope, Z2: Zonotope, tol: float = BOUNDARY_TOL) -> bool:
    """``Z1 n Z2 != {}`` iff ``c_1`` lies in the buffered zonotope."""
    if Z1.dim != Z2.dim:
        raise ValueError("dimension mismatch")
    return point_in_zonotope(Z1.center, buffered(Z1, Z2), tol)


def zono_polytope(Z: Zonotope) -> ConvexPolytope:
    return convex_hull(zono_vertices(Z))


def zono_signed_distance(Z1: Zonotope, Z2: Zonotope) -> float:
    """Signed distance between two zonotopes via ``c_1`` and the buffered ``Z2``."""
    if Z1.dim != Z2.dim:
        raise ValueError("dimension mismatch")
    return signed_point_distance(Z1.center, zono_polytope(buffered(Z1, Z2)))


# ---------------------------------------------------------------------------
# Oriented boxes


def box_axes_overlap(c1, R1, h1, c2, R2, h2) -> np.ndarray:
    """Separating-axis test for oriented boxes, batched over leading axes.

    Box ``i`` is ``{c_i + R_i diag(h_i) u : |u|_inf <= 1}``.  Returns True
    where the boxes intersect (touching counts).
    """
    c1, R1, h1 = (np.asarray(x, dtype=float) for x in (c1, R1, h1))
    c2, R2, h2 = (np.asarray(x, dtype=float) for x in (c2, R2, h2))
    n = c1.shape[-1]
    R1, R2 = np.broadcast_arrays(R1, R2)
    axes = [R1[..., :, i] for i in range(n)] + [R2[..., :, i] for i in range(n)]
    if n == 3:
        for i in range(3):
            for j in range(3):
                axes.append(np.cross(R1[..., :, i], R2[..., :, j]))
    d = c2 - c1
    overlap = np.ones(np.broadcast_shapes(d.shape[:-1], R1.shape[:-2]), dtype=bool)
    for a in axes:
        na = np.linalg.norm(a, axis=-1)
        degenerate = na < 1e-12
        r1 = np.abs(np.einsum("...ij,...i->...j", R1, a) * h1).sum(axis=-1)
        r2 = np.abs(np.einsum("...ij,...i->...j", R2, a) * h2).sum(axis=-1)
        sep = np.abs(np.einsum("...i,...i->...", d, a)) > r1 + r2 + 1e-15
        overlap &= ~(sep & ~degenerate)
    return overlap
