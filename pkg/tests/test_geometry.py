import math

import numpy as np
import pytest
from scipy.optimize import linprog
from scipy.spatial.transform import Rotation

from oracles import (
    brute_facets,
    monte_carlo_overlap,
    polygon_from_generators,
    qp_distance,
    sample_polygon_boundary,
    sampled_signed_distance,
)
from reachdf.geometry import (
    box_axes_overlap,
    boundary_distance,
    convex_hull,
    penetration_distance,
    point_in_zonotope,
    point_polytope_distance,
    signed_point_distance,
    zono_intersects,
    zono_signed_distance,
    zono_vertices,
)
from reachdf.pz import Zonotope

SQUARE = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])


def unit_box(c):
    return Zonotope(c, 0.5 * np.eye(2))


def random_zono(rng, ng=None, spread=1.5):
    ng = int(rng.integers(2, 5)) if ng is None else ng
    return Zonotope(rng.uniform(-spread, spread, 2), rng.normal(scale=0.4, size=(ng, 2)))


# -- hulls ------------------------------------------------------------------

def test_square_hull_halfspaces():
    P = convex_hull(SQUARE)
    rows = sorted(map(tuple, np.round(np.c_[P.A, P.b], 12)))
    assert rows == sorted([(1.0, 0.0, 1.0), (-1.0, 0.0, 1.0), (0.0, 1.0, 1.0), (0.0, -1.0, 1.0)])


def test_triangle_hull():
    P = convex_hull([[0, 0], [1, 0], [0, 1]])
    assert len(P.halfspaces) == 3
    assert np.all(P.violation(P.vertices) <= 1e-12)


def test_collinear_points_are_inflated():
    P = convex_hull([[0, 0], [1, 0], [2, 0]])
    assert P.contains([1.0, 0.0])
    assert np.ptp(P.vertices[:, 1]) <= 4e-9


@pytest.mark.parametrize("dim", [2, 3])
def test_hull_matches_brute_force_facets(dim):
    rng = np.random.default_rng(dim)
    for _ in range(30):
        pts = rng.normal(size=(int(rng.integers(dim + 2, 18)), dim))
        P = convex_hull(pts)
        assert np.all(P.violation(pts) <= 1e-9)
        ref = brute_facets(pts)
        assert len(P.A) == len(ref)
        for a in P.A:
            assert np.min(np.linalg.norm(ref - a, axis=1)) < 1e-8


def test_coplanar_3d_points_inflated():
    rng = np.random.default_rng(9)
    pts = np.c_[rng.normal(size=(10, 2)), np.zeros(10)]
    P = convex_hull(pts)
    assert np.all(P.contains(pts))


# -- distances --------------------------------------------------------------

def test_point_polytope_examples():
    P = convex_hull(SQUARE)
    assert point_polytope_distance([3.0, 0.0], P) == pytest.approx(2.0, abs=1e-15)
    assert point_polytope_distance([2.0, 2.0], P) == pytest.approx(math.sqrt(2), abs=1e-15)
    with pytest.raises(ValueError):
        point_polytope_distance([0.0, 0.0], P)


def test_penetration_examples():
    assert penetration_distance([0.5, 0.0], convex_hull(SQUARE)) == pytest.approx(0.5)
    r = (2 - math.sqrt(2)) / 2
    tri = convex_hull([[0, 0], [1, 0], [0, 1]])
    # the inradius is attained at the incenter (r, r)
    assert penetration_distance([r, r], tri) == pytest.approx(r, abs=1e-14)
    # the centroid is nearer the hypotenuse than the incenter is
    assert penetration_distance([1 / 3, 1 / 3], tri) == pytest.approx(1 / (3 * math.sqrt(2)), abs=1e-14)
    with pytest.raises(ValueError):
        penetration_distance([3.0, 0.0], tri)


@pytest.mark.parametrize("dim", [2, 3])
def test_point_distance_matches_qp(dim):
    rng = np.random.default_rng(10 + dim)
    for _ in range(25):
        P = convex_hull(rng.normal(size=(12, dim)))
        c = rng.normal(size=dim) * 3
        if P.contains(c):
            continue
        assert point_polytope_distance(c, P) == pytest.approx(qp_distance(c, P.vertices), abs=1e-8)


def test_penetration_matches_boundary_sampling():
    rng = np.random.default_rng(12)
    for _ in range(100):
        P = convex_hull(rng.normal(size=(10, 2)))
        lam = rng.dirichlet(np.ones(len(P.vertices)))
        c = lam @ P.vertices
        B = sample_polygon_boundary(P.vertices, 4000)
        ref = np.linalg.norm(B - c, axis=1).min()
        assert abs(penetration_distance(c, P) - ref) <= 2e-2
        assert penetration_distance(c, P) <= ref + 1e-12


def test_signed_distance_boundary_is_zero():
    P = convex_hull(SQUARE)
    assert signed_point_distance([1.0, 0.3], P) == 0.0
    assert signed_point_distance([1.0 + 1e-10, 0.3], P) == 0.0
    assert signed_point_distance([0.0, 0.0], P) == -1.0
    assert boundary_distance([0.0, 0.0], P) == pytest.approx(1.0)


# -- zonotopes --------------------------------------------------------------

def test_zono_vertices_examples():
    V = zono_vertices(Zonotope([0, 0], np.eye(2)))
    assert sorted(map(tuple, V)) == sorted(map(tuple, SQUARE))
    V = zono_vertices(Zonotope([0.3, -0.2], np.zeros((0, 2))))
    assert V.tolist() == [[0.3, -0.2]]


def test_zono_vertices_on_sampled_hull():
    rng = np.random.default_rng(13)
    Z = random_zono(rng, ng=4)
    V = zono_vertices(Z)
    beta = rng.uniform(-1, 1, size=(100_000, 4))
    beta[:2000] = np.sign(beta[:2000])
    pts = Z.center + beta @ Z.generators
    H = convex_hull(np.vstack([pts, V]))
    assert np.all(np.abs(H.violation(V)) <= 1e-9)
    ref = polygon_from_generators(Z.center, Z.generators)
    assert len(V) == len(ref)


def test_zono_vertices_3d_cube():
    V = zono_vertices(Zonotope([0, 0, 0], np.eye(3)))
    assert len(V) == 8


def test_intersects_examples():
    assert not zono_intersects(unit_box([0, 0]), unit_box([3, 0]))
    assert zono_intersects(unit_box([0, 0]), unit_box([1, 0]))


def test_intersects_monte_carlo():
    rng = np.random.default_rng(14)
    for _ in range(300):
        Z1, Z2 = random_zono(rng), random_zono(rng)
        V1 = polygon_from_generators(Z1.center, Z1.generators)
        V2 = polygon_from_generators(Z2.center, Z2.generators)
        s = sampled_signed_distance(V1, V2)
        if abs(s) < 1e-2:
            continue  # grazing contact is below sampling resolution
        assert zono_intersects(Z1, Z2) == (s < 0) == monte_carlo_overlap(V1, V2, rng)


def test_signed_distance_examples():
    assert zono_signed_distance(unit_box([0, 0]), unit_box([3, 0])) == pytest.approx(2.0, abs=1e-12)
    sq = lambda c: Zonotope(c, np.eye(2))  # side-2 squares
    assert zono_signed_distance(sq([0, 0]), sq([3, 0])) == pytest.approx(1.0, abs=1e-12)
    assert zono_signed_distance(sq([0, 0]), sq([1, 0])) == pytest.approx(-1.0, abs=1e-12)


def test_signed_distance_vs_sampling():
    rng = np.random.default_rng(15)
    for _ in range(200):
        Z1, Z2 = random_zono(rng), random_zono(rng)
        s = zono_signed_distance(Z1, Z2)
        ref = sampled_signed_distance(
            polygon_from_generators(Z1.center, Z1.generators), polygon_from_generators(Z2.center, Z2.generators)
        )
        assert abs(s - ref) <= 2e-2
        if abs(ref) > 1e-6:
            assert (s < 0) == zono_intersects(Z1, Z2)


def test_point_in_flat_zonotope():
    Z = Zonotope([0, 0, 0], [[1.0, 0, 0], [0, 1.0, 0]])
    assert point_in_zonotope([0.5, 0.5, 0.0], Z)
    assert not point_in_zonotope([0.5, 0.5, 0.01], Z)


# -- oriented boxes ---------------------------------------------------------

def rot(a):
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


def test_box_overlap_matches_polygons():
    rng = np.random.default_rng(16)
    for _ in range(300):
        c1, c2 = rng.uniform(-1, 1, (2, 2))
        R1, R2 = rot(rng.uniform(0, 6.3)), rot(rng.uniform(0, 6.3))
        h1, h2 = rng.uniform(0.05, 0.6, (2, 2))
        got = bool(box_axes_overlap(c1, R1, h1, c2, R2, h2))
        V1 = polygon_from_generators(c1, (R1 * h1).T)
        V2 = polygon_from_generators(c2, (R2 * h2).T)
        s = sampled_signed_distance(V1, V2)
        if abs(s) > 1e-3:
            assert got == (s < 0)


def boxes_overlap_lp(c1, R1, h1, c2, R2, h2):
    """Feasibility of c1 + R1 h1 u = c2 + R2 h2 v with |u|, |v| <= 1."""
    A = np.hstack([R1 * h1, -(R2 * h2)])
    res = linprog(np.zeros(6), A_eq=A, b_eq=np.asarray(c2) - np.asarray(c1), bounds=[(-1, 1)] * 6, method="highs")
    return res.status == 0


def test_box_overlap_3d():
    I = np.eye(3)
    h = np.full(3, 0.5)
    assert box_axes_overlap([0, 0, 0], I, h, [0.9, 0, 0], I, h)
    assert not box_axes_overlap([0, 0, 0], I, h, [1.1, 0, 0], I, h)
    rng = np.random.default_rng(17)
    for _ in range(300):
        c1, c2 = rng.uniform(-0.8, 0.8, (2, 3))
        R1, R2 = (Rotation.random(random_state=rng).as_matrix() for _ in range(2))
        h1, h2 = rng.uniform(0.05, 0.6, (2, 3))
        ref = boxes_overlap_lp(c1, R1, h1, c2, R2, h2)
        assert bool(box_axes_overlap(c1, R1, h1, c2, R2, h2)) == ref
