"""Ground-truth reachability distances from sliced forward-occupancy sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arm import ReachSet, RobotSpec, TimeGrid
from .geometry import (
    VERTEX_GEN_CAP,
    convex_hull,
    signed_point_distances,
    zono_vertices_2d,
)
from .pz import Zonotope, pz_reduce, pz_to_zonotope
from .arm import slice_k


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned cube (square in 2D) of side ``side`` centered at ``center``."""

    center: np.ndarray
    side: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.side <= 0:
            raise ValueError("obstacle side must be positive")

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def generators(self) -> np.ndarray:
        return 0.5 * self.side * np.eye(self.dim)

    def zonotope(self) -> Zonotope:
        return Zonotope(self.center, self.generators)


def obstacle_side(n_q: int) -> float:
    """Obstacle side length used for an ``n_q``-link planar arm."""
    return 0.2 / (1.2 * n_q)


@dataclass
class RdfResult:
    per_link: np.ndarray  # (n_q,) signed distances
    polytopes: list  # ConvexPolytope per link

    @property
    def value(self) -> float:
        return float(self.per_link.min())


def buffered_hulls(reach: ReachSet, k, side: float) -> list:
    """Hull of the obstacle-buffered sliced FO zonotopes over all time cells, per link."""
    n_d = reach.spec.n_d
    G_O = 0.5 * side * np.eye(n_d)
    hulls = []
    for F in reach.fo:
        P = slice_k(F, k)
        if n_d == 3:
            P = pz_reduce(P, VERTEX_GEN_CAP - 2 * n_d)
        Z = pz_to_zonotope(P).drop_zero_generators()
        bs = Z.batch_shape
        gens = np.concatenate([Z.generators, np.broadcast_to(G_O, bs + G_O.shape)], axis=-2)
        if n_d == 2:
            pts = zono_vertices_2d(Z.center, gens).reshape(-1, 2)
        else:
            ng = gens.shape[-2]
            signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * ng, indexing="ij")).reshape(ng, -1).T
            pts = (Z.center[..., None, :] + np.einsum("sg,...gd->...sd", signs, gens)).reshape(-1, 3)
        hulls.append(convex_hull(pts))
    return hulls


def signed_distances(hulls: list, centers) -> np.ndarray:
    """``(n_obs, n_links)`` signed distances from obstacle centers to each hull."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    out = np.empty((len(centers), len(hulls)))
    for j, H in enumerate(hulls):
        out[:, j] = signed_point_distances(centers, H)
    return out


def rdf_ground_truth(spec: RobotSpec, q0, qd0, k, obstacle: Obstacle, grid: TimeGrid | None = None,
                     reach: ReachSet | None = None) -> RdfResult:
    """Per-link reachability distance of one obstacle for trajectory ``(q0, qd0, k)``.

    Negative when the obstacle center lies inside a link's buffered hull.
    """
    if obstacle.dim != spec.n_d:
        raise ValueError("obstacle dimension does not match the workspace")
    if reach is None:
        reach = ReachSet.build(spec, q0, qd0, grid)
    hulls = buffered_hulls(reach, k, obstacle.side)
    d = signed_distances(hulls, obstacle.center)[0]
    return RdfResult(d, hulls)


def rdf_many(spec: RobotSpec, q0, qd0, k, centers, side: float, grid: TimeGrid | None = None,
             reach: ReachSet | None = None) -> np.ndarray:
    """Distances for many equal-size obstacles sharing one set of hulls."""
    if reach is None:
        reach = ReachSet.build(spec, q0, qd0, grid)
    return signed_distances(buffered_hulls(reach, k, side), centers)
