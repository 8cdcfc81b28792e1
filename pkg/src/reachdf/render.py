"""Static SVG scenes: arm links, obstacles, buffered hulls and zero-level contours.

The world box ``[-1, 1]^n_d`` fills each panel.  Planar scenes use one panel;
spatial scenes are drawn as two orthographic projections (x-y and x-z).
Output is plain text with fixed number formatting, so identical inputs give
identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from skimage.measure import find_contours

from .arm import RobotSpec, link_box_vertices
from .geometry import convex_hull
from .net import MlpModel, mlp_forward
from .rdf import Obstacle, rdf_many

GRID = 200
PANEL = 400  # px per panel side
MARGIN = 20
LEGEND_H = 24
LAYERS = (
    ("links", "#1f4e79"),
    ("obstacles", "#b22222"),
    ("hulls", "#e69f00"),
    ("contour", "#2ca02c"),
)
PROJECTIONS = {2: [(0, 1)], 3: [(0, 1), (0, 2)]}


@dataclass
class SceneRender:
    """Layered scene in world coordinates; every polygon is ``(m, n_d)``."""

    n_d: int = 2
    links: list = field(default_factory=list)
    obstacles: list = field(default_factory=list)  # Obstacle
    hulls: list = field(default_factory=list)
    contours: list = field(default_factory=list)  # 2D polylines (planar only)
    title: str = ""

    def __post_init__(self):
        if self.n_d not in PROJECTIONS:
            raise ValueError("scenes are 2D or 3D")


def zero_level_contour(field_fn, n: int = GRID, lo: float = -1.0, hi: float = 1.0) -> list:
    """Polylines where ``field_fn`` crosses zero, sampled on an ``n x n`` grid.

    ``field_fn`` maps ``(N, 2)`` world points to ``(N,)`` values.
    """
    xs = np.linspace(lo, hi, n)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    F = np.asarray(field_fn(np.stack([X.ravel(), Y.ravel()], axis=1)), dtype=float).reshape(n, n)
    if F.min() > 0.0 or F.max() < 0.0:
        return []
    step = (hi - lo) / (n - 1)
    return [lo + step * c for c in find_contours(F, 0.0)]


def model_field(model: MlpModel, q0, qd0, k):
    """Network field over obstacle centers (min over links) for a fixed trajectory."""
    base = np.concatenate([q0, qd0, k]).astype(float)

    def f(P):
        X = np.concatenate([np.broadcast_to(base, (len(P), len(base))), P], axis=1)
        return mlp_forward(model, X).min(axis=1)

    return f


def exact_field(spec: RobotSpec, q0, qd0, k, side: float, grid=None):
    """Ground-truth reachability distance over obstacle centers; the hulls are built once."""
    from .arm import ReachSet

    reach = ReachSet.build(spec, q0, qd0, grid)
    return lambda P: rdf_many(spec, q0, qd0, k, P, side, reach=reach).min(axis=1)


def arm_scene(spec: RobotSpec, q, obstacles=(), hulls=(), contours=(), title: str = "") -> SceneRender:
    """Scene with the link boxes at configuration ``q`` (one ordered polygon per link)."""
    links = []
    if q is not None:
        for V in link_box_vertices(spec, np.asarray(q, dtype=float)):
            links.append(V)
    return SceneRender(spec.n_d, links, list(obstacles), [P.vertices for P in hulls], list(contours), title)


def _outline(V: np.ndarray, axes) -> np.ndarray:
    """Boundary of a projected convex point set, in drawing order."""
    P = np.asarray(V, dtype=float)[:, list(axes)]
    if len(P) < 3:
        return P
    return convex_hull(P).vertices


def _fmt(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _points(P: np.ndarray, ox: float) -> str:
    px = ox + MARGIN + (P[:, 0] + 1.0) * 0.5 * PANEL
    py = MARGIN + (1.0 - P[:, 1]) * 0.5 * PANEL
    return " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(px, py))


def _obstacle_square(o: Obstacle, axes) -> np.ndarray:
    h = 0.5 * o.side
    c = o.center[list(axes)]
    return c + h * np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)


def to_svg(scene: SceneRender) -> str:
    panels = PROJECTIONS[scene.n_d]
    pw = PANEL + 2 * MARGIN
    width, height = pw * len(panels), pw + LEGEND_H
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
    ]
    if scene.title:
        out.append(f"<title>{_escape(scene.title)}</title>")
    colors = dict(LAYERS)
    for p_i, axes in enumerate(panels):
        ox = p_i * pw
        names = "xyz"
        out.append(f'<g id="panel-{names[axes[0]]}{names[axes[1]]}">')
        out.append(f'<rect class="frame" x="{ox + MARGIN}" y="{MARGIN}" width="{PANEL}" height="{PANEL}" '
                   'fill="white" stroke="black" stroke-width="1"/>')
        layer_items = {
            "hulls": [_outline(V, axes) for V in scene.hulls],
            "links": [_outline(V, axes) for V in scene.links],
            "obstacles": [_obstacle_square(o, axes) for o in scene.obstacles],
        }
        for name in ("hulls", "links", "obstacles"):
            polys = layer_items[name]
            if not polys:
                continue
            fill = colors[name]
            opacity = "0.25" if name == "hulls" else "0.8"
            out.append(f'<g class="{name}" fill="{fill}" fill-opacity="{opacity}" stroke="{fill}" stroke-width="1">')
            out.extend(f'<polygon points="{_points(P, ox)}"/>' for P in polys)
            out.append("</g>")
        if scene.contours and scene.n_d == 2:
            c = colors["contour"]
            out.append(f'<g class="contour" fill="none" stroke="{c}" stroke-width="1.5">')
            out.extend(f'<polyline points="{_points(np.asarray(L), ox)}"/>' for L in scene.contours)
            out.append("</g>")
        out.append("</g>")
    out.append('<g class="legend" font-family="sans-serif" font-size="12">')
    for i, (name, color) in enumerate(LAYERS):
        x = MARGIN + 110 * i
        y = pw + 4
        out.append(f'<rect x="{x}" y="{y}" width="12" height="12" fill="{color}"/>')
        out.append(f'<text x="{x + 16}" y="{y + 11}">{name}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_svg(scene: SceneRender, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(to_svg(scene))
