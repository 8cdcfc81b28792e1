"""Serial-arm kinematics, the braking trajectory family and its reachable sets."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .pz import (
    TIME_ID,
    MatPolyZonotope,
    PolyZonotope,
    Zonotope,
    k_id,
    pz_hull_pair,
    pz_mul,
    pz_reduce,
    pz_slice,
    pz_to_zonotope,
    pz_trig,
    pz_where,
)

T_PLAN = 0.5
T_FINAL = 1.0
DT = 0.01
TAYLOR_DEGREE = 6
# term budgets for the forward-kinematics chain
TRIG_BUDGET = 24
ROT_BUDGET = 32
FO_BUDGET = 48


def _skew(a):
    return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])


@dataclass
class RobotSpec:
    """Revolute serial arm.

    ``offsets[j]`` is the translation from frame ``j-1`` to frame ``j``
    expressed after the joint-``j`` rotation, so link ``j`` ends at
    ``p_j = p_{j-1} + R_j offsets[j]``.  ``link_boxes[j]`` lives in frame ``j``.
    """

    n_d: int
    axes: np.ndarray  # (n_q, 3) unit rotation axes
    offsets: np.ndarray  # (n_q, n_d) meters
    link_boxes: list  # Zonotope per link, frame j, meters
    q_lim: np.ndarray  # (n_q, 2) rad
    qd_lim: np.ndarray  # (n_q, 2) rad/s
    name: str = "arm"

    def __post_init__(self):
        self.axes = np.asarray(self.axes, dtype=float).reshape(-1, 3)
        self.offsets = np.asarray(self.offsets, dtype=float).reshape(len(self.axes), -1)
        self.q_lim = np.asarray(self.q_lim, dtype=float).reshape(-1, 2)
        self.qd_lim = np.asarray(self.qd_lim, dtype=float).reshape(-1, 2)
        if self.n_d not in (2, 3):
            raise ValueError("workspace dimension must be 2 or 3")
        n_q = len(self.axes)
        if self.offsets.shape != (n_q, self.n_d):
            raise ValueError("offsets must be (n_q, n_d)")
        if len(self.link_boxes) != n_q:
            raise ValueError("one link box per joint required")
        if np.any(self.q_lim[:, 0] > self.q_lim[:, 1]) or np.any(self.qd_lim[:, 0] > self.qd_lim[:, 1]):
            raise ValueError("limits must be ordered (lower, upper)")
        if not np.allclose(np.linalg.norm(self.axes, axis=1), 1.0):
            raise ValueError("rotation axes must be unit vectors")
        if self.n_d == 2 and not np.allclose(np.abs(self.axes[:, 2]), 1.0):
            raise ValueError("planar arms rotate about z")
        for L in self.link_boxes:
            if L.dim != self.n_d:
                raise ValueError("link boxes must match the workspace dimension")

    @property
    def n_q(self) -> int:
        return len(self.axes)

    def accel_scale(self) -> float:
        """Acceleration per unit k so the velocity swing stays within half the limit."""
        return float(np.min(self.qd_lim[:, 1]) / T_PLAN * 0.5)

    def rotation_generators(self, j: int):
        """Constant matrices ``(A, B, C)`` with ``R = A cos q + B sin q + C``."""
        K = _skew(self.axes[j])
        K2 = K @ K
        A, B, C = -K2, K, np.eye(3) + K2
        if self.n_d == 2:
            s = np.sign(self.axes[j, 2])
            return A[:2, :2], s * np.array([[0.0, -1.0], [1.0, 0.0]]), C[:2, :2]
        return A, B, C

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_d": self.n_d,
            "axes": self.axes.tolist(),
            "offsets": self.offsets.tolist(),
            "link_boxes": [
                {"center": L.center.tolist(), "generators": L.generators.tolist()} for L in self.link_boxes
            ],
            "q_lim": self.q_lim.tolist(),
            "qd_lim": self.qd_lim.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RobotSpec":
        boxes = [Zonotope(b["center"], np.asarray(b["generators"], float).reshape(-1, d["n_d"])) for b in d["link_boxes"]]
        return cls(
            n_d=int(d["n_d"]),
            axes=d["axes"],
            offsets=d["offsets"],
            link_boxes=boxes,
            q_lim=d["q_lim"],
            qd_lim=d["qd_lim"],
            name=d.get("name", "arm"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RobotSpec":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def planar_arm(n_q: int, q_limit: float = math.pi, qd_limit: float = math.pi / 2) -> RobotSpec:
    """Planar arm whose equal links fit the [-1, 1]^2 workspace.

    Link length ``1 / (1.2 n_q)`` (0.139 m for six links), width 1 % of it.
    """
    ell = 1.0 / (1.2 * n_q)
    w = 0.01 * ell
    box = Zonotope([-ell / 2, 0.0], [[ell / 2, 0.0], [0.0, w / 2]])
    return RobotSpec(
        n_d=2,
        axes=np.tile([0.0, 0.0, 1.0], (n_q, 1)),
        offsets=np.tile([ell, 0.0], (n_q, 1)),
        link_boxes=[box] * n_q,
        q_lim=np.tile([-q_limit, q_limit], (n_q, 1)),
        qd_lim=np.tile([-qd_limit, qd_limit], (n_q, 1)),
        name=f"planar{n_q}",
    )


def spatial_arm(n_q: int = 7, reach: float = 0.9, width: float = 0.04) -> RobotSpec:
    """Generic 3D arm with alternating z/y axes and links along local x."""
    ell = reach / n_q
    axes = [[0.0, 0.0, 1.0] if j % 2 == 0 else [0.0, 1.0, 0.0] for j in range(n_q)]
    box = Zonotope([-ell / 2, 0.0, 0.0], np.diag([ell / 2, width / 2, width / 2]))
    return RobotSpec(
        n_d=3,
        axes=axes,
        offsets=np.tile([ell, 0.0, 0.0], (n_q, 1)),
        link_boxes=[box] * n_q,
        q_lim=np.tile([-math.pi, math.pi], (n_q, 1)),
        qd_lim=np.tile([-math.pi / 2, math.pi / 2], (n_q, 1)),
        name=f"spatial{n_q}",
    )


@dataclass
class TrajectoryParams:
    q0: np.ndarray
    qd0: np.ndarray
    k: np.ndarray
    accel_scale: float | np.ndarray
    t_p: float = T_PLAN
    t_f: float = T_FINAL

    def __post_init__(self):
        self.q0 = np.asarray(self.q0, dtype=float)
        self.qd0 = np.asarray(self.qd0, dtype=float)
        self.k = np.asarray(self.k, dtype=float)
        if not 0 < self.t_p < self.t_f:
            raise ValueError("need 0 < t_p < t_f")
        if np.any(np.abs(self.k) > 1.0):
            raise ValueError("|k| must be <= 1")


@dataclass(frozen=True)
class TimeGrid:
    t_f: float = T_FINAL
    dt: float = DT
    n_t: int = field(init=False)

    def __post_init__(self):
        n = round(self.t_f / self.dt)
        if n < 1 or not math.isclose(n * self.dt, self.t_f, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(f"t_f={self.t_f} is not a multiple of dt={self.dt}")
        object.__setattr__(self, "n_t", int(n))

    def cell_of(self, t):
        """Index of the time cell containing ``t`` (right endpoint belongs left)."""
        i = np.ceil(np.asarray(t) / self.dt - 1e-9).astype(int) - 1
        return np.clip(i, 0, self.n_t - 1)


def desired_traj_eval(tp: TrajectoryParams, t):
    """Position and velocity of the braking trajectory at time(s) ``t``.

    Returns arrays of shape ``t.shape + (n_q,)``.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < -1e-12) or np.any(t > tp.t_f + 1e-12):
        raise ValueError("t outside [0, t_f]")
    tt = t[..., None]
    a = tp.accel_scale * tp.k
    tb = tp.t_f - tp.t_p
    v_p = tp.qd0 + a * tp.t_p
    q_p = tp.q0 + tp.qd0 * tp.t_p + 0.5 * a * tp.t_p**2
    tau = tt - tp.t_p
    pre = tt < tp.t_p
    q = np.where(pre, tp.q0 + tp.qd0 * tt + 0.5 * a * tt**2, q_p + v_p * (tau - tau**2 / (2 * tb)))
    qd = np.where(pre, tp.qd0 + a * tt, v_p * (tp.t_f - tt) / tb)
    return q, qd


def make_time_pzs(grid: TimeGrid) -> PolyZonotope:
    """Batched scalar PZ, element ``i`` = cell ``[i dt, (i+1) dt]``."""
    i = np.arange(grid.n_t)
    centers = (i + 0.5) * grid.dt
    return PolyZonotope.indeterminate(TIME_ID, np.full(grid.n_t, grid.dt / 2), centers)


def traj_pz(spec: RobotSpec, q0, qd0, grid: TimeGrid, i=None, t_p: float = T_PLAN, eta=None):
    """Trajectory PZs in the time and k indeterminates.

    Returns lists ``(q_pz, qd_pz)`` of scalar PZs, one per joint, batched over
    time cells (or a single cell when ``i`` is given).
    """
    q0 = np.asarray(q0, dtype=float)
    qd0 = np.asarray(qd0, dtype=float)
    eta = spec.accel_scale() if eta is None else eta
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (spec.n_q,))
    t_f = grid.t_f
    tb = t_f - t_p
    T = make_time_pzs(grid)
    lo = np.arange(grid.n_t) * grid.dt
    hi = lo + grid.dt
    tol = 1e-9 * grid.dt
    pre = hi <= t_p + tol
    post = lo >= t_p - tol
    straddle = ~(pre | post)
    tau = T - t_p
    tau2 = pz_mul(tau, tau)
    T2 = pz_mul(T, T)
    q_out, qd_out = [], []
    for j in range(spec.n_q):
        a = PolyZonotope.indeterminate(k_id(j), eta[j])
        q_pre = pz_mul(a, T2).scale(0.5) + T.scale(qd0[j]) + q0[j]
        qd_pre = pz_mul(a, T) + qd0[j]
        v_p = a.scale(t_p) + qd0[j]
        q_p = a.scale(0.5 * t_p**2) + (q0[j] + qd0[j] * t_p)
        q_post = q_p + pz_mul(v_p, tau - tau2.scale(1.0 / (2 * tb)))
        qd_post = pz_mul(v_p, (T - t_f).scale(-1.0 / tb))
        q = pz_where(pre, q_pre, q_post)
        qd = pz_where(pre, qd_pre, qd_post)
        if straddle.any():
            q = pz_where(straddle, pz_hull_pair(q_pre, q_post), q)
            qd = pz_where(straddle, pz_hull_pair(qd_pre, qd_post), qd)
        if i is not None:
            q, qd = q[i], qd[i]
        q_out.append(q)
        qd_out.append(qd)
    return q_out, qd_out


def fk_point(spec: RobotSpec, q):
    """Frame rotations and link-end positions for configuration(s) ``q``.

    ``q`` may carry leading batch axes.  Uses homogeneous transforms whose
    translation part is ``R_j^{j-1} offsets[j]``.
    """
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != spec.n_q:
        raise ValueError("q has the wrong length")
    n = spec.n_d
    bs = q.shape[:-1]
    H = np.broadcast_to(np.eye(n + 1), bs + (n + 1, n + 1)).copy()
    out = []
    for j in range(spec.n_q):
        A, B, C = spec.rotation_generators(j)
        qj = q[..., j][..., None, None]
        Rl = A * np.cos(qj) + B * np.sin(qj) + C
        Hl = np.zeros(bs + (n + 1, n + 1))
        Hl[..., :n, :n] = Rl
        Hl[..., :n, n] = Rl @ spec.offsets[j]
        Hl[..., n, n] = 1.0
        H = H @ Hl
        out.append((H[..., :n, :n].copy(), H[..., :n, n].copy()))
    return out


def link_box_vertices(spec: RobotSpec, q):
    """World-frame vertices of every link box, list of ``(..., 2^n_g, n_d)``."""
    fk = fk_point(spec, q)
    verts = []
    for j, (R, p) in enumerate(fk):
        L = spec.link_boxes[j]
        signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * L.n_generators, indexing="ij")).reshape(L.n_generators, -1).T
        local = L.center + signs @ L.generators
        verts.append(p[..., None, :] + np.einsum("...ij,vj->...vi", R, local))
    return verts


def _scalar_matrix(P: PolyZonotope, M) -> MatPolyZonotope:
    return MatPolyZonotope(P.G[..., None] * np.asarray(M, dtype=float), P.E, P.ids)


def _mat_vec(R: MatPolyZonotope, v) -> PolyZonotope:
    return PolyZonotope(R.G @ np.asarray(v, dtype=float), R.E, R.ids)


def pz_fk(spec: RobotSpec, q_pz, degree: int = TAYLOR_DEGREE, trig_budget=TRIG_BUDGET, rot_budget=ROT_BUDGET):
    """Polynomial-zonotope forward kinematics: list of ``(R_pz, p_pz)``."""
    out = []
    R = None
    p = None
    for j in range(spec.n_q):
        c = pz_trig("cos", q_pz[j], degree, trig_budget)
        s = pz_trig("sin", q_pz[j], degree, trig_budget)
        A, B, C = spec.rotation_generators(j)
        Rl = _scalar_matrix(c, A) + _scalar_matrix(s, B) + C
        R = Rl if R is None else pz_reduce(pz_mul(R, Rl), rot_budget)
        step = _mat_vec(R, spec.offsets[j])
        p = step if p is None else p + step
        out.append((R, p))
    return out


def pz_fo(spec: RobotSpec, q_pz=None, fk=None, budget=FO_BUDGET, **fk_kw):
    """Forward-occupancy PZ per link: ``p_j + R_j L_j``."""
    if fk is None:
        fk = pz_fk(spec, q_pz, **fk_kw)
    fo = []
    for j, (R, p) in enumerate(fk):
        L = spec.link_boxes[j].to_pz()
        F = p + pz_mul(R, L)
        if budget is not None:
            F = pz_reduce(F, budget)
        fo.append(F)
    return fo


def slice_k(P: PolyZonotope, k) -> PolyZonotope:
    for j, kj in enumerate(np.asarray(k, dtype=float).reshape(-1)):
        P = pz_slice(P, k_id(j), kj)
    return P


def slice_fo(fo_pz: PolyZonotope, k) -> Zonotope:
    """Slice every trajectory parameter, then enclose the rest in a zonotope."""
    k = np.asarray(k, dtype=float)
    if np.any(np.abs(k) > 1.0):
        raise ValueError("|k| must be <= 1")
    return pz_to_zonotope(slice_k(fo_pz, k))


@dataclass
class ReachSet:
    """Per-link forward-occupancy PZs for one initial state, all time cells."""

    spec: RobotSpec
    q0: np.ndarray
    qd0: np.ndarray
    grid: TimeGrid
    q_pz: list
    qd_pz: list
    fo: list

    @classmethod
    def build(cls, spec: RobotSpec, q0, qd0, grid: TimeGrid | None = None) -> "ReachSet":
        grid = grid or TimeGrid()
        q_pz, qd_pz = traj_pz(spec, q0, qd0, grid)
        fo = pz_fo(spec, q_pz)
        return cls(spec, np.asarray(q0, float), np.asarray(qd0, float), grid, q_pz, qd_pz, fo)

    def sliced(self, k) -> list:
        """Zonotopes (batched over time cells) for every link."""
        return [slice_fo(F, k) for F in self.fo]
