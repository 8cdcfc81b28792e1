"""Receding-horizon planning with reachability-distance collision constraints.

Each planning step picks ``k`` for the braking trajectory family by solving

    min_k |q(t_p; k) - waypoint|^2
    s.t.  joint position/velocity limits hold on every time cell,
          per-obstacle distance margins are >= 0,
          k in [-1, 1]^n_q,

with an augmented Lagrangian whose inner loop is projected gradient descent.
Distances come either from the trained network (``neural``) or from the
exact hull construction (``exact``, finite-difference gradients).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .arm import (
    T_FINAL,
    T_PLAN,
    ReachSet,
    RobotSpec,
    TrajectoryParams,
    desired_traj_eval,
    fk_point,
    k_id,
)
from .geometry import box_axes_overlap
from .net import MlpModel, mlp_forward, mlp_vjp_input
from .rdf import buffered_hulls, signed_distances

GOAL_TOL = 0.1  # rad
MAX_STEPS = 400
EXEC_DT = 1e-3  # audit/sample spacing, s
FD_STEP = 1e-4
SMOOTH_EPS = 1e-6
CONSTRAINT_TOL = 1e-6
WAYPOINT_STEP = 0.3  # rad
MODES = ("neural", "exact")


@dataclass
class PlanProblem:
    spec: RobotSpec
    obstacles: list
    q_start: np.ndarray
    q_goal: np.ndarray
    delta: float = 0.03
    mode: str = "exact"
    model: MlpModel | None = None
    time_limit: float | None = None  # wall-clock budget per solve (s); None = iteration caps only
    max_steps: int = MAX_STEPS
    seed: int = 0
    outer_iters: int = 4
    inner_iters: int = 6
    bisections: int = 6
    max_evals: int = 60  # per planning step; an exact-mode gradient costs 1 + 2 n_q

    def __post_init__(self):
        self.q_start = np.asarray(self.q_start, dtype=float)
        self.q_goal = np.asarray(self.q_goal, dtype=float)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if min(self.max_steps, self.max_evals, self.outer_iters, self.inner_iters) < 1 or self.bisections < 0:
            raise ValueError("step, evaluation and iteration caps must be positive")
        if self.mode == "neural" and self.model is None:
            raise ValueError("neural mode needs a model")
        lim = self.spec.q_lim
        if np.any(self.q_start < lim[:, 0]) or np.any(self.q_start > lim[:, 1]):
            raise ValueError("start configuration violates joint limits")


@dataclass
class IterationRecord:
    step: int
    k: np.ndarray | None
    solve_time: float
    min_margin: float
    evaluations: int


@dataclass
class PlanResult:
    status: str  # reached | stuck | collided | step-budget-exhausted
    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    records: list = field(default_factory=list)
    violations: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.records)

    @property
    def mean_solve_time(self) -> float:
        return float(np.mean([r.solve_time for r in self.records])) if self.records else 0.0

    @property
    def min_margin(self) -> float:
        vals = [r.min_margin for r in self.records if r.k is not None]
        return float(min(vals)) if vals else math.nan


# ---------------------------------------------------------------------------
# Joint limits


class JointLimitModel:
    """Joint-limit margins of the k-sliced trajectory PZs, vectorized over cells.

    After substituting ``k`` every term is ``g(k) * m(x)`` with ``m`` a monomial
    of the remaining indeterminates; terms sharing ``m`` are summed, and
    ``sup = c + sum |g|`` uses the smooth ``|g| ~ sqrt(g^2 + eps^2)``.
    """

    def __init__(self, spec: RobotSpec, q_pz: list, qd_pz: list, eps: float = SMOOTH_EPS):
        self.spec = spec
        self.eps = eps
        self.parts = []
        for P, lim in [(p, spec.q_lim[j]) for j, p in enumerate(q_pz)] + [
            (p, spec.qd_lim[j]) for j, p in enumerate(qd_pz)
        ]:
            self.parts.append(self._compile(P, lim))

    def _compile(self, P, lim):
        n_q = self.spec.n_q
        kcols = np.full(n_q, -1)
        for j in range(n_q):
            hit = np.nonzero(P.ids == k_id(j))[0]
            if len(hit):
                kcols[j] = hit[0]
        other = np.setdiff1d(np.arange(len(P.ids)), kcols[kcols >= 0])
        Ek = np.zeros((P.E.shape[0], n_q), dtype=np.int64)
        for j, c in enumerate(kcols):
            if c >= 0:
                Ek[:, j] = P.E[:, c]
        rest = P.E[:, other]
        groups, inv = np.unique(rest, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        center_group = int(np.nonzero(~groups.any(axis=1))[0][0]) if len(groups) else 0
        G = P.G[..., 0]  # (cells, terms)
        return dict(G=G, Ek=Ek, inv=inv, n_groups=len(groups), center=center_group, lo=lim[0], hi=lim[1])

    def __call__(self, k, need_grad: bool = True):
        """Margins ``(m,)`` and Jacobian ``(m, n_q)`` (min of upper/lower per joint and cell)."""
        k = np.asarray(k, dtype=float)
        n_q = self.spec.n_q
        vals, grads = [], []
        for part in self.parts:
            Ek = part["Ek"]
            mono = np.prod(k[None, :] ** Ek, axis=1)  # (terms,)
            dmono = np.zeros((len(mono), n_q))
            for j in range(n_q):
                e = Ek[:, j]
                d = np.where(e > 0, e * k[j] ** np.maximum(e - 1, 0), 0.0)
                others = np.prod(np.delete(k[None, :] ** Ek, j, axis=1), axis=1)
                dmono[:, j] = d * others
            G = part["G"]
            ng = part["n_groups"]
            A = np.zeros((ng, len(mono)))
            A[part["inv"], np.arange(len(mono))] = 1.0
            g = (G * mono) @ A.T  # (cells, groups)
            dg = np.einsum("ct,tj,gt->cgj", G, dmono, A)
            c = g[:, part["center"]]
            dc = dg[:, part["center"]]
            mask = np.ones(ng, dtype=bool)
            mask[part["center"]] = False
            sm = np.sqrt(g[:, mask] ** 2 + self.eps**2)
            rad = sm.sum(axis=1)
            drad = np.einsum("cg,cgj->cj", g[:, mask] / sm, dg[:, mask])
            upper = part["hi"] - (c + rad)
            lower = (c - rad) - part["lo"]
            use_up = upper <= lower
            vals.append(np.where(use_up, upper, lower))
            grads.append(np.where(use_up[:, None], -(dc + drad), dc - drad))
        return np.concatenate(vals), (np.concatenate(grads) if need_grad else None)


def joint_limit_margins(spec: RobotSpec, q_pz: list, qd_pz: list, k):
    """Margins per (joint, time cell) for positions then velocities, with k-gradient."""
    return JointLimitModel(spec, q_pz, qd_pz)(k)


# ---------------------------------------------------------------------------
# Collision margins


def _obstacle_groups(obstacles):
    """Obstacles grouped by side length (equal sides share hulls)."""
    groups = {}
    for i, o in enumerate(obstacles):
        groups.setdefault(float(o.side), []).append(i)
    return groups


def exact_distances(reach: ReachSet, k, obstacles) -> np.ndarray:
    """Overall reachability distance per obstacle for one ``k``."""
    out = np.empty(len(obstacles))
    for side, idx in _obstacle_groups(obstacles).items():
        hulls = buffered_hulls(reach, k, side)
        d = signed_distances(hulls, np.stack([obstacles[i].center for i in idx]))
        out[idx] = d.min(axis=1)
    return out


def neural_inputs(q0, qd0, k, obstacles) -> np.ndarray:
    base = np.concatenate([q0, qd0, k])
    return np.stack([np.concatenate([base, o.center]) for o in obstacles])


def collision_margins(mode: str, model, q0, qd0, k, obstacles, delta: float, reach: ReachSet | None = None,
                      need_grad: bool = True):
    """Per-obstacle margins ``r(c_O) - delta`` and their k-Jacobian ``(n_obs, n_q)``.

    ``model`` is the network in neural mode and ignored in exact mode, where
    ``reach`` (built from ``q0, qd0`` if omitted) supplies the sets.
    """
    q0, qd0, k = (np.asarray(a, dtype=float) for a in (q0, qd0, k))
    n_q = len(k)
    if not obstacles:
        return np.zeros(0), np.zeros((0, n_q))
    if mode == "neural":
        X = neural_inputs(q0, qd0, k, obstacles)
        y = mlp_forward(model, X)
        j = np.argmin(y, axis=1)
        m = y[np.arange(len(X)), j] - delta
        if not need_grad:
            return m, None
        gy = np.zeros_like(y)
        gy[np.arange(len(X)), j] = 1.0
        _, gx = mlp_vjp_input(model, X, gy)
        return m, gx[:, model.k_cols]
    if mode != "exact":
        raise ValueError(f"unknown mode {mode!r}")
    if reach is None:
        reach = ReachSet.build(_spec_of(model), q0, qd0)
    m = exact_distances(reach, k, obstacles) - delta
    if not need_grad:
        return m, None
    J = np.zeros((len(obstacles), n_q))
    for j in range(n_q):
        hi = min(k[j] + FD_STEP, 1.0)
        lo = max(k[j] - FD_STEP, -1.0)
        kp, km = k.copy(), k.copy()
        kp[j], km[j] = hi, lo
        J[:, j] = (exact_distances(reach, kp, obstacles) - exact_distances(reach, km, obstacles)) / (hi - lo)
    return m, J


def _spec_of(model):
    if isinstance(model, RobotSpec):
        return model
    raise ValueError("exact mode without a reach set needs the RobotSpec in place of the model")


# ---------------------------------------------------------------------------
# One planning iteration


class _Budget(Exception):
    pass


class StepProblem:
    """Cost and constraints for one planning step from ``(q0, qd0)``."""

    def __init__(self, problem: PlanProblem, q0, qd0, waypoint):
        self.p = problem
        self.spec = problem.spec
        self.q0 = np.asarray(q0, dtype=float)
        self.qd0 = np.asarray(qd0, dtype=float)
        self.waypoint = np.asarray(waypoint, dtype=float)
        self.eta = self.spec.accel_scale()
        self.reach = ReachSet.build(self.spec, self.q0, self.qd0)
        self.limits = JointLimitModel(self.spec, self.reach.q_pz, self.reach.qd_pz)
        # q(t_p; k) = a + b k
        self.a = self.q0 + self.qd0 * T_PLAN
        self.b = np.full(self.spec.n_q, 0.5 * self.eta * T_PLAN**2)
        self.evaluations = 0
        self.deadline = None if problem.time_limit is None else time.perf_counter() + problem.time_limit

    def cost(self, k):
        r = self.a + self.b * k - self.waypoint
        return float(r @ r), 2.0 * self.b * r

    def unconstrained(self):
        return np.clip((self.waypoint - self.a) / self.b, -1.0, 1.0)

    def constraints(self, k, need_grad: bool = True):
        if self.deadline is not None and time.perf_counter() > self.deadline:
            raise _Budget
        cost = 1 + (2 * self.spec.n_q if need_grad and self.p.mode == "exact" and self.p.obstacles else 0)
        if self.evaluations + cost > self.p.max_evals:
            raise _Budget
        self.evaluations += cost
        jm, jg = self.limits(k, need_grad)
        cm, cg = collision_margins(self.p.mode, self.p.model, self.q0, self.qd0, k, self.p.obstacles,
                                   self.p.delta, reach=self.reach, need_grad=need_grad)
        g = np.concatenate([jm, cm])
        J = np.concatenate([jg, cg]) if need_grad else None
        return g, J


def solve_iteration(problem: PlanProblem, q0, qd0, waypoint, k_prev=None, step: StepProblem | None = None):
    """Best feasible ``k`` found, or ``None``; also returns the evaluation count and its min margin.

    Feasible means every margin is >= 0.  The unconstrained optimum is tried
    first.  Otherwise the best feasible seed (0 or the previous ``k``) is
    pushed toward the optimum by bisection, then refined with an augmented
    Lagrangian.  Without a feasible seed the Lagrangian searches from the
    optimum.  Everything stops once ``problem.max_evals`` is spent.
    """
    sp = step or StepProblem(problem, q0, qd0, waypoint)
    best = [None, math.inf, -math.inf]  # k, cost, min margin

    def consider(k, g):
        f, _ = sp.cost(k)
        if g.size == 0 or g.min() >= 0.0:
            if f < best[1]:
                best[:] = [k.copy(), f, float(g.min()) if g.size else math.inf]

    try:
        k_star = sp.unconstrained()
        g, _ = sp.constraints(k_star, need_grad=False)
        consider(k_star, g)
        if best[0] is not None:
            return best[0], sp.evaluations, best[2]
        seeds = [np.zeros(problem.spec.n_q)]
        if k_prev is not None:
            seeds.append(np.clip(np.asarray(k_prev, dtype=float), -1.0, 1.0))
        for s in seeds:
            g, _ = sp.constraints(s, need_grad=False)
            consider(s, g)
        if best[0] is not None:
            lo, hi = 0.0, 1.0
            base = best[0].copy()
            for _ in range(problem.bisections):
                mid = 0.5 * (lo + hi)
                k = base + mid * (k_star - base)
                g, _ = sp.constraints(k, need_grad=False)
                if g.min() >= 0.0:
                    consider(k, g)
                    lo = mid
                else:
                    hi = mid
            start = best[0]
        else:
            start = k_star
        _augmented_lagrangian(sp, start, consider, problem.outer_iters, problem.inner_iters)
    except _Budget:
        pass
    return best[0], sp.evaluations, best[2]


def _augmented_lagrangian(sp: StepProblem, k0, consider, outer: int, inner: int):
    k = np.clip(np.asarray(k0, dtype=float), -1.0, 1.0)
    g, J = sp.constraints(k)
    consider(k, g)
    lam = np.zeros(len(g))
    mu = 10.0
    target = CONSTRAINT_TOL  # aim slightly inside the feasible set

    def merit(kk, gg):
        f, _ = sp.cost(kk)
        s = np.maximum(0.0, lam / mu - (gg - target))
        return f + 0.5 * mu * float(s @ s)

    def merit_grad(kk, gg, JJ):
        _, df = sp.cost(kk)
        s = np.maximum(0.0, lam / mu - (gg - target))
        return df - mu * (JJ.T @ s)

    for _ in range(outer):
        val = merit(k, g)
        for _ in range(inner):
            d = merit_grad(k, g, J)
            # scale so the first trial moves at most a quarter of the box
            step = min(1.0, 0.5 / max(float(np.abs(d).max()), 1e-12))
            improved = False
            for _ in range(5):
                kn = np.clip(k - step * d, -1.0, 1.0)
                if np.allclose(kn, k, atol=1e-9, rtol=0):
                    break
                gn, _ = sp.constraints(kn, need_grad=False)
                consider(kn, gn)
                vn = merit(kn, gn)
                if vn <= val - 1e-4 * float(d @ (k - kn)):
                    improved = True
                    break
                step *= 0.25
            if not improved:
                break
            k = kn
            g, J = sp.constraints(k)
            val = vn
        viol = np.maximum(0.0, target - g)
        lam = np.maximum(0.0, lam - mu * (g - target))
        if viol.max(initial=0.0) <= 0.0:
            break
        mu *= 5.0


# ---------------------------------------------------------------------------
# Receding horizon


def _tp(spec, q0, qd0, k):
    return TrajectoryParams(q0, qd0, k, spec.accel_scale(), T_PLAN, T_FINAL)


def _segment(spec, q0, qd0, k, t0, t1, t_offset, include_end=False):
    n = int(round((t1 - t0) / EXEC_DT))
    ts = t0 + EXEC_DT * np.arange(n + (1 if include_end else 0))
    ts = np.minimum(ts, T_FINAL)
    q, qd = desired_traj_eval(_tp(spec, q0, qd0, k), ts)
    return ts - t0 + t_offset, q, qd


class WaypointGenerator:
    """Straight-line steps toward the goal; random detours when progress stalls."""

    def __init__(self, q_goal, seed: int, step: float = WAYPOINT_STEP, patience: int = 4, detour: int = 3):
        self.goal = np.asarray(q_goal, dtype=float)
        self.rng = np.random.default_rng(seed)
        self.step = step
        self.patience = patience
        self.detour = detour
        self.history = []
        self.detour_left = 0
        self.detour_dir = None

    def __call__(self, q):
        d = self.goal - q
        self.history.append(float(np.linalg.norm(d)))
        if self.detour_left == 0 and len(self.history) > self.patience:
            if self.history[-1 - self.patience] - self.history[-1] < 0.05:
                self.detour_left = self.detour
                v = self.rng.normal(size=len(q))
                self.detour_dir = v / np.linalg.norm(v)
                self.history.clear()
        if self.detour_left > 0:
            self.detour_left -= 1
            return q + 2 * self.step * self.detour_dir
        n = np.linalg.norm(d)
        return self.goal.copy() if n <= self.step else q + d * (self.step / n)


def receding_horizon(problem: PlanProblem) -> PlanResult:
    spec = problem.spec
    q, qd = problem.q_start.copy(), np.zeros(spec.n_q)
    ts, qs, qds = [], [], []
    t_now = 0.0
    records = []
    waypoints = WaypointGenerator(problem.q_goal, problem.seed)
    prev = None  # (q0, qd0, k) of the plan being executed
    fails = 0
    status = "step-budget-exhausted"

    def execute(q0, qd0, k, t0, t1, end=False):
        nonlocal t_now
        t, qq, qqd = _segment(spec, q0, qd0, k, t0, t1, t_now, include_end=end)
        ts.append(t)
        qs.append(qq)
        qds.append(qqd)
        t_now += t1 - t0

    if np.linalg.norm(q - problem.q_goal) < GOAL_TOL:
        status = "reached"
    else:
        for step in range(problem.max_steps):
            wp = waypoints(q)
            t0 = time.perf_counter()
            k, evals, margin = solve_iteration(problem, q, qd, wp, None if prev is None else prev[2])
            elapsed = time.perf_counter() - t0
            records.append(IterationRecord(step, k, elapsed, margin, evals))
            if k is None:
                fails += 1
                if prev is not None:
                    # fail-safe: finish the previous plan, which brakes to rest
                    execute(*prev, T_PLAN, T_FINAL, end=True)
                    q = qs[-1][-1].copy()
                    qd = qds[-1][-1].copy()
                    prev = None
                if fails >= 2:
                    status = "stuck"
                    break
                continue
            fails = 0
            execute(q, qd, k, 0.0, T_PLAN, end=False)
            q_next, qd_next = desired_traj_eval(_tp(spec, q, qd, k), T_PLAN)
            prev = (q.copy(), qd.copy(), k.copy())
            q, qd = q_next, qd_next
            if np.linalg.norm(q - problem.q_goal) < GOAL_TOL:
                status = "reached"
                break
        if prev is not None:
            execute(*prev, T_PLAN, T_FINAL, end=True)

    if not ts:  # nothing executed: the arm stayed at its start
        ts, qs, qds = [np.zeros(1)], [q[None]], [qd[None]]
    t = np.concatenate(ts)
    qa = np.concatenate(qs)
    qda = np.concatenate(qds)
    violations = collision_audit(spec, qa, problem.obstacles, t)
    if violations:
        status = "collided"
    return PlanResult(status, t, qa, qda, records, violations)


# ---------------------------------------------------------------------------
# Audit


def _box_form(L):
    """``(center, R, half)`` for a box-shaped link zonotope (orthogonal generators)."""
    G = L.drop_zero_generators().generators
    n = L.dim
    half = np.linalg.norm(G, axis=1)
    axes = G / half[:, None] if len(G) else np.zeros((0, n))
    if np.abs(axes @ axes.T - np.eye(len(G))).max(initial=0.0) > 1e-9 or len(G) > n:
        raise ValueError("link zonotope is not a box")
    if len(G) < n:
        # complete the frame with zero-width directions
        extra = np.linalg.svd(axes)[2][len(G):] if len(G) else np.eye(n)
        axes = np.vstack([axes, extra])
        half = np.concatenate([half, np.zeros(n - len(G))])
    return L.center, axes.T, half


def collision_audit(spec: RobotSpec, q, obstacles, t=None) -> list:
    """``(time, link, obstacle)`` for every sample where a link box touches an obstacle."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    t = np.arange(len(q)) * EXEC_DT if t is None else np.asarray(t)
    if not obstacles:
        return []
    fk = fk_point(spec, q)
    hits = []
    for j, (R, p) in enumerate(fk):
        c, Rl, h = _box_form(spec.link_boxes[j])
        centers = p + np.einsum("nij,j->ni", R, c)
        Rw = R @ Rl
        for o_idx, o in enumerate(obstacles):
            eye = np.eye(spec.n_d)
            hit = box_axes_overlap(centers, Rw, h, o.center, eye, np.full(spec.n_d, o.side / 2))
            for i in np.nonzero(hit)[0]:
                hits.append((float(t[i]), j, o_idx))
    hits.sort()
    return hits
