import math

import numpy as np
import pytest

from reachdf.arm import (
    T_PLAN,
    ReachSet,
    TrajectoryParams,
    desired_traj_eval,
    fk_point,
    link_box_vertices,
    planar_arm,
    slice_k,
)
from reachdf.net import MlpModel, mlp_forward
from reachdf.planner import (
    EXEC_DT,
    GOAL_TOL,
    JointLimitModel,
    PlanProblem,
    StepProblem,
    collision_audit,
    collision_margins,
    joint_limit_margins,
    receding_horizon,
    solve_iteration,
)
from reachdf.rdf import Obstacle, obstacle_side, rdf_ground_truth

SPEC = planar_arm(2)
SIDE = obstacle_side(2)


def reach(q0, qd0):
    return ReachSet.build(SPEC, np.asarray(q0, float), np.asarray(qd0, float))


def random_model(seed=0):
    rng = np.random.default_rng(seed)
    m = MlpModel.init(2, 2, 16, rng)
    m.biases = [b + 0.1 * rng.normal(size=b.shape) for b in m.biases]
    return m


def constant_model(value):
    m = random_model()
    m.weights = [np.zeros_like(w) for w in m.weights]
    m.biases = [np.zeros_like(b) for b in m.biases]
    m.biases[-1][:] = value
    return m


# -- joint limits -----------------------------------------------------------

def test_joint_margins_positive_at_rest():
    R = reach([0.1, -0.2], [0.0, 0.0])
    m, J = joint_limit_margins(SPEC, R.q_pz, R.qd_pz, np.zeros(2))
    assert m.shape == (4 * len(R.q_pz[0].G),)
    assert np.all(m > 0)
    assert J.shape == (len(m), 2)


def test_joint_margin_violated_at_limit():
    R = reach([math.pi - 0.01, 0.0], [0.0, 0.0])
    m, _ = joint_limit_margins(SPEC, R.q_pz, R.qd_pz, np.array([1.0, 0.0]))
    assert m.min() <= 0


def test_joint_margins_bracket_exact_bounds():
    rng = np.random.default_rng(0)
    R = reach(rng.uniform(-2, 2, 2), rng.uniform(-1, 1, 2))
    k = rng.uniform(-1, 1, 2)
    lim = JointLimitModel(SPEC, R.q_pz, R.qd_pz)
    m, _ = lim(k)
    exact = []
    for P, L in [(p, SPEC.q_lim[j]) for j, p in enumerate(R.q_pz)] + [(p, SPEC.qd_lim[j]) for j, p in
                                                                      enumerate(R.qd_pz)]:
        lo, hi = slice_k(P, k).bounds()
        exact.append(np.minimum(L[1] - hi[..., 0], lo[..., 0] - L[0]))
    exact = np.concatenate(exact)
    n_terms = max(part["n_groups"] for part in lim.parts)
    assert np.all(m <= exact + 1e-12)
    assert np.all(m >= exact - n_terms * lim.eps - 1e-12)


def test_joint_margin_gradient_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(5):
        R = reach(rng.uniform(-2, 2, 2), rng.uniform(-1.5, 1.5, 2))
        lim = JointLimitModel(SPEC, R.q_pz, R.qd_pz)
        k = rng.uniform(-0.9, 0.9, 2)
        _, J = lim(k)
        h = 1e-6
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            fd = (lim(k + e, False)[0] - lim(k - e, False)[0]) / (2 * h)
            err = np.abs(fd - J[:, j])
            assert np.all(err <= 1e-5 * np.maximum(np.abs(fd), 1e-3))


# -- collision margins ------------------------------------------------------

def test_empty_environment_has_no_constraints():
    for mode, model in (("exact", None), ("neural", random_model())):
        m, J = collision_margins(mode, model, [0, 0], [0, 0], [0, 0], [], 0.0, reach=reach([0, 0], [0, 0]))
        assert m.shape == (0,) and J.shape == (0, 2)


def test_exact_margin_negative_on_swept_point():
    rng = np.random.default_rng(2)
    for _ in range(10):
        q0, qd0, k = rng.uniform(-2, 2, 2), rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        t = rng.uniform(0, 1)
        q, _ = desired_traj_eval(TrajectoryParams(q0, qd0, k, SPEC.accel_scale()), t)
        V = link_box_vertices(SPEC, q)[int(rng.integers(2))]
        point = V.mean(axis=0)
        m, _ = collision_margins("exact", None, q0, qd0, k, [Obstacle(point, SIDE)], 0.0, reach=reach(q0, qd0),
                                 need_grad=False)
        assert m[0] < 0


def test_exact_margins_match_ground_truth_minus_delta():
    q0, qd0, k = np.array([0.4, -0.3]), np.array([0.2, 0.5]), np.array([-0.3, 0.6])
    obs = [Obstacle([0.3, 0.4], SIDE), Obstacle([-0.6, 0.1], 0.05)]
    m, J = collision_margins("exact", None, q0, qd0, k, obs, 0.03, reach=reach(q0, qd0))
    for o, mi in zip(obs, m):
        assert mi == pytest.approx(rdf_ground_truth(SPEC, q0, qd0, k, o).value - 0.03, abs=1e-12)
    assert J.shape == (2, 2) and np.all(np.isfinite(J))


def test_neural_margin_gradient_finite_differences():
    model = random_model(3)
    rng = np.random.default_rng(4)
    obs = [Obstacle(rng.uniform(-1, 1, 2), SIDE) for _ in range(3)]
    for _ in range(5):
        q0, qd0, k = rng.uniform(-2, 2, 2), rng.uniform(-1, 1, 2), rng.uniform(-0.9, 0.9, 2)
        m, J = collision_margins("neural", model, q0, qd0, k, obs, 0.03)
        X = np.concatenate([np.tile(np.concatenate([q0, qd0, k]), (3, 1)), [o.center for o in obs]], axis=1)
        np.testing.assert_allclose(m, mlp_forward(model, X).min(axis=1) - 0.03, atol=1e-15)
        h = 1e-6
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            fd = (collision_margins("neural", model, q0, qd0, k + e, obs, 0.03, need_grad=False)[0]
                  - collision_margins("neural", model, q0, qd0, k - e, obs, 0.03, need_grad=False)[0]) / (2 * h)
            assert np.all(np.abs(fd - J[:, j]) <= 1e-5 * np.maximum(np.abs(fd), 1e-3))


# -- one planning iteration -------------------------------------------------

def test_goal_at_start_gives_zero_k():
    p = PlanProblem(SPEC, [], [0.3, 0.2], [0.3, 0.2])
    k, evals, _ = solve_iteration(p, p.q_start, np.zeros(2), p.q_start)
    np.testing.assert_array_equal(k, np.zeros(2))
    assert evals == 1


def test_distant_obstacle_leaves_optimum_unchanged():
    q0, qd0, wp = np.array([0.0, 0.0]), np.array([0.3, 0.0]), np.array([0.4, 0.2])
    free = PlanProblem(SPEC, [], q0, wp)
    far = PlanProblem(SPEC, [Obstacle([0.97, -0.97], SIDE)], q0, wp)
    k_free, _, _ = solve_iteration(free, q0, qd0, wp)
    k_far, _, margin = solve_iteration(far, q0, qd0, wp)
    np.testing.assert_array_equal(k_far, k_free)
    np.testing.assert_array_equal(k_free, StepProblem(free, q0, qd0, wp).unconstrained())
    assert margin > 0


def radial_wall(angle, radii=np.linspace(0.15, 0.85, 9)):
    return [Obstacle([r * math.cos(angle), r * math.sin(angle)], SIDE) for r in radii]


def test_moving_arm_facing_a_wall_is_infeasible():
    # full speed toward a wall: even the hardest braking sweeps through it
    p = PlanProblem(SPEC, radial_wall(0.35), [0.0, 0.0], [1.0, 0.0], delta=0.0)
    k, evals, _ = solve_iteration(p, p.q_start, np.array([1.5, 0.0]), np.array([1.0, 0.0]))
    assert k is None
    assert evals <= p.max_evals


def test_solution_respects_all_margins():
    obs = [Obstacle([0.45, 0.35], SIDE), Obstacle([0.1, 0.7], SIDE)]
    p = PlanProblem(SPEC, obs, [0.0, 0.0], [1.2, 0.0], delta=0.01)
    q0, qd0, wp = np.zeros(2), np.array([0.6, 0.0]), np.array([0.9, 0.0])
    k, _, margin = solve_iteration(p, q0, qd0, wp)
    assert k is not None and np.all(np.abs(k) <= 1)
    sp = StepProblem(p, q0, qd0, wp)
    g, _ = sp.constraints(k, need_grad=False)
    assert g.min() >= 0 and margin == pytest.approx(g.min())


def test_evaluation_budget_is_respected():
    obs = radial_wall(0.4)
    p = PlanProblem(SPEC, obs, [0.0, 0.0], [1.0, 0.0], delta=0.0, max_evals=7)
    _, evals, _ = solve_iteration(p, p.q_start, np.array([0.5, 0.0]), np.array([0.8, 0.0]))
    assert evals <= 7


# -- receding horizon -------------------------------------------------------

def assert_at_rest(res):
    np.testing.assert_allclose(res.qd[-1], 0.0, atol=1e-12)


def test_free_space_nearby_goal_is_reached():
    p = PlanProblem(SPEC, [], [0.0, 0.0], [0.5, -0.4])
    res = receding_horizon(p)
    assert res.status == "reached"
    assert res.steps <= 4
    assert np.linalg.norm(res.q[-1] - p.q_goal) < GOAL_TOL + 0.1
    assert_at_rest(res)
    assert np.all(np.diff(res.t) > 0) and np.diff(res.t).max() <= EXEC_DT + 1e-12


def test_free_space_distance_to_goal_never_grows():
    rng = np.random.default_rng(5)
    for trial in range(6):
        start, goal = rng.uniform(-2.5, 2.5, 2), rng.uniform(-2.5, 2.5, 2)
        res = receding_horizon(PlanProblem(SPEC, [], start, goal, seed=trial))
        assert res.status == "reached"
        idx = np.round(np.arange(res.steps + 1) * T_PLAN / EXEC_DT).astype(int)
        d = np.linalg.norm(res.q[idx] - goal, axis=1)
        assert np.all(np.diff(d) <= 1e-12)
        assert_at_rest(res)


def test_start_equals_goal():
    res = receding_horizon(PlanProblem(SPEC, [], [0.2, 0.1], [0.2, 0.1]))
    assert res.status == "reached" and res.steps == 0
    assert_at_rest(res)


def test_pinned_arm_is_stuck_and_at_rest():
    # obstacle within the buffer of the resting arm: every k is infeasible
    tip = fk_point(SPEC, np.array([0.0, 0.0]))[1][1]
    obs = [Obstacle(tip + np.array([0.06, 0.0]), SIDE)]
    res = receding_horizon(PlanProblem(SPEC, obs, [0.0, 0.0], [1.5, 1.0], delta=0.05))
    assert res.status == "stuck" and res.steps == 2
    assert_at_rest(res)
    assert not res.violations


def test_blocked_goal_ends_at_rest():
    # the goal lies behind a wall reaching from the base to beyond the arm
    p = PlanProblem(SPEC, radial_wall(0.9), [0.0, 0.0], [1.8, 0.0], delta=0.0, max_steps=15)
    res = receding_horizon(p)
    assert res.status in ("stuck", "step-budget-exhausted")
    assert not res.violations
    assert_at_rest(res)


def test_overconfident_model_collides_and_is_reported():
    obs = [Obstacle([0.3 * math.cos(0.5), 0.3 * math.sin(0.5)], SIDE)]
    p = PlanProblem(SPEC, obs, [0.0, 0.0], [1.0, 0.0], mode="neural", model=constant_model(10.0), delta=0.03)
    res = receding_horizon(p)
    assert res.status == "collided"
    assert res.violations and all(o == 0 for _, _, o in res.violations)


def test_exact_mode_trials_have_no_violations():
    rng = np.random.default_rng(6)
    for trial in range(3):
        obs = [Obstacle(rng.uniform(-0.6, 0.6, 2), SIDE) for _ in range(2)]
        res = receding_horizon(PlanProblem(SPEC, obs, [0.0, 0.0], rng.uniform(-2, 2, 2), delta=0.0,
                                           max_steps=12, seed=trial))
        assert not res.violations and res.status != "collided"
        assert_at_rest(res)


# -- audit --------------------------------------------------------------------

def test_audit_stationary_far_is_empty():
    q = np.zeros((5, 2))
    assert collision_audit(SPEC, q, [Obstacle([0.0, 0.9], SIDE), Obstacle([-0.5, -0.5], SIDE)]) == []
    assert collision_audit(SPEC, q, []) == []


def test_audit_obstacle_on_link_midpoint():
    q = np.array([[0.3, -0.4]])
    for j, V in enumerate(link_box_vertices(SPEC, q)):
        hits = collision_audit(SPEC, q, [Obstacle(V[0].mean(axis=0), SIDE)])
        assert (0.0, j, 0) in hits


def test_audit_hits_imply_negative_reachability_distance():
    rng = np.random.default_rng(7)
    n_hits = 0
    n_cases = 0
    for _ in range(100):
        q0, qd0, k = rng.uniform(-2, 2, 2), rng.uniform(-1.5, 1.5, 2), rng.uniform(-1, 1, 2)
        ts = np.arange(0, 1.0 + 1e-12, EXEC_DT)
        q, _ = desired_traj_eval(TrajectoryParams(q0, qd0, k, SPEC.accel_scale()), ts)
        R = ReachSet.build(SPEC, q0, qd0)
        obs = []
        for _ in range(5):
            V = link_box_vertices(SPEC, q[int(rng.integers(len(ts)))])[int(rng.integers(2))]
            obs.append(Obstacle(V.mean(axis=0) + rng.normal(scale=0.06, size=2), SIDE))
        hits = {o for _, _, o in collision_audit(SPEC, q, obs, ts)}
        for i, o in enumerate(obs):
            n_cases += 1
            if i in hits:
                n_hits += 1
                assert rdf_ground_truth(SPEC, q0, qd0, k, o, reach=R).value < 0
    assert n_cases == 500 and n_hits > 50
