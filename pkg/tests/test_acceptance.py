"""Acceptance criteria 1-9, each printing one PASS/FAIL line.

The 2-DOF dataset and trained model (criteria 6 to 8) are expensive, so they
are cached on disk under a key that hashes their configuration and the
source files that produce them.  Set ``REACHDF_CACHE`` to relocate the cache;
delete it to force regeneration.
"""

from __future__ import annotations

import json
import math
import shutil
import time

import numpy as np
import pytest

from artifact_cache import key
from oracles import (
    box_polygon,
    monte_carlo_overlap,
    polygon_from_generators,
    quad_signed_distance_batch,
    sample_polygon_boundary,
    sampled_signed_distance,
)
from reachdf.arm import (
    ReachSet,
    TrajectoryParams,
    desired_traj_eval,
    link_box_vertices,
    planar_arm,
)
from reachdf.cli import main as cli_main
from reachdf.cli import run_trial, sample_scene, trial_rng
from reachdf.dataset import Dataset, sample_dataset
from reachdf.geometry import convex_hull, penetration_distance, zono_intersects, zono_signed_distance
from reachdf.net import (
    MlpModel,
    TrainConfig,
    evaluate,
    input_normalization,
    loss,
    mlp_forward,
    mlp_input_grad,
    train,
)
from reachdf.planner import JointLimitModel, collision_margins
from reachdf.pz import Zonotope
from reachdf.rdf import Obstacle, obstacle_side, rdf_ground_truth

pytestmark = pytest.mark.acceptance

SPEC2 = planar_arm(2)
CCW = [0, 2, 3, 1]  # sign-enumeration corner order -> counter-clockwise


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")

    return emit


# ---------------------------------------------------------------------------
# 1. Zonotope signed distance vs boundary sampling


def test_criterion_1_zonotope_distance(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(1000):
        Z = [Zonotope(rng.uniform(-1.5, 1.5, 2), rng.normal(scale=0.4, size=(int(rng.integers(1, 5)), 2)))
             for _ in range(2)]
        ref = sampled_signed_distance(*(polygon_from_generators(z.center, z.generators) for z in Z))
        worst = max(worst, abs(zono_signed_distance(*Z) - ref))
    box = lambda c, h: Zonotope(c, np.diag(h))
    hand = [
        (box([0, 0], [0.5, 0.5]), box([3, 0], [0.5, 0.5]), 2.0),
        (box([0, 0], [1, 1]), box([1, 0], [1, 1]), -1.0),
        (box([0, 0], [1, 0.5]), box([0, 2], [0.5, 0.5]), 1.0),
        (box([0, 0], [1, 1]), box([0.5, 0.25], [0.25, 0.25]), -0.75),
        (box([0, 0], [0.5, 0.5]), box([3, 4], [0.5, 0.5]), math.hypot(2, 3)),
    ]
    hand_err = max(abs(zono_signed_distance(a, b) - d) for a, b, d in hand)
    elapsed = time.perf_counter() - t0
    ok = worst <= 2e-2 and hand_err <= 1e-12 and elapsed < 60
    report(1, ok, f"1000 pairs max |d - sampled| = {worst:.2e} (<= 2e-2), hand cases max err {hand_err:.1e} "
                  f"(<= 1e-12), {elapsed:.1f} s (< 60 s)")
    assert ok


# ---------------------------------------------------------------------------
# 2. Overapproximation of sampled link boxes


def test_criterion_2_overapproximation(report):
    rng = np.random.default_rng(102)
    ts = np.linspace(0.0, 1.0, 1000)
    checked = missed = 0
    for _ in range(500):
        q0 = rng.uniform(SPEC2.q_lim[:, 0], SPEC2.q_lim[:, 1])
        qd0 = rng.uniform(SPEC2.qd_lim[:, 0], SPEC2.qd_lim[:, 1])
        k = rng.uniform(-1, 1, 2)
        reach = ReachSet.build(SPEC2, q0, qd0)
        q, _ = desired_traj_eval(TrajectoryParams(q0, qd0, k, SPEC2.accel_scale()), ts)
        cells = reach.grid.cell_of(ts)
        for Z, V in zip(reach.sliced(k), link_box_vertices(SPEC2, q)):
            lo, hi = Z.bounds()
            inside = (V >= lo[cells][:, None] - 1e-9) & (V <= hi[cells][:, None] + 1e-9)
            checked += V.shape[0] * V.shape[1]
            missed += int((~inside.all(axis=-1)).sum())
    ok = missed == 0
    report(2, ok, f"{checked} sampled link-box vertices, {missed} outside their sliced FO bounds")
    assert ok


# ---------------------------------------------------------------------------
# 3. Conservativeness


def sampled_min_distance(spec, q0, qd0, k, obstacle, n_t=1000):
    q, _ = desired_traj_eval(TrajectoryParams(q0, qd0, k, spec.accel_scale()), np.linspace(0, 1, n_t))
    S = box_polygon(obstacle.center, np.eye(2), np.full(2, obstacle.side / 2))
    return min(quad_signed_distance_batch(V[:, CCW], S).min() for V in link_box_vertices(spec, q))


def test_criterion_3_conservativeness(report):
    rng = np.random.default_rng(103)
    side = obstacle_side(2)
    free = worst = 0
    worst = -math.inf
    while free < 500:
        q0, qd0 = rng.uniform(-math.pi, math.pi, 2), rng.uniform(-math.pi / 2, math.pi / 2, 2)
        k = rng.uniform(-1, 1, 2)
        obs = Obstacle(rng.uniform(-1, 1, 2), side)
        truth = sampled_min_distance(SPEC2, q0, qd0, k, obs)
        if truth <= 0:
            continue
        free += 1
        r = rdf_ground_truth(SPEC2, q0, qd0, k, obs).value
        worst = max(worst, r - truth)
    negative = 0
    for _ in range(100):
        q0, qd0 = rng.uniform(-math.pi, math.pi, 2), rng.uniform(-math.pi / 2, math.pi / 2, 2)
        k = rng.uniform(-1, 1, 2)
        q, _ = desired_traj_eval(TrajectoryParams(q0, qd0, k, SPEC2.accel_scale()), rng.uniform(0, 1))
        V = link_box_vertices(SPEC2, q)[int(rng.integers(2))]
        point = V[rng.dirichlet(np.ones(4)) .argmax()] * 0.3 + V.mean(axis=0) * 0.7
        negative += rdf_ground_truth(SPEC2, q0, qd0, k, Obstacle(point, side)).value < 0
    ok = worst <= 1e-9 and negative == 100
    report(3, ok, f"500 free cases: max (r - sampled distance) = {worst:.2e} (<= 1e-9); "
                  f"{negative}/100 colliding cases with r < 0")
    assert ok


# ---------------------------------------------------------------------------
# 4. Penetration depth and intersection tests


def test_criterion_4_penetration_and_intersection(report):
    rng = np.random.default_rng(104)
    pen_err = formula_err = 0.0
    for _ in range(500):
        P = convex_hull(rng.normal(size=(int(rng.integers(4, 12)), 2)))
        c = rng.dirichlet(np.ones(len(P.vertices))) @ P.vertices
        formula = -np.max((P.A @ c - P.b) / np.linalg.norm(P.A, axis=1))
        ref = np.linalg.norm(sample_polygon_boundary(P.vertices, 4000) - c, axis=1).min()
        d = penetration_distance(c, P)
        formula_err = max(formula_err, abs(d - formula))
        pen_err = max(pen_err, abs(d - ref))
    agree = 0
    for _ in range(1000):
        Z = [Zonotope(rng.uniform(-1.5, 1.5, 2), rng.normal(scale=0.4, size=(int(rng.integers(2, 5)), 2)))
             for _ in range(2)]
        V = [polygon_from_generators(z.center, z.generators) for z in Z]
        agree += zono_intersects(*Z) == monte_carlo_overlap(*V, rng, n=200_000)
    ok = pen_err <= 2e-2 and formula_err <= 1e-12 and agree == 1000
    report(4, ok, f"penetration vs boundary sampling max err {pen_err:.2e} (<= 2e-2), vs halfspace formula "
                  f"{formula_err:.1e}; intersection agrees with Monte Carlo on {agree}/1000")
    assert ok


# ---------------------------------------------------------------------------
# 5. Gradients


def rel_err(a, b, floor):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor)))


def test_criterion_5_gradients(report):
    rng = np.random.default_rng(105)
    model = MlpModel.init(2, 2, 32, rng)
    model.biases = [b + 0.1 * rng.normal(size=b.shape) for b in model.biases]
    X, Y = rng.normal(size=(16, 8)), rng.normal(size=(16, 2))
    _, _, grads = loss(model, X, Y, alpha=0.5)
    params = model.params()
    w_err = 0.0
    for _ in range(50):
        li = int(rng.integers(len(params)))
        idx = tuple(int(rng.integers(s)) for s in params[li].shape)
        old = params[li][idx]
        params[li][idx] = old + 1e-6
        lp = loss(model, X, Y, 0.5, need_grad=False)[0]
        params[li][idx] = old - 1e-6
        lm = loss(model, X, Y, 0.5, need_grad=False)[0]
        params[li][idx] = old
        w_err = max(w_err, rel_err(grads[li][idx], (lp - lm) / 2e-6, 1e-6))

    _, J = mlp_input_grad(model, X)
    x_err = 0.0
    for c_i, col in enumerate(model.obstacle_cols):
        E = np.zeros_like(X)
        E[:, col] = 1e-5
        fd = (mlp_forward(model, X + E) - mlp_forward(model, X - E)) / 2e-5
        x_err = max(x_err, rel_err(J[..., c_i], fd, 1e-4))

    jl_err = nn_err = 0.0
    obs = [Obstacle(rng.uniform(-1, 1, 2), obstacle_side(2)) for _ in range(3)]
    for _ in range(5):
        q0, qd0, k = rng.uniform(-2, 2, 2), rng.uniform(-1.5, 1.5, 2), rng.uniform(-0.9, 0.9, 2)
        reach = ReachSet.build(SPEC2, q0, qd0)
        lim = JointLimitModel(SPEC2, reach.q_pz, reach.qd_pz)
        _, Jl = lim(k)
        _, Jn = collision_margins("neural", model, q0, qd0, k, obs, 0.03)
        for j in range(2):
            e = np.zeros(2)
            e[j] = 1e-6
            fd = (lim(k + e, False)[0] - lim(k - e, False)[0]) / 2e-6
            jl_err = max(jl_err, rel_err(Jl[:, j], fd, 1e-3))
            fd = (collision_margins("neural", model, q0, qd0, k + e, obs, 0.03, need_grad=False)[0]
                  - collision_margins("neural", model, q0, qd0, k - e, obs, 0.03, need_grad=False)[0]) / 2e-6
            nn_err = max(nn_err, rel_err(Jn[:, j], fd, 1e-3))
    ok = w_err <= 1e-4 and x_err <= 1e-6 and jl_err <= 1e-5 and nn_err <= 1e-5
    report(5, ok, f"weights {w_err:.1e} (<= 1e-4), inputs {x_err:.1e} (<= 1e-6), joint limits {jl_err:.1e} "
                  f"and neural constraints {nn_err:.1e} (<= 1e-5), relative to central differences")
    assert ok


# ---------------------------------------------------------------------------
# 6. Accuracy of the trained surrogate (cached artifacts)

DATA_CONFIG = {"n_q": 2, "n_init": 6250, "n_o": 16, "seed": 0}
TRAIN_CONFIG = TrainConfig(width=128, epochs=50, batch_size=64, seed=0)
DATA_SOURCES = ["pz.py", "arm.py", "geometry.py", "rdf.py", "dataset.py"]
MODEL_SOURCES = DATA_SOURCES + ["net.py"]


@pytest.fixture(scope="module")
def dataset_splits():
    d = key("data", DATA_CONFIG, DATA_SOURCES)
    if not (d / "meta.json").exists():
        d.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        s = sample_dataset(planar_arm(2), DATA_CONFIG["n_init"], DATA_CONFIG["n_o"], DATA_CONFIG["seed"])
        for name in ("train", "val", "test"):
            getattr(s, name).save(d / f"{name}.rdf")
        (d / "meta.json").write_text(json.dumps({"seconds": time.perf_counter() - t0}))
    return {name: Dataset.load(d / f"{name}.rdf") for name in ("train", "val", "test")}


@pytest.fixture(scope="module")
def trained(dataset_splits):
    d = key("model", {"data": DATA_CONFIG, "train": TRAIN_CONFIG.to_dict()}, MODEL_SOURCES)
    if not (d / "meta.json").exists():
        d.mkdir(parents=True, exist_ok=True)
        tr, va = dataset_splits["train"], dataset_splits["val"]
        shift, scale = input_normalization(SPEC2)
        model = MlpModel.init(2, 2, TRAIN_CONFIG.width, np.random.default_rng(TRAIN_CONFIG.seed), shift, scale)
        t0 = time.perf_counter()
        best, metrics = train(model, (tr.X, tr.Y), (va.X, va.Y), TRAIN_CONFIG)
        seconds = time.perf_counter() - t0
        best.save(d / "model.bin")
        (d / "meta.json").write_text(json.dumps({"train_seconds": seconds,
                                                 "val_mean_l1": [m.val_mean_l1 for m in metrics]}))
    meta = json.loads((d / "meta.json").read_text())
    return MlpModel.load(d / "model.bin"), meta


def test_criterion_6_accuracy(report, dataset_splits, trained):
    model, meta = trained
    te = dataset_splits["test"]
    res = evaluate(model, te.X, te.Y)
    n = len(dataset_splits["train"]) + len(dataset_splits["val"])
    ok = n == 100_000 and res.mean_l1 <= 0.01 and meta["train_seconds"] <= 1800
    report(6, ok, f"{n} records, held-out mean L1 {100 * res.mean_l1:.3f} cm (<= 1.0 cm, max "
                  f"{100 * res.max_l1:.2f} cm), training {meta['train_seconds'] / 60:.1f} min (<= 30 min)")
    assert ok


# ---------------------------------------------------------------------------
# 7. Inference speed


def test_criterion_7_speed(report):
    rng = np.random.default_rng(107)
    model = MlpModel.init(2, 2, 128, rng)
    x = rng.normal(size=(1, 8))
    mlp_input_grad(model, x)
    times = []
    for _ in range(200):
        t0 = time.perf_counter()
        mlp_input_grad(model, x)
        times.append(time.perf_counter() - t0)
    nn_ms = 1e3 * float(np.median(times))
    times = []
    for _ in range(10):
        q0, qd0, k = rng.uniform(-2, 2, 2), rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        obs = Obstacle(rng.uniform(-1, 1, 2), obstacle_side(2))
        t0 = time.perf_counter()
        rdf_ground_truth(SPEC2, q0, qd0, k, obs)
        times.append(time.perf_counter() - t0)
    exact_ms = 1e3 * float(np.median(times))
    ok = nn_ms <= 5.0 and exact_ms <= 200.0
    report(7, ok, f"network value + input gradient {nn_ms:.2f} ms (<= 5 ms); exact distance including reachable "
                  f"set construction, n_t = 100: {exact_ms:.0f} ms (<= 200 ms); median timings")
    assert ok


# ---------------------------------------------------------------------------
# 8. Planning safety


def run_suite(mode, n_obstacles, trials, model=None, delta=0.0, seed=0, **opts):
    outcomes = []
    for t in range(trials):
        scene = sample_scene(SPEC2, n_obstacles, trial_rng(seed, t), clearance=delta)
        outcomes.append(run_trial((t, SPEC2, scene, {"mode": mode, "delta": delta, **opts}, model)))
    return outcomes


def test_criterion_8_planning(report, trained):
    model, _ = trained
    free = run_suite("exact", 0, 20, seed=8)
    exact = run_suite("exact", 2, 100, seed=80, max_steps=60)
    neural = run_suite("neural", 2, 100, model=model, delta=0.03, seed=81)
    free_ok = sum(o.status == "reached" for o in free)
    ex_v = sum(o.violations for o in exact)
    nn_v = sum(o.violations for o in neural)
    nn_ok = sum(o.status == "reached" for o in neural)
    rest = all(o.final_speed <= 1e-12 for o in free + exact + neural)
    ok = free_ok == 20 and ex_v == 0 and nn_v == 0 and nn_ok >= 40 and rest
    report(8, ok, f"free space {free_ok}/20 reached; exact mode 100 trials, {ex_v} audit violations "
                  f"({sum(o.status == 'reached' for o in exact)} reached); neural mode (3 cm buffer) {nn_v} "
                  f"violations, {nn_ok}/100 reached (>= 40); all trials end at rest: {rest}")
    assert ok


# ---------------------------------------------------------------------------
# 9. Determinism of the command-line artifacts


def test_criterion_9_determinism(report, tmp_path):
    (tmp_path / "gen.json").write_text(json.dumps({"robot": {"kind": "planar", "n_q": 2}, "n_init": 4, "n_o": 16}))
    (tmp_path / "train.json").write_text(json.dumps({"data": "data", "train": {"epochs": 2, "width": 16,
                                                                                "batch_size": 16}}))
    (tmp_path / "plan.json").write_text(json.dumps({"n_obstacles": 2, "max_steps": 8}))
    runs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert cli_main(["gen-dataset", "--config", str(tmp_path / "gen.json"), "--seed", "9",
                         "--out", str(out / "data")]) == 0
        # the training config names its dataset relative to the config file
        shutil.copytree(out / "data", tmp_path / "data", dirs_exist_ok=True)
        assert cli_main(["train", "--config", str(tmp_path / "train.json"), "--seed", "9",
                         "--out", str(out / "model")]) == 0
        assert cli_main(["plan", "--config", str(tmp_path / "plan.json"), "--seed", "9", "--trials", "3",
                         "--out", str(out / "plan")]) == 0
        files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "timing.csv")
        runs.append({str(p.relative_to(out)): p.read_bytes() for p in files})
    same = runs[0] == runs[1]
    report(9, same, f"two runs of gen-dataset, train and plan with fixed seeds: {len(runs[1])} artifacts "
                    f"{'byte-identical' if same else 'differ'} (wall-clock timing.csv excluded)")
    assert same
