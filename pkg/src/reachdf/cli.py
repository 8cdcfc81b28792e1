"""Command-line entry points: gen-dataset, train, eval, plan and render.

Every subcommand reads a JSON config (``--config``) whose keys may be
overridden by flags.  Seeds must be given explicitly.  Exit codes: 0 on
success, 1 for configuration problems, 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arm import RobotSpec, planar_arm, spatial_arm
from .dataset import Dataset, sample_dataset
from .net import MlpModel, TrainConfig, TrainingDiverged, evaluate, input_normalization, train
from .planner import PlanProblem, collision_audit, receding_horizon
from .rdf import Obstacle, obstacle_side, rdf_ground_truth
from . import render

log = logging.getLogger("reachdf")

SPLITS = ("train", "val", "test")
MANIFEST = "manifest.json"


class ConfigError(Exception):
    """Bad or inconsistent configuration (exit code 1)."""


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class RunConfig:
    command: str
    params: dict = field(default_factory=dict)
    out: Path = Path(".")
    base: Path = Path(".")  # directory relative paths are resolved against

    def get(self, key, default=None):
        return self.params.get(key, default)

    def require(self, key):
        if key not in self.params or self.params[key] is None:
            raise ConfigError(f"{self.command}: missing required setting {key!r}")
        return self.params[key]

    def path(self, key, must_exist: bool = True) -> Path:
        p = Path(self.require(key))
        if not p.is_absolute():
            p = self.base / p
        if must_exist and not p.exists():
            raise ConfigError(f"{self.command}: {key} path {p} does not exist")
        return p

    @property
    def seed(self) -> int:
        s = self.require("seed")
        if not isinstance(s, int) or isinstance(s, bool) or s < 0:
            raise ConfigError("seed must be a non-negative integer")
        return s


def load_robot(value, base: Path = Path(".")) -> RobotSpec:
    """``{"kind": "planar"|"spatial", "n_q": n}`` or ``{"path": "spec.json"}``."""
    if isinstance(value, RobotSpec):
        return value
    if not isinstance(value, dict):
        raise ConfigError("robot must be an object")
    try:
        if "path" in value:
            p = Path(value["path"])
            p = p if p.is_absolute() else base / p
            return RobotSpec.from_json(p.read_text())
        kind, n_q = value.get("kind", "planar"), int(value.get("n_q", 2))
        if kind == "planar":
            return planar_arm(n_q)
        if kind == "spatial":
            return spatial_arm(n_q)
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot load robot: {exc}") from exc
    raise ConfigError(f"unknown robot kind {kind!r}")


def file_digest(*paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_manifest(directory: Path, kind: str) -> dict:
    try:
        m = json.loads((directory / MANIFEST).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"no readable {kind} manifest in {directory}: {exc}") from exc
    if m.get("kind") != kind:
        raise ConfigError(f"{directory} holds a {m.get('kind')!r} artifact, expected {kind!r}")
    return m


def _num(v: float) -> str:
    return repr(float(v))


# ---------------------------------------------------------------------------
# gen-dataset


def cmd_gen_dataset(cfg: RunConfig) -> dict:
    spec = load_robot(cfg.require("robot"), cfg.base)
    n_init, n_o = int(cfg.require("n_init")), int(cfg.get("n_o", 16))
    if n_init < 1 or n_o < 1:
        raise ConfigError("n_init and n_o must be positive")
    seed = cfg.seed
    side = float(cfg.get("side", obstacle_side(spec.n_q)))
    cfg.out.mkdir(parents=True, exist_ok=True)
    splits = sample_dataset(spec, n_init, n_o, seed, side=side, workers=int(cfg.get("workers", 1)))
    files = {}
    for name in SPLITS:
        path = cfg.out / f"{name}.rdf"
        getattr(splits, name).save(path)
        files[name] = {"records": len(getattr(splits, name)), "sha256": file_digest(path)}
    (cfg.out / "spec.json").write_text(spec.to_json() + "\n")
    manifest = {
        "kind": "dataset",
        "records": len(splits.train) + len(splits.val),
        "counts": {n: files[n]["records"] for n in SPLITS},
        "files": files,
        "seed": seed,
        "n_init": n_init,
        "n_o": n_o,
        "side": side,
        "spec_hash": spec.digest(),
    }
    write_json(cfg.out / MANIFEST, manifest)
    return manifest


def load_dataset_dir(directory: Path):
    m = read_manifest(directory, "dataset")
    spec = RobotSpec.from_json((directory / "spec.json").read_text())
    if spec.digest() != m["spec_hash"]:
        raise ConfigError("dataset spec.json does not match its manifest hash")
    data = {}
    for name in SPLITS:
        path = directory / f"{name}.rdf"
        if file_digest(path) != m["files"][name]["sha256"]:
            raise ConfigError(f"{path} does not match its manifest hash")
        try:
            data[name] = Dataset.load(path)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return spec, m, data


# ---------------------------------------------------------------------------
# train / eval


METRIC_COLUMNS = ["epoch", "train_loss", "val_loss", "val_mean_l1", "val_max_l1"]


def cmd_train(cfg: RunConfig) -> dict:
    data_dir = cfg.path("data")
    spec, dm, data = load_dataset_dir(data_dir)
    opts = dict(cfg.get("train", {}))
    opts["seed"] = cfg.seed
    try:
        tc = TrainConfig(**opts)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad training settings: {exc}") from exc
    shift, scale = input_normalization(spec)
    model = MlpModel.init(spec.n_q, spec.n_d, tc.width, np.random.default_rng(tc.seed), shift, scale)
    tr, va = data["train"], data["val"]
    best, metrics = train(model, (tr.X, tr.Y), (va.X, va.Y), tc,
                          log=lambda m: log.info("epoch %d val_loss %.6g val_mean_l1 %.6g", m.epoch, m.val_loss,
                                                 m.val_mean_l1))
    cfg.out.mkdir(parents=True, exist_ok=True)
    best.save(cfg.out / "model.bin")
    with open(cfg.out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for m in metrics:
            w.writerow([m.epoch, _num(m.train_loss), _num(m.val_loss), _num(m.val_mean_l1), _num(m.val_max_l1)])
    best_epoch = min(metrics, key=lambda m: m.val_loss).epoch
    manifest = {
        "kind": "model",
        "spec_hash": dm["spec_hash"],
        "data_manifest_sha256": file_digest(data_dir / MANIFEST),
        "model_sha256": file_digest(cfg.out / "model.bin"),
        "train": tc.to_dict(),
        "best_epoch": best_epoch,
    }
    (cfg.out / "spec.json").write_text(spec.to_json() + "\n")
    write_json(cfg.out / MANIFEST, manifest)
    return manifest


def load_model_dir(directory: Path):
    m = read_manifest(directory, "model")
    path = directory / "model.bin"
    if file_digest(path) != m["model_sha256"]:
        raise ConfigError(f"{path} does not match its manifest hash")
    try:
        return MlpModel.load(path), m
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def cmd_eval(cfg: RunConfig) -> dict:
    model, mm = load_model_dir(cfg.path("model"))
    spec, dm, data = load_dataset_dir(cfg.path("data"))
    if mm["spec_hash"] != dm["spec_hash"] or model.n_q != spec.n_q or model.n_d != spec.n_d:
        raise ConfigError("model and dataset were built for different robots")
    split = cfg.get("split", "test")
    if split not in SPLITS:
        raise ConfigError(f"split must be one of {SPLITS}")
    d = data[split]
    res = evaluate(model, d.X, d.Y)
    cfg.out.mkdir(parents=True, exist_ok=True)
    with open(cfg.out / "eval.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["split", "records", "mean_l1", "max_l1"]
                   + [f"link{j}_mean_l1" for j in range(spec.n_q)] + [f"link{j}_max_l1" for j in range(spec.n_q)])
        w.writerow([split, len(d), _num(res.mean_l1), _num(res.max_l1)]
                   + [_num(v) for v in res.per_link_mean] + [_num(v) for v in res.per_link_max])
    return {"split": split, "records": len(d), "mean_l1": res.mean_l1, "max_l1": res.max_l1}


# ---------------------------------------------------------------------------
# plan


@dataclass
class Scene:
    obstacles: list
    q_start: np.ndarray
    q_goal: np.ndarray

    def to_dict(self) -> dict:
        return {
            "obstacles": [{"center": o.center.tolist(), "side": o.side} for o in self.obstacles],
            "q_start": self.q_start.tolist(),
            "q_goal": self.q_goal.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls([Obstacle(o["center"], o["side"]) for o in d["obstacles"]], np.asarray(d["q_start"], float),
                   np.asarray(d["q_goal"], float))


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, trial]))


def configuration_clear(spec: RobotSpec, q, obstacles, clearance: float) -> bool:
    """True when no link box comes within ``clearance`` of any obstacle at ``q``."""
    grown = [Obstacle(o.center, o.side + 2.0 * clearance) for o in obstacles]
    return not collision_audit(spec, np.asarray(q)[None], grown)


def sample_scene(spec: RobotSpec, n_obstacles: int, rng: np.random.Generator, clearance: float,
                 side: float | None = None, max_tries: int = 1000) -> Scene:
    """Random start/goal within the joint limits and obstacles in ``[-1, 1]^n_d``.

    Scenes whose start or goal pose lies within ``clearance`` of an obstacle
    are rejected and redrawn, so every trial begins from a feasible state.
    """
    side = obstacle_side(spec.n_q) if side is None else side
    lo, hi = spec.q_lim[:, 0], spec.q_lim[:, 1]
    for _ in range(max_tries):
        q_start = rng.uniform(lo, hi)
        q_goal = rng.uniform(lo, hi)
        obs = [Obstacle(c, side) for c in rng.uniform(-1.0, 1.0, (n_obstacles, spec.n_d))]
        if configuration_clear(spec, q_start, obs, clearance) and configuration_clear(spec, q_goal, obs, clearance):
            return Scene(obs, q_start, q_goal)
    raise RuntimeError("could not sample a feasible scene")


@dataclass
class TrialOutcome:
    trial: int
    status: str
    steps: int
    min_margin: float
    evaluations: int
    violations: int
    mean_solve_time: float
    final_speed: float


def run_trial(args) -> TrialOutcome:
    trial, spec, scene, opts, model = args
    problem = PlanProblem(spec, scene.obstacles, scene.q_start, scene.q_goal, model=model, seed=trial, **opts)
    res = receding_horizon(problem)
    return TrialOutcome(trial, res.status, res.steps, res.min_margin, sum(r.evaluations for r in res.records),
                        len(res.violations), res.mean_solve_time, float(np.abs(res.qd[-1]).max()))


def cmd_plan(cfg: RunConfig) -> dict:
    spec = load_robot(cfg.get("robot", {"kind": "planar", "n_q": 2}), cfg.base)
    mode = cfg.get("mode", "exact")
    if mode not in ("exact", "neural"):
        raise ConfigError("mode must be 'exact' or 'neural'")
    trials = int(cfg.get("trials", 10))
    n_obs = int(cfg.get("n_obstacles", 2))
    delta = float(cfg.get("delta", 0.03 if mode == "neural" else 0.0))
    if trials < 0 or n_obs < 0 or delta < 0:
        raise ConfigError("trials, n_obstacles and delta must be non-negative")
    seed = cfg.seed
    model = None
    if mode == "neural":
        model, mm = load_model_dir(cfg.path("model"))
        if mm["spec_hash"] != spec.digest():
            raise ConfigError("model was trained for a different robot")
    opts = {"mode": mode, "delta": delta, "time_limit": cfg.get("time_limit")}
    for key in ("max_steps", "max_evals", "outer_iters", "inner_iters", "bisections"):
        if cfg.get(key) is not None:
            opts[key] = int(cfg.get(key))
    try:
        PlanProblem(spec, [], np.zeros(spec.n_q), np.zeros(spec.n_q), model=model, **opts)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad planner settings: {exc}") from exc
    clearance = float(cfg.get("clearance", delta))
    scenes = [sample_scene(spec, n_obs, trial_rng(seed, t), clearance) for t in range(trials)]
    jobs = [(t, spec, s, opts, model) for t, s in enumerate(scenes)]
    workers = int(cfg.get("workers", 1))
    if workers > 1:
        from multiprocessing import Pool

        with Pool(workers) as pool:
            outcomes = pool.map(run_trial, jobs, chunksize=1)
    else:
        outcomes = [run_trial(j) for j in jobs]
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_json(cfg.out / "scenes.json", {"seed": seed, "spec_hash": spec.digest(),
                                         "scenes": [s.to_dict() for s in scenes]})
    with open(cfg.out / "trials.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "status", "steps", "min_margin", "evaluations", "violations"])
        for o in outcomes:
            w.writerow([o.trial, o.status, o.steps, _num(o.min_margin), o.evaluations, o.violations])
    # wall-clock figures vary run to run, so they live apart from the reproducible results
    with open(cfg.out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "mean_solve_time"])
        for o in outcomes:
            w.writerow([o.trial, f"{o.mean_solve_time:.6f}"])
    counts = {s: sum(o.status == s for o in outcomes) for s in ("reached", "stuck", "collided",
                                                                  "step-budget-exhausted")}
    summary = {
        "mode": mode,
        "trials": trials,
        "n_obstacles": n_obs,
        "delta": delta,
        "seed": seed,
        "counts": counts,
        "success_rate": counts["reached"] / trials if trials else 0.0,
        "violations": sum(o.violations for o in outcomes),
        "spec_hash": spec.digest(),
    }
    write_json(cfg.out / "summary.json", summary)
    if cfg.get("render", False):
        for s_i, s in enumerate(scenes):
            render.write_svg(render.arm_scene(spec, s.q_start, s.obstacles, title=f"trial {s_i}"),
                             cfg.out / f"trial{s_i:03d}.svg")
    summary["outcomes"] = outcomes
    return summary


# ---------------------------------------------------------------------------
# render


def cmd_render(cfg: RunConfig) -> dict:
    spec = load_robot(cfg.get("robot", {"kind": "planar", "n_q": 2}), cfg.base)
    n_q = spec.n_q
    vec = lambda key: np.asarray(cfg.get(key, [0.0] * n_q), dtype=float)
    q0, qd0, k = vec("q0"), vec("qd0"), vec("k")
    if not (len(q0) == len(qd0) == len(k) == n_q):
        raise ConfigError("q0, qd0 and k need one entry per joint")
    try:
        obstacles = [Obstacle(o["center"], o["side"]) for o in cfg.get("obstacles", [])]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad obstacle list: {exc}") from exc
    if any(o.dim != spec.n_d for o in obstacles):
        raise ConfigError("obstacle dimension does not match the robot")
    side = float(cfg.get("side", obstacle_side(n_q)))
    hulls = []
    if cfg.get("hulls", False):
        hulls = rdf_ground_truth(spec, q0, qd0, k, Obstacle(np.zeros(spec.n_d), side)).polytopes
    contours = []
    kind = cfg.get("field")
    if kind is not None:
        if spec.n_d != 2:
            raise ConfigError("zero-level contours are drawn for planar robots only")
        if kind == "exact":
            f = render.exact_field(spec, q0, qd0, k, side)
        elif kind == "model":
            model, _ = load_model_dir(cfg.path("model"))
            f = render.model_field(model, q0, qd0, k)
        else:
            raise ConfigError("field must be 'exact' or 'model'")
        contours = render.zero_level_contour(f, int(cfg.get("grid", render.GRID)))
    scene = render.arm_scene(spec, q0, obstacles, hulls, contours, title=cfg.get("title", ""))
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / cfg.get("name", "scene.svg")
    render.write_svg(scene, path)
    return {"svg": str(path), "contours": len(contours), "hulls": len(hulls)}


# ---------------------------------------------------------------------------
# entry point


COMMANDS = {
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "plan": cmd_plan,
    "render": cmd_render,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reachdf", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="JSON settings file")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", type=Path, default=Path("."))
        if name in ("plan", "render"):
            s.add_argument("--mode", choices=["neural", "exact"])
        if name == "plan":
            s.add_argument("--trials", type=int)
            s.add_argument("--time-limit", dest="time_limit", type=float)
    return p


def make_config(args: argparse.Namespace) -> RunConfig:
    params, base = {}, Path(".")
    if args.config is not None:
        try:
            params = json.loads(args.config.read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(params, dict):
            raise ConfigError("config must be a JSON object")
        base = args.config.resolve().parent
    for key in ("seed", "mode", "trials", "time_limit"):
        v = getattr(args, key, None)
        if v is not None:
            params[key] = v
    return RunConfig(args.command, params, args.out, base)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        result = COMMANDS[args.command](make_config(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (TrainingDiverged, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command == "plan":
        result = {k: v for k, v in result.items() if k != "outcomes"}
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
