"""Labelled datasets of (trajectory, obstacle) -> per-link reachability distance."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .arm import ReachSet, RobotSpec, TimeGrid
from .rdf import obstacle_side, rdf_many

DATA_MAGIC = b"RDF1"
DATA_VERSION = 1
TRAIN_FRACTION = 0.8
HEADER = struct.Struct("<4sIIIQ")


@dataclass
class Dataset:
    X: np.ndarray  # (N, 3 n_q + n_d)
    Y: np.ndarray  # (N, n_q)
    n_q: int
    n_d: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.X.shape[1] != 3 * self.n_q + self.n_d or self.Y.shape[1] != self.n_q:
            raise ValueError("record widths do not match n_q/n_d")
        if len(self.X) != len(self.Y):
            raise ValueError("X and Y lengths differ")
        if not np.all(np.isfinite(self.Y)):
            raise ValueError("labels must be finite")

    def __len__(self) -> int:
        return len(self.X)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.Y[idx], self.n_q, self.n_d)

    def as_float32(self) -> "Dataset":
        """Values as they are stored on disk."""
        return Dataset(self.X.astype(np.float32), self.Y.astype(np.float32), self.n_q, self.n_d)

    # -- binary file --------------------------------------------------------

    def to_bytes(self) -> bytes:
        rec = np.concatenate([self.X, self.Y], axis=1).astype("<f4")
        return HEADER.pack(DATA_MAGIC, DATA_VERSION, self.n_q, self.n_d, len(self)) + rec.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Dataset":
        magic, version, n_q, n_d, count = HEADER.unpack_from(blob)
        if magic != DATA_MAGIC:
            raise ValueError("not an RDF1 dataset file")
        if version != DATA_VERSION:
            raise ValueError(f"unsupported dataset version {version}")
        width = 4 * n_q + n_d
        rec = np.frombuffer(blob, dtype="<f4", offset=HEADER.size)
        if rec.size != count * width:
            raise ValueError("record count does not match file size")
        rec = rec.reshape(count, width).astype(np.float64)
        return cls(rec[:, : 3 * n_q + n_d], rec[:, 3 * n_q + n_d:], n_q, n_d)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def to_csv(self, path) -> None:
        n_q, n_d = self.n_q, self.n_d
        names = (
            [f"q0_{j}" for j in range(n_q)]
            + [f"qd0_{j}" for j in range(n_q)]
            + [f"k_{j}" for j in range(n_q)]
            + [f"c_{a}" for a in "xyz"[:n_d]]
            + [f"r_{j}" for j in range(n_q)]
        )
        rec = np.concatenate([self.X, self.Y], axis=1).astype(np.float32)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for row in rec:
                w.writerow([repr(float(v)) for v in row])


@dataclass
class DatasetSplits:
    train: Dataset
    val: Dataset
    test: Dataset


def _label_block(args):
    spec, q0, qd0, k, centers, side, grid = args
    reach = ReachSet.build(spec, q0, qd0, grid)
    return rdf_many(spec, q0, qd0, k, centers, side, reach=reach)


def label_records(spec: RobotSpec, init: np.ndarray, centers: np.ndarray, side: float,
                  grid: TimeGrid | None = None, workers: int = 1, progress=None) -> np.ndarray:
    """Labels ``(n_init, n_o, n_q)`` for initial conditions ``init = (q0|qd0|k)``."""
    n_q = spec.n_q
    jobs = [(spec, s[:n_q], s[n_q:2 * n_q], s[2 * n_q:], c, side, grid) for s, c in zip(init, centers)]
    out = []
    if workers > 1:
        from multiprocessing import Pool

        with Pool(workers) as pool:
            # imap keeps results in submission order whatever the scheduling
            for i, r in enumerate(pool.imap(_label_block, jobs, chunksize=4)):
                out.append(r)
                if progress:
                    progress(i + 1, len(jobs))
    else:
        for i, job in enumerate(jobs):
            out.append(_label_block(job))
            if progress:
                progress(i + 1, len(jobs))
    return np.stack(out) if out else np.zeros((0, centers.shape[1], n_q))


def sample_inputs(spec: RobotSpec, n_init: int, n_o: int, rng: np.random.Generator):
    """Uniform initial conditions within the limits and obstacle centers in [-1, 1]^n_d."""
    lo_q, hi_q = spec.q_lim[:, 0], spec.q_lim[:, 1]
    lo_v, hi_v = spec.qd_lim[:, 0], spec.qd_lim[:, 1]
    q0 = rng.uniform(lo_q, hi_q, (n_init, spec.n_q))
    qd0 = rng.uniform(lo_v, hi_v, (n_init, spec.n_q))
    k = rng.uniform(-1.0, 1.0, (n_init, spec.n_q))
    centers = rng.uniform(-1.0, 1.0, (n_init, n_o, spec.n_d))
    # inputs are stored as float32, so label exactly what will be stored
    f32 = lambda a: a.astype(np.float32).astype(np.float64)
    return f32(np.concatenate([q0, qd0, k], axis=1)), f32(centers)


def build_records(spec, init, centers, labels) -> Dataset:
    n_init, n_o = centers.shape[:2]
    X = np.concatenate([np.repeat(init, n_o, axis=0), centers.reshape(n_init * n_o, spec.n_d)], axis=1)
    return Dataset(X, labels.reshape(n_init * n_o, spec.n_q), spec.n_q, spec.n_d)


def sample_dataset(spec: RobotSpec, n_init: int, n_o: int, seed: int, side: float | None = None,
                   grid: TimeGrid | None = None, workers: int = 1, progress=None) -> DatasetSplits:
    """``n_init * n_o`` labelled records split 80/20, plus a test set the size of the validation split.

    Inputs are drawn at float32 precision so stored records relabel exactly;
    labels stay float64 in memory and are rounded only when written.
    """
    side = obstacle_side(spec.n_q) if side is None else side
    main_ss, test_ss, split_ss = np.random.SeedSequence(seed).spawn(3)
    init, centers = sample_inputs(spec, n_init, n_o, np.random.default_rng(main_ss))
    data = build_records(spec, init, centers, label_records(spec, init, centers, side, grid, workers, progress))
    n = len(data)
    n_train = int(round(TRAIN_FRACTION * n))
    perm = np.random.default_rng(split_ss).permutation(n)
    train, val = data.subset(perm[:n_train]), data.subset(perm[n_train:])
    n_test = len(val)
    test_init = -(-n_test // n_o) if n_test else 0
    ti, tc = sample_inputs(spec, test_init, n_o, np.random.default_rng(test_ss))
    test = build_records(spec, ti, tc, label_records(spec, ti, tc, side, grid, workers, progress)).subset(
        slice(0, n_test)
    )
    return DatasetSplits(train, val, test)
