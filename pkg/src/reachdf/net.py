"""Numpy MLP surrogate for the reachability distance.

The network maps ``x = (q0, qd0, k, c_O)`` to one distance per link.  Eight
softplus hidden layers; the (normalized) input is concatenated onto the
fourth hidden activation.  Input Jacobians with respect to ``c_O`` are
propagated in forward mode alongside the values so the Eikonal term and its
weight gradients are exact.
"""

from __future__ import annotations

import copy
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

N_HIDDEN = 8
JUMP_AFTER = 4  # concatenate the input onto this hidden activation
MODEL_MAGIC = b"MLP1"


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class MlpModel:
    """Weights ``W[l]`` are ``(out, in)``; ``shift``/``scale`` normalize raw inputs."""

    weights: list
    biases: list
    shift: np.ndarray
    scale: np.ndarray
    n_q: int
    n_d: int

    @property
    def in_dim(self) -> int:
        return 3 * self.n_q + self.n_d

    @property
    def width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def obstacle_cols(self) -> np.ndarray:
        return np.arange(3 * self.n_q, self.in_dim)

    @property
    def k_cols(self) -> np.ndarray:
        return np.arange(2 * self.n_q, 3 * self.n_q)

    @classmethod
    def init(cls, n_q: int, n_d: int, width: int, rng: np.random.Generator, shift=None, scale=None) -> "MlpModel":
        d0 = 3 * n_q + n_d
        dims = [d0] + [width] * N_HIDDEN + [n_q]
        weights, biases = [], []
        for layer in range(N_HIDDEN + 1):
            fan_in = dims[layer] + (d0 if layer == JUMP_AFTER else 0)
            weights.append(rng.normal(scale=math.sqrt(2.0 / fan_in), size=(dims[layer + 1], fan_in)))
            biases.append(np.zeros(dims[layer + 1]))
        shift = np.zeros(d0) if shift is None else np.asarray(shift, dtype=float)
        scale = np.ones(d0) if scale is None else np.asarray(scale, dtype=float)
        return cls(weights, biases, shift, scale, n_q, n_d)

    def params(self) -> list:
        return self.weights + self.biases

    def set_params(self, flat: list) -> None:
        n = len(self.weights)
        self.weights = list(flat[:n])
        self.biases = list(flat[n:])

    def copy(self) -> "MlpModel":
        return copy.deepcopy(self)

    def as_float32(self) -> "MlpModel":
        """Copy whose parameters are exactly representable in the model file."""
        f = lambda a: np.asarray(a, dtype=np.float32).astype(np.float64)
        return MlpModel([f(w) for w in self.weights], [f(b) for b in self.biases], f(self.shift), f(self.scale),
                        self.n_q, self.n_d)

    # -- serialization ------------------------------------------------------

    def to_bytes(self) -> bytes:
        out = [MODEL_MAGIC, struct.pack("<III", len(self.weights), self.n_q, self.n_d)]
        for W in self.weights:
            out.append(struct.pack("<II", *W.shape))
        for W in self.weights:
            out.append(np.ascontiguousarray(W, dtype="<f4").tobytes())
        for b in self.biases:
            out.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
        out.append(np.ascontiguousarray(self.shift, dtype="<f4").tobytes())
        out.append(np.ascontiguousarray(self.scale, dtype="<f4").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "MlpModel":
        if blob[:4] != MODEL_MAGIC:
            raise ValueError("not an MLP1 model file")
        n_layers, n_q, n_d = struct.unpack_from("<III", blob, 4)
        off = 16
        shapes = []
        for _ in range(n_layers):
            shapes.append(struct.unpack_from("<II", blob, off))
            off += 8

        def take(n):
            nonlocal off
            a = np.frombuffer(blob, dtype="<f4", count=n, offset=off).astype(np.float64)
            off += 4 * n
            return a

        weights = [take(r * c).reshape(r, c) for r, c in shapes]
        biases = [take(r) for r, _ in shapes]
        d0 = 3 * n_q + n_d
        shift, scale = take(d0), take(d0)
        if off != len(blob):
            raise ValueError("trailing bytes in model file")
        return cls(weights, biases, shift, scale, n_q, n_d)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "MlpModel":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def input_normalization(spec) -> tuple:
    """``(shift, scale)`` mapping joint/velocity ranges to [-1, 1]; k and c_O pass through."""
    n_q, n_d = spec.n_q, spec.n_d
    mid = lambda lim: 0.5 * (lim[:, 0] + lim[:, 1])
    half = lambda lim: np.maximum(0.5 * (lim[:, 1] - lim[:, 0]), 1e-12)
    shift = np.concatenate([mid(spec.q_lim), mid(spec.qd_lim), np.zeros(n_q + n_d)])
    scale = np.concatenate([half(spec.q_lim), half(spec.qd_lim), np.ones(n_q + n_d)])
    return shift, scale


# ---------------------------------------------------------------------------
# Forward passes


def _check(model: MlpModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.in_dim:
        raise ValueError(f"input has {x.shape[-1]} features, model expects {model.in_dim}")
    return x


def mlp_forward(model: MlpModel, x) -> np.ndarray:
    """Predicted per-link distances, shape ``(..., n_q)``."""
    x = _check(model, x)
    xn = (x - model.shift) / model.scale
    a = xn
    last = len(model.weights) - 1
    for layer, (W, b) in enumerate(zip(model.weights, model.biases)):
        if layer == JUMP_AFTER:
            a = np.concatenate([a, xn], axis=-1)
        z = a @ W.T + b
        a = z if layer == last else softplus(z)
    return a


def _forward_tangent(model: MlpModel, x, cols, keep: bool = False):
    """Values and tangents ``d out / d x[cols]`` (forward mode).

    Tangents are stacked as ``(len(cols), B, n)`` so each layer applies to
    them with one matrix product.  Returns ``(y, T, cache)``.
    """
    xn = (x - model.shift) / model.scale
    B = xn.shape[0]
    C = len(cols)
    seed = np.zeros((C, B, model.in_dim))
    seed[np.arange(C), :, cols] = (1.0 / model.scale[cols])[:, None]
    a, ta = xn, seed
    cache = []
    last = len(model.weights) - 1
    for layer, (W, b) in enumerate(zip(model.weights, model.biases)):
        if layer == JUMP_AFTER:
            a = np.concatenate([a, xn], axis=-1)
            ta = np.concatenate([ta, seed], axis=-1)
        z = a @ W.T + b
        tz = ta @ W.T
        if keep:
            cache.append((a, ta, z, tz))
        if layer == last:
            a, ta = z, tz
        else:
            a, ta = softplus(z), sigmoid(z) * tz
    return a, ta, cache


def mlp_input_grad(model: MlpModel, x, cols=None):
    """``(y, J)`` with ``J[..., i, c] = d y_i / d x[cols[c]]``; default cols = obstacle center."""
    x = _check(model, x)
    cols = model.obstacle_cols if cols is None else np.asarray(cols)
    lead = x.shape[:-1]
    y, T, _ = _forward_tangent(model, x.reshape(-1, model.in_dim), cols)
    return y.reshape(lead + (model.n_q,)), np.moveaxis(T, 0, -1).reshape(lead + (model.n_q, len(cols)))


def mlp_vjp_input(model: MlpModel, x, gy) -> tuple:
    """Reverse accumulation: ``(y, gy^T dy/dx)`` for a batch of cotangents ``gy``."""
    x = _check(model, x)
    xn = (x - model.shift) / model.scale
    acts, zs = [], []
    a = xn
    last = len(model.weights) - 1
    for layer, (W, b) in enumerate(zip(model.weights, model.biases)):
        if layer == JUMP_AFTER:
            a = np.concatenate([a, xn], axis=-1)
        acts.append(a)
        z = a @ W.T + b
        zs.append(z)
        a = z if layer == last else softplus(z)
    y = a
    g = np.asarray(gy, dtype=float)
    gx = np.zeros_like(xn)
    for layer in range(last, -1, -1):
        if layer != last:
            g = g * sigmoid(zs[layer])
        g = g @ model.weights[layer]
        if layer == JUMP_AFTER:
            w = g.shape[-1] - model.in_dim
            gx += g[..., w:]
            g = g[..., :w]
    gx += g
    return y, gx / model.scale


# ---------------------------------------------------------------------------
# Loss and gradients


def loss(model: MlpModel, X, Y, alpha: float, need_grad: bool = True):
    """MSE + alpha * Eikonal, both averaged over records and links.

    Returns ``(total, parts, grads)`` where ``parts = (mse, eikonal)`` and
    ``grads`` lines up with ``model.params()`` (``None`` if not requested).
    """
    X = _check(model, X)
    Y = np.asarray(Y, dtype=float)
    if len(X) == 0:
        raise ValueError("empty batch")
    B, n_q = len(X), model.n_q
    cols = model.obstacle_cols
    y, T, cache = _forward_tangent(model, X, cols, keep=need_grad)
    r = y - Y
    mse = float(np.mean(r * r))
    norm = np.sqrt((T * T).sum(axis=0))  # (B, n_q)
    eik = float(np.mean((norm - 1.0) ** 2))
    total = mse + alpha * eik
    if not need_grad:
        return total, (mse, eik), None

    g = 2.0 * r / (B * n_q)
    safe = np.where(norm > 0, norm, 1.0)
    gT = alpha * 2.0 * (norm - 1.0) / (B * n_q) / safe * T
    gW = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    last = len(model.weights) - 1
    for layer in range(last, -1, -1):
        a, ta, z, tz = cache[layer]
        W = model.weights[layer]
        if layer == last:
            gz, gtz = g, gT
        else:
            s = sigmoid(z)
            gtz = s * gT
            gz = g * s + (gT * tz).sum(axis=0) * s * (1.0 - s)
        n_out, n_in = W.shape
        gW[layer] = gz.T @ a + gtz.reshape(-1, n_out).T @ ta.reshape(-1, n_in)
        gb[layer] = gz.sum(axis=0)
        g = gz @ W
        gT = gtz @ W
        if layer == JUMP_AFTER:
            w = n_in - model.in_dim
            g, gT = g[:, :w], gT[..., :w]
    return total, (mse, eik), gW + gb


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    alpha: float = 1e-3
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    width: int = 128
    cosine_decay: bool = True

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0 or self.alpha < 0:
            raise ValueError("lr, weight decay and alpha must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.width < 1:
            raise ValueError("epochs, batch size and width must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_loss: float
    val_mean_l1: float
    val_max_l1: float


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Adam:
    """Adam with decoupled weight decay."""

    lr: float
    beta1: float
    beta2: float
    weight_decay: float
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0

    def step(self, params: list, grads: list, lr: float | None = None) -> list:
        lr = self.lr if lr is None else lr
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        out = []
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            step = lr * (m / c1) / (np.sqrt(v / c2) + 1e-8)
            out.append(p * (1.0 - lr * self.weight_decay) - step)
        return out


def train(model: MlpModel, train_xy, val_xy, config: TrainConfig, log=None):
    """Fit ``model`` in place of a copy; returns ``(best_model, metrics)``.

    Batches are shuffled by a generator seeded from ``config.seed``.  The
    returned model is the best-validation snapshot, rounded to float32 so it
    survives a save/load round trip unchanged.
    """
    Xt, Yt = (np.asarray(a, dtype=float) for a in train_xy)
    Xv, Yv = (np.asarray(a, dtype=float) for a in val_xy)
    rng = np.random.default_rng(config.seed)
    model = model.copy()
    opt = Adam(config.lr, config.beta1, config.beta2, config.weight_decay)
    n = len(Xt)
    n_batches = max(1, math.ceil(n / config.batch_size))
    total_steps = config.epochs * n_batches
    best, best_val = model.as_float32(), math.inf
    metrics = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        run = 0.0
        for bi in range(n_batches):
            idx = order[bi * config.batch_size:(bi + 1) * config.batch_size]
            value, _, grads = loss(model, Xt[idx], Yt[idx], config.alpha)
            if not math.isfinite(value):
                raise TrainingDiverged(f"loss became {value} at epoch {epoch}, batch {bi}")
            lr = config.lr
            if config.cosine_decay:
                lr = config.lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
            model.set_params(opt.step(model.params(), grads, lr))
            run += value * len(idx)
            step += 1
        val_loss = evaluate_loss(model, Xv, Yv, config.alpha)
        ev = evaluate(model, Xv, Yv)
        m = EpochMetrics(epoch, run / n, val_loss, ev.mean_l1, ev.max_l1)
        metrics.append(m)
        if log is not None:
            log(m)
        if val_loss < best_val:
            best_val, best = val_loss, model.as_float32()
    return best, metrics


def evaluate_loss(model: MlpModel, X, Y, alpha: float, chunk: int = 4096) -> float:
    tot = 0.0
    for s in range(0, len(X), chunk):
        value, _, _ = loss(model, X[s:s + chunk], Y[s:s + chunk], alpha, need_grad=False)
        tot += value * len(X[s:s + chunk])
    return tot / len(X)


@dataclass
class EvalResult:
    mean_l1: float
    max_l1: float
    per_link_mean: np.ndarray
    per_link_max: np.ndarray


def evaluate(model, X, Y, chunk: int = 8192) -> EvalResult:
    """Absolute errors over records and links.  ``model`` may be any callable ``X -> Y_hat``."""
    predict = model if callable(model) else (lambda A: mlp_forward(model, A))
    Y = np.asarray(Y, dtype=float)
    pred = np.concatenate([predict(X[s:s + chunk]) for s in range(0, len(X), chunk)]) if len(X) else Y
    err = np.abs(pred - Y)
    return EvalResult(float(err.mean()), float(err.max()), err.mean(axis=0), err.max(axis=0))
