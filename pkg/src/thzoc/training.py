"""Trajectory losses, AdamW and L-BFGS, the training loop and parameter averaging."""

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import ad
from .errors import ConfigError, ConvergenceError, NumericalError, ShapeError

LOSS_KINDS = ("l_c1", "l_dt", "l2")

# Gram matrix of the reference Hermite basis on [0, 1]: integral of xi_i xi_j
HERMITE_GRAM = np.array([
    [13 / 35, 11 / 210, 9 / 70, -13 / 420],
    [11 / 210, 1 / 105, 13 / 420, -1 / 140],
    [9 / 70, 13 / 420, 13 / 35, -11 / 210],
    [-13 / 420, -1 / 140, -11 / 210, 1 / 105],
])


def _as_channels(x):
    if isinstance(x, ad.Tensor):
        return x
    if hasattr(x, "channels"):
        return ad.tensor(x.channels())
    return ad.tensor(x)


def loss(kind, pred, target, k=None):
    """Loss between trajectories with channels (value, derivative) on the last axis.

    pred and target may be Tensors / arrays of shape (..., N+1, 2) or
    TrajectorySeries. l_c1 needs the step k (taken from a series if given).
    """
    if kind not in LOSS_KINDS:
        raise ConfigError(f"unknown loss {kind!r}")
    if k is None:
        for s in (pred, target):
            if hasattr(s, "k"):
                k = s.k
    if hasattr(pred, "same_grid") and hasattr(target, "same_grid") and not pred.same_grid(target):
        raise ShapeError("loss", pred.value.shape, target.value.shape)
    P, T = _as_channels(pred), _as_channels(target)
    if P.shape != T.shape:
        raise ShapeError("loss", P.shape, T.shape)
    d = P - T
    dv = d[..., 0]
    if kind == "l2":
        return ad.mean(ad.square(dv))
    if kind == "l_dt":
        return ad.mean(ad.square(dv)) + ad.mean(ad.square(d[..., 1]))
    if k is None:
        raise ConfigError("l_c1 needs the time step k")
    c = ad.stack([d[..., :-1, 0], ad.scale(d[..., :-1, 1], k), d[..., 1:, 0], ad.scale(d[..., 1:, 1], k)], axis=-1)
    q = ad.sum_(ad.matmul(c, ad.tensor(HERMITE_GRAM)) * c, axis=-1)
    return ad.mean(q)


# -- flat parameter packing ----------------------------------------------------

class ParamPacker:
    """Maps a dict of real/complex arrays to a flat real vector and back."""

    def __init__(self, params):
        self.names = sorted(params)
        self.shapes = {n: np.shape(params[n]) for n in self.names}
        self.complex = {n: np.iscomplexobj(params[n]) for n in self.names}

    def pack(self, arrays):
        out = []
        for n in self.names:
            a = np.asarray(arrays[n])
            if self.complex[n]:
                out.append(np.ascontiguousarray(a, dtype=complex).view(float).ravel())
            else:
                out.append(np.asarray(a, dtype=float).ravel())
        return np.concatenate(out) if out else np.zeros(0)

    def unpack(self, vec):
        out, pos = {}, 0
        for n in self.names:
            size = int(np.prod(self.shapes[n])) if self.shapes[n] else 1
            if self.complex[n]:
                out[n] = vec[pos:pos + 2 * size].copy().view(complex).reshape(self.shapes[n])
                pos += 2 * size
            else:
                out[n] = vec[pos:pos + size].reshape(self.shapes[n]).copy()
                pos += size
        return out


def value_and_grad(fn, params, packer):
    """fn(dict of leaf Tensors) -> scalar Tensor; returns (value, flat gradient)."""
    leaves = {n: ad.tensor(v) for n, v in params.items()}
    out = fn(leaves)
    ad.backward(out)
    grads = {n: leaves[n].grad for n in packer.names}
    return float(out.value), packer.pack(grads)


# -- AdamW ---------------------------------------------------------------------

@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: np.ndarray = None
    v: np.ndarray = None


def adamw_step(state, x, g):
    """One AdamW update of the flat vector x; decay is applied to x before the Adam step."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(g, dtype=float)
    if x.shape != g.shape:
        raise ShapeError("adamw_step", x.shape, g.shape)
    if state.m is None:
        state.m = np.zeros_like(x)
        state.v = np.zeros_like(x)
    state.step += 1
    t = state.step
    state.m = state.beta1 * state.m + (1 - state.beta1) * g
    state.v = state.beta2 * state.v + (1 - state.beta2) * g * g
    mh = state.m / (1 - state.beta1 ** t)
    vh = state.v / (1 - state.beta2 ** t)
    x = x * (1 - state.lr * state.weight_decay)
    return x - state.lr * mh / (np.sqrt(vh) + state.eps)


# -- L-BFGS --------------------------------------------------------------------

@dataclass
class LbfgsState:
    h_max: int = 10
    c1: float = 1e-4
    max_halvings: int = 20
    curvature_eps: float = 1e-10
    init_scale: float = 1.0
    s_hist: list = field(default_factory=list)
    y_hist: list = field(default_factory=list)


def lbfgs_direction(state, g):
    q = np.array(g, dtype=float)
    alphas = []
    for s, y in zip(reversed(state.s_hist), reversed(state.y_hist)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        alphas.append(a)
        q = q - a * y
    if state.s_hist:
        s, y = state.s_hist[-1], state.y_hist[-1]
        gamma = (s @ y) / (y @ y)
    else:
        gamma = state.init_scale
    r = gamma * q
    for (s, y), a in zip(zip(state.s_hist, state.y_hist), reversed(alphas)):
        rho = 1.0 / (y @ s)
        b = rho * (y @ r)
        r = r + s * (a - b)
    return -r


def lbfgs_step(state, x, f, g, fn):
    """One L-BFGS iteration with Armijo backtracking.

    fn(x) -> (value, gradient). Returns (x_new, f_new, g_new). A failed line
    search clears the history and raises ConvergenceError.
    """
    d = lbfgs_direction(state, g)
    slope = float(g @ d)
    if slope >= 0:
        state.s_hist.clear()
        state.y_hist.clear()
        d = -state.init_scale * g
        slope = float(g @ d)
    t = 1.0
    for _ in range(state.max_halvings + 1):
        x_new = x + t * d
        f_new, g_new = fn(x_new)
        if np.isfinite(f_new) and f_new <= f + state.c1 * t * slope:
            break
        t *= 0.5
    else:
        state.s_hist.clear()
        state.y_hist.clear()
        raise ConvergenceError("L-BFGS line search failed", [f])
    s = x_new - x
    y = g_new - g
    if s @ y > state.curvature_eps:
        state.s_hist.append(s)
        state.y_hist.append(y)
        if len(state.s_hist) > state.h_max:
            state.s_hist.pop(0)
            state.y_hist.pop(0)
    return x_new, f_new, g_new


# -- parameter averaging -----------------------------------------------------------

def average_parameters(worker_params):
    """Arithmetic mean per tensor, written as p0 + mean(p_i - p0) so identical
    replicas average to themselves bit for bit."""
    if not worker_params:
        raise ConfigError("no worker parameters")
    ref = worker_params[0]
    out = {}
    for name in ref:
        base = np.asarray(ref[name])
        for p in worker_params[1:]:
            if np.shape(p[name]) != base.shape:
                raise ShapeError("average_parameters", base.shape, np.shape(p[name]))
        delta = sum((np.asarray(p[name]) - base for p in worker_params[1:]), np.zeros_like(base))
        out[name] = base + delta / len(worker_params)
    return out


# -- training loop ----------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 0  # 0 = full batch
    seed: int = 0
    loss: str = "l_c1"
    optimizer: str = "adamw"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    h_max: int = 10
    workers: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.optimizer not in ("adamw", "lbfgs"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")


@dataclass
class LossRecord:
    epoch: int
    train_loss: float
    val_loss: float
    wall_seconds: float
    best_val: float


def _batch_loss(op, kind, X, Y):
    def fn(leaves):
        return loss(kind, op.forward(ad.tensor(X), leaves), Y, k=op.k)
    return fn


def evaluate_loss(op, kind, X, Y, params=None):
    if len(X) == 0:
        return float("nan")
    params = op.params if params is None else params
    out = op.forward(ad.tensor(X), {n: ad.tensor(v) for n, v in params.items()})
    return float(loss(kind, out, Y, k=op.k).value)


def _worker_epoch(op, cfg, params, opt_state, X, Y, rng, packer):
    """One pass over a shard; returns (params, mean pre-step loss)."""
    n = len(X)
    order = rng.permutation(n)
    bs = cfg.batch_size or n
    losses = []
    x = packer.pack(params)
    for start in range(0, n, bs):
        idx = np.sort(order[start:start + bs])
        fn = _batch_loss(op, cfg.loss, X[idx], Y[idx])

        def fg(vec):
            return value_and_grad(fn, packer.unpack(vec), packer)
        f, g = fg(x)
        if not np.isfinite(f):
            return None, f
        losses.append(f)
        if cfg.optimizer == "adamw":
            x = adamw_step(opt_state, x, g)
        else:
            x, _, _ = lbfgs_step(opt_state, x, f, g, fg)
    return packer.unpack(x), float(np.mean(losses))


def train(op, cfg, X, Y, X_val=None, Y_val=None, on_epoch=None):
    """Fit op.params to map X -> Y (arrays (B, N+1, 2)); returns (params, records).

    With several workers the training set is split into contiguous shards; each
    worker trains a private replica for one epoch, then replicas are averaged.
    """
    X, Y = np.asarray(X, float), np.asarray(Y, float)
    if len(X) == 0:
        raise ConfigError("empty training set")
    if X.shape != Y.shape:
        raise ShapeError("train", X.shape, Y.shape)
    packer = ParamPacker(op.params)
    params = {n: np.array(v, copy=True) for n, v in op.params.items()}
    shards = np.array_split(np.arange(len(X)), cfg.workers)
    rngs = [np.random.default_rng([cfg.seed, w]) for w in range(cfg.workers)]

    def new_state():
        if cfg.optimizer == "adamw":
            return AdamWState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
        return LbfgsState(h_max=cfg.h_max)
    states = [new_state() for _ in range(cfg.workers)]
    records = []
    best = float("inf")
    t0 = time.perf_counter()
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            jobs = [(params, states[w], X[shards[w]], Y[shards[w]], rngs[w]) for w in range(cfg.workers)]
            if pool is None:
                results = [_worker_epoch(op, cfg, *jobs[0], packer)]
            else:
                results = list(pool.map(lambda j: _worker_epoch(op, cfg, *j, packer), jobs))
            if any(r[0] is None for r in results):
                raise NumericalError(f"non-finite training loss at epoch {epoch}", where=epoch)
            params = average_parameters([r[0] for r in results]) if len(results) > 1 else results[0][0]
            train_loss = float(np.mean([r[1] for r in results]))
            val = evaluate_loss(op, cfg.loss, X_val, Y_val, params) if X_val is not None and len(X_val) else float("nan")
            if np.isfinite(val):
                best = min(best, val)
            rec = LossRecord(epoch, train_loss, val, time.perf_counter() - t0, best)
            records.append(rec)
            if on_epoch is not None:
                on_epoch(rec)
    finally:
        if pool is not None:
            pool.shutdown()
    return params, records


def write_loss_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "wall_seconds"])
        for r in records:
            w.writerow([r.epoch, f"{r.train_loss:.17g}", f"{r.val_loss:.17g}", f"{r.wall_seconds:.17g}"])
