"""Fourier neural operator, GRU network, the per-period solution operator and
checkpoint files."""

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ad
from .errors import ConfigError, ShapeError
from .trajectory import TrajectorySeries, _read_container, hermite_reconstruct

CKPT_MAGIC = b"THZCKPT\0"
CKPT_VERSION = 1


def _activation(name):
    if name == "tanh":
        return ad.tanh
    if name == "identity":
        return lambda x: x
    raise ConfigError(f"unknown activation {name!r}")


def _next_pow2(n):
    p = 1
    while p < n:
        p *= 2
    return p


# -- FNO ---------------------------------------------------------------------

@dataclass
class FnoConfig:
    layers: int = 4
    width: int = 8
    n_modes: int = 8
    d_in: int = 2
    d_out: int = 2
    proj_hidden: int = 141  # 0 gives a single projection matrix Q (d_out x width)
    activation: str = "tanh"
    pad_fraction: float = 0.25
    time_channel: bool = False

    def __post_init__(self):
        if self.layers < 0 or self.width < 1 or self.n_modes < 1:
            raise ConfigError("invalid FNO dimensions")
        if self.pad_fraction < 0:
            raise ConfigError("pad_fraction must be nonnegative")
        _activation(self.activation)

    @property
    def input_channels(self):
        return self.d_in + (1 if self.time_channel else 0)

    def padded_length(self, s):
        """Transform length: next power of two holding s plus the zero padding."""
        if self.pad_fraction == 0:
            return s
        return _next_pow2(int(np.ceil(s * (1.0 + self.pad_fraction))))


def init_fno(cfg, rng):
    n, m, di = cfg.width, cfg.n_modes, cfg.input_channels
    p = {"R": rng.standard_normal((n, di)) / np.sqrt(di)}
    for k in range(cfg.layers):
        p[f"W{k}"] = rng.standard_normal((n, n)) / np.sqrt(n)
        p[f"b{k}"] = np.zeros(n)
        p[f"P{k}"] = (rng.uniform(-1, 1, (m, n, n)) + 1j * rng.uniform(-1, 1, (m, n, n))) / (n * n)
    if cfg.proj_hidden:
        hdim = cfg.proj_hidden
        p["Q1"] = rng.standard_normal((hdim, n)) / np.sqrt(n)
        p["c1"] = np.zeros(hdim)
        p["Q2"] = rng.standard_normal((cfg.d_out, hdim)) / np.sqrt(hdim)
        p["c2"] = np.zeros(cfg.d_out)
    else:
        p["Q"] = rng.standard_normal((cfg.d_out, n)) / np.sqrt(n)
    return p


def fno_param_count(cfg):
    """Trainable real scalars; complex spectral weights count twice."""
    n, m, di, do = cfg.width, cfg.n_modes, cfg.input_channels, cfg.d_out
    total = n * di + cfg.layers * (n * n + n + 2 * m * n * n)
    if cfg.proj_hidden:
        h = cfg.proj_hidden
        total += h * n + h + do * h + do
    else:
        total += do * n
    return total


def spectral_conv(P, h, n_modes, s_pad, stats=None):
    """Truncated Fourier multiplier along axis -2 of h (..., s, n).

    Only modes 0..n_modes-1 are parametrized; negative modes are their
    conjugates and mode 0 is kept real, so the output is real for real h.
    """
    s = h.shape[-2]
    if s_pad < 2 * n_modes:
        raise ConfigError(f"transform length {s_pad} < 2 * n_modes = {2 * n_modes}")
    hp = ad.pad_axis(h, 0, s_pad - s, axis=-2)
    H = ad.dft(hp, axis=-2)
    Hm = ad.getitem(H, (Ellipsis, slice(0, n_modes), slice(None)))
    lead = Hm.shape[:-1]
    col = ad.reshape(Hm, lead + (Hm.shape[-1], 1))
    Y = ad.reshape(ad.matmul(P, col), Hm.shape)
    y0 = ad.real(ad.getitem(Y, (Ellipsis, slice(0, 1), slice(None))))
    parts = [ad.complex_(y0, np.zeros(y0.shape))]
    if n_modes > 1:
        parts.append(ad.getitem(Y, (Ellipsis, slice(1, n_modes), slice(None))))
    gap = s_pad - 2 * n_modes + 1
    parts.append(ad.tensor(np.zeros(Y.shape[:-2] + (gap, Y.shape[-1]), dtype=complex)))
    if n_modes > 1:
        parts.append(ad.conj(ad.getitem(Y, (Ellipsis, slice(n_modes - 1, 0, -1), slice(None)))))
    full = ad.concat(parts, axis=-2)
    back = ad.idft(full, axis=-2, normalized=True)
    if stats is not None:
        stats["imag_residue"] = max(stats.get("imag_residue", 0.0), float(np.max(np.abs(back.value.imag))))
    out = ad.real(back)
    return ad.getitem(out, (Ellipsis, slice(0, s), slice(None)))


def fno_forward(params, v, cfg, stats=None):
    """Apply the FNO to v of shape (s, d_in) or (batch, s, d_in).

    params maps names to Tensors (or arrays, which are wrapped as constants).
    """
    p = {k: (x if isinstance(x, ad.Tensor) else ad.tensor(x)) for k, x in params.items()}
    v = v if isinstance(v, ad.Tensor) else ad.tensor(v)
    if v.shape[-1] != cfg.input_channels:
        raise ShapeError("fno_forward", v.shape, (None, cfg.input_channels))
    s = v.shape[-2]
    if s < 2 * cfg.n_modes:
        raise ConfigError(f"grid of {s} samples cannot hold {cfg.n_modes} modes")
    act = _activation(cfg.activation)
    s_pad = cfg.padded_length(s)
    h = ad.matmul(v, p["R"].T)
    for k in range(cfg.layers):
        local = ad.matmul(h, p[f"W{k}"].T) + p[f"b{k}"]
        h = act(local + spectral_conv(p[f"P{k}"], h, cfg.n_modes, s_pad, stats))
    if cfg.proj_hidden:
        h = act(ad.matmul(h, p["Q1"].T) + p["c1"])
        return ad.matmul(h, p["Q2"].T) + p["c2"]
    return ad.matmul(h, p["Q"].T)


# -- GRU ---------------------------------------------------------------------

@dataclass
class GruConfig:
    layers: int = 1
    hidden: int = 8
    d_in: int = 2
    d_out: int = 2
    head: bool = True

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1:
            raise ConfigError("invalid GRU dimensions")


def init_gru(cfg, rng):
    q = cfg.hidden
    p = {}
    for k in range(cfg.layers):
        nin = cfg.d_in if k == 0 else q
        for g in ("z", "r", "h"):
            p[f"W{g}{k}"] = rng.uniform(-1, 1, (q, nin)) / np.sqrt(q)
            p[f"U{g}{k}"] = rng.uniform(-1, 1, (q, q)) / np.sqrt(q)
            p[f"b{g}{k}"] = np.zeros(q)
    if cfg.head:
        p["Wo"] = rng.standard_normal((cfg.d_out, q)) / np.sqrt(q)
        p["bo"] = np.zeros(cfg.d_out)
    return p


def gru_param_count(cfg):
    q = cfg.hidden
    total = 0
    for k in range(cfg.layers):
        nin = cfg.d_in if k == 0 else q
        total += 3 * (q * nin + q * q + q)
    if cfg.head:
        total += cfg.d_out * q + cfg.d_out
    return total


def _unstack_time(a):
    """Split (..., T, c) into T tensors of shape (..., c) sharing one gradient buffer."""
    T = a.shape[-2]
    outs = []
    for n in range(T):
        def bw(g, n=n):
            if a._grad is None:
                a._grad = np.zeros_like(a.value)
            a._grad[..., n, :] += np.real(g) if not a.is_complex else g
        outs.append(ad.Tensor(a.value[..., n, :], (a,), bw))
    return outs


def gru_layer(p, k, xs, q):
    """One GRU layer over the list of inputs xs; returns the list of hidden states."""
    X = ad.stack(xs, axis=-2)
    pre = {g: ad.matmul(X, p[f"W{g}{k}"].T) + p[f"b{g}{k}"] for g in ("z", "r", "h")}
    pz, pr, ph = (_unstack_time(pre[g]) for g in ("z", "r", "h"))
    h = ad.tensor(np.zeros(xs[0].shape[:-1] + (q,)))
    Uz, Ur, Uh = p[f"Uz{k}"].T, p[f"Ur{k}"].T, p[f"Uh{k}"].T
    out = []
    for n in range(len(xs)):
        z = ad.logistic(pz[n] + ad.matmul(_row(h), Uz)[..., 0, :])
        r = ad.logistic(pr[n] + ad.matmul(_row(h), Ur)[..., 0, :])
        cand = ad.tanh(ph[n] + ad.matmul(_row(r * h), Uh)[..., 0, :])
        h = z * h + (1.0 - z) * cand
        out.append(h)
    return out


def _row(x):
    return ad.reshape(x, x.shape[:-1] + (1, x.shape[-1]))


def gru_forward(params, seq, cfg, all_layers=False):
    """Run the stacked GRU on seq of shape (T, d_in) or (batch, T, d_in).

    Returns hidden states of the last layer (..., T, q), or a list per layer.
    """
    p = {k: (x if isinstance(x, ad.Tensor) else ad.tensor(x)) for k, x in params.items()}
    seq = seq if isinstance(seq, ad.Tensor) else ad.tensor(seq)
    if seq.shape[-1] != cfg.d_in:
        raise ShapeError("gru_forward", seq.shape, (None, cfg.d_in))
    xs = _unstack_time(seq)
    layers = []
    for k in range(cfg.layers):
        xs = gru_layer(p, k, xs, cfg.hidden)
        layers.append(ad.stack(xs, axis=-2))
    return layers if all_layers else layers[-1]


def gru_apply(params, seq, cfg):
    h = gru_forward(params, seq, cfg)
    p = {k: (x if isinstance(x, ad.Tensor) else ad.tensor(x)) for k, x in params.items()}
    if cfg.head:
        return ad.matmul(h, p["Wo"].T) + p["bo"]
    return h


# -- solution operator --------------------------------------------------------

@dataclass
class SolutionOperator:
    """Network mapping the (value, derivative) trajectory at one interface to
    the next interface, on a fixed time grid."""

    kind: str
    config: object
    params: dict
    k: float
    n_steps: int
    period: float
    scales: tuple = (1.0, 1.0)
    meta: dict = field(default_factory=dict)

    def leaves(self):
        return {name: ad.tensor(v) for name, v in self.params.items()}

    def forward(self, X, params=None):
        """X: Tensor (..., N+1, 2) of raw channels; returns raw output channels."""
        params = self.params if params is None else params
        sv, sd = self.scales
        Xn = ad.scale(X, np.array([1.0 / sv, 1.0 / sd]))
        if self.kind == "fno":
            if self.config.time_channel:
                tau = np.linspace(0.0, 1.0, self.n_steps + 1)[:, None]
                tc = ad.tensor(np.broadcast_to(tau, Xn.shape[:-1] + (1,)).copy())
                Xn = ad.concat([Xn, tc], axis=-1)
            Y = fno_forward(params, Xn, self.config)
        elif self.kind == "gru":
            Y = gru_apply(params, Xn, self.config)
        elif self.kind == "identity":
            Y = Xn
        else:
            raise ConfigError(f"unknown network kind {self.kind!r}")
        return ad.scale(Y, np.array([sv, sd]))

    def check_grid(self, traj):
        if traj.n_steps != self.n_steps or abs(traj.k - self.k) > 1e-9 * self.k:
            raise ShapeError("solution operator grid", (self.n_steps + 1,), traj.value.shape)


def identity_operator(k, n_steps, period):
    return SolutionOperator("identity", None, {}, k, n_steps, period)


def series_tensor(traj):
    return ad.tensor(traj.channels())


def operator_apply(op, traj):
    op.check_grid(traj)
    Y = op.forward(series_tensor(traj)).value
    return TrajectorySeries(traj.x + op.period, traj.t0, traj.k, Y[:, 0].copy(), Y[:, 1].copy())


def operator_power(op, i, g):
    """i-fold application of op to the trajectory g (i = 0 returns g)."""
    if i < 0:
        raise ConfigError("operator power must be nonnegative")
    out = g
    for _ in range(i):
        out = operator_apply(op, out)
    return out


def operator_power_tensor(op, i, X, params=None):
    for _ in range(i):
        X = op.forward(X, params)
    return X


def spacetime_extend(series):
    """Evaluator (x, t) -> value built from trajectories at successive interfaces.

    Linear hats in x between neighbouring interfaces, Hermite cubics in t.
    """
    series = sorted(series, key=lambda s: s.x)
    if len(series) < 2:
        raise ConfigError("need at least two interface trajectories")
    xs = np.array([s.x for s in series])

    def evaluate(x, t):
        if x < xs[0] - 1e-12 or x > xs[-1] + 1e-12:
            raise ConfigError("x outside the interface range")
        i = int(np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(xs) - 2))
        lam = (x - xs[i]) / (xs[i + 1] - xs[i])
        va, _ = hermite_reconstruct(series[i], t)
        vb, _ = hermite_reconstruct(series[i + 1], t)
        return (1.0 - lam) * va + lam * vb
    return evaluate


# -- checkpoints --------------------------------------------------------------

def _flatten(params):
    names = sorted(params)
    chunks, shapes, kinds = [], {}, {}
    for n in names:
        v = np.asarray(params[n])
        shapes[n] = list(v.shape)
        if np.iscomplexobj(v):
            kinds[n] = "complex"
            chunks.append(np.ascontiguousarray(v, dtype=np.complex128).view(np.float64).ravel())
        else:
            kinds[n] = "real"
            chunks.append(np.asarray(v, dtype=np.float64).ravel())
    flat = np.concatenate(chunks) if chunks else np.zeros(0)
    return names, shapes, kinds, flat


def checkpoint_write(path, op, extra=None):
    names, shapes, kinds, flat = _flatten(op.params)
    payload = flat.astype("<f8").tobytes()
    manifest = {
        "version": CKPT_VERSION,
        "kind": op.kind,
        "config": asdict(op.config) if op.config is not None else None,
        "names": names,
        "shapes": shapes,
        "dtypes": kinds,
        "k": op.k,
        "n_steps": op.n_steps,
        "period": op.period,
        "scales": list(op.scales),
        "meta": op.meta,
        "hash": hashlib.sha256(payload).hexdigest(),
    }
    if extra:
        manifest["extra"] = extra
    text = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(text)))
        fh.write(text)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
    return manifest


def checkpoint_read(path):
    manifest, payload = _read_container(path, CKPT_MAGIC)
    if manifest.get("version") != CKPT_VERSION:
        raise ConfigError(f"unknown checkpoint version {manifest.get('version')}")
    if hashlib.sha256(payload).hexdigest() != manifest["hash"]:
        raise ConfigError("payload checksum mismatch")
    flat = np.frombuffer(payload, dtype="<f8").astype(float)
    params, pos = {}, 0
    for n in manifest["names"]:
        shape = tuple(manifest["shapes"][n])
        size = int(np.prod(shape)) if shape else 1
        if manifest["dtypes"][n] == "complex":
            raw = flat[pos:pos + 2 * size]
            params[n] = raw.view(np.complex128).reshape(shape).copy()
            pos += 2 * size
        else:
            params[n] = flat[pos:pos + size].reshape(shape).copy()
            pos += size
    if pos != flat.size:
        raise ConfigError("payload length mismatch")
    kind = manifest["kind"]
    cfg = None
    if kind == "fno":
        cfg = FnoConfig(**manifest["config"])
    elif kind == "gru":
        cfg = GruConfig(**manifest["config"])
    op = SolutionOperator(kind, cfg, params, manifest["k"], manifest["n_steps"], manifest["period"],
                          tuple(manifest["scales"]), manifest.get("meta", {}))
    return op, manifest
