"""Time series with value and derivative channels, Hermite reconstruction,
error norms and the binary dataset format."""

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .fem import gauss_legendre

DATA_MAGIC = b"THZDATA\0"
DATA_VERSION = 1
CHANNELS = ("value", "derivative")


def hermite_basis(s):
    """Reference cubic Hermite basis on [0, 1]: values and d/ds, each of shape (len(s), 4).

    Columns are (xi0, xi1, xi2, xi3): value at 0, slope at 0, value at 1, slope at 1.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    s2, s3 = s * s, s * s * s
    val = np.stack([1 - 3 * s2 + 2 * s3, s - 2 * s2 + s3, 3 * s2 - 2 * s3, -s2 + s3], axis=-1)
    der = np.stack([-6 * s + 6 * s2, 1 - 4 * s + 3 * s2, 6 * s - 6 * s2, -2 * s + 3 * s2], axis=-1)
    return val, der


@dataclass
class TrajectorySeries:
    """Samples of w and dw/dt at t0 + j*k, j = 0..N, at the point x."""

    x: float
    t0: float
    k: float
    value: np.ndarray
    derivative: np.ndarray

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=float)
        self.derivative = np.asarray(self.derivative, dtype=float)
        if self.value.shape != self.derivative.shape or self.value.ndim != 1:
            raise ShapeError("TrajectorySeries", self.value.shape, self.derivative.shape)
        if self.value.size < 2:
            raise ConfigError("a trajectory needs at least two samples")
        if not self.k > 0:
            raise ConfigError("time step must be positive")

    @property
    def n_steps(self):
        return self.value.size - 1

    @property
    def times(self):
        return self.t0 + self.k * np.arange(self.value.size)

    @property
    def t_end(self):
        return self.t0 + self.k * self.n_steps

    def channels(self):
        return np.stack([self.value, self.derivative], axis=-1)

    def same_grid(self, other):
        return (self.value.size == other.value.size
                and abs(self.k - other.k) <= 1e-12 * self.k
                and abs(self.t0 - other.t0) <= 1e-12 * max(1.0, abs(self.t0)))

    def replace(self, **kw):
        args = dict(x=self.x, t0=self.t0, k=self.k, value=self.value, derivative=self.derivative)
        args.update(kw)
        return TrajectorySeries(**args)


def collocation_points(period, m):
    if not period > 0 or m < 1:
        raise ConfigError("need period > 0 and m >= 1")
    return [period * i for i in range(1, m + 1)]


def hermite_reconstruct(series, t):
    """Value and derivative of the C1 cubic Hermite interpolant at time(s) t."""
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    span = series.t_end - series.t0
    tol = 1e-12 * max(1.0, abs(span))
    if np.any(t < series.t0 - tol) or np.any(t > series.t_end + tol):
        raise ConfigError("time outside the trajectory range")
    rel = (t - series.t0) / series.k
    n = np.clip(np.floor(rel).astype(int), 0, series.n_steps - 1)
    s = np.clip(rel - n, 0.0, 1.0)
    val, der = hermite_basis(s)
    k = series.k
    c = np.stack([series.value[n], k * series.derivative[n],
                  series.value[n + 1], k * series.derivative[n + 1]], axis=-1)
    v = np.sum(val * c, axis=-1)
    d = np.sum(der * c, axis=-1) / k
    if scalar:
        return float(v[0]), float(d[0])
    return v, d


def _series_list(a):
    return [a] if isinstance(a, TrajectorySeries) else list(a)


@dataclass
class FieldHistory:
    """Finite-element coefficients of a field and its time derivative at every slab endpoint."""

    space: object
    t0: float
    k: float
    values: list = field(default_factory=list)
    derivatives: list = field(default_factory=list)

    def append(self, value, derivative):
        self.values.append(np.array(value, dtype=float))
        self.derivatives.append(np.array(derivative, dtype=float))


def _time_rule(nq=4):
    return gauss_legendre(nq)


def error_norms(a, b, nq_time=4):
    """(L-infinity-in-time, L2-in-time) norms of a - b.

    For trajectories the spatial measure is the counting measure over points;
    for field histories it is the L2 norm over the finite-element domain.
    """
    if isinstance(a, FieldHistory):
        if len(a.values) != len(b.values) or abs(a.k - b.k) > 1e-12 * a.k:
            raise ShapeError("error_norms", (len(a.values),), (len(b.values),))
        space = a.space
        dv = [space.evaluate(x - y) for x, y in zip(a.values, b.values)]
        dd = [space.evaluate(x - y) for x, y in zip(a.derivatives, b.derivatives)]
        _, wq, _, _ = space.rule()
        linf = max(np.sqrt(np.sum(wq * v ** 2)) for v in dv)
        s, w = _time_rule(nq_time)
        hv, _ = hermite_basis(s)
        total = 0.0
        k = a.k
        for n in range(len(dv) - 1):
            coeffs = (dv[n], k * dd[n], dv[n + 1], k * dd[n + 1])
            for q in range(len(s)):
                diff = sum(hv[q, i] * coeffs[i] for i in range(4))
                total += k * w[q] * np.sum(wq * diff ** 2)
        return float(linf), float(np.sqrt(total))
    la, lb = _series_list(a), _series_list(b)
    if len(la) != len(lb) or any(not x.same_grid(y) for x, y in zip(la, lb)):
        raise ShapeError("error_norms", (len(la),), (len(lb),))
    s, w = _time_rule(nq_time)
    hv, _ = hermite_basis(s)
    sq_end = np.zeros(la[0].value.size)
    total = 0.0
    for x, y in zip(la, lb):
        dv = x.value - y.value
        dd = (x.derivative - y.derivative) * x.k
        sq_end += dv ** 2
        c = np.stack([dv[:-1], dd[:-1], dv[1:], dd[1:]], axis=-1)
        vals = c @ hv.T
        total += x.k * np.sum(vals ** 2 * w[None, :])
    return float(np.sqrt(sq_end.max())), float(np.sqrt(total))


def eoc(errors):
    """Experimental orders log2(e_i / e_{i+1})."""
    e = np.asarray(errors, dtype=float)
    return np.log2(e[:-1] / e[1:])


def _payload_hash(payload):
    return hashlib.sha256(payload).hexdigest()


def dataset_write(path, series, manifest_fields=None):
    series = _series_list(series)
    if not series:
        raise ConfigError("empty series set")
    ref = series[0]
    for s in series[1:]:
        if not s.same_grid(ref):
            raise ShapeError("dataset_write", ref.value.shape, s.value.shape)
    data = np.stack([s.channels() for s in series], axis=0)
    payload = data.astype("<f8").tobytes()
    manifest = dict(manifest_fields or {})
    manifest.update({
        "version": DATA_VERSION,
        "k": ref.k,
        "t0": ref.t0,
        "t_end": ref.t_end,
        "N": ref.n_steps,
        "points": [float(s.x) for s in series],
        "channels": list(CHANNELS),
        "hash": _payload_hash(payload),
    })
    manifest.setdefault("material", None)
    manifest.setdefault("pulse", None)
    text = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DATA_MAGIC)
        fh.write(struct.pack("<Q", len(text)))
        fh.write(text)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
    return manifest


def _read_container(path, magic):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != magic:
        raise ConfigError(f"{path}: bad magic")
    pos = 8
    (mlen,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    manifest = json.loads(blob[pos:pos + mlen].decode("utf-8"))
    pos += mlen
    if len(blob) < pos + 8:
        raise ConfigError("payload length mismatch")
    (plen,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    payload = blob[pos:]
    if len(payload) != plen:
        raise ConfigError("payload length mismatch")
    return manifest, payload


def dataset_read(path):
    manifest, payload = _read_container(path, DATA_MAGIC)
    if manifest.get("version") != DATA_VERSION:
        raise ConfigError(f"unknown dataset version {manifest.get('version')}")
    npts, n, nch = len(manifest["points"]), manifest["N"], len(manifest["channels"])
    if len(payload) != npts * (n + 1) * nch * 8:
        raise ConfigError("payload length mismatch")
    if _payload_hash(payload) != manifest["hash"]:
        raise ConfigError("payload checksum mismatch")
    k = manifest["k"]
    derived = (manifest["t_end"] - manifest["t0"]) / n
    if abs(derived - k) > 1e-9 * abs(k):
        raise ConfigError("manifest k inconsistent with the time grid")
    data = np.frombuffer(payload, dtype="<f8").reshape(npts, n + 1, nch).astype(float)
    out = [TrajectorySeries(x, manifest["t0"], k, data[i, :, 0].copy(), data[i, :, 1].copy())
           for i, x in enumerate(manifest["points"])]
    return out, manifest
