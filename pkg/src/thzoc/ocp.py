"""Pulse sampler, spectral band cost and the optimal boundary-control loop
driven through a differentiable solution operator."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import ad
from .diagnostics import conversion_efficiency
from .errors import ConfigError, NumericalError
from .nets import operator_power_tensor
from .trajectory import TrajectorySeries

PARAM_NAMES = ("tau", "p", "a", "phi", "zeta", "f")
LN2 = math.log(2.0)


@dataclass
class PulseBounds:
    tau_max: float = 10.0
    p_max: float = 10.0
    a_max: float = 10.0
    phi_max: float = 2 * math.pi
    zeta_max: float = 1.0
    f_max: float = 10.0

    def for_name(self, name):
        return getattr(self, name + "_max")


@dataclass
class PulseParams:
    """Supergaussian envelope of width tau and order p times a sum of chirped carriers."""

    tau: float
    p: float
    a: np.ndarray
    phi: np.ndarray
    zeta: np.ndarray
    f: np.ndarray
    bounds: PulseBounds = field(default_factory=PulseBounds)

    def __post_init__(self):
        self.a = np.atleast_1d(np.asarray(self.a, float)).copy()
        n = self.a.size
        for name in ("phi", "zeta", "f"):
            v = np.atleast_1d(np.asarray(getattr(self, name), float)).copy()
            if v.size == 1 and n > 1:
                v = np.full(n, v[0])
            if v.size != n:
                raise ConfigError(f"{name} must have one entry per component")
            setattr(self, name, v)

    @property
    def n(self):
        return self.a.size

    def arrays(self):
        return {"tau": np.array(self.tau, float), "p": np.array(self.p, float), "a": self.a,
                "phi": self.phi, "zeta": self.zeta, "f": self.f}

    def with_arrays(self, arrs):
        return PulseParams(float(arrs["tau"]), float(arrs["p"]), arrs["a"], arrs["phi"],
                           arrs["zeta"], arrs["f"], self.bounds)

    def as_dict(self):
        return {"tau": self.tau, "p": self.p, "a": self.a.tolist(), "phi": self.phi.tolist(),
                "zeta": self.zeta.tolist(), "f": self.f.tolist()}


def project_bounds(xi):
    """Clamp every parameter to [0, bound]."""
    arrs = {n: np.clip(v, 0.0, xi.bounds.for_name(n)) for n, v in xi.arrays().items()}
    return xi.with_arrays(arrs)


def sample_pulse_tensor(leaves, times, t_shift=0.0):
    """(N+1, 2) Tensor of g and dg/dt at `times` from parameter leaves.

    g(t) = exp(-(2 ln2 (s/tau)^2)^p) * sum_i a_i cos(phi_i + 2 pi (zeta_i s^2 / 2 + f_i s)),
    with s = t - t_shift.
    """
    tau, p = leaves["tau"], leaves["p"]
    if float(np.real(tau.value)) == 0.0:
        raise ConfigError("pulse width tau must be positive")
    s = np.asarray(times, float) - t_shift
    c = 2.0 * LN2
    u = ad.scale(ad.reciprocal(tau), s)                       # s / tau
    z = (s == 0.0).astype(float)                              # exact zeros of u
    base = ad.scale(ad.square(u), c) + z                      # c u^2, shifted to 1 where u = 0
    w = ad.scale(ad.exp(ad.mul(p, ad.log(base))), 1.0 - z)   # (c u^2)^p
    env = ad.exp(-w)
    # dw/dt = p w * 2 c u / (tau (c u^2))
    dw = ad.mul(ad.mul(p, w), ad.scale(u * ad.reciprocal(base), 2.0 * c)) * ad.reciprocal(tau)
    denv = -(env * dw)
    s_col = s[:, None]
    theta = (leaves["phi"] + ad.scale(leaves["zeta"], 2 * math.pi * 0.5 * s_col ** 2)
             + ad.scale(leaves["f"], 2 * math.pi * s_col))
    dtheta = ad.scale(leaves["zeta"], 2 * math.pi * s_col) + ad.scale(leaves["f"], 2 * math.pi * np.ones_like(s_col))
    a = leaves["a"]
    carrier = ad.sum_(a * ad.cos(theta), axis=-1)
    dcarrier = -ad.sum_(a * ad.sin(theta) * dtheta, axis=-1)
    g = env * carrier
    dg = denv * carrier + env * dcarrier
    return ad.stack([g, dg], axis=-1)


def sample_pulse(xi, times, t_shift=0.0):
    """Boundary trajectory of the pulse on a uniform grid `times`."""
    times = np.asarray(times, float)
    if times.size < 2:
        raise ConfigError("need at least two samples")
    k = times[1] - times[0]
    if np.max(np.abs(np.diff(times) - k)) > 1e-9 * abs(k):
        raise ConfigError("sampling grid must be uniform")
    leaves = {n: ad.tensor(v) for n, v in xi.arrays().items()}
    out = sample_pulse_tensor(leaves, times, t_shift).value
    return TrajectorySeries(0.0, times[0], k, out[:, 0].copy(), out[:, 1].copy())


def bump_psi(nu, f_omega, r):
    """Smooth bump exp(r^2 / ((nu - f_omega)^2 - r^2)) inside |nu - f_omega| < r, else 0."""
    if not r > 0:
        raise ConfigError("band half-width r must be positive")
    nu = np.asarray(nu, float)
    d2 = (nu - f_omega) ** 2
    inside = d2 < r * r
    out = np.zeros_like(nu)
    out[inside] = np.exp(r * r / (d2[inside] - r * r))
    return out if out.ndim else float(out)


@dataclass
class CostConfig:
    f_omega: float
    r: float
    alpha: float = 0.0
    sense: str = "minimize"
    psi_scale: float = 1.0

    def __post_init__(self):
        if not self.r > 0:
            raise ConfigError("band half-width r must be positive")
        if self.sense not in ("minimize", "maximize"):
            raise ConfigError("sense must be 'minimize' or 'maximize'")


def band_weights(n_samples, k, cfg):
    """psi at |nu_j| on the DFT grid nu_j = j / (n_samples k), with signed frequencies."""
    j = np.arange(n_samples)
    nu = np.where(j <= n_samples // 2, j, j - n_samples) / (n_samples * k)
    nyquist = 0.5 / k
    if cfg.f_omega + cfg.r > nyquist:
        raise ConfigError("frequency band exceeds the Nyquist frequency of the grid")
    if cfg.f_omega + cfg.r < 1.0 / (n_samples * k) * 0.5 and cfg.f_omega - cfg.r < 0:
        raise ConfigError("frequency band not resolved by the grid")
    return cfg.psi_scale * bump_psi(np.abs(nu), cfg.f_omega, cfg.r), 1.0 / (n_samples * k)


def cost_G_tensor(y, k, cfg):
    """Band energy of the trace y (Tensor of N+1 values).

    The last sample closes the period and is dropped; the remaining N samples
    are transformed, |k Y_j|^2 is weighted by psi and summed with spacing dnu.
    """
    n = y.shape[-1] - 1
    if n < 1:
        raise ConfigError("trace needs at least two samples")
    psi, dnu = band_weights(n, k, cfg)
    Y = ad.dft(ad.getitem(y, (Ellipsis, slice(0, n))))
    return ad.sum_(ad.scale(ad.abs2(Y), psi * k * k * dnu))


def cost_G(trace, cfg):
    y = ad.tensor(trace.value)
    return float(cost_G_tensor(y, trace.k, cfg).value)


def _trapz_sq(v, k):
    w = np.full(v.shape[-1], k)
    w[0] = w[-1] = 0.5 * k
    return ad.sum_(ad.scale(ad.square(v), w))


def objective_tensor(leaves, op, m, cfg, times, t_shift=0.0, op_params=None):
    """Returns (J, cost, penalty, predicted trace) Tensors for pulse parameter leaves."""
    k = times[1] - times[0]
    g = sample_pulse_tensor(leaves, times, t_shift)
    y = operator_power_tensor(op, m, g, op_params)
    cost = cost_G_tensor(y[..., 0], k, cfg)
    penalty = ad.scale(_trapz_sq(g[..., 0], k), 0.5 * cfg.alpha)
    J = cost + penalty if cfg.sense == "minimize" else cost - penalty
    return J, cost, penalty, y


@dataclass
class Evaluation:
    J: float
    grads: dict
    cost: float
    penalty: float
    trace: TrajectorySeries


def objective(xi, op, m, cfg, times, t_shift=0.0):
    """Objective, its gradient per parameter and the predicted trace at xi."""
    leaves = {n: ad.tensor(v) for n, v in xi.arrays().items()}
    J, cost, penalty, y = objective_tensor(leaves, op, m, cfg, times, t_shift)
    ad.backward(J)
    k = times[1] - times[0]
    trace = TrajectorySeries(m * op.period, times[0], k, y.value[:, 0].copy(), y.value[:, 1].copy())
    return Evaluation(float(J.value), {n: leaves[n].grad.copy() for n in leaves},
                      float(cost.value), float(penalty.value), trace)


@dataclass
class OcpConfig:
    max_iter: int = 100
    step_tol: float = 1e-8
    lr: float = 0.01
    optimizer: str = "adam"
    free: tuple = PARAM_NAMES
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-12


@dataclass
class OcpRecord:
    iteration: int
    cost: float
    penalty: float
    J: float
    a: list
    f: list
    tau: float
    p: float
    step_norm: float
    accepted: bool
    ce: float = float("nan")


@dataclass
class OcpResult:
    params: PulseParams
    best_params: PulseParams
    records: list
    stop_reason: str
    best_J: float


def optimize_pulse(xi, op, m, cost_cfg, times, ocp_cfg=None, t_shift=0.0):
    """Projected Adam (or plain gradient) iteration on the pulse parameters.

    Each parameter is rescaled by its bound so the step size is unit-free.
    Minimizes J for sense 'minimize', maximizes it otherwise. An iteration is
    accepted when it improves the best objective so far.
    """
    ocp_cfg = ocp_cfg or OcpConfig()
    sign = 1.0 if cost_cfg.sense == "minimize" else -1.0
    xi = project_bounds(xi)
    scales = {n: xi.bounds.for_name(n) for n in PARAM_NAMES}
    mom = {n: np.zeros_like(v) for n, v in xi.arrays().items()}
    vel = {n: np.zeros_like(v) for n, v in xi.arrays().items()}
    records = []
    best_val, best_xi = None, xi
    reason = "max_iter"
    for it in range(1, ocp_cfg.max_iter + 1):
        ev = objective(xi, op, m, cost_cfg, times, t_shift)
        J, grads, cost, pen = ev.J, ev.grads, ev.cost, ev.penalty
        if not np.isfinite(J):
            raise NumericalError(f"non-finite objective at iteration {it}", where=it, dump=xi.as_dict())
        accepted = best_val is None or sign * J < sign * best_val
        if accepted:
            best_val, best_xi = J, xi
        arrs = xi.arrays()
        new = {}
        step2 = 0.0
        for n in PARAM_NAMES:
            if n not in ocp_cfg.free:
                new[n] = arrs[n]
                continue
            g = sign * grads[n] * scales[n]  # gradient in normalized coordinates
            if ocp_cfg.optimizer == "adam":
                mom[n] = ocp_cfg.beta1 * mom[n] + (1 - ocp_cfg.beta1) * g
                vel[n] = ocp_cfg.beta2 * vel[n] + (1 - ocp_cfg.beta2) * g * g
                mh = mom[n] / (1 - ocp_cfg.beta1 ** it)
                vh = vel[n] / (1 - ocp_cfg.beta2 ** it)
                upd = ocp_cfg.lr * mh / (np.sqrt(vh) + ocp_cfg.eps)
            elif ocp_cfg.optimizer == "gd":
                upd = ocp_cfg.lr * g
            else:
                raise ConfigError(f"unknown OCP optimizer {ocp_cfg.optimizer!r}")
            new[n] = arrs[n] - upd * scales[n]
        nxt = project_bounds(xi.with_arrays(new))
        for n in PARAM_NAMES:
            step2 += float(np.sum(((nxt.arrays()[n] - arrs[n]) / scales[n]) ** 2))
        step = math.sqrt(step2)
        ce = conversion_efficiency(ev.trace, (cost_cfg.f_omega - cost_cfg.r, cost_cfg.f_omega + cost_cfg.r))
        records.append(OcpRecord(it, cost, pen, J, xi.a.tolist(), xi.f.tolist(), xi.tau, xi.p, step,
                                 accepted, ce))
        xi = nxt
        if step <= ocp_cfg.step_tol:
            reason = "step_tol"
            break
    return OcpResult(xi, best_xi, records, reason, best_val)


def write_trace_csv(path, result):
    n = len(result.records[0].a) if result.records else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "cost", "penalty", "J"] + [f"a_{i + 1}" for i in range(n)]
                   + [f"f_{i + 1}" for i in range(n)] + ["tau", "p", "step_norm"])
        for r in result.records:
            w.writerow([r.iteration] + [f"{v:.17g}" for v in (r.cost, r.penalty, r.J)]
                       + [f"{v:.17g}" for v in r.a] + [f"{v:.17g}" for v in r.f]
                       + [f"{r.tau:.17g}", f"{r.p:.17g}", f"{r.step_norm:.17g}"])
