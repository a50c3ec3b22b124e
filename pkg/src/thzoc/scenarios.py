"""Ready-made set-ups: the poled crystal driven by a boundary pulse, and
datasets of interface trajectories built from it."""

import time
from dataclasses import dataclass, field

import numpy as np

from .fem import DomainSpec, Material, build_domain
from .gcc import BoundarySignal, GccProblem, NewtonConfig, march
from .ocp import PulseParams, sample_pulse
from .pml import PmlProfile, default_sigma_max
from .trajectory import collocation_points


@dataclass
class CrystalSetup:
    """Crystal of n_periods poling periods on [0, n_periods * period], PML behind it.

    Each period holds `domains_per_period` oppositely oriented domains, so the
    map from one interface to the next is the same for every period.
    """

    material: Material = field(default_factory=lambda: Material(0.5, 3.0, 1.5, 2.5, 0.1))
    period: float = 1.0
    n_periods: int = 3
    domains_per_period: int = 2
    pml_width: float = 1.0
    elems_per_unit: int = 16
    k: float = 1.0 / 32
    n_steps: int = 384
    t_shift: float = 3.0
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    pml_grade: int = 2
    pml_attenuation: float = 1e-6
    abs_value: bool = False

    @property
    def length(self):
        return self.period * self.n_periods

    @property
    def times(self):
        return self.k * np.arange(self.n_steps + 1)


def build_crystal(setup):
    nd = setup.domains_per_period
    dom = DomainSpec(0.0, setup.length, setup.period / nd, setup.n_periods * nd, setup.pml_width, 0.0)
    n_phys = int(round(setup.elems_per_unit * setup.length))
    n_pml = int(round(setup.elems_per_unit * setup.pml_width))
    _, space = build_domain(dom, n_phys, n_pml)
    prof = None
    if setup.pml_width > 0:
        smax = default_sigma_max(setup.pml_width, setup.pml_grade, setup.material.eps_omega,
                                 setup.pml_attenuation)
        prof = PmlProfile(smax, setup.pml_width, setup.length, setup.pml_grade)
    return GccProblem(space, setup.material, dom, prof, abs_value=setup.abs_value)


def interface_points(setup):
    return [0.0] + list(collocation_points(setup.period, setup.n_periods))


def simulate_pulse(setup, xi, problem=None):
    """March the crystal with the pulse xi on the left boundary.

    Returns the (value, derivative) trajectories at x = 0 and every interface.
    """
    def left(t):
        one = sample_pulse(xi, np.array([t, t + setup.k]), setup.t_shift)
        return one.value[0], one.derivative[0]
    return simulate_signal(setup, left, problem)


def plane_wave_signal(freq, phase, amp=1.0, ramp=1.0):
    """amp sin(2 pi f t + phase), switched on by a C1 smoothstep over [0, ramp]."""
    w = 2 * np.pi * freq

    def g(t):
        s = min(max(t / ramp, 0.0), 1.0)
        on, don = 3 * s * s - 2 * s ** 3, (6 * s - 6 * s * s) / ramp
        return (amp * on * np.sin(w * t + phase),
                amp * (don * np.sin(w * t + phase) + on * w * np.cos(w * t + phase)))
    return g


def plane_wave_runs(setup, freqs, count, rng, problem=None):
    """`count` plane waves cycling through `freqs` with random phases; returns (runs, seconds)."""
    problem = problem or build_crystal(setup)
    t = time.perf_counter()
    runs = []
    for i in range(count):
        g = plane_wave_signal(freqs[i % len(freqs)], rng.uniform(0, 2 * np.pi))
        runs.append(simulate_signal(setup, g, problem))
    return runs, time.perf_counter() - t


def simulate_signal(setup, left, problem=None):
    """March from rest with left(t) -> (g, dg/dt) as Dirichlet data; returns interface taps."""
    problem = problem or build_crystal(setup)
    J = problem.space.n_dofs
    initial = {f: np.zeros(J) for f in problem.fields}
    for f in problem.fields:
        initial["d" + f] = np.zeros(J)
    res = march(problem, initial, BoundarySignal(left=left), None, setup.n_steps, setup.k,
                setup.newton, taps=interface_points(setup))
    return res.taps


def random_pulses(rng, count, n_comp, base):
    """Draws around a base pulse: amplitudes, phases and frequencies jittered."""
    out = []
    for _ in range(count):
        a = base.a * rng.uniform(0.3, 1.2, size=base.n)
        phi = rng.uniform(0.0, 2 * np.pi, size=base.n)
        f = base.f * rng.uniform(0.95, 1.05, size=base.n)
        tau = base.tau * rng.uniform(0.8, 1.2)
        out.append(PulseParams(tau, base.p, a, phi, base.zeta, f, base.bounds))
    return out


def generate_dataset(setup, pulses, problem=None):
    """Runs every pulse; returns (list of tap lists, wall seconds)."""
    problem = problem or build_crystal(setup)
    t = time.perf_counter()
    runs = [simulate_pulse(setup, xi, problem) for xi in pulses]
    return runs, time.perf_counter() - t


def interface_pairs(runs, first, last):
    """Input/target channel arrays for the maps tap_i -> tap_{i+1}, first <= i < last."""
    X, Y = [], []
    for taps in runs:
        for i in range(first, last):
            X.append(taps[i].channels())
            Y.append(taps[i + 1].channels())
    return np.array(X), np.array(Y)


def delay_augment(X, Y, shifts):
    """Append copies of each pair delayed by `shifts` samples.

    From rest, a delayed boundary trace produces the equally delayed response,
    and cutting both at the window end keeps the pair consistent (causality),
    so these are exact samples of the same map.
    """
    X, Y = np.asarray(X), np.asarray(Y)
    outX, outY = [X], [Y]
    for d in shifts:
        d = int(d)
        if d <= 0:
            continue
        if d >= X.shape[1]:
            raise ValueError("shift longer than the trajectory")
        sx, sy = np.zeros_like(X), np.zeros_like(Y)
        sx[:, d:] = X[:, :-d]
        sy[:, d:] = Y[:, :-d]
        outX.append(sx)
        outY.append(sy)
    return np.concatenate(outX), np.concatenate(outY)
