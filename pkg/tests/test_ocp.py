import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import direct_dft
from thzoc import ad
from thzoc.errors import ConfigError, NumericalError
from thzoc.nets import FnoConfig, SolutionOperator, identity_operator, init_fno
from thzoc.ocp import (PARAM_NAMES, CostConfig, OcpConfig, PulseBounds, PulseParams, bump_psi, cost_G,
                       objective, objective_tensor, optimize_pulse, project_bounds, sample_pulse,
                       write_trace_csv)
from thzoc.trajectory import TrajectorySeries


def pulse(**kw):
    args = dict(tau=1.0, p=1.0, a=[1.0], phi=[0.0], zeta=[0.0], f=[0.0])
    args.update(kw)
    return PulseParams(**args)


def test_pulse_examples():
    assert sample_pulse(pulse(p=2.7, tau=0.3), [0.0, 0.1]).value[0] == pytest.approx(1.0)
    assert sample_pulse(pulse(a=[2.0], phi=[math.pi / 2]), [0.0, 0.1]).value[0] == pytest.approx(0.0, abs=1e-15)
    assert sample_pulse(pulse(tau=1.3), [1.3, 1.4]).value[0] == pytest.approx(0.25)
    shifted = sample_pulse(pulse(tau=1.3), [4.3, 4.4], t_shift=3.0)
    assert shifted.value[0] == pytest.approx(0.25)


def test_pulse_errors():
    with pytest.raises(ConfigError):
        sample_pulse(pulse(tau=0.0), [0.0, 0.1])
    with pytest.raises(ConfigError):
        sample_pulse(pulse(), [0.0, 0.1, 0.3])
    with pytest.raises(ConfigError):
        PulseParams(1.0, 1.0, [1.0, 1.0], [0.0, 0.0, 0.0], [0.0], [1.0])


def test_pulse_derivative_channel():
    xi = PulseParams(0.8, 1.6, [0.7, 0.4], [0.3, 1.0], [0.2, 0.0], [1.1, 2.3])
    t = np.linspace(-2, 2, 4001)
    s = sample_pulse(xi, t)
    fd = np.gradient(s.value, t[1] - t[0])
    assert np.abs(fd[2:-2] - s.derivative[2:-2]).max() <= 1e-4 * np.abs(s.derivative).max()


def test_project_bounds():
    b = PulseBounds(a_max=2.0)
    xi = PulseParams(1.0, 1.0, [0.5, 3.0], [7.0, -1.0], [0.2, 0.2], [1.0, 1.0], b)
    pr = project_bounds(xi)
    np.testing.assert_array_equal(pr.a, [0.5, 2.0])
    np.testing.assert_allclose(pr.phi, [2 * math.pi, 0.0])
    again = project_bounds(pr)
    for n in PARAM_NAMES:
        np.testing.assert_array_equal(again.arrays()[n], pr.arrays()[n])
    ok = PulseParams(1.0, 1.0, [0.5], [1.0], [0.1], [1.0], b)
    for n in PARAM_NAMES:
        np.testing.assert_array_equal(project_bounds(ok).arrays()[n], ok.arrays()[n])


@given(st.lists(st.floats(-20, 20), min_size=6, max_size=6))
def test_projection_never_grows(vals):
    xi = PulseParams(*vals[:2], [vals[2]], [vals[3]], [vals[4]], [vals[5]])
    pr = project_bounds(xi)
    for n in PARAM_NAMES:
        assert np.all(np.abs(pr.arrays()[n]) <= np.abs(xi.arrays()[n]))


def test_bump_psi_values():
    assert bump_psi(0.2, 0.2, 0.1) == pytest.approx(math.exp(-1))
    assert bump_psi(0.3, 0.2, 0.1) == 0.0 and bump_psi(0.1, 0.2, 0.1) == 0.0
    assert bump_psi(0.25, 0.2, 0.1) == pytest.approx(math.exp(-4 / 3))
    assert bump_psi(0.15, 0.2, 0.1) == pytest.approx(0.26359713811572677)
    with pytest.raises(ConfigError):
        bump_psi(0.2, 0.2, 0.0)


def _tone(freq, N=320, k=1 / 16, amp=1.0):
    t = k * np.arange(N + 1)
    return TrajectorySeries(0.0, 0.0, k, amp * np.sin(2 * np.pi * freq * t), np.zeros(N + 1))


def oracle_cost(trace, cfg):
    n, k = trace.n_steps, trace.k
    Y = direct_dft(trace.value[:n])
    total = 0.0
    for j in range(n):
        nu = (j if j <= n // 2 else j - n) / (n * k)
        d2 = (abs(nu) - cfg.f_omega) ** 2
        if d2 < cfg.r ** 2:
            total += cfg.psi_scale * math.exp(cfg.r ** 2 / (d2 - cfg.r ** 2)) * abs(k * Y[j]) ** 2 / (n * k)
    return total


def test_cost_pure_tone():
    cfg = CostConfig(0.2, 0.1)
    tr = _tone(0.2)
    expected = math.exp(-1) * tr.k * tr.n_steps / 2
    assert cost_G(tr, cfg) == pytest.approx(expected, rel=1e-12)
    assert cost_G(tr, cfg) == pytest.approx(oracle_cost(tr, cfg), rel=1e-12)
    assert cost_G(_tone(0.2 + 1.0), cfg) == pytest.approx(0.0, abs=1e-20)
    assert cost_G(_tone(0.2, amp=2.0), cfg) == pytest.approx(4 * cost_G(tr, cfg), rel=1e-13)


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.integers(1, 40))
def test_cost_random_and_shift(seed, shift):
    rng = np.random.default_rng(seed)
    N, k = 64, 1 / 8
    v = rng.normal(size=N)
    cfg = CostConfig(0.9, 0.35)
    tr = TrajectorySeries(0.0, 0.0, k, np.append(v, v[0]), np.zeros(N + 1))
    assert cost_G(tr, cfg) == pytest.approx(oracle_cost(tr, cfg), rel=1e-10)
    w = np.roll(v, shift)
    tr2 = tr.replace(value=np.append(w, w[0]))
    assert cost_G(tr2, cfg) == pytest.approx(cost_G(tr, cfg), rel=1e-12)


def test_cost_nyquist_error():
    with pytest.raises(ConfigError):
        cost_G(_tone(0.2, k=0.5, N=40), CostConfig(0.9, 0.2))
    with pytest.raises(ConfigError):
        CostConfig(0.2, 0.1, sense="up")


TIMES = np.arange(129) / 16


def test_objective_collapses_to_cost():
    xi = PulseParams(1.0, 1.0, [0.6, 0.3], [0.1, 0.4], [0.0, 0.0], [1.0, 2.0])
    op = identity_operator(1 / 16, 128, 1.0)
    cfg = CostConfig(1.0, 0.3)
    ev = objective(xi, op, 0, cfg, TIMES, 4.0)
    assert ev.J == pytest.approx(cost_G(sample_pulse(xi, TIMES, 4.0), cfg), rel=1e-14)
    assert ev.penalty == 0.0
    cfg = CostConfig(1.0, 0.3, alpha=0.5)
    ev1 = objective(xi, op, 2, cfg, TIMES, 4.0)
    ev2 = objective(xi.with_arrays({**xi.arrays(), "a": 2 * xi.a}), op, 2, cfg, TIMES, 4.0)
    assert ev2.cost == pytest.approx(4 * ev1.cost, rel=1e-12)
    assert ev2.penalty == pytest.approx(4 * ev1.penalty, rel=1e-12)
    assert ev1.trace.x == 2.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_minimize_objective_nonnegative(seed):
    rng = np.random.default_rng(seed)
    xi = PulseParams(rng.uniform(0.3, 2), rng.uniform(0.5, 3), rng.uniform(0, 2, 2), rng.uniform(0, 6, 2),
                     rng.uniform(0, 1, 2), rng.uniform(0, 3, 2))
    ev = objective(xi, identity_operator(1 / 16, 128, 1.0), 1, CostConfig(1.0, 0.3, alpha=0.1),
                   TIMES, 4.0)
    assert ev.J >= 0.0


def _small_fno(seed=0):
    cfg = FnoConfig(layers=1, width=3, n_modes=4, proj_hidden=0)
    return SolutionOperator("fno", cfg, init_fno(cfg, np.random.default_rng(seed)), 1 / 16, 128, 1.0)


@pytest.mark.parametrize("sense", ["minimize", "maximize"])
def test_objective_gradient_matches_fd(sense):
    op = _small_fno()
    cfg = CostConfig(1.0, 0.4, alpha=0.05, sense=sense)
    xi = PulseParams(1.2, 1.5, [0.6, 0.3], [0.1, 0.4], [0.05, 0.02], [1.0, 1.7])
    arrs = xi.arrays()
    f = lambda xs: objective_tensor(dict(zip(PARAM_NAMES, xs)), op, 2, cfg, TIMES, 4.0)[0]
    assert ad.gradcheck(f, [arrs[n] for n in PARAM_NAMES], h=1e-6) <= 1e-5
    ev = objective(xi, op, 2, cfg, TIMES, 4.0)
    h = 1e-6
    for i in range(2):
        up, dn = xi.a.copy(), xi.a.copy()
        up[i] += h
        dn[i] -= h
        fd = (objective(xi.with_arrays({**arrs, "a": up}), op, 2, cfg, TIMES, 4.0).J
              - objective(xi.with_arrays({**arrs, "a": dn}), op, 2, cfg, TIMES, 4.0).J) / (2 * h)
        assert ev.grads["a"][i] == pytest.approx(fd, rel=1e-5)


def test_stationary_start_terminates():
    xi = PulseParams(1.0, 1.0, [0.0, 0.0], [0.3, 0.1], [0.0, 0.0], [1.0, 2.0])
    res = optimize_pulse(xi, identity_operator(1 / 16, 128, 1.0), 0, CostConfig(1.0, 0.3, alpha=0.1),
                         TIMES, OcpConfig(max_iter=50), 4.0)
    assert res.stop_reason == "step_tol" and len(res.records) == 1
    assert res.records[0].step_norm <= 1e-8


def test_high_band_amplitudes_driven_to_zero(tmp_path):
    # plain gradient steps: the leak of the low carriers into the band is tiny,
    # so their amplitudes barely move while the in-band ones are clamped to 0
    xi = PulseParams(1.5, 1.0, [0.5, 0.5, 0.5, 0.5], [0.0, 0.5, 1.0, 1.5], [0.0] * 4, [1.0, 0.9, 2.0, 1.8],
                     PulseBounds(a_max=1.0))
    op = identity_operator(1 / 16, 128, 1.0)
    res = optimize_pulse(xi, op, 1, CostConfig(1.9, 0.25), TIMES,
                         OcpConfig(max_iter=60, lr=1.0, optimizer="gd", free=("a",)), 4.0)
    a = res.best_params.a
    assert a[2] <= 0.05 * 0.5 and a[3] <= 0.05 * 0.5
    assert a[0] > 0.4 and a[1] > 0.4
    J = [r.J for r in res.records]
    assert min(J) < 0.01 * J[0]
    write_trace_csv(tmp_path / "t.csv", res)
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["iter", "cost", "penalty", "J", "a_1", "a_2", "a_3", "a_4",
                       "f_1", "f_2", "f_3", "f_4", "tau", "p", "step_norm"]
    assert len(rows) == len(res.records) + 1


def test_argmin_invariant_under_psi_scaling():
    xi = PulseParams(1.0, 1.0, [0.5, 0.5], [0.0, 0.5], [0.0, 0.0], [1.0, 2.0], PulseBounds(a_max=1.0))
    op = _small_fno(1)
    runs = []
    for scale in (1.0, 5.0):
        res = optimize_pulse(xi, op, 1, CostConfig(2.0, 0.3, psi_scale=scale), TIMES,
                             OcpConfig(max_iter=20, lr=0.05, free=("a", "f")), 4.0)
        runs.append(res.best_params)
    for n in ("a", "f"):
        np.testing.assert_allclose(runs[0].arrays()[n], runs[1].arrays()[n], rtol=1e-8, atol=1e-10)


def test_nan_objective_aborts():
    op = SolutionOperator("identity", None, {}, 1 / 16, 128, 1.0, (float("nan"), 1.0))
    with pytest.raises(NumericalError):
        optimize_pulse(pulse(), op, 1, CostConfig(1.0, 0.3), TIMES, OcpConfig(max_iter=3), 4.0)
