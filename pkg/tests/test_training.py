import csv

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from oracles import adamw_scalar
from thzoc import ad
from thzoc.errors import ConfigError, ConvergenceError, ShapeError
from thzoc.nets import FnoConfig, SolutionOperator, init_fno
from thzoc.training import (AdamWState, LbfgsState, ParamPacker, TrainConfig, adamw_step,
                            average_parameters, lbfgs_direction, lbfgs_step, loss, train,
                            write_loss_csv)
from thzoc.trajectory import TrajectorySeries


def pair(dv, dd, n=10, k=0.1):
    z = np.zeros(n + 1)
    return (TrajectorySeries(0, 0, k, z + dv, z + dd), TrajectorySeries(0, 0, k, z, z))


# -- losses --------------------------------------------------------------------

def test_loss_zero_for_equal():
    a, _ = pair(0.3, -1.2)
    for kind in ("l2", "l_dt", "l_c1"):
        assert float(loss(kind, a, a).value) == 0.0


def test_loss_constant_value_difference():
    a, b = pair(0.7, 0.0)
    for kind in ("l2", "l_dt", "l_c1"):
        assert float(loss(kind, a, b).value) == pytest.approx(0.49, rel=1e-12)


def test_loss_constant_derivative_difference():
    # symbolic slab integral of the cubic with Hermite data (0, k d, 0, k d)
    s, k, d = sp.symbols("s k d", positive=True)
    cubic = k * d * (s - 2 * s ** 2 + s ** 3) + k * d * (-s ** 2 + s ** 3)
    exact = sp.integrate(cubic ** 2, (s, 0, 1))
    assert sp.simplify(exact - k ** 2 * d ** 2 / 210) == 0
    a, b = pair(0.0, 2.0, k=0.1)
    assert float(loss("l2", a, b).value) == 0.0
    assert float(loss("l_dt", a, b).value) == pytest.approx(4.0)
    assert float(loss("l_c1", a, b).value) == pytest.approx(float(exact.subs({k: 0.1, d: 2.0})), rel=1e-12)


def test_loss_errors():
    a, b = pair(1.0, 0.0)
    with pytest.raises(ConfigError):
        loss("l1", a, b)
    with pytest.raises(ShapeError):
        loss("l2", a, pair(0, 0, n=5)[0])
    with pytest.raises(ConfigError):
        loss("l_c1", np.zeros((4, 2)), np.ones((4, 2)))


@settings(max_examples=40)
@given(st.integers(0, 10_000))
def test_loss_ordering(seed):
    rng = np.random.default_rng(seed)
    p, t = rng.normal(size=(12, 2)), rng.normal(size=(12, 2))
    assert float(loss("l_dt", p, t).value) >= float(loss("l2", p, t).value)


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=8))
def test_l_c1_equals_l2_for_piecewise_constant_value_gap(vals):
    # equal derivatives and a constant value gap per slab: endpoints share the gap
    c = vals[0]
    p = np.stack([np.array(vals), np.array(vals[::-1])], axis=-1)
    t = p.copy()
    t[:, 0] -= c
    assert float(loss("l_c1", p, t, k=0.1).value) == pytest.approx(float(loss("l2", p, t).value), rel=1e-12)


def test_loss_gradients():
    rng = np.random.default_rng(1)
    t = rng.normal(size=(3, 9, 2))
    for kind in ("l2", "l_dt", "l_c1"):
        err = ad.gradcheck(lambda x: loss(kind, x[0], t, k=0.05), [rng.normal(size=(3, 9, 2))])
        assert err <= 1e-6


# -- AdamW ---------------------------------------------------------------------

def test_adamw_hand_examples():
    st_ = AdamWState(lr=0.1)
    assert adamw_step(st_, np.array([1.0]), np.array([2.0]))[0] == pytest.approx(0.9, abs=1e-8)
    st_ = AdamWState(lr=0.1, weight_decay=0.01)
    assert adamw_step(st_, np.array([1.0]), np.array([0.0]))[0] == pytest.approx(1 - 0.001, abs=1e-15)
    st_ = AdamWState(lr=0.1)
    x = adamw_step(st_, np.array([0.0, 0.0]), np.array([1.0, -1.0]))
    assert x[0] < 0 < x[1]


@pytest.mark.parametrize("wd", [0.0, 0.05])
def test_adamw_matches_scalar_oracle(wd):
    rng = np.random.default_rng(2)
    A = rng.normal(size=(5, 5))
    grad = lambda x: A.T @ (A @ x) + np.sin(x)
    x0 = rng.normal(size=5)
    st_ = AdamWState(lr=0.01, weight_decay=wd)
    x = x0.copy()
    for _ in range(100):
        x = adamw_step(st_, x, grad(x))
    ref = adamw_scalar(grad, x0, 0.01, 0.9, 0.999, 1e-8, wd, 100)
    assert np.abs(x - ref).max() <= 1e-12


def test_adamw_shape_mismatch():
    with pytest.raises(ShapeError):
        adamw_step(AdamWState(), np.zeros(2), np.zeros(3))


# -- L-BFGS ----------------------------------------------------------------------

def test_lbfgs_empty_history_is_steepest_descent():
    g = np.array([1.0, -2.0])
    np.testing.assert_array_equal(lbfgs_direction(LbfgsState(), g), -g)


def test_lbfgs_quadratic():
    D = np.array([1.0, 10.0])
    fn = lambda x: (0.5 * float(x @ (D * x)), D * x)
    st_ = LbfgsState(init_scale=0.1)
    x = np.array([1.0, 1.0])
    f, g = fn(x)
    for it in range(20):
        x, f, g = lbfgs_step(st_, x, f, g, fn)
        if np.linalg.norm(x) <= 1e-8:
            break
    assert np.linalg.norm(x) <= 1e-8


def test_lbfgs_curvature_guard():
    fn = lambda x: (float(np.cos(x[0])), np.array([-np.sin(x[0])]))
    st_ = LbfgsState()
    x = np.array([0.1])
    f, g = fn(x)
    x2, _, _ = lbfgs_step(st_, x, f, g, fn)
    assert x2[0] > x[0]
    assert st_.s_hist == []


def test_lbfgs_line_search_failure():
    fn = lambda x: (float("nan"), np.ones(1))
    st_ = LbfgsState(max_halvings=3)
    with pytest.raises(ConvergenceError):
        lbfgs_step(st_, np.zeros(1), 0.0, np.ones(1), fn)


# -- averaging and the loop ----------------------------------------------------------

def test_average_parameters():
    p, q = {"a": np.array([1.0, 2.0])}, {"a": np.array([3.0, -2.0])}
    np.testing.assert_array_equal(average_parameters([p, q])["a"], [2.0, 0.0])
    r = {"a": np.array([0.1, 0.7]), "b": np.array([1 / 3])}
    same = average_parameters([r, r, r])
    assert same["a"].tobytes() == r["a"].tobytes() and same["b"].tobytes() == r["b"].tobytes()
    with pytest.raises(ShapeError):
        average_parameters([p, {"a": np.zeros(3)}])


def test_packer_round_trip():
    params = {"w": np.arange(6.0).reshape(2, 3), "P": np.array([[1 + 2j, 3 - 1j]])}
    pk = ParamPacker(params)
    back = pk.unpack(pk.pack(params))
    for n in params:
        np.testing.assert_array_equal(back[n], params[n])


def _identity_task(seed=0):
    cfg = FnoConfig(layers=1, width=2, n_modes=2, proj_hidden=0, activation="identity", pad_fraction=0.0)
    op = SolutionOperator("fno", cfg, init_fno(cfg, np.random.default_rng(seed)), 0.1, 15, 1.0)
    X = np.random.default_rng(seed + 1).normal(size=(4, 16, 2))
    return op, X


def test_identity_fit():
    op, X = _identity_task()
    params, rec = train(op, TrainConfig(epochs=500, lr=0.02, loss="l2"), X, X)
    op.params = params
    out = op.forward(ad.tensor(X)).value
    assert float(np.mean((out - X)[..., 0] ** 2)) <= 1e-6


def test_workers_on_replicated_data_match_single():
    op, X = _identity_task(3)
    cfg1 = TrainConfig(epochs=5, lr=0.01)
    cfg2 = TrainConfig(epochs=5, lr=0.01, workers=2)
    p1, _ = train(op, cfg1, X, X)
    p2, _ = train(op, cfg2, np.concatenate([X, X]), np.concatenate([X, X]))
    for n in p1:
        assert p1[n].tobytes() == p2[n].tobytes()


def test_best_so_far_and_csv(tmp_path):
    op, X = _identity_task(4)
    _, rec = train(op, TrainConfig(epochs=12, lr=0.05), X[:3], X[:3], X[3:], X[3:])
    best = [r.best_val for r in rec]
    assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
    assert best[-1] == min(r.val_loss for r in rec)
    write_loss_csv(tmp_path / "loss.csv", rec)
    rows = list(csv.reader(open(tmp_path / "loss.csv")))
    assert rows[0] == ["epoch", "train_loss", "val_loss", "wall_seconds"]
    assert len(rows) == 13 and float(rows[1][1]) == rec[0].train_loss


def test_train_config_validation():
    for bad in ({"workers": 0}, {"loss": "l1"}, {"optimizer": "sgd"}, {"epochs": -1}):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


def test_lbfgs_training_runs():
    op, X = _identity_task(5)
    _, rec = train(op, TrainConfig(epochs=10, optimizer="lbfgs", loss="l2"), X, X)
    assert rec[-1].train_loss < rec[0].train_loss
