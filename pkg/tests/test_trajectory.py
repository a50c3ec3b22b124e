import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thzoc.convergence import convergence_table, monotone
from thzoc.errors import ConfigError, ShapeError
from thzoc.trajectory import (TrajectorySeries, collocation_points, dataset_read, dataset_write, eoc,
                              error_norms, hermite_reconstruct)


def series_of(fn, dfn, k=0.1, n=20, x=0.0, t0=0.0):
    t = t0 + k * np.arange(n + 1)
    return TrajectorySeries(x, t0, k, fn(t), dfn(t))


def test_collocation_points():
    assert collocation_points(1.0, 3) == [1.0, 2.0, 3.0]
    assert collocation_points(0.5, 1) == [0.5]
    with pytest.raises(ConfigError):
        collocation_points(0.0, 2)
    with pytest.raises(ConfigError):
        collocation_points(1.0, 0)


def test_series_validation():
    with pytest.raises(ShapeError):
        TrajectorySeries(0, 0, 0.1, np.zeros(3), np.zeros(4))
    with pytest.raises(ConfigError):
        TrajectorySeries(0, 0, 0.1, np.zeros(1), np.zeros(1))


def test_reconstruct_exact_for_cubics():
    f = lambda t: 2 * t ** 3 - t ** 2 + 0.5 * t - 3
    df = lambda t: 6 * t ** 2 - 2 * t + 0.5
    s = series_of(f, df)
    t = np.linspace(0, 2, 97)
    v, d = hermite_reconstruct(s, t)
    np.testing.assert_allclose(v, f(t), atol=1e-12)
    np.testing.assert_allclose(d, df(t), atol=1e-11)
    assert hermite_reconstruct(s, 0.1) == pytest.approx((f(0.1), df(0.1)))
    with pytest.raises(ConfigError):
        hermite_reconstruct(s, 2.5)


def test_reconstruct_fourth_order():
    t = np.linspace(0, 1, 301)
    errs = []
    for n in (10, 20):
        s = series_of(np.sin, np.cos, k=1.0 / n, n=n)
        errs.append(np.abs(hermite_reconstruct(s, t)[0] - np.sin(t)).max())
    assert errs[0] / errs[1] == pytest.approx(16, rel=0.15)


def test_error_norms_constant_difference():
    one = series_of(lambda t: np.ones_like(t), lambda t: np.zeros_like(t), k=0.25, n=8)
    zero = one.replace(value=np.zeros(9))
    a, b = [one, one.replace(x=1.0)], [zero, zero.replace(x=1.0)]
    linf, l2 = error_norms(a, b)
    assert linf == pytest.approx(np.sqrt(2))
    assert l2 == pytest.approx(np.sqrt(2 * 2.0))   # two points, T = 2
    linf, l2 = error_norms(one, zero)
    assert (linf, l2) == pytest.approx((1.0, np.sqrt(2.0)))


def test_error_norms_grid_mismatch():
    a = series_of(np.sin, np.cos, k=0.1, n=10)
    with pytest.raises(ShapeError):
        error_norms(a, series_of(np.sin, np.cos, k=0.05, n=10))


@settings(max_examples=40)
@given(st.integers(0, 10_000))
def test_error_norms_metric(seed):
    rng = np.random.default_rng(seed)
    mk = lambda: TrajectorySeries(0.0, 0.0, 0.1, rng.normal(size=11), rng.normal(size=11))
    a, b, c = mk(), mk(), mk()
    assert error_norms(a, a) == (0.0, 0.0)
    ab, ba = error_norms(a, b), error_norms(b, a)
    assert ab == pytest.approx(ba)
    ac, bc = error_norms(a, c), error_norms(b, c)
    for i in range(2):
        assert ac[i] <= ab[i] + bc[i] + 1e-12


@given(st.floats(-3, 3), st.integers(0, 1000))
def test_reconstruction_linear(lam, seed):
    rng = np.random.default_rng(seed)
    a = TrajectorySeries(0.0, 0.0, 0.1, rng.normal(size=6), rng.normal(size=6))
    b = TrajectorySeries(0.0, 0.0, 0.1, rng.normal(size=6), rng.normal(size=6))
    ab = a.replace(value=a.value + lam * b.value, derivative=a.derivative + lam * b.derivative)
    t = np.linspace(0, 0.5, 17)
    va, da = hermite_reconstruct(a, t)
    vb, db = hermite_reconstruct(b, t)
    v, d = hermite_reconstruct(ab, t)
    np.testing.assert_allclose(v, va + lam * vb, atol=1e-12)
    np.testing.assert_allclose(d, da + lam * db, atol=1e-10)


def test_eoc():
    np.testing.assert_allclose(eoc([1.0, 1 / 16, 1 / 256]), [4.0, 4.0])


def test_dataset_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ser = [TrajectorySeries(x, 0.5, 0.125, rng.normal(size=9), rng.normal(size=9)) for x in (0.0, 1.0)]
    path = tmp_path / "d.thzd"
    dataset_write(path, ser, {"material": {"chi2": 0.1}})
    back, manifest = dataset_read(path)
    assert manifest["N"] == 8 and manifest["points"] == [0.0, 1.0]
    assert manifest["material"] == {"chi2": 0.1} and manifest["pulse"] is None
    for a, b in zip(ser, back):
        assert a.value.tobytes() == b.value.tobytes()
        assert a.derivative.tobytes() == b.derivative.tobytes()
        assert (a.x, a.t0, a.k) == (b.x, b.t0, b.k)

    blob = path.read_bytes()
    (path.parent / "cut.thzd").write_bytes(blob[:-8])
    with pytest.raises(ConfigError, match="payload length"):
        dataset_read(path.parent / "cut.thzd")
    flipped = bytearray(blob)
    flipped[-1] ^= 1
    (path.parent / "flip.thzd").write_bytes(bytes(flipped))
    with pytest.raises(ConfigError, match="checksum"):
        dataset_read(path.parent / "flip.thzd")


def test_dataset_k_mismatch(tmp_path):
    ser = TrajectorySeries(0.0, 0.0, 0.1, np.zeros(5), np.zeros(5))
    path = tmp_path / "d.thzd"
    dataset_write(path, ser, {"t_end": 0.0})
    blob = path.read_bytes().replace(b'"t_end": 0.4', b'"t_end": 0.9')
    path.write_bytes(blob)
    with pytest.raises(ConfigError, match="inconsistent"):
        dataset_read(path)


def test_convergence_short_table():
    results, rates = convergence_table(levels=3)
    assert monotone(results)
    assert rates[("e", "l2")][-1] >= 3.5
