import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import direct_dft
from thzoc.diagnostics import (conversion_efficiency, intensity_fluence, lorentz_permittivity, spectrum,
                               sqrt_permittivity, write_spectrum_csv)
from thzoc.errors import ConfigError
from thzoc.fem import Material
from thzoc.trajectory import TrajectorySeries

MAT = Material(0.5, 3.0, 1.5, 2.5, 0.1)
VAC = Material(0.0, 1.0, 1.0, 1.0, 0.0)


def test_permittivity_without_resonance_strength():
    np.testing.assert_array_equal(lorentz_permittivity(np.array([0.0, 1.0, 2.0]), VAC), 1.0)


def test_permittivity_limits():
    assert lorentz_permittivity(0.0, MAT) == 2.5
    assert abs(lorentz_permittivity(3e6, MAT) - 1.5) <= 1e-9
    expected = 1.5 - 1j * (2.5 - 1.5) * 3.0 / 0.5
    assert lorentz_permittivity(3.0, MAT) == pytest.approx(expected, rel=1e-14)


@given(st.floats(0.01, 50))
def test_sqrt_permittivity_conjugate_pair(nu):
    a, b = sqrt_permittivity(np.array([nu, -nu]), MAT)
    assert b == np.conj(a)
    assert a * a == pytest.approx(lorentz_permittivity(nu, MAT), rel=1e-12)
    assert a.real > 0


def tone(freq, N=256, k=1 / 32, amp=1.0):
    t = k * np.arange(N + 1)
    return TrajectorySeries(0.0, 0.0, k, amp * np.cos(2 * np.pi * freq * t), np.zeros(N + 1))


def test_intensity_constant_field_in_vacuum():
    tr = TrajectorySeries(0.0, 0.0, 0.1, np.full(41, 1.5), np.zeros(41))
    I, F = intensity_fluence(tr, VAC)
    np.testing.assert_allclose(I, 1.125, rtol=1e-13)
    assert F == pytest.approx(1.125, rel=1e-13)
    _, F2 = intensity_fluence(tr.replace(value=2 * tr.value), VAC)
    assert F2 == pytest.approx(4 * F, rel=1e-13)


def test_intensity_matches_convolution_oracle():
    N, k = 48, 1 / 8
    rng = np.random.default_rng(0)
    e = rng.normal(size=N)
    tr = TrajectorySeries(0.0, 0.0, k, np.append(e, e[0]), np.zeros(N + 1))
    I, _ = intensity_fluence(tr, MAT)
    nu = np.array([(j if j <= N // 2 else j - N) / (N * k) for j in range(N)])
    h = direct_dft(sqrt_permittivity(nu, MAT), inverse=True) / N
    field = np.array([sum(h[(t - s) % N] * e[s] for s in range(N)) for t in range(N)])
    # the real part symmetrizes the Nyquist bin, as the implementation does
    np.testing.assert_allclose(I[:N], 0.5 * np.real(field) ** 2, atol=1e-12)


def test_single_tone_fluence():
    f0 = 1.25
    _, F = intensity_fluence(tone(f0), MAT)
    assert F == pytest.approx(abs(lorentz_permittivity(f0, MAT)) / 4, rel=1e-10)


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_parseval(seed):
    e = np.random.default_rng(seed).normal(size=33)
    sp = spectrum(TrajectorySeries(0.0, 0.0, 0.1, e, np.zeros(33)))
    assert np.sum(e[:32] ** 2) == pytest.approx(sp.power.sum() / 32, rel=1e-10)


def test_conversion_efficiency_examples():
    band = (0.9, 1.1)
    assert conversion_efficiency(tone(1.0), band) >= 0.99
    assert conversion_efficiency(tone(3.0), band) <= 0.01
    mix = tone(1.0)
    mix = mix.replace(value=mix.value + tone(3.0).value)
    assert conversion_efficiency(mix, band) == pytest.approx(0.5, abs=0.01)
    zero = tone(1.0, amp=0.0)
    assert conversion_efficiency(zero, band) == 0.0
    with pytest.raises(ConfigError):
        conversion_efficiency(tone(1.0), (1.01, 1.02))


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.floats(0.0, 8.0), st.floats(0.3, 4.0))
def test_ce_complement(seed, lo, width):
    rng = np.random.default_rng(seed)
    tr = TrajectorySeries(0.0, 0.0, 1 / 32, rng.normal(size=129), np.zeros(129))
    hi = lo + width
    inside = conversion_efficiency(tr, (lo, hi))
    assert 0.0 <= inside <= 1.0
    sp = spectrum(tr)
    nu = np.abs(sp.freq)
    outside = sp.power[(nu < lo) | (nu > hi)].sum() / sp.power.sum()
    assert inside + outside == pytest.approx(1.0, abs=1e-12)


def test_spectrum_csv(tmp_path):
    sp = spectrum(tone(1.0, N=16, k=0.25))
    write_spectrum_csv(tmp_path / "s.csv", sp, "tap x=3")
    lines = open(tmp_path / "s.csv").read().splitlines()
    assert lines[0] == "# tap x=3" and lines[1] == "freq,re,im,power"
    assert len(lines) == 18
