"""Lorentz permittivity, intensity and fluence, conversion efficiency and spectra."""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


def lorentz_permittivity(nu, material):
    """eps_omega + eps_delta nu_t^2 / (nu_t^2 - nu^2 + i gamma0 nu)."""
    nu = np.asarray(nu, dtype=float)
    m = material
    if m.eps_Omega == m.eps_omega:
        return np.full(nu.shape, m.eps_omega, dtype=complex)
    nt2 = m.nu_t ** 2
    return m.eps_omega + (m.eps_Omega - m.eps_omega) * nt2 / (nt2 - nu ** 2 + 1j * m.gamma0 * nu)


def _freqs(n, k):
    return np.fft.fftfreq(n, d=k)


def sqrt_permittivity(nu, material):
    """Principal square root of eps_r with the imaginary part following the sign of nu.

    For real fields the negative-frequency half must be the conjugate of the
    positive half; evaluating at |nu| and conjugating enforces that.
    """
    nu = np.asarray(nu, float)
    root = np.sqrt(lorentz_permittivity(np.abs(nu), material).astype(complex))
    return np.where(nu < 0, np.conj(root), root)


def intensity_fluence(trace, material):
    """Intensity series 0.5 |sqrt(eps_r) * E|^2 and its time average.

    The convolution is applied in the frequency domain on the N samples that
    make up one period of the grid (the closing sample repeats the first).
    """
    e = np.asarray(trace.value, float)
    n = e.size - 1 if e.size > 2 else e.size
    E = np.fft.fft(e[:n])
    field = np.real(np.fft.ifft(E * sqrt_permittivity(_freqs(n, trace.k), material)))
    field = np.append(field, field[0]) if n < e.size else field
    intensity = 0.5 * field ** 2
    horizon = trace.k * (intensity.size - 1)
    fluence = np.trapezoid(intensity, dx=trace.k) / horizon
    return intensity, float(fluence)


@dataclass
class Spectrum:
    freq: np.ndarray
    amplitude: np.ndarray

    @property
    def power(self):
        return np.abs(self.amplitude) ** 2


def spectrum(trace):
    """Unnormalized DFT of the value channel (closing sample dropped), signed frequencies."""
    e = np.asarray(trace.value, float)
    n = e.size - 1
    return Spectrum(_freqs(n, trace.k), np.fft.fft(e[:n]))


def conversion_efficiency(trace, band):
    """Share of the spectral energy of the trace inside |nu| in [lo, hi]."""
    lo, hi = band
    sp = spectrum(trace)
    nu = np.abs(sp.freq)
    mask = (nu >= lo) & (nu <= hi)
    if not mask.any():
        raise ConfigError("frequency band contains no grid frequency")
    total = sp.power.sum()
    if total == 0.0:
        return 0.0
    return float(sp.power[mask].sum() / total)


def write_spectrum_csv(path, spec, header_extra=None):
    with open(path, "w", newline="") as fh:
        if header_extra:
            fh.write(f"# {header_extra}\n")
        w = csv.writer(fh)
        w.writerow(["freq", "re", "im", "power"])
        for f, a, p in zip(spec.freq, spec.amplitude, spec.power):
            w.writerow([f"{f:.17g}", f"{a.real:.17g}", f"{a.imag:.17g}", f"{p:.17g}"])
