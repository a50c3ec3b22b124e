"""Perfectly matched layer for the 1D Lorentz-ADE system.

Inside the layer two auxiliary fields appear:

    dR/dt + alpha R - eps_omega sigma E = 0
    dQ/dt + alpha~ Q - sigma~ dE/dx   = 0

and the E equation gains dQ/dx + d/dt(eps_omega sigma E - alpha R).
With alpha = 0 and alpha~ = sigma~ = sigma the layer is the exact complex
coordinate stretch s = 1 + i sigma / omega for the non-dispersive part.
"""

from dataclasses import dataclass

import numpy as np

from .fem import coefficient_at_quadrature, weighted_advection, weighted_mass

# unknown blocks per dof (interleaved) and the equation occupying each row block
E2, E3, A2, A3, R2, R3, Q2, Q3 = range(8)
ROW_ECOL, ROW_EVAR, ROW_ACOL, ROW_AVAR, ROW_RCOL, ROW_RVAR, ROW_QCOL, ROW_QVAR = range(8)


def default_sigma_max(width, grade_power=2, eps_omega=1.0, attenuation=1e-6):
    """Peak absorption giving the requested normal-incidence round-trip attenuation."""
    return (grade_power + 1) * np.log(1.0 / attenuation) / (2.0 * np.sqrt(eps_omega) * width)


@dataclass(frozen=True)
class PmlProfile:
    sigma_max: float
    width: float
    x_start: float
    grade_power: int = 2
    alpha_scale: float = 0.0

    @property
    def active(self):
        return self.sigma_max > 0 and self.width > 0


def pml_profiles(x, profile):
    """Return (sigma, alpha, sigma~, alpha~, kappa) at x; zero absorption outside the layer."""
    x = np.asarray(x, dtype=float)
    if profile is None or profile.width <= 0:
        z = np.zeros_like(x)
        return z, z, z, z, np.ones_like(x)
    rel = (x - profile.x_start) / profile.width
    inside = (rel > 0) & (rel <= 1 + 1e-12)
    sigma = np.where(inside, profile.sigma_max * np.clip(rel, 0, 1) ** profile.grade_power, 0.0)
    alpha = profile.alpha_scale * sigma
    return sigma, alpha, sigma.copy(), sigma.copy(), np.ones_like(x)


def hermite_mean(w0, w1, w2, w3, k):
    """Integral over the slab of the cubic with Hermite coefficients w0..w3."""
    return k * (0.5 * w0 + w1 / 12.0 + 0.5 * w2 - w3 / 12.0)


class PmlBlocks:
    """Assembled PML operators and their contributions to the slab system."""

    def __init__(self, space, profile, material):
        self.profile = profile
        sig = coefficient_at_quadrature(space, lambda x: pml_profiles(x, profile)[0])
        alp = coefficient_at_quadrature(space, lambda x: pml_profiles(x, profile)[1])
        sigt = coefficient_at_quadrature(space, lambda x: pml_profiles(x, profile)[2])
        alpt = coefficient_at_quadrature(space, lambda x: pml_profiles(x, profile)[3])
        self.M_se = weighted_mass(space, material.eps_omega * sig)
        self.M_a = weighted_mass(space, alp)
        self.M_at = weighted_mass(space, alpt)
        self.G = weighted_advection(space, sigt)
        self.C = weighted_advection(space, np.ones_like(sig))

    def linear_terms(self, mass, k):
        """(row block, column block, matrix, scale) entries of the constant Jacobian."""
        M, Mse, Ma, Mat, G, C = mass, self.M_se, self.M_a, self.M_at, self.G, self.C
        return [
            # additions to the E collocation and E variational rows
            (ROW_ECOL, Q2, C, 1.0), (ROW_ECOL, E3, Mse, 1.0 / k), (ROW_ECOL, R3, Ma, -1.0 / k),
            (ROW_EVAR, Q2, C, 0.5 * k), (ROW_EVAR, Q3, C, -k / 12.0),
            (ROW_EVAR, E2, Mse, 1.0), (ROW_EVAR, R2, Ma, -1.0),
            # R equations
            (ROW_RCOL, R3, M, 1.0 / k), (ROW_RCOL, R2, Ma, 1.0), (ROW_RCOL, E2, Mse, -1.0),
            (ROW_RVAR, R2, M, 1.0), (ROW_RVAR, R2, Ma, 0.5 * k), (ROW_RVAR, R3, Ma, -k / 12.0),
            (ROW_RVAR, E2, Mse, -0.5 * k), (ROW_RVAR, E3, Mse, k / 12.0),
            # Q equations
            (ROW_QCOL, Q3, M, 1.0 / k), (ROW_QCOL, Q2, Mat, 1.0), (ROW_QCOL, E2, G, -1.0),
            (ROW_QVAR, Q2, M, 1.0), (ROW_QVAR, Q2, Mat, 0.5 * k), (ROW_QVAR, Q3, Mat, -k / 12.0),
            (ROW_QVAR, E2, G, -0.5 * k), (ROW_QVAR, E3, G, k / 12.0),
        ]

    def residual(self, mass, k, e, r, q):
        """Residual contributions. e, r, q are (4, J) coefficient arrays (w0..w3)."""
        M, Mse, Ma, Mat, G, C = mass, self.M_se, self.M_a, self.M_at, self.G, self.C
        Se = hermite_mean(*e, k)
        Sr = hermite_mean(*r, k)
        Sq = hermite_mean(*q, k)
        ecol = C @ q[2] + (Mse @ e[3] - Ma @ r[3]) / k
        evar = C @ Sq + Mse @ (e[2] - e[0]) - Ma @ (r[2] - r[0])
        rcol = M @ r[3] / k + Ma @ r[2] - Mse @ e[2]
        rvar = M @ (r[2] - r[0]) + Ma @ Sr - Mse @ Se
        qcol = M @ q[3] / k + Mat @ q[2] - G @ e[2]
        qvar = M @ (q[2] - q[0]) + Mat @ Sq - G @ Se
        return {ROW_ECOL: ecol, ROW_EVAR: evar, ROW_RCOL: rcol, ROW_RVAR: rvar,
                ROW_QCOL: qcol, ROW_QVAR: qvar}
