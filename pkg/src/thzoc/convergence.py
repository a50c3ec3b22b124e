"""Manufactured-solution convergence harness.

The prescribed field is a sum of travelling sines

    E(x, t) = sum_j sin(2 pi w_j (x - n_j t)),

P is its exact periodic Lorentz response, U = P_t + G P and
A = eps_omega E_t - G P + chi2 d/dt(E^2). The residual of E in the wave
equation is used as source, so (E, A, P, U) solve the system exactly.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .fem import DomainSpec, Material, band_solve, build_domain, gauss_legendre
from .gcc import BoundarySignal, GccProblem, NewtonConfig, march
from .pml import PmlProfile, default_sigma_max
from .trajectory import eoc, hermite_basis

FIELD_ORDER = ("e", "a", "p", "u")


@dataclass
class Manufactured:
    material: Material
    waves: tuple = ((2.0, 1.0), (3.0, 1.5))  # (omega_j, n_j)

    def _parts(self, x, t):
        """Per-wave phase theta, kappa, Omega and Lorentz response H."""
        m = self.material
        out = []
        for w, n in self.waves:
            kap, om = 2 * np.pi * w, 2 * np.pi * w * n
            H = m.eps_delta * m.nu_t ** 2 / (m.nu_t ** 2 - om ** 2 - 1j * m.gamma0 * om)
            out.append((kap * x - om * t, kap, om, H))
        return out

    def e_derivs(self, x, t, order=3):
        """E and its time derivatives up to `order`, plus E_xx."""
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        dt = [np.zeros(x.shape) for _ in range(order + 1)]
        exx = np.zeros(x.shape)
        for th, kap, om, _ in self._parts(x, t):
            z = np.exp(1j * th)
            for m_ in range(order + 1):
                dt[m_] += np.imag((-1j * om) ** m_ * z)
            exx += -kap ** 2 * np.sin(th)
        return dt, exx

    def p_derivs(self, x, t, order=3):
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        out = [np.zeros(x.shape) for _ in range(order + 1)]
        for th, _, om, H in self._parts(x, t):
            z = H * np.exp(1j * th)
            for m_ in range(order + 1):
                out[m_] += np.imag((-1j * om) ** m_ * z)
        return out

    def fields(self, x, t):
        """Exact (e, a, p, u) and their time derivatives, as dicts."""
        m = self.material
        G, chi = m.gamma0, m.chi2
        E, _ = self.e_derivs(x, t, 3)
        P = self.p_derivs(x, t, 3)
        val = {
            "e": E[0], "p": P[0],
            "u": P[1] + G * P[0],
            "a": m.eps_omega * E[1] - G * P[0] + chi * 2 * E[0] * E[1],
        }
        der = {
            "e": E[1], "p": P[1],
            "u": P[2] + G * P[1],
            "a": m.eps_omega * E[2] - G * P[1] + chi * 2 * (E[1] ** 2 + E[0] * E[2]),
        }
        return val, der

    def forcing(self, x, t):
        """Source f and df/dt."""
        m = self.material
        G, chi, nu2, ed = m.gamma0, m.chi2, m.nu_t ** 2, m.eps_delta
        E, exx = self.e_derivs(x, t, 3)
        P = self.p_derivs(x, t, 2)
        exx_t = self.exx_t(x, t)
        f = (-exx + m.eps_omega * E[2] + ed * nu2 * E[0] - nu2 * P[0] - G * P[1]
             + chi * 2 * (E[1] ** 2 + E[0] * E[2]))
        ft = (-exx_t + m.eps_omega * E[3] + ed * nu2 * E[1] - nu2 * P[1] - G * P[2]
              + chi * 2 * (3 * E[1] * E[2] + E[0] * E[3]))
        return f, ft

    def exx_t(self, x, t):
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        out = np.zeros(x.shape)
        for th, kap, om, _ in self._parts(x, t):
            out += kap ** 2 * om * np.cos(th)
        return out

    def boundary(self, x):
        def g(t):
            E, _ = self.e_derivs(x, t, 1)
            return float(E[0]), float(E[1])
        return g


@dataclass
class LevelResult:
    level: int
    n_elem: int
    n_slabs: int
    n_dofs: int
    errors: dict = field(default_factory=dict)  # (field, norm) -> value
    seconds: float = 0.0


class _ErrorAccumulator:
    """Collects L-infinity-L2 (over slab endpoints) and L2-L2 errors per field."""

    def __init__(self, space, exact, k, mask, nq_space=6, nq_time=4):
        self.space, self.exact, self.k = space, exact, k
        self.nq = nq_space
        x, wq, _, _ = space.rule(nq_space)
        self.x = x
        self.wq = wq * mask[:, None]
        self.ts, self.tw = gauss_legendre(nq_time)
        self.hv, _ = hermite_basis(self.ts)
        self.linf = {f: 0.0 for f in FIELD_ORDER}
        self.l2sq = {f: 0.0 for f in FIELD_ORDER}

    def endpoint(self, t, coefs):
        val, _ = self.exact.fields(self.x, t)
        for f in FIELD_ORDER:
            d = self.space.evaluate(coefs[f], self.nq) - val[f]
            self.linf[f] = max(self.linf[f], float(np.sqrt(np.sum(self.wq * d * d))))

    def slab(self, t_start, state):
        for s, w, hv in zip(self.ts, self.tw, self.hv):
            val, _ = self.exact.fields(self.x, t_start + s * self.k)
            for f in FIELD_ORDER:
                c = state[f]
                coef = hv[0] * c[0] + hv[1] * c[1] + hv[2] * c[2] + hv[3] * c[3]
                d = self.space.evaluate(coef, self.nq) - val[f]
                self.l2sq[f] += self.k * w * float(np.sum(self.wq * d * d))

    def result(self):
        out = {}
        for f in FIELD_ORDER:
            out[(f, "linf")] = self.linf[f]
            out[(f, "l2")] = float(np.sqrt(self.l2sq[f]))
        return out


def ritz_projection(problem, minus_xx_q, boundary_values):
    """Elliptic projection: K y = (-w_xx, phi) on interior rows, y = w on the boundary."""
    space = problem.space
    rhs = space.load_vector(minus_xx_q)
    y = np.zeros(space.n_dofs)
    y[space.dirichlet] = boundary_values
    rhs = rhs - problem.K @ y
    A = problem.K.copy()
    for b in space.dirichlet:
        A.zero_rows([b])
        for d in A.diagonal_offsets():
            if 0 <= b + d < space.n_dofs:
                A.data[A.ku + d, b] = 0.0
        A.set_entry(b, b, 1.0)
    rhs[space.dirichlet] = boundary_values
    return band_solve(A, rhs)


def initial_projection(problem, ex, t0):
    """Discrete initial data: Ritz projection for e and e_t, L2 projection for a
    and a_t, nodal interpolation for the pointwise ODE variables u and p.

    Nodal interpolation of e would seed an O(h^3) energy error that pollutes
    e_t and hence a.
    """
    space = problem.space
    xq = space.rule()[0]
    xb = space.coords[space.dirichlet]
    _, exx = ex.e_derivs(xq, t0, 1)
    vb, db = ex.fields(xb, t0)
    val, der = ex.fields(space.coords, t0)
    valq, derq = ex.fields(xq, t0)
    out = {
        "e": ritz_projection(problem, -exx, vb["e"]),
        "de": ritz_projection(problem, -ex.exx_t(xq, t0), db["e"]),
        "a": problem.mass_solve(space.load_vector(valq["a"])),
        "da": problem.mass_solve(space.load_vector(derq["a"])),
    }
    for f in ("u", "p"):
        out[f] = val[f]
        out["d" + f] = der[f]
    return out


def default_material(chi2=0.1):
    return Material(gamma0=0.5, nu_t=3.0, eps_omega=1.5, eps_Omega=2.5, chi2=chi2)


def run_level(level, material=None, length=1.0, t_end=0.5, n_elem0=8, n_slabs0=8,
              mode="dirichlet", pml_width=0.5, waves=((2.0, 1.0), (3.0, 1.5)), cfg=None):
    """One manufactured-solution march at refinement `level`.

    mode 'dirichlet': exact data on both ends, no PML.
    mode 'pml': source switched off inside a PML on the right, errors on the
    physical region only.
    """
    material = material or default_material()
    ex = Manufactured(material, tuple(waves))
    ne = n_elem0 * 2 ** level
    ns = n_slabs0 * 2 ** level
    k = t_end / ns
    if mode == "pml":
        dom = DomainSpec(0.0, length, length, 1, pml_width=pml_width)
        n_pml = max(1, int(round(ne * pml_width / length)))
        mesh, space = build_domain(dom, ne, n_pml)
        prof = PmlProfile(default_sigma_max(pml_width, eps_omega=material.eps_omega),
                          pml_width, length)
        weight = lambda x: (x <= length + 1e-12).astype(float)
        forcing = lambda x, t: tuple(weight(x) * v for v in ex.forcing(x, t))
        boundary = BoundarySignal(left=ex.boundary(0.0))
    else:
        dom = DomainSpec(0.0, length, length, 1)
        mesh, space = build_domain(dom, ne)
        prof = None
        forcing = ex.forcing
        boundary = BoundarySignal(left=ex.boundary(0.0), right=ex.boundary(length))
    problem = GccProblem(space, material, dom, prof)
    initial = initial_projection(problem, ex, 0.0)
    if mode == "pml":
        inside = space.coords <= length + 1e-12
        for key in initial:
            initial[key] = initial[key] * inside
    if problem.pml_blocks is not None:
        for f in ("r", "q"):
            initial[f] = np.zeros(space.n_dofs)
            initial["d" + f] = np.zeros(space.n_dofs)
    mask = (~mesh.is_pml).astype(float)
    acc = _ErrorAccumulator(space, ex, k, mask)
    acc.endpoint(0.0, {f: initial[f] for f in FIELD_ORDER})

    def on_slab(n, state, data):
        acc.endpoint(state.t_end, {f: state[f][2] for f in FIELD_ORDER})
        acc.slab(state.t_start, state)

    t0 = time.perf_counter()
    march(problem, initial, boundary, forcing, ns, k, cfg or NewtonConfig(), on_slab=on_slab)
    res = LevelResult(level, ne, ns, space.n_dofs, acc.result(), time.perf_counter() - t0)
    return res


def convergence_table(levels=5, **kw):
    """Run `levels` refinements; returns (list of LevelResult, dict of EOC arrays)."""
    results = [run_level(l, **kw) for l in range(levels)]
    rates = {}
    for key in results[0].errors:
        rates[key] = eoc([r.errors[key] for r in results])
    return results, rates


def monotone(results):
    """True if every error column strictly decreases."""
    for key in results[0].errors:
        col = [r.errors[key] for r in results]
        if any(b >= a for a, b in zip(col, col[1:])):
            return False
    return True
