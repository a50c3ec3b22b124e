"""C1 Galerkin-collocation time stepping with cubic Hermite trial functions.

Per slab I_n = (t_{n-1}, t_n] every field w in {u, p, a, e} is a cubic
w(t) = sum_i w_i xi_i((t - t_{n-1}) / k) with coefficients

    w0 = w(t_{n-1}),  w1 = k w'(t_{n-1}),  w2 = w(t_n),  w3 = k w'(t_n).

w0, w1 are handed over from the previous slab (global C1). The remaining
coefficients follow from four slab-averaged equations (piecewise constant
tests) and the four equations collocated at t_n. The u and p equations hold
nodally and are eliminated in closed form, leaving a nonlinear system in
(e2, e3, a2, a3), plus (r2, r3, q2, q3) inside a PML.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ConvergenceError, NumericalError, SolverError
from .fem import BandMatrix, assemble_matrices, band_solve, weighted_mass
from .pml import (A2, A3, E2, E3, ROW_ACOL, ROW_AVAR, ROW_ECOL, ROW_EVAR, PmlBlocks,
                  hermite_mean)
from .trajectory import FieldHistory, TrajectorySeries, hermite_basis

FIELDS = ("u", "p", "a", "e")
PML_FIELDS = ("r", "q")


def hermite_eval(j, s):
    """Reference basis function j at s in [0, 1]: (value, d/ds)."""
    if j not in (0, 1, 2, 3):
        raise ConfigError(f"Hermite index {j} out of range")
    if np.any(np.asarray(s) < 0) or np.any(np.asarray(s) > 1):
        raise ConfigError("reference coordinate outside [0, 1]")
    val, der = hermite_basis(s)
    if np.ndim(s) == 0:
        return float(val[0, j]), float(der[0, j])
    return val[:, j], der[:, j]


@dataclass
class NewtonConfig:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-12
    max_iter: int = 25
    damping: float = 1.0

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ConfigError("Newton tolerances must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")
        if not 0 < self.damping <= 1:
            raise ConfigError("damping must lie in (0, 1]")


@dataclass
class BoundarySignal:
    """Dirichlet data (g, dg/dt) at the left and right boundary; None means zero."""

    left: object = None
    right: object = None

    def at(self, side, t):
        fn = self.left if side == "left" else self.right
        if fn is None:
            return 0.0, 0.0
        g, gt = fn(t)
        return float(g), float(gt)


@dataclass
class SlabState:
    k: float
    n: int
    t_start: float
    coef: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.coef[name]

    @property
    def t_end(self):
        return self.t_start + self.k

    def end_values(self, name):
        w = self.coef[name]
        return w[2], w[3] / self.k

    def start_values(self, name):
        w = self.coef[name]
        return w[0], w[1] / self.k


@dataclass
class SlabData:
    """Forcing loads (F0, k F0', F2, k F2') and Dirichlet values at t_n."""

    loads: tuple = None
    left: tuple = (0.0, 0.0)
    right: tuple = (0.0, 0.0)


class GccProblem:
    """Spatial operators and material data shared by all slabs."""

    def __init__(self, space, material, domain=None, pml=None, abs_value=False):
        self.space = space
        self.material = material
        self.domain = domain
        self.abs_value = abs_value
        mats = assemble_matrices(space)
        self.M, self.K = mats["mass"], mats["stiffness"]
        xq = space.rule()[0]
        sign = domain.chi2_sign(xq) if domain is not None else np.ones_like(xq)
        self.chi_q = material.chi2 * sign
        self.nonlinear = bool(np.any(self.chi_q != 0))
        self.pml = pml
        self.pml_blocks = PmlBlocks(space, pml, material) if pml is not None and pml.active else None
        self.nb = 8 if self.pml_blocks is not None else 4
        self.fields = FIELDS + (PML_FIELDS if self.pml_blocks is not None else ())
        # mass with identity on boundary rows/cols: inverts M restricted to V_h0
        self.M0 = self.M.copy()
        for b in space.dirichlet:
            self.M0.zero_rows([b])
            for d in self.M0.diagonal_offsets():
                r = b + d
                if 0 <= r < space.n_dofs:
                    self.M0.data[self.M0.ku + d, b] = 0.0
            self.M0.set_entry(b, b, 1.0)

    def ee(self, v):
        """The |e| e term at quadrature values v."""
        return np.abs(v) * v if self.abs_value else v * v

    def dee(self, v):
        """d(|e| e)/de."""
        return 2.0 * np.abs(v) if self.abs_value else 2.0 * v

    def loads(self, forcing, t):
        """Load vectors of f(., t) and df/dt(., t)."""
        if forcing is None:
            z = np.zeros(self.space.n_dofs)
            return z, z
        xq = self.space.rule()[0]
        f, ft = forcing(xq, t)
        return self.space.load_vector(np.asarray(f, float)), self.space.load_vector(np.asarray(ft, float))

    def mass_solve(self, v):
        return band_solve(self.M, v)

    def mass0_solve(self, v):
        v = np.array(v, dtype=float)
        v[self.space.dirichlet] = 0.0
        return band_solve(self.M0, v)

    def discrete_laplacian(self, e):
        """A_h e in V_h0: M_00 y = (K e) on interior rows, y = 0 on the boundary."""
        return self.mass0_solve(self.K @ e)


def aux_update(material, k, u0, u1, p0, p1, e0, e1, e2, e3):
    """Closed-form (u2, p2, u3, p3) from the nodal u and p equations.

    The two slab averages and the two collocation conditions
        -u + p' + G p = 0,   nu^2 p - nu^2 eD e + u' = 0   at t_n
    are linear in (u2, p2) once u3 = k nu^2 (eD e2 - p2) and p3 = k (u2 - G p2)
    are substituted. Evaluated in the order u2, p2, u3, p3.
    """
    G, nu2, ed = material.gamma0, material.nu_t ** 2, material.eps_delta
    a11 = -0.5 * k - G * k * k / 12.0
    a12 = 1.0 + 0.5 * G * k + G * G * k * k / 12.0 - k * k * nu2 / 12.0
    a21 = 1.0 - nu2 * k * k / 12.0
    a22 = 0.5 * nu2 * k + nu2 * k * k * G / 12.0
    det = a11 * a22 - a12 * a21
    c1 = (-p0 + G * k * (0.5 * p0 + p1 / 12.0) - k * (0.5 * u0 + u1 / 12.0)
          + k * k * nu2 * ed * e2 / 12.0)
    c2 = (nu2 * k * (0.5 * p0 + p1 / 12.0)
          - ed * nu2 * k * (0.5 * e0 + e1 / 12.0 + 0.5 * e2 - e3 / 12.0) - u0)
    u2 = (-c1 * a22 + c2 * a12) / det
    p2 = (-a11 * c2 + a21 * c1) / det
    u3 = k * nu2 * (ed * e2 - p2)
    p3 = k * (u2 - G * p2)
    return u2, p2, u3, p3


def initial_time_derivatives(problem, v0, f0=None, boundary_rates=None):
    """Time derivatives at t0 from the strong-form equations.

    v0: dict of nodal fields u, p, a, e (and r, q in a PML). f0: load vector of
    the forcing at t0. boundary_rates: (dg_left/dt, dg_right/dt) imposed on de.
    de solves (eps_omega M + chi2 d(|e|e)/de) de = M (a + G p), the a-definition
    collocated at t0.
    """
    m = problem.material
    space = problem.space
    G, nu2, ed, ew = m.gamma0, m.nu_t ** 2, m.eps_delta, m.eps_omega
    u0, p0, a0, e0 = (np.asarray(v0[n], float) for n in FIELDS)
    M = problem.M
    out = {}
    out["u"] = nu2 * ed * e0 - nu2 * p0
    out["p"] = u0 - G * p0
    lhs = M.copy()
    lhs.data *= ew
    if problem.nonlinear:
        lhs.data += weighted_mass(space, problem.chi_q * problem.dee(space.evaluate(e0))).data
    rhs = M @ (a0 + G * p0)
    for i, b in enumerate(space.dirichlet):
        lhs.zero_rows([b])
        lhs.set_entry(b, b, 1.0)
        rhs[b] = 0.0 if boundary_rates is None else boundary_rates[i]
    de = band_solve(lhs, rhs)
    out["e"] = de
    load = np.zeros(space.n_dofs) if f0 is None else np.asarray(f0, float)
    if problem.pml_blocks is not None:
        pb = problem.pml_blocks
        r0 = np.asarray(v0.get("r", np.zeros(space.n_dofs)), float)
        q0 = np.asarray(v0.get("q", np.zeros(space.n_dofs)), float)
        out["r"] = problem.mass_solve(pb.M_se @ e0 - pb.M_a @ r0)
        out["q"] = problem.mass_solve(pb.G @ e0 - pb.M_at @ q0)
        load = load - pb.C @ q0 - pb.M_se @ de + pb.M_a @ out["r"]
    out["a"] = problem.mass_solve(load) + nu2 * p0 - nu2 * ed * e0 - problem.discrete_laplacian(e0)
    return out


class SlabSystem:
    """Condensed slab system for a fixed step k."""

    def __init__(self, problem, k):
        if not k > 0:
            raise ConfigError("time step must be positive")
        self.problem = problem
        self.k = k
        self.nb = problem.nb
        m = problem.material
        # sensitivities of p2 and of the slab mean of p to (e2, e3)
        z = 0.0
        _, p2a, _, p3a = aux_update(m, k, z, z, z, z, z, z, 1.0, z)
        _, p2b, _, p3b = aux_update(m, k, z, z, z, z, z, z, z, 1.0)
        self.dp2 = (p2a, p2b)
        self.dSp = (hermite_mean(0, 0, p2a, p3a, k), hermite_mean(0, 0, p2b, p3b, k))
        self.J_lin = self._linear_jacobian()

    def _linear_jacobian(self):
        P, k, nb = self.problem, self.k, self.nb
        m = P.material
        G, nu2, ed, ew = m.gamma0, m.nu_t ** 2, m.eps_delta, m.eps_omega
        M, K = P.M, P.K
        n = P.space.n_dofs * nb
        J = BandMatrix(n, 4 * nb - 1, 4 * nb - 1)
        dp2e2, dp2e3 = self.dp2
        dSe2, dSe3 = self.dSp
        terms = [
            (ROW_ECOL, E2, K, 1.0), (ROW_ECOL, E2, M, ed * nu2 - nu2 * dp2e2),
            (ROW_ECOL, E3, M, -nu2 * dp2e3), (ROW_ECOL, A3, M, 1.0 / k),
            (ROW_EVAR, E2, K, 0.5 * k), (ROW_EVAR, E2, M, 0.5 * k * ed * nu2 - nu2 * dSe2),
            (ROW_EVAR, E3, K, -k / 12.0), (ROW_EVAR, E3, M, -k * ed * nu2 / 12.0 - nu2 * dSe3),
            (ROW_EVAR, A2, M, 1.0),
            (ROW_ACOL, E2, M, -G * dp2e2), (ROW_ACOL, E3, M, -G * dp2e3 + ew / k),
            (ROW_ACOL, A2, M, -1.0),
            (ROW_AVAR, E2, M, ew - G * dSe2), (ROW_AVAR, E3, M, -G * dSe3),
            (ROW_AVAR, A2, M, -0.5 * k), (ROW_AVAR, A3, M, k / 12.0),
        ]
        if P.pml_blocks is not None:
            terms += P.pml_blocks.linear_terms(M, k)
        for rb, cb, mat, scale in terms:
            if scale != 0.0:
                J.add_block(mat, rb, cb, nb, scale)
        for b in P.space.dirichlet:
            for row in (ROW_ECOL, ROW_EVAR):
                J.zero_rows([b * nb + row])
            J.set_entry(b * nb + ROW_ECOL, b * nb + E2, 1.0)
            J.set_entry(b * nb + ROW_EVAR, b * nb + E3, 1.0)
        return J

    # -- packing helpers -------------------------------------------------
    def unknown_names(self):
        names = [("e", 2), ("e", 3), ("a", 2), ("a", 3)]
        if self.nb == 8:
            names += [("r", 2), ("r", 3), ("q", 2), ("q", 3)]
        return names

    def pack(self, state):
        X = np.stack([state[f][i] for f, i in self.unknown_names()], axis=1)
        return X.ravel()

    def unpack_into(self, x, state):
        X = x.reshape(-1, self.nb)
        for col, (f, i) in enumerate(self.unknown_names()):
            state.coef[f][i] = X[:, col].copy()

    def _full(self, x, hist):
        """Coefficient arrays (4, J) for every field, with u, p recovered."""
        X = x.reshape(-1, self.nb)
        coef = {}
        for col, (f, i) in enumerate(self.unknown_names()):
            if f not in coef:
                coef[f] = np.array([hist[f][0], hist[f][1], np.zeros(X.shape[0]), np.zeros(X.shape[0])])
            coef[f][i] = X[:, col]
        u, p, e = hist["u"], hist["p"], coef["e"]
        u2, p2, u3, p3 = aux_update(self.problem.material, self.k, u[0], u[1], p[0], p[1],
                                    e[0], e[1], e[2], e[3])
        coef["u"] = np.array([u[0], u[1], u2, u3])
        coef["p"] = np.array([p[0], p[1], p2, p3])
        return coef

    # -- residual and Jacobian ------------------------------------------
    def residual_blocks(self, x, hist, data):
        P, k = self.problem, self.k
        m = P.material
        G, nu2, ed, ew = m.gamma0, m.nu_t ** 2, m.eps_delta, m.eps_omega
        M, K = P.M, P.K
        c = self._full(x, hist)
        e, a, p = c["e"], c["a"], c["p"]
        Se, Sa, Sp = hermite_mean(*e, k), hermite_mean(*a, k), hermite_mean(*p, k)
        if data.loads is not None:
            F0, F1, F2, F3 = data.loads
            Fint = hermite_mean(F0, F1, F2, F3, k)
        else:
            F2 = Fint = 0.0
        rows = {
            ROW_ECOL: K @ e[2] + M @ (ed * nu2 * e[2] - nu2 * p[2] + a[3] / k) - F2,
            ROW_EVAR: K @ Se + M @ (ed * nu2 * Se - nu2 * Sp + a[2] - a[0]) - Fint,
            ROW_ACOL: M @ (-G * p[2] + ew * e[3] / k - a[2]),
            ROW_AVAR: M @ (ew * (e[2] - e[0]) - G * Sp - Sa),
        }
        if P.nonlinear:
            sp = P.space
            q0, q2, q3 = sp.evaluate(e[0]), sp.evaluate(e[2]), sp.evaluate(e[3])
            rows[ROW_AVAR] = rows[ROW_AVAR] + sp.load_vector(P.chi_q * (P.ee(q2) - P.ee(q0)))
            rows[ROW_ACOL] = rows[ROW_ACOL] + sp.load_vector(P.chi_q * P.dee(q2) * q3 / k)
        if P.pml_blocks is not None:
            extra = P.pml_blocks.residual(M, k, e, c["r"], c["q"])
            for key, val in extra.items():
                rows[key] = rows[key] + val if key in rows else val
        return rows, c

    def residual(self, x, hist, data):
        rows, c = self.residual_blocks(x, hist, data)
        P = self.problem
        J = P.space.n_dofs
        R = np.zeros((J, self.nb))
        for key, val in rows.items():
            R[:, key] = val
        lb, rb = P.space.dirichlet
        e = c["e"]
        R[lb, ROW_ECOL] = e[2][lb] - data.left[0]
        R[lb, ROW_EVAR] = e[3][lb] - self.k * data.left[1]
        R[rb, ROW_ECOL] = e[2][rb] - data.right[0]
        R[rb, ROW_EVAR] = e[3][rb] - self.k * data.right[1]
        return R.ravel()

    def jacobian(self, x, hist=None):
        P = self.problem
        J = self.J_lin.copy()
        if P.nonlinear:
            sp, k, nb = P.space, self.k, self.nb
            X = x.reshape(-1, nb)
            q2, q3 = sp.evaluate(X[:, E2]), sp.evaluate(X[:, E3])
            if P.abs_value:
                dcol_e2 = 2.0 * np.sign(q2) * q3 / k
            else:
                dcol_e2 = 2.0 * q3 / k
            J.add_block(weighted_mass(sp, P.chi_q * P.dee(q2)), ROW_AVAR, E2, nb)
            J.add_block(weighted_mass(sp, P.chi_q * dcol_e2), ROW_ACOL, E2, nb)
            J.add_block(weighted_mass(sp, P.chi_q * P.dee(q2) / k), ROW_ACOL, E3, nb)
        return J

    def initial_guess(self, hist, data):
        state = SlabState(self.k, hist.n, hist.t_start, {})
        for f in self.problem.fields:
            w = hist[f]
            state.coef[f] = np.array([w[0], w[1], w[0] + w[1], w[1]])
        lb, rb = self.problem.space.dirichlet
        e = state.coef["e"]
        e[2][lb], e[3][lb] = data.left[0], self.k * data.left[1]
        e[2][rb], e[3][rb] = data.right[0], self.k * data.right[1]
        return self.pack(state)


@dataclass
class NewtonInfo:
    iterations: int
    residuals: list


def newton_solve_slab(system, hist, data, cfg=None):
    """Solve one slab; returns (SlabState, NewtonInfo) with u, p recovered."""
    cfg = cfg or NewtonConfig()
    x = system.initial_guess(hist, data)
    r = system.residual(x, hist, data)
    r0 = float(np.linalg.norm(r))
    hist_norms = [r0]
    if not np.isfinite(r0):
        raise NumericalError("non-finite residual", where=hist.n)
    tol = cfg.abs_tol + cfg.rel_tol * r0
    it = 0
    norm = r0
    while norm > tol:
        if it >= cfg.max_iter:
            raise ConvergenceError(f"Newton failed after {it} iterations", hist_norms, slab=hist.n)
        J = system.jacobian(x, hist)
        dx = band_solve(J, -r)
        step = cfg.damping
        x_new = x + step * dx
        r_new = system.residual(x_new, hist, data)
        n_new = float(np.linalg.norm(r_new))
        while not (n_new <= norm) and step > 1.0 / 64:
            step *= 0.5
            x_new = x + step * dx
            r_new = system.residual(x_new, hist, data)
            n_new = float(np.linalg.norm(r_new))
        it += 1
        small_step = np.linalg.norm(step * dx) <= 1e-14 * (1.0 + np.linalg.norm(x))
        x, r, norm = x_new, r_new, n_new
        hist_norms.append(norm)
        if not np.isfinite(norm):
            raise NumericalError("non-finite residual", where=hist.n)
        if small_step and norm <= 1e3 * tol:
            break
    state = SlabState(system.k, hist.n, hist.t_start, {f: hist[f].copy() for f in system.problem.fields})
    system.unpack_into(x, state)
    recover_auxiliary(state, system.problem.material, system.k)
    return state, NewtonInfo(it, hist_norms)


def recover_auxiliary(state, material, k):
    u, p, e = state["u"], state["p"], state["e"]
    u2, p2, u3, p3 = aux_update(material, k, u[0], u[1], p[0], p[1], e[0], e[1], e[2], e[3])
    u[2], p[2], u[3], p[3] = u2, p2, u3, p3
    return state


def collocation_residual_check(system, state, data):
    """L2 norms of the strong-form equations at t_n in the discrete space."""
    P, k = system.problem, system.k
    m = P.material
    G, nu2, ed = m.gamma0, m.nu_t ** 2, m.eps_delta
    u, p, e = state["u"], state["p"], state["e"]
    ru = -u[2] + p[3] / k + G * p[2]
    rp = nu2 * p[2] - nu2 * ed * e[2] + u[3] / k
    x = system.pack(state)
    rows, _ = system.residual_blocks(x, state, data)
    ra = rows[ROW_ACOL]
    re = rows[ROW_ECOL].copy()
    re[P.space.dirichlet] = 0.0
    out = {
        "u": float(np.sqrt(max(ru @ (P.M @ ru), 0.0))),
        "p": float(np.sqrt(max(rp @ (P.M @ rp), 0.0))),
        "a": float(np.sqrt(max(ra @ P.mass_solve(ra), 0.0))),
        "e": float(np.sqrt(max(re @ P.mass0_solve(re), 0.0))),
    }
    return out


@dataclass
class MarchResult:
    state: SlabState
    taps: list
    newton: list
    histories: dict = None
    slab_data: SlabData = None


def _snap_taps(space, taps):
    dofs = []
    for x in taps:
        d, exact = space.vertex_dof(x)
        if not exact:
            warnings.warn(f"tap {x} moved to nearest vertex {space.coords[d]}")
        dofs.append(d)
    return dofs


def march(problem, initial, boundary=None, forcing=None, n_slabs=1, k=None, cfg=None,
          taps=(), t0=0.0, on_slab=None, keep_history=(), tap_field="e"):
    """March n_slabs slabs of width k from t0.

    initial: dict with nodal u, p, a, e (r, q optional). Entries 'du', 'dp', ...
    override the time derivatives; otherwise they come from
    initial_time_derivatives. Taps record (value, d/dt) of tap_field.
    """
    if k is None or not k > 0:
        raise ConfigError("a positive step k is required")
    cfg = cfg or NewtonConfig()
    boundary = boundary or BoundarySignal()
    space = problem.space
    J = space.n_dofs
    system = SlabSystem(problem, k)
    v0 = {f: np.asarray(initial.get(f, np.zeros(J)), float) for f in problem.fields}
    F_prev, Ft_prev = problem.loads(forcing, t0)
    rates = None
    if all(("d" + f) in initial for f in problem.fields):
        dv = {f: np.asarray(initial["d" + f], float) for f in problem.fields}
    else:
        gl = boundary.at("left", t0)
        gr = boundary.at("right", t0)
        rates = (gl[1], gr[1])
        dv = initial_time_derivatives(problem, v0, F_prev, rates)
        for f in problem.fields:
            if ("d" + f) in initial:
                dv[f] = np.asarray(initial["d" + f], float)
    hist = SlabState(k, 1, t0, {f: np.array([v0[f], k * dv[f], v0[f], k * dv[f]])
                               for f in problem.fields})
    tap_dofs = _snap_taps(space, taps)
    tap_val = [[v0[tap_field][d]] for d in tap_dofs]
    tap_der = [[dv[tap_field][d]] for d in tap_dofs]
    histories = {f: FieldHistory(space, t0, k) for f in keep_history}
    for f in keep_history:
        histories[f].append(v0[f], dv[f])
    newton = []
    data = None
    for n in range(1, n_slabs + 1):
        t_prev = t0 + (n - 1) * k
        t_n = t0 + n * k
        hist.n, hist.t_start = n, t_prev
        F_n, Ft_n = problem.loads(forcing, t_n)
        loads = None if forcing is None else (F_prev, k * Ft_prev, F_n, k * Ft_n)
        data = SlabData(loads, boundary.at("left", t_n), boundary.at("right", t_n))
        try:
            state, info = newton_solve_slab(system, hist, data, cfg)
        except (ConvergenceError, SolverError, NumericalError) as exc:
            exc.args = (f"slab {n}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise
        newton.append(info)
        for i, d in enumerate(tap_dofs):
            tap_val[i].append(state[tap_field][2][d])
            tap_der[i].append(state[tap_field][3][d] / k)
        for f in keep_history:
            histories[f].append(state[f][2], state[f][3] / k)
        if on_slab is not None:
            on_slab(n, state, data)
        hist = SlabState(k, n + 1, t_n, {f: np.array([state[f][2], state[f][3],
                                                      state[f][2], state[f][3]])
                                         for f in problem.fields})
        F_prev, Ft_prev = F_n, Ft_n
    series = [TrajectorySeries(space.coords[d], t0, k, np.array(v), np.array(dd))
              for d, v, dd in zip(tap_dofs, tap_val, tap_der)]
    final = state if n_slabs > 0 else hist
    return MarchResult(final, series, newton, histories, data)
