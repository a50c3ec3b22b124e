"""1D cubic Lagrange finite elements with banded storage.

Everything is in normalized units (c0 = 1, eps0 = 1). Global dofs are
numbered left to right; element e owns dofs 3e .. 3e+3.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .errors import ConfigError, ShapeError, SolverError

# reference nodes of the cubic element on [0, 1]
REF_NODES = np.array([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])


def gauss_legendre(nq):
    """Gauss-Legendre rule mapped to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(nq)
    return 0.5 * (x + 1.0), 0.5 * w


def lagrange_basis(s):
    """Cubic Lagrange basis on [0, 1] at points s; returns (phi, dphi) of shape (len(s), 4)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    phi = np.ones((s.size, 4))
    dphi = np.zeros((s.size, 4))
    for i in range(4):
        others = [j for j in range(4) if j != i]
        denom = np.prod([REF_NODES[i] - REF_NODES[j] for j in others])
        for j in others:
            phi[:, i] *= s - REF_NODES[j]
        # product rule over the three linear factors
        for j in others:
            term = np.ones(s.size)
            for m in others:
                if m != j:
                    term *= s - REF_NODES[m]
            dphi[:, i] += term
        phi[:, i] /= denom
        dphi[:, i] /= denom
    return phi, dphi


@dataclass(frozen=True)
class Material:
    gamma0: float
    nu_t: float
    eps_omega: float
    eps_Omega: float
    chi2: float = 0.0

    def __post_init__(self):
        if not self.eps_omega > 0:
            raise ConfigError("eps_omega must be positive")
        if self.eps_Omega < self.eps_omega:
            raise ConfigError("eps_Omega must be >= eps_omega")
        if self.gamma0 < 0:
            raise ConfigError("gamma0 must be nonnegative")
        if not self.nu_t > 0:
            raise ConfigError("nu_t must be positive")

    @property
    def eps_delta(self):
        return self.eps_Omega - self.eps_omega

    def as_dict(self):
        return {"gamma0": self.gamma0, "nu_t": self.nu_t, "eps_omega": self.eps_omega,
                "eps_Omega": self.eps_Omega, "chi2": self.chi2}


@dataclass(frozen=True)
class DomainSpec:
    """Physical interval, poled crystal and PML width.

    The crystal occupies [crystal_start, crystal_start + n_periods * poling_period);
    chi2_sign flips every poling period inside it and is 0 outside.
    """

    x_left: float
    x_right: float
    poling_period: float
    n_periods: int
    pml_width: float = 0.0
    crystal_start: float = None

    def __post_init__(self):
        if not self.x_right > self.x_left:
            raise ConfigError("domain must have positive length")
        if self.pml_width < 0:
            raise ConfigError("pml_width must be nonnegative")
        if self.n_periods < 0 or (self.n_periods > 0 and not self.poling_period > 0):
            raise ConfigError("invalid poling layout")
        if self.x_right - self.x_left < self.n_periods * self.poling_period - 1e-12:
            raise ConfigError("crystal longer than the physical domain")

    @property
    def start(self):
        return self.x_left if self.crystal_start is None else self.crystal_start

    def chi2_sign(self, x):
        x = np.asarray(x, dtype=float)
        if self.n_periods == 0:
            return np.zeros_like(x)
        rel = (x - self.start) / self.poling_period
        idx = np.floor(rel + 1e-12)
        inside = (idx >= 0) & (idx < self.n_periods)
        sign = np.where(idx % 2 == 0, 1.0, -1.0)
        return np.where(inside, sign, 0.0)


class Mesh1D:
    def __init__(self, vertices, is_pml):
        vertices = np.asarray(vertices, dtype=float)
        if np.any(np.diff(vertices) <= 0):
            raise ConfigError("mesh vertices must be strictly increasing")
        is_pml = np.asarray(is_pml, dtype=bool)
        if is_pml.size != vertices.size - 1:
            raise ConfigError("one PML flag per element expected")
        if is_pml.any():
            first = np.argmax(is_pml)
            if not is_pml[first:].all():
                raise ConfigError("PML elements must form a contiguous suffix")
        self.vertices = vertices
        self.is_pml = is_pml

    @property
    def n_elem(self):
        return self.vertices.size - 1

    @property
    def h(self):
        return np.diff(self.vertices)

    @property
    def x_interface(self):
        """Coordinate where the PML starts (right end if there is none)."""
        if self.is_pml.any():
            return self.vertices[np.argmax(self.is_pml)]
        return self.vertices[-1]


class CubicFeSpace:
    def __init__(self, mesh, nq=4):
        self.mesh = mesh
        self.nq = nq
        ne = mesh.n_elem
        self.n_dofs = 3 * ne + 1
        self.elem_dofs = 3 * np.arange(ne)[:, None] + np.arange(4)[None, :]
        h = mesh.h
        self.coords = np.empty(self.n_dofs)
        self.coords[self.elem_dofs] = mesh.vertices[:-1, None] + h[:, None] * REF_NODES[None, :]
        self.dirichlet = np.array([0, self.n_dofs - 1])
        self.interior = np.arange(1, self.n_dofs - 1)
        self._rules = {}

    def rule(self, nq=None):
        """Quadrature data: points (ne, nq), weights incl. jacobian (ne, nq), phi (nq, 4), dphi/dx (ne, nq, 4)."""
        nq = nq or self.nq
        if nq not in self._rules:
            s, w = gauss_legendre(nq)
            phi, dphi = lagrange_basis(s)
            h = self.mesh.h
            x = self.mesh.vertices[:-1, None] + h[:, None] * s[None, :]
            wq = h[:, None] * w[None, :]
            dphix = dphi[None, :, :] / h[:, None, None]
            self._rules[nq] = (x, wq, phi, dphix)
        return self._rules[nq]

    def evaluate(self, coef, nq=None):
        """Values of a finite-element function at the quadrature points, shape (ne, nq)."""
        _, _, phi, _ = self.rule(nq)
        return coef[self.elem_dofs] @ phi.T

    def evaluate_dx(self, coef, nq=None):
        _, _, _, dphix = self.rule(nq)
        return np.einsum("eqi,ei->eq", dphix, coef[self.elem_dofs])

    def interpolate(self, fn):
        return np.asarray(fn(self.coords), dtype=float)

    def vertex_dof(self, x):
        """Nearest vertex dof to coordinate x, and whether x sat on it exactly."""
        v = self.mesh.vertices
        i = int(np.argmin(np.abs(v - x)))
        return 3 * i, bool(abs(v[i] - x) <= 1e-9 * max(1.0, abs(x)))

    def load_vector(self, fq, nq=None):
        """Vector of integrals of f * phi_i given f at quadrature points."""
        _, wq, phi, _ = self.rule(nq)
        local = np.einsum("eq,qi->ei", fq * wq, phi)
        out = np.zeros(self.n_dofs)
        np.add.at(out, self.elem_dofs, local)
        return out

    def l2_norm(self, fq, nq=None):
        _, wq, _, _ = self.rule(nq)
        return float(np.sqrt(np.sum(wq * fq ** 2)))


def build_domain(spec, n_elem_physical, n_elem_pml=0):
    if n_elem_physical < 1:
        raise ConfigError("need at least one physical element")
    if n_elem_pml < 0:
        raise ConfigError("negative PML element count")
    if n_elem_pml > 0 and not spec.pml_width > 0:
        raise ConfigError("PML elements requested with zero PML width")
    phys = np.linspace(spec.x_left, spec.x_right, n_elem_physical + 1)
    if n_elem_pml > 0:
        pml = np.linspace(spec.x_right, spec.x_right + spec.pml_width, n_elem_pml + 1)[1:]
        vertices = np.concatenate([phys, pml])
    else:
        vertices = phys
    flags = np.zeros(vertices.size - 1, dtype=bool)
    flags[n_elem_physical:] = True
    mesh = Mesh1D(vertices, flags)
    return mesh, CubicFeSpace(mesh)


class BandMatrix:
    """Square band matrix in LAPACK layout: data[ku + i - j, j] = A[i, j].

    Each row of `data` stores one diagonal.
    """

    def __init__(self, n, kl, ku, data=None):
        self.n, self.kl, self.ku = int(n), int(kl), int(ku)
        if data is None:
            data = np.zeros((self.kl + self.ku + 1, self.n))
        self.data = data

    @classmethod
    def from_dense(cls, a, kl, ku):
        a = np.asarray(a, dtype=float)
        n = a.shape[0]
        out = cls(n, kl, ku)
        for d in range(-ku, kl + 1):
            i = np.arange(max(0, d), min(n, n + d))
            out.data[ku + d, i - d] = a[i, i - d]
        return out

    def to_dense(self):
        a = np.zeros((self.n, self.n))
        for d in range(-self.ku, self.kl + 1):
            i = np.arange(max(0, d), min(self.n, self.n + d))
            a[i, i - d] = self.data[self.ku + d, i - d]
        return a

    def copy(self):
        return BandMatrix(self.n, self.kl, self.ku, self.data.copy())

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n:
            raise ShapeError("matvec", (self.n, self.n), x.shape)
        y = np.zeros_like(x)
        for d in range(-self.ku, self.kl + 1):
            i = np.arange(max(0, d), min(self.n, self.n + d))
            diag = self.data[self.ku + d, i - d]
            if x.ndim == 1:
                y[i] += diag * x[i - d]
            else:
                y[i] += diag[:, None] * x[i - d]
        return y

    def __matmul__(self, x):
        return self.matvec(x)

    def diagonal_offsets(self):
        return range(-self.ku, self.kl + 1)

    def get_diag(self, d):
        """Entries A[i, i - d] for all valid i."""
        i = np.arange(max(0, d), min(self.n, self.n + d))
        return i, self.data[self.ku + d, i - d]

    def add_block(self, other, bi, bj, nb, scale=1.0):
        """Add scale * other into block (bi, bj) of an interleaved nb-block system.

        Row i of `other` maps to row i*nb + bi, column j to j*nb + bj.
        """
        for d in other.diagonal_offsets():
            i, vals = other.get_diag(d)
            if not np.any(vals):
                continue
            rows = i * nb + bi
            cols = (i - d) * nb + bj
            off = rows - cols
            if np.any(off > self.kl) or np.any(-off > self.ku):
                raise ShapeError("add_block", (self.kl, self.ku), (other.kl, other.ku))
            self.data[self.ku + off, cols] += scale * vals
        return self

    def zero_rows(self, rows):
        for r in np.atleast_1d(rows):
            for d in range(-self.ku, self.kl + 1):
                c = r - d
                if 0 <= c < self.n:
                    self.data[self.ku + d, c] = 0.0

    def set_entry(self, i, j, value):
        self.data[self.ku + i - j, j] = value


def _local_to_band(space, local, kl=3, ku=3):
    """Scatter element matrices (ne, 4, 4) into a banded global matrix."""
    n = space.n_dofs
    out = BandMatrix(n, kl, ku)
    dofs = space.elem_dofs
    for a in range(4):
        for b in range(4):
            rows = dofs[:, a]
            cols = dofs[:, b]
            np.add.at(out.data, (ku + rows - cols, cols), local[:, a, b])
    return out


def weighted_mass(space, cq, nq=None):
    """Band matrix of integrals c * phi_i * phi_j with c given at quadrature points."""
    _, wq, phi, _ = space.rule(nq)
    local = np.einsum("eq,qi,qj->eij", cq * wq, phi, phi)
    return _local_to_band(space, local)


def weighted_stiffness(space, cq, nq=None):
    _, wq, _, dphix = space.rule(nq)
    local = np.einsum("eq,eqi,eqj->eij", cq * wq, dphix, dphix)
    return _local_to_band(space, local)


def weighted_advection(space, cq, nq=None):
    """Band matrix C_ij = integral of c * phi_i * dphi_j/dx."""
    _, wq, phi, dphix = space.rule(nq)
    local = np.einsum("eq,qi,eqj->eij", cq * wq, phi, dphix)
    return _local_to_band(space, local)


def coefficient_at_quadrature(space, coefficient, nq=None):
    """Turn a scalar, a per-element array or a callable of x into values at quadrature points."""
    x, _, _, _ = space.rule(nq)
    if callable(coefficient):
        c = np.asarray(coefficient(x), dtype=float)
        return np.broadcast_to(c, x.shape).copy()
    c = np.asarray(coefficient, dtype=float)
    if c.ndim == 0:
        return np.full(x.shape, float(c))
    if c.shape == (space.mesh.n_elem,):
        return np.repeat(c[:, None], x.shape[1], axis=1)
    raise ShapeError("coefficient", c.shape, (space.mesh.n_elem,))


def assemble_matrices(space, coefficient=1.0):
    cq = coefficient_at_quadrature(space, coefficient)
    if not np.all(np.isfinite(cq)):
        raise ConfigError("coefficient is not finite on every element")
    return {"mass": weighted_mass(space, cq), "stiffness": weighted_stiffness(space, cq)}


def band_solve(a, b, rtol_pivot=None):
    """Banded LU with partial pivoting (LAPACK gbtrf/gbtrs)."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != a.n:
        raise ShapeError("band_solve", (a.n, a.n), b.shape)
    kl, ku = a.kl, a.ku
    ab = np.zeros((2 * kl + ku + 1, a.n))
    ab[kl:, :] = a.data
    lub, piv, info = lapack.dgbtrf(ab, kl, ku)
    if info > 0:
        raise SolverError(f"singular matrix: zero pivot at index {info - 1}", pivot=info - 1)
    if info < 0:
        raise SolverError(f"illegal argument {-info} passed to dgbtrf")
    udiag = np.abs(lub[kl + ku, :])
    scale = np.max(np.abs(a.data)) if a.data.size else 0.0
    tol = (rtol_pivot if rtol_pivot is not None else a.n * np.finfo(float).eps) * scale
    small = np.nonzero(udiag <= tol)[0]
    if small.size:
        raise SolverError(f"matrix singular to working precision at pivot {small[0]}",
                          pivot=int(small[0]))
    x, info = lapack.dgbtrs(lub, kl, ku, b, piv)
    if info != 0:
        raise SolverError(f"dgbtrs failed with info={info}")
    return x
