"""Cell correctors, homogenized tensor and its derivatives.

The microscopic coefficient is C(s, m)(y) = s m(y) C1 + (1 - s) C2, where
``s`` is the local phase-field value.  Correctors for the three unit
strains are stored as columns, in engineering Voigt order (11, 22, 12);
with that choice the Voigt matrix of the homogenized tensor is directly

    C*[a, b] = int_Y (B w_a + e_a) . D (B w_b + e_b) dy

where ``e_a`` is the a-th engineering unit vector.  ``m`` may be given as a
nodal periodic field or directly as values at the Gauss points
(shape (n_elems, 4)), the latter being used for sharp two-valued cells.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.interpolate as si
import scipy.sparse as sp

from .fem import CellMesh, elasticity_element_matrices, solve_spd
from .tensors import Materials, Tensor4Sym, voigt_to_mandel

UNIT_STRAINS = np.eye(3)


class ContractError(ValueError):
    """Inputs do not match the data an object was built for."""


def m_at_quad(mesh: CellMesh, m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape == (mesh.n_elems, 4):
        return m
    if m.ndim == 0:
        return np.full((mesh.n_elems, 4), float(m))
    if m.shape == (mesh.n_nodes,):
        return mesh.values_at_quad(m)
    raise ValueError(f"m has shape {m.shape}; expected nodal {mesh.n_nodes} or quadrature ({mesh.n_elems}, 4)")


def cell_coefficient(mesh: CellMesh, s: float, m_q: np.ndarray, materials: Materials) -> np.ndarray:
    return materials.mixture_voigt(np.full_like(m_q, s), m_q)


def _load_vectors(mesh: CellMesh, flux: np.ndarray) -> np.ndarray:
    """Global vectors -int B^T sigma_a for stress fields flux (n_elems, 4, 3, k)."""
    fe = -mesh.qweight * np.einsum("qai,eqak->eik", mesh.B, flux)
    k = flux.shape[-1]
    return np.stack([mesh.assemble_vector(fe[:, :, c]) for c in range(k)], axis=1)


@dataclass(eq=False)
class CorrectorSet:
    """Correctors at one phase-field level.

    ``w`` has shape (n_dofs, 3); ``strain`` holds the total local strains
    B w_a + e_a at Gauss points, shape (n_elems, 4, 3, 3) with the last axis
    indexing the unit strain.
    """

    mesh: CellMesh
    materials: Materials
    s: float
    m_q: np.ndarray
    w: np.ndarray
    strain: np.ndarray
    coefficient: np.ndarray = field(repr=False)
    stiffness: sp.csr_matrix = field(repr=False)
    tol: float = 1e-10

    def matches(self, s, m) -> bool:
        return float(s) == self.s and np.array_equal(m_at_quad(self.mesh, m), self.m_q)


def _check_bound(mesh, d, strain):
    """Energy bound on the local strains, alpha ||eps||^2 <= beta |Y| per unit strain."""
    ev = np.linalg.eigvalsh(voigt_to_mandel(d))
    alpha, beta = ev[..., 0].min(), ev[..., -1].max()
    # Frobenius norm of an engineering strain vector (e11, e22, g12)
    frob = strain[..., 0, :] ** 2 + strain[..., 1, :] ** 2 + 0.5 * strain[..., 2, :] ** 2
    norms = mesh.qweight * frob.sum(axis=(0, 1))
    unit = np.array([1.0, 1.0, 0.5])
    if np.any(norms > (beta / alpha) * unit * (1 + 1e-8) + 1e-12):
        raise ArithmeticError(f"corrector strain bound violated: {norms} vs beta/alpha={beta / alpha}")


def solve_correctors(s: float, m, mesh: CellMesh, materials: Materials, tol: float = 1e-10) -> CorrectorSet:
    """Periodic, mean-zero correctors for the three unit strains."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"phase level must lie in [0, 1], got {s}")
    m_q = m_at_quad(mesh, m)
    d = cell_coefficient(mesh, s, m_q, materials)
    ke = elasticity_element_matrices(mesh, d)
    k = mesh.assemble_matrix(ke)
    flux = np.einsum("eqab,bk->eqak", d, UNIT_STRAINS)
    rhs = _load_vectors(mesh, flux)
    w = solve_spd(k, rhs, "periodic", tol)
    strain = mesh.strain_at_quad_multi(w) + UNIT_STRAINS
    _check_bound(mesh, d, strain)
    return CorrectorSet(mesh, materials, float(s), m_q, w, strain, d, k, tol)


def _voigt_product(mesh, strain, d, strain2=None) -> np.ndarray:
    s2 = strain if strain2 is None else strain2
    return mesh.qweight * np.einsum("eqak,eqab,eqbl->kl", strain, d, s2)


def homogenized_voigt(c: CorrectorSet) -> np.ndarray:
    a = _voigt_product(c.mesh, c.strain, c.coefficient)
    return 0.5 * (a + a.T)


def homogenized_tensor(s: float, m, correctors: CorrectorSet) -> Tensor4Sym:
    """C* from the symmetric energy formula."""
    if not correctors.matches(s, m):
        raise ContractError("correctors were computed for different (s, m)")
    return Tensor4Sym(homogenized_voigt(correctors))


def homogenized_tensor_reduced(s: float, m, correctors: CorrectorSet) -> np.ndarray:
    """C* from int C (e(w_a) + e_a) . e_b; returned as a raw Voigt matrix."""
    if not correctors.matches(s, m):
        raise ContractError("correctors were computed for different (s, m)")
    c = correctors
    return c.mesh.qweight * np.einsum("eqak,eqab,bl->kl", c.strain, c.coefficient, UNIT_STRAINS)


def _direction_coefficient(c: CorrectorSet, psi_val: float, mu) -> np.ndarray:
    mu_q = m_at_quad(c.mesh, mu)
    mat = c.materials
    return psi_val * (c.m_q[..., None, None] * mat.c1.voigt - mat.c2.voigt) + c.s * mu_q[..., None, None] * mat.c1.voigt


def dcstar(s: float, m, correctors: CorrectorSet, psi_val: float, mu) -> Tensor4Sym:
    """Directional derivative of C* for the variation (psi_val, mu)."""
    if not correctors.matches(s, m):
        raise ContractError("correctors were computed for different (s, m)")
    dbar = _direction_coefficient(correctors, psi_val, mu)
    a = _voigt_product(correctors.mesh, correctors.strain, dbar)
    return Tensor4Sym(0.5 * (a + a.T))


def solve_linearized_corrector(s: float, m, psi_val: float, mu, correctors: CorrectorSet) -> np.ndarray:
    """Derivatives of the correctors along (psi_val, mu), shape (n_dofs, 3)."""
    if not correctors.matches(s, m):
        raise ContractError("correctors were computed for different (s, m)")
    c = correctors
    dbar = _direction_coefficient(c, psi_val, mu)
    flux = np.einsum("eqab,eqbk->eqak", dbar, c.strain)
    rhs = _load_vectors(c.mesh, flux)
    return solve_spd(c.stiffness, rhs, "periodic", c.tol)


class CStarTable:
    """Tabulation s -> (C*(s), dC*/ds(s)) for a fixed microstructure.

    Levels are s_k = k / (n_levels - 1).  Queries use piecewise-cubic
    Hermite interpolation of each Voigt entry through the samples and the
    exact sampled derivatives (rule 'hermite'), or shape-preserving PCHIP
    on the values only (rule 'pchip').  The derivative returned by
    ``evaluate`` is the derivative of the interpolant, so the state and the
    gradient always see the same function of s.

    When C2 = delta C1 the cell coefficient is ((m - delta) s + delta) C1,
    so C*(s) = (1 - delta)(s + k) H(tau) with k = delta / (1 - delta),
    tau = s / (s + k), and H the homogenized tensor of the field
    tau m' + 1 - tau, m' = (m - delta) / (1 - delta).  H has contrast at
    most 2 and is smooth in tau, while C*(s) has a layer of width ~delta
    at s = 0.  The interpolation is then carried out for H in tau.
    """

    mode = "table"

    def __init__(self, m, mesh: CellMesh, materials: Materials, n_levels: int = 17, rule: str = "hermite", tol: float = 1e-10, threads: int = 1):
        if n_levels < 2:
            raise ValueError("a table needs at least two levels")
        if rule not in ("hermite", "pchip"):
            raise ValueError(f"unknown interpolation rule {rule!r}")
        self.mesh = mesh
        self.materials = materials
        self.m = np.array(m, dtype=float)
        self.rule = rule
        self.levels = np.linspace(0.0, 1.0, n_levels)
        if threads > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(threads) as pool:
                self.correctors = list(pool.map(lambda s: solve_correctors(s, self.m, mesh, materials, tol), self.levels))
        else:
            self.correctors = [solve_correctors(s, self.m, mesh, materials, tol) for s in self.levels]
        self.cstar = np.array([homogenized_voigt(c) for c in self.correctors])
        self.dcstar = np.array([dcstar(c.s, c.m_q, c, 1.0, 0.0).voigt for c in self.correctors])
        n = n_levels
        delta = materials.contrast
        self._kappa = None if delta is None else delta / (1.0 - delta)
        x, y, dy = self.levels, self.cstar.reshape(n, 9), self.dcstar.reshape(n, 9)
        if self._kappa is not None:
            x, y, dy = self._to_tau(x, y, dy)
        if rule == "hermite":
            self._spline = si.CubicHermiteSpline(x, y, dy, axis=0)
        else:
            self._spline = si.PchipInterpolator(x, y, axis=0)
        self._dspline = self._spline.derivative()

    def _scale(self, s):
        """(1 - delta)(s + k) = delta + (1 - delta) s, the factor taken out of C*(s)."""
        k = self._kappa
        return (s + k) / (1.0 + k)

    def _to_tau(self, s, c, dc):
        k = self._kappa
        a = self._scale(s)[:, None]
        tau = s / (s + k)
        h = c / a
        # dC/ds = a' H + a H' tau'(s), a' = 1 / (1 + k), tau' = k / (s + k)^2
        dh = (dc - h / (1.0 + k)) / a * ((s + k) ** 2 / k)[:, None]
        return tau, h, dh

    def _interpolate(self, s):
        if self._kappa is None:
            return self._spline(s), self._dspline(s)
        k = self._kappa
        tau = s / (s + k)
        a = self._scale(s)[:, None]
        h, dh = self._spline(tau), self._dspline(tau)
        return a * h, h / (1.0 + k) + a * dh * (k / (s + k) ** 2)[:, None]

    @property
    def n_levels(self) -> int:
        return self.levels.size

    def evaluate(self, s) -> tuple[np.ndarray, np.ndarray]:
        """Voigt arrays of C*(s) and dC*/ds(s) with shape s.shape + (3, 3)."""
        s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
        flat = s.ravel()
        c, dc = self._interpolate(flat)
        # exact samples at the nodes (spline evaluation may differ in the last bit)
        k = np.rint(flat * (self.n_levels - 1)).astype(int)
        on = self.levels[k] == flat
        c[on] = self.cstar.reshape(-1, 9)[k[on]]
        c = c.reshape(s.shape + (3, 3))
        c = 0.5 * (c + np.swapaxes(c, -1, -2))
        dc = dc.reshape(s.shape + (3, 3))
        dc = 0.5 * (dc + np.swapaxes(dc, -1, -2))
        return c, dc

    def query(self, s: float) -> Tensor4Sym:
        return Tensor4Sym(self.evaluate(s)[0])

    def bins(self, s):
        """Group values of s by nearest level: (corrector sets, index per value)."""
        s = np.clip(np.asarray(s, dtype=float).ravel(), 0.0, 1.0)
        k = np.rint(s * (self.n_levels - 1)).astype(int)
        return self.correctors, k

    def matches(self, m) -> bool:
        return np.array_equal(np.asarray(m, dtype=float), self.m)


class ExactCStar:
    """Per-value corrector solves with caching; same interface as CStarTable.

    C*(s) and dC*/ds(s) are exact for the discrete cell problem at every
    queried s.  Intended for cross-validation on small meshes.
    """

    mode = "exact"

    def __init__(self, m, mesh: CellMesh, materials: Materials, tol: float = 1e-10):
        self.mesh = mesh
        self.materials = materials
        self.m = np.array(m, dtype=float)
        self.tol = tol
        self._cache: dict[float, tuple] = {}
        self._lock = threading.Lock()

    def _entry(self, s: float):
        with self._lock:
            hit = self._cache.get(s)
        if hit is None:
            c = solve_correctors(s, self.m, self.mesh, self.materials, self.tol)
            hit = (c, homogenized_voigt(c), dcstar(s, c.m_q, c, 1.0, 0.0).voigt)
            with self._lock:
                self._cache[s] = hit
        return hit

    def evaluate(self, s):
        s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
        uniq, inv = np.unique(s.ravel(), return_inverse=True)
        ent = [self._entry(float(v)) for v in uniq]
        c = np.array([e[1] for e in ent])[inv].reshape(s.shape + (3, 3))
        dc = np.array([e[2] for e in ent])[inv].reshape(s.shape + (3, 3))
        return c, dc

    def query(self, s: float) -> Tensor4Sym:
        return Tensor4Sym(self.evaluate(s)[0])

    def bins(self, s):
        s = np.clip(np.asarray(s, dtype=float).ravel(), 0.0, 1.0)
        uniq, inv = np.unique(s, return_inverse=True)
        return [self._entry(float(v))[0] for v in uniq], inv

    def matches(self, m) -> bool:
        return np.array_equal(np.asarray(m, dtype=float), self.m)


def build_table(m, mesh: CellMesh, n_levels: int = 17, materials: Materials | None = None, **kw) -> CStarTable:
    return CStarTable(m, mesh, materials or Materials.isotropic(), n_levels, **kw)
