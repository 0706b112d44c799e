"""Derivative of the reduced objective G(phi, m) = J(phi, m, S(phi, m)).

For a variation (psi, mu)

    dG = 2 int psi f . u - int Cbar*(psi, mu) e(u) . e(u)
         + 2 a_phi int grad phi . grad psi + 2 a_m int_Y grad m . grad mu

with a_phi = a_m = 1/2 by default.  The compliance part is represented by
nodal L2 densities (g_phi, g_m) with respect to the lumped inner product
<a, b> = sum_i w_i a_i b_i, where w_i are the integrals of the nodal basis
functions; the regularizers are kept in weak form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cell import m_at_quad
from .fem import CellMesh, MacroMesh, assemble_elasticity, solve_spd
from .state import LoadCase, StateSolution, TwoScaleProblem, load_vector, phi_at_quad


@dataclass
class GradientPair:
    g_phi: np.ndarray
    g_m: np.ndarray
    phi: np.ndarray = field(repr=False)
    m: np.ndarray = field(repr=False)
    mesh: MacroMesh = field(repr=False)
    cell: CellMesh = field(repr=False)
    reg_phi: float = 0.5
    reg_m: float = 0.5

    @property
    def dual_phi(self) -> np.ndarray:
        return self.g_phi * self.mesh.lumped_weights

    @property
    def dual_m(self) -> np.ndarray:
        return self.g_m * self.cell.lumped_weights

    def directional(self, psi, mu) -> float:
        psi = np.asarray(psi, dtype=float)
        mu = np.asarray(mu, dtype=float)
        val = self.dual_phi @ psi + self.dual_m @ mu
        val += 2 * self.reg_phi * (psi @ (self.mesh.laplacian @ self.phi))
        val += 2 * self.reg_m * (mu @ (self.cell.laplacian @ self.m))
        return float(val)

    def full(self) -> tuple[np.ndarray, np.ndarray]:
        """Lumped-L2 representatives including the regularizer terms."""
        gp = self.g_phi + 2 * self.reg_phi * (self.mesh.laplacian @ self.phi) / self.mesh.lumped_weights
        gm = self.g_m + 2 * self.reg_m * (self.cell.laplacian @ self.m) / self.cell.lumped_weights
        return gp, gm


def _strain_energy_density(e: np.ndarray, d: np.ndarray) -> np.ndarray:
    return np.einsum("...a,...ab,...b->...", e, d, e)


def micro_sensitivity_density(state: StateSolution, provider, mesh: MacroMesh) -> np.ndarray:
    """Density at cell Gauss points of -int_Omega phi(x) C1 eps(x, y) . eps(x, y) dx.

    eps(x, y) is the local strain built from the correctors of the level
    nearest to phi(x) (or of phi(x) itself for the exact provider).
    """
    cell = provider.mesh
    c1 = provider.materials.c1.voigt
    e = mesh.strain_at_quad(state.u).reshape(-1, 3)
    phi = state.phi_q.ravel()
    sets, idx = provider.bins(phi)
    weights = mesh.qweight * phi
    dens = np.zeros((cell.n_elems, 4))
    for k in np.unique(idx):
        sel = idx == k
        mom = np.einsum("p,pa,pb->ab", weights[sel], e[sel], e[sel])
        eps = sets[k].strain
        p = np.einsum("eqia,ab->eqib", eps, mom)
        dens -= np.einsum("eqib,ij,eqjb->eq", p, c1, eps)
    return dens


def assemble_gradient(phi, m, state: StateSolution, provider, problem: TwoScaleProblem, strict: bool = True) -> GradientPair:
    """Gradient at (phi, m) from the state and the corrector data of ``provider``.

    With ``strict=False`` the provider may have been built for a nearby
    microstructure (table reuse inside the optimizer).
    """
    if strict and not provider.matches(m):
        raise ValueError("corrector data were built for a different microstructure")
    mesh, cell = problem.mesh, problem.cell
    phi = np.asarray(phi, dtype=float)
    e = mesh.strain_at_quad(state.u)
    fu = np.sum(problem.loads.f(mesh.quad_points) * mesh.vector_values_at_quad(state.u), axis=-1)
    dens_phi = 2.0 * fu - _strain_energy_density(e, state.dcoefficient)
    g_phi = mesh.dual_scalar(dens_phi) / mesh.lumped_weights
    g_m = cell.dual_scalar(micro_sensitivity_density(state, provider, mesh)) / cell.lumped_weights
    return GradientPair(g_phi, g_m, phi, np.asarray(m, dtype=float), mesh, cell, problem.reg_phi, problem.reg_m)


def cbar_at_quad(state: StateSolution, provider, mesh: MacroMesh, psi, mu) -> np.ndarray:
    """Cbar*(psi, mu) at macro Gauss points, (n_elems, 4, 3, 3)."""
    psi_q = phi_at_quad(mesh, psi)
    out = psi_q[..., None, None] * state.dcoefficient
    mu = np.asarray(mu, dtype=float)
    if np.any(mu):
        c1 = provider.materials.c1.voigt
        sets, idx = provider.bins(state.phi_q)
        flat = out.reshape(-1, 3, 3)
        phi = state.phi_q.ravel()
        for k in np.unique(idx):
            cs = sets[k]
            mu_q = m_at_quad(cs.mesh, mu)
            t = cs.mesh.qweight * np.einsum("eq,eqia,ij,eqjb->ab", mu_q, cs.strain, c1, cs.strain)
            t = 0.5 * (t + t.T)
            sel = idx == k
            flat[sel] += phi[sel, None, None] * t
    return out


def solve_sensitivity(phi, m, psi, mu, state: StateSolution, provider, problem: TwoScaleProblem) -> np.ndarray:
    """Derivative v of the state along (psi, mu):

    int C* e(v) . e(z) + int Cbar*(psi, mu) e(u) . e(z) = int psi f . z.
    """
    mesh = problem.mesh
    psi_q = phi_at_quad(mesh, psi)
    cbar = cbar_at_quad(state, provider, mesh, psi, mu)
    e = mesh.strain_at_quad(state.u)
    fe = -mesh.qweight * np.einsum("qai,eqab,eqb->ei", mesh.B, cbar, e)
    fq = problem.loads.f(mesh.quad_points) * psi_q[..., None]
    fe += mesh.qweight * np.einsum("qa,eqc->eac", mesh.N, fq).reshape(mesh.n_elems, 8)
    rhs = mesh.assemble_vector(fe)
    k = assemble_elasticity(mesh, state.coefficient)
    return solve_spd(k, rhs, "dirichlet", problem.tol, fixed=mesh.fixed_dofs)


def chain_rule_directional(phi, m, psi, mu, state, provider, problem, v=None) -> float:
    """dG via the state derivative: dF . u + F . v + regularizer terms."""
    mesh, cell = problem.mesh, problem.cell
    if v is None:
        v = solve_sensitivity(phi, m, psi, mu, state, provider, problem)
    psi_q = phi_at_quad(mesh, psi)
    df = load_vector(mesh, psi_q, LoadCase(body_force=problem.loads.body_force))
    f = load_vector(mesh, state.phi_q, problem.loads)
    val = df @ state.u + f @ v
    val += 2 * problem.reg_phi * (np.asarray(psi) @ (mesh.laplacian @ np.asarray(phi)))
    val += 2 * problem.reg_m * (np.asarray(mu) @ (cell.laplacian @ np.asarray(m)))
    return float(val)


def _tangent_projection(g: np.ndarray, x: np.ndarray, w: np.ndarray, lo: float, hi: float, cap: float, area: float, tol: float) -> np.ndarray:
    """Weighted projection of -g onto the tangent cone of {lo <= x <= hi, sum w x <= cap}."""
    lower = np.where(x <= lo + tol, 0.0, -np.inf)
    upper = np.where(x >= hi - tol, 0.0, np.inf)
    d = np.clip(-g, lower, upper)
    if w @ x < cap - tol * area or w @ d <= 0:
        return d
    lam_lo, lam_hi = 0.0, float(np.max(np.abs(g))) + 1.0
    for _ in range(200):
        lam = 0.5 * (lam_lo + lam_hi)
        if w @ np.clip(-g - lam, lower, upper) > 0:
            lam_lo = lam
        else:
            lam_hi = lam
        if lam_hi - lam_lo <= 1e-15 * max(1.0, lam_hi):
            break
    return np.clip(-g - lam_hi, lower, upper)


def stationarity_measure(phi, m, grad: GradientPair, problem: TwoScaleProblem, tol: float = 1e-10, include=(True, True)) -> float:
    """L2 norm of the projection of -grad onto the tangent cone of the admissible set.

    ``include`` selects the (phi, m) blocks that count (frozen blocks are skipped).
    """
    gp, gm = grad.full()
    mesh, cell = problem.mesh, problem.cell
    total = 0.0
    if include[0]:
        dp = _tangent_projection(gp, np.asarray(phi), mesh.lumped_weights, 0.0, 1.0, problem.volume_cap, mesh.area, tol)
        total += mesh.lumped_weights @ dp**2
    if include[1]:
        dm = _tangent_projection(gm, np.asarray(m), cell.lumped_weights, 1.0, 2.0, problem.micro_cap, cell.area, tol)
        total += cell.lumped_weights @ dm**2
    return float(np.sqrt(total))
