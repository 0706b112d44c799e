"""Sharp-interface cost, shape derivatives and first-order optimality.

A sharp design consists of a macroscopic phase indicator phi in {0, 1}
and a two-valued microstructure m in {1, 2}.  Both are stored at Gauss
points (the geometric content of the discrete problems) together with the
polyline interfaces that carry the perimeter terms.  The material in
{phi = 1} is the homogenized tensor C*_1 = C*(1, m); the void phase has C2.

Variations move the macroscopic geometry with a flow T_t of a field Phi
and the cell geometry with a flow S_t of a periodic field Psi.  Derivatives
are the discrete counterparts of the domain expressions, so they coincide
with the t-derivatives of the pulled-back discrete problems evaluated by
``transported_cost``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..cell import UNIT_STRAINS, CorrectorSet, cell_coefficient, homogenized_voigt, solve_correctors
from ..eps import DoubleWell
from ..fem import CellMesh, Grid, MacroMesh, elasticity_element_matrices, solve_spd, strain_operator
from ..state import LoadCase, load_vector
from ..tensors import Materials
from .interface import InterfacePolyline, extract_interface
from .variations import VariationField, ZeroField, flow, flow_with_jacobian

_EDGE_TANGENT = {"bottom": (1.0, 0.0), "top": (1.0, 0.0), "left": (0.0, 1.0), "right": (0.0, 1.0)}


@dataclass
class SharpDesign:
    """Two-phase macro design with a two-valued cell (values at Gauss points)."""

    phi_q: np.ndarray
    m_q: np.ndarray
    phi_interface: InterfacePolyline
    m_interface: InterfacePolyline

    @classmethod
    def from_level_sets(cls, mesh: MacroMesh, cell: CellMesh, level_phi, level_m) -> "SharpDesign":
        """Phase 1 (phi = 1, m = 2) where the level-set callables are positive."""
        phi_q = (np.asarray(level_phi(mesh.quad_points)) > 0).astype(float)
        m_q = 1.0 + (np.asarray(level_m(cell.quad_points)) > 0)
        p_phi = extract_interface(mesh.nodal(level_phi), mesh)
        p_m = extract_interface(cell.nodal(level_m), cell)
        return cls(phi_q, m_q, p_phi, p_m)

    @classmethod
    def from_indicators(cls, mesh: MacroMesh, cell: CellMesh, phi_elem, m_elem) -> "SharpDesign":
        """Element-wise phase indicators (True where phi = 1, resp. m = 2); staircase interfaces."""
        phi_e = np.asarray(phi_elem, dtype=bool).astype(float)
        m_e = np.asarray(m_elem, dtype=bool).astype(float)
        phi_q = np.repeat(phi_e[:, None], 4, axis=1)
        m_q = 1.0 + np.repeat(m_e[:, None], 4, axis=1)
        return cls(phi_q, m_q, extract_interface(phi_e, mesh, mode="indicator"), extract_interface(m_e, cell, mode="indicator"))

    def volume_phi(self, mesh: MacroMesh) -> float:
        return mesh.integrate_quad(self.phi_q)

    def volume_m(self, cell: CellMesh) -> float:
        return cell.integrate_quad(self.m_q)


@dataclass
class SharpState:
    u: np.ndarray
    compliance: float
    correctors: CorrectorSet = field(repr=False)
    c1star: np.ndarray
    coefficient: np.ndarray = field(repr=False)


def _macro_coefficient(design: SharpDesign, c1star: np.ndarray, materials: Materials) -> np.ndarray:
    on = design.phi_q[..., None, None] > 0.5
    return np.where(on, c1star, materials.c2.voigt)


def sharp_state(design: SharpDesign, mesh: MacroMesh, cell: CellMesh, loads: LoadCase, materials: Materials | None = None, tol: float = 1e-12) -> SharpState:
    materials = materials or Materials.isotropic()
    cs = solve_correctors(1.0, design.m_q, cell, materials, tol)
    c1 = homogenized_voigt(cs)
    d = _macro_coefficient(design, c1, materials)
    k = mesh.assemble_matrix(elasticity_element_matrices(mesh, d, None, None))
    rhs = load_vector(mesh, design.phi_q, loads)
    u = solve_spd(k, rhs, "dirichlet", tol, fixed=mesh.fixed_dofs)
    return SharpState(u, float(rhs @ u), cs, c1, d)


def eval_Js(design: SharpDesign, state: SharpState, mesh: MacroMesh, cell: CellMesh, volume_cap: float, micro_cap: float, dw: DoubleWell | None = None, tol: float = 1e-10) -> float:
    """compliance + c_H (Per(phi) + Per(m)); +inf when a volume cap is exceeded."""
    dw = dw or DoubleWell()
    if design.volume_phi(mesh) > volume_cap + tol or design.volume_m(cell) > micro_cap + tol:
        return np.inf
    return state.compliance + dw.c_H * (design.phi_interface.perimeter + design.m_interface.perimeter)


# ---- kinematic helpers ----------------------------------------------------


def _eng(m: np.ndarray) -> np.ndarray:
    """Engineering vector of the symmetric part of (..., 2, 2)."""
    return np.stack([m[..., 0, 0], m[..., 1, 1], m[..., 0, 1] + m[..., 1, 0]], axis=-1)


def _mapped_operator(grid: Grid, a: np.ndarray) -> np.ndarray:
    """Strain operators built from the gradients a^T grad N, shape (n_elems, 4, 3, 8)."""
    dn = np.einsum("qaj,eqjk->eqak", grid.dN, a)
    return strain_operator(dn)


def _field_data(grid: Grid, fld: VariationField):
    g = fld.grad(grid.quad_points)
    return g, g[..., 0, 0] + g[..., 1, 1]


def _flux_vector(grid: Grid, b_ops, sigma: np.ndarray, weights) -> np.ndarray:
    """Assembled int B^T sigma for element operators (4, 3, 8) or (n_elems, 4, 3, 8)."""
    if b_ops.ndim == 3:
        fe = np.einsum("qai,eqa->ei", b_ops, weights[..., None] * sigma)
    else:
        fe = np.einsum("eqai,eqa->ei", b_ops, weights[..., None] * sigma)
    return grid.assemble_vector(fe)


# ---- cell shape derivative ------------------------------------------------


def solve_z(correctors: CorrectorSet, psi: VariationField) -> np.ndarray:
    """Derivatives z_a (n_dofs, 3) of the pulled-back correctors w_a o S_t at t = 0."""
    cell = correctors.mesh
    g, div = _field_data(cell, psi)
    d = correctors.coefficient
    b_psi = _mapped_operator(cell, g)
    w = np.full((cell.n_elems, 4), cell.qweight)
    rhs = np.empty((cell.n_dofs, 3))
    for a in range(3):
        eps = correctors.strain[..., a]
        grad_w = cell.vector_grad_at_quad(correctors.w[:, a])
        sig = np.einsum("eqij,eqj->eqi", d, eps)
        sig_psi = np.einsum("eqij,eqj->eqi", d, _eng(grad_w @ g))
        rhs[:, a] = -(_flux_vector(cell, cell.B, div[..., None] * sig - sig_psi, w) - _flux_vector(cell, b_psi, sig, w))
    return solve_spd(correctors.stiffness, rhs, "periodic", correctors.tol)


def c_tilde(correctors: CorrectorSet, psi: VariationField, z: np.ndarray | None = None) -> np.ndarray:
    """Shape derivative of C*(s, m) along the cell flow of ``psi`` (Voigt, 3x3)."""
    cell = correctors.mesh
    if z is None:
        z = solve_z(correctors, psi)
    g, div = _field_data(cell, psi)
    d = correctors.coefficient
    eps = correctors.strain
    deps = np.empty_like(eps)
    for a in range(3):
        grad_w = cell.vector_grad_at_quad(correctors.w[:, a])
        deps[..., a] = cell.strain_at_quad(z[:, a]) - _eng(grad_w @ g)
    t = np.einsum("eq,eqia,eqij,eqjb->ab", div, eps, d, eps)
    cross = np.einsum("eqia,eqij,eqjb->ab", deps, d, eps)
    out = cell.qweight * (t + cross + cross.T)
    return 0.5 * (out + out.T)


def transported_cell_tensor(m_q: np.ndarray, psi: VariationField, t: float, cell: CellMesh, materials: Materials, tol: float = 1e-12, s: float = 1.0) -> np.ndarray:
    """C* of the microstructure m o S_t^{-1}, computed on the fixed mesh by pull-back."""
    _, f = flow_with_jacobian(cell.quad_points, psi, t)
    a = np.linalg.inv(f)
    wj = cell.qweight * np.linalg.det(f)
    d = cell_coefficient(cell, s, m_q, materials)
    b = _mapped_operator(cell, a)
    k = cell.assemble_matrix(elasticity_element_matrices(cell, d, b, wj))
    rhs = np.stack([-_flux_vector(cell, b, d @ UNIT_STRAINS[:, c], wj) for c in range(3)], axis=1)
    w = solve_spd(k, rhs, "periodic", tol)
    dofs = np.asarray(w)[cell.dofs]
    strain = np.einsum("eqij,ejk->eqik", b, dofs) + UNIT_STRAINS
    out = np.einsum("eq,eqia,eqij,eqjb->ab", wj, strain, d, strain)
    return 0.5 * (out + out.T)


# ---- macro shape derivative -----------------------------------------------


def _segment_derivative(poly: InterfacePolyline, fld: VariationField) -> float:
    """d/dt of the length of the transported polyline at t = 0.

    For a straight segment [a, b] with unit tangent tau this is
    tau . (Phi(b) - Phi(a)), the integral of the tangential divergence
    div Phi - nu . grad Phi nu along the segment.
    """
    a, b, _ = poly.segments()
    if a.shape[0] == 0:
        return 0.0
    tau, _ = poly.tangents()
    return float(np.sum(tau * (fld.value(b) - fld.value(a))))


def _traction_data(mesh: MacroMesh):
    nm = mesh.neumann
    tang = np.array([_EDGE_TANGENT[s] for s in mesh.edge_side[nm["edges"]]]).reshape(-1, 2)
    return nm, tang


def shape_derivative(
    design: SharpDesign,
    state: SharpState,
    phi_field: VariationField | None,
    psi_field: VariationField | None,
    mesh: MacroMesh,
    cell: CellMesh,
    loads: LoadCase,
    materials: Materials | None = None,
    dw: DoubleWell | None = None,
) -> dict:
    """Directional derivative of the sharp cost along (Phi, Psi), by term.

    Keys: ``c_tilde`` (micro shape change of C*_1), ``convection`` and
    ``divergence`` (macro geometry of the energy), ``body`` and ``traction``
    (transport of the loads), ``perimeter_phi`` and ``perimeter_m``, and
    ``total``.
    """
    materials = materials or Materials.isotropic()
    dw = dw or DoubleWell()
    phi_field = phi_field or ZeroField("omega")
    psi_field = psi_field or ZeroField("cell")
    u = state.u
    e = mesh.strain_at_quad(u)
    sig = np.einsum("eqij,eqj->eqi", state.coefficient, e)
    g, div = _field_data(mesh, phi_field)
    grad_u = mesh.vector_grad_at_quad(u)
    terms = {}
    ct = c_tilde(state.correctors, psi_field)
    terms["c_tilde"] = -mesh.integrate_quad(design.phi_q * np.einsum("eqi,ij,eqj->eq", e, ct, e))
    terms["convection"] = 2.0 * mesh.integrate_quad(np.sum(sig * _eng(grad_u @ g), axis=-1))
    terms["divergence"] = -mesh.integrate_quad(div * np.sum(sig * e, axis=-1))
    xq = mesh.quad_points
    uq = mesh.vector_values_at_quad(u)
    fphi = np.einsum("eqij,eqj->eqi", loads.grad_f(xq), phi_field.value(xq)) + loads.f(xq) * div[..., None]
    terms["body"] = 2.0 * mesh.integrate_quad(design.phi_q * np.sum(fphi * uq, axis=-1))
    trac = 0.0
    nm, tang = _traction_data(mesh)
    if nm["edges"].size and loads.traction is not None:
        pts = nm["points"]
        ue = u.reshape(-1, 2)[nm["nodes"]]
        up = np.einsum("qa,kac->kqc", nm["shape"], ue)
        gphi = phi_field.grad(pts)
        stretch = np.einsum("kc,kqcd,kd->kq", tang, gphi, tang)
        dg = np.einsum("kqij,kqj->kqi", loads.grad_g(pts), phi_field.value(pts)) + loads.g(pts) * stretch[..., None]
        trac = 2.0 * float(np.sum(nm["weights"] * np.sum(dg * up, axis=-1)))
    terms["traction"] = trac
    terms["perimeter_phi"] = dw.c_H * _segment_derivative(design.phi_interface, phi_field)
    terms["perimeter_m"] = dw.c_H * _segment_derivative(design.m_interface, psi_field)
    terms["total"] = float(sum(terms.values()))
    return terms


def solve_state_derivative(design: SharpDesign, state: SharpState, phi_field: VariationField, psi_field: VariationField, mesh: MacroMesh, cell: CellMesh, loads: LoadCase, tol: float = 1e-12) -> np.ndarray:
    """Derivative of the pulled-back displacement u(t) o T_t at t = 0.

    Solves the linearized equilibrium: for all test displacements z,
    int C*_1-part e(u') . e(z) equals minus the derivative of the pulled-back
    bilinear form at u plus the derivative of the pulled-back loads.
    """
    u = state.u
    d = state.coefficient
    e = mesh.strain_at_quad(u)
    sig = np.einsum("eqij,eqj->eqi", d, e)
    g, div = _field_data(mesh, phi_field)
    grad_u = mesh.vector_grad_at_quad(u)
    ct = c_tilde(state.correctors, psi_field)
    w = np.full((mesh.n_elems, 4), mesh.qweight)
    dsig = design.phi_q[..., None] * (e @ ct)
    conv = np.einsum("eqij,eqj->eqi", d, _eng(grad_u @ g))
    rhs = -_flux_vector(mesh, mesh.B, dsig - conv + div[..., None] * sig, w)
    rhs += _flux_vector(mesh, _mapped_operator(mesh, g), sig, w)
    xq = mesh.quad_points
    fphi = np.einsum("eqij,eqj->eqi", loads.grad_f(xq), phi_field.value(xq)) + loads.f(xq) * div[..., None]
    fe = mesh.qweight * np.einsum("qa,eqc->eac", mesh.N, design.phi_q[..., None] * fphi).reshape(mesh.n_elems, 8)
    rhs += mesh.assemble_vector(fe)
    nm, tang = _traction_data(mesh)
    if nm["edges"].size and loads.traction is not None:
        pts = nm["points"]
        stretch = np.einsum("kc,kqcd,kd->kq", tang, phi_field.grad(pts), tang)
        dg = np.einsum("kqij,kqj->kqi", loads.grad_g(pts), phi_field.value(pts)) + loads.g(pts) * stretch[..., None]
        contrib = np.einsum("qa,kqc->kac", nm["shape"], dg * nm["weights"][..., None])
        dofs = np.stack([2 * nm["nodes"], 2 * nm["nodes"] + 1], axis=2)
        rhs += np.bincount(dofs.ravel(), weights=contrib.ravel(), minlength=mesh.n_dofs)
    k = mesh.assemble_matrix(elasticity_element_matrices(mesh, d, None, None))
    return solve_spd(k, rhs, "dirichlet", tol, fixed=mesh.fixed_dofs)


def transported_state(design: SharpDesign, phi_field: VariationField, psi_field: VariationField, t: float, mesh: MacroMesh, cell: CellMesh, loads: LoadCase, materials: Materials | None = None, tol: float = 1e-12) -> dict:
    """Pulled-back discrete problem of the design transported by (T_t, S_t).

    Returns the pulled-back displacement, compliance, C*_1 and the
    transported interface lengths.
    """
    materials = materials or Materials.isotropic()
    phi_field = phi_field or ZeroField("omega")
    psi_field = psi_field or ZeroField("cell")
    c1 = transported_cell_tensor(design.m_q, psi_field, t, cell, materials, tol)
    d = _macro_coefficient(design, c1, materials)
    x, f = flow_with_jacobian(mesh.quad_points, phi_field, t)
    a = np.linalg.inv(f)
    wj = mesh.qweight * np.linalg.det(f)
    b = _mapped_operator(mesh, a)
    k = mesh.assemble_matrix(elasticity_element_matrices(mesh, d, b, wj))
    fq = loads.f(x) * (design.phi_q * wj)[..., None]
    rhs = mesh.assemble_vector(np.einsum("qa,eqc->eac", mesh.N, fq).reshape(mesh.n_elems, 8))
    nm, tang = _traction_data(mesh)
    if nm["edges"].size and loads.traction is not None:
        xp, fp = flow_with_jacobian(nm["points"], phi_field, t)
        stretch = np.linalg.norm(np.einsum("kqij,kj->kqi", fp, tang), axis=-1)
        gq = loads.g(xp) * (nm["weights"] * stretch)[..., None]
        contrib = np.einsum("qa,kqc->kac", nm["shape"], gq)
        dofs = np.stack([2 * nm["nodes"], 2 * nm["nodes"] + 1], axis=2)
        rhs += np.bincount(dofs.ravel(), weights=contrib.ravel(), minlength=mesh.n_dofs)
    u = solve_spd(k, rhs, "dirichlet", tol, fixed=mesh.fixed_dofs)
    per_phi = design.phi_interface.transported(lambda p: flow(p, phi_field, t)).perimeter
    per_m = design.m_interface.transported(lambda p: flow(p, psi_field, t)).perimeter
    return {"u": u, "compliance": float(rhs @ u), "c1star": c1, "perimeter_phi": per_phi, "perimeter_m": per_m}


def transported_cost(design: SharpDesign, phi_field, psi_field, t: float, mesh: MacroMesh, cell: CellMesh, loads: LoadCase, materials: Materials | None = None, dw: DoubleWell | None = None, tol: float = 1e-12) -> float:
    """Sharp cost of the transported design (caps not enforced)."""
    dw = dw or DoubleWell()
    r = transported_state(design, phi_field, psi_field, t, mesh, cell, loads, materials, tol)
    return r["compliance"] + dw.c_H * (r["perimeter_phi"] + r["perimeter_m"])


# ---- first-order optimality -----------------------------------------------


def volume_variation(design: SharpDesign, mesh: MacroMesh, phi_field: VariationField) -> float:
    """int phi div Phi (derivative of the transported phase volume)."""
    _, div = _field_data(mesh, phi_field)
    return mesh.integrate_quad(design.phi_q * div)


def micro_volume_variation(design: SharpDesign, cell: CellMesh, psi_field: VariationField) -> float:
    """int_Y m div Psi."""
    _, div = _field_data(cell, psi_field)
    return cell.integrate_quad(design.m_q * div)


def smto_residual(design, state, pairs, lam: float, mu: float, mesh, cell, loads, materials=None, dw=None) -> np.ndarray:
    """Residuals dJs(Phi, Psi) + lam int phi div Phi + mu int_Y m div Psi per field pair."""
    out = []
    for phi_field, psi_field in pairs:
        phi_field = phi_field or ZeroField("omega")
        psi_field = psi_field or ZeroField("cell")
        d = shape_derivative(design, state, phi_field, psi_field, mesh, cell, loads, materials, dw)["total"]
        out.append(d + lam * volume_variation(design, mesh, phi_field) + mu * micro_volume_variation(design, cell, psi_field))
    return np.array(out)


def fit_multipliers(design, state, pairs, mesh, cell, loads, materials=None, dw=None) -> dict:
    """Least-squares multipliers (lam, mu) for the optimality residuals over ``pairs``.

    The multipliers are unconstrained reals.  A column with no signal (all
    fields leave the corresponding volume unchanged) keeps its multiplier at 0.
    """
    rows = []
    for phi_field, psi_field in pairs:
        phi_field = phi_field or ZeroField("omega")
        psi_field = psi_field or ZeroField("cell")
        d = shape_derivative(design, state, phi_field, psi_field, mesh, cell, loads, materials, dw)["total"]
        rows.append((d, volume_variation(design, mesh, phi_field), micro_volume_variation(design, cell, psi_field)))
    rows = np.array(rows)
    b, a = rows[:, 0], rows[:, 1:]
    active = np.linalg.norm(a, axis=0) > 1e-14
    coef = np.zeros(2)
    if np.any(active):
        coef[active] = np.linalg.lstsq(a[:, active], -b, rcond=None)[0]
    before = b
    after = b + a @ coef
    return {
        "lam": float(coef[0]),
        "mu": float(coef[1]),
        "residual_before": before,
        "residual_after": after,
        "norm_before": float(np.linalg.norm(before)),
        "norm_after": float(np.linalg.norm(after)),
    }
