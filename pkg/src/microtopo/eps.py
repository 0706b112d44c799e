"""Finite-epsilon problems and Modica-Mortola functionals.

The oscillating problem uses the coefficient C(phi(x), m(x / eps)) on a
macro grid that resolves every epsilon-cell with ``elements_per_cell``
elements.  Only exact tilings (lx / eps and ly / eps integers) are allowed,
so that averages of y-periodic integrands over Omega equal their integrals
over Y.

Modica-Mortola weights
----------------------
The transition energy of phi is (eps / 2) int |grad phi|^2 +
(well_factor / eps) int H(phi).  With well_factor = 1 its Gamma-limit is
c_H * perimeter with c_H = int_0^1 sqrt(2 H); with well_factor = 1/2 the
limit constant is c_H / sqrt(2).  The same weights are used for m on the
unit cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.integrate as sint
import scipy.optimize as sopt

from .cell import CStarTable
from .fem import BoundarySegment, CellMesh, Grid, MacroMesh, assemble_elasticity, integrate_h1_seminorm, solve_spd
from .state import LoadCase, StateSolution, admissible, load_vector, solve_state
from .tensors import Materials


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DoubleWell:
    """H(t) = scale * t^2 (1 - t)^2."""

    scale: float = 1.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.scale * t * t * (1 - t) ** 2

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        return self.scale * 2 * t * (1 - t) * (1 - 2 * t)

    @cached_property
    def c_H(self) -> float:
        """int_0^1 sqrt(2 H(t)) dt by adaptive quadrature."""
        val, _ = sint.quad(lambda t: np.sqrt(2 * self(t)), 0.0, 1.0, epsabs=1e-14, epsrel=1e-14)
        return float(val)

    def profile(self, s):
        """Optimal transition profile q with q' = sqrt(2 H(q)), q(0) = 1/2 (quartic well)."""
        k = np.sqrt(2 * self.scale)
        return 1.0 / (1.0 + np.exp(-k * np.asarray(s, dtype=float)))


@dataclass(frozen=True)
class EpsConfig:
    eps: float
    elements_per_cell: int = 8
    well_factor: float = 1.0

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if self.elements_per_cell < 8:
            raise ConfigError("at least 8 elements per eps-cell are required")

    def cells(self, length: float) -> int:
        n = length / self.eps
        k = int(round(n))
        if k < 1 or abs(n - k) > 1e-9 * max(1.0, n):
            raise ConfigError(f"eps = {self.eps} does not tile a side of length {length}")
        return k


def eps_mesh(lx: float, ly: float, cfg: EpsConfig, boundary=None) -> MacroMesh:
    return MacroMesh(cfg.cells(lx) * cfg.elements_per_cell, cfg.cells(ly) * cfg.elements_per_cell, lx, ly, boundary)


def cell_coordinates(points: np.ndarray, eps: float) -> np.ndarray:
    """Fast variable y = x / eps reduced to [0, 1)^2."""
    return np.mod(np.asarray(points) / eps, 1.0)


def _check_resolution(cell: CellMesh, cfg: EpsConfig):
    if cfg.elements_per_cell < cell.nc:
        raise ConfigError(f"{cfg.elements_per_cell} elements per eps-cell under-resolve a {cell.nc}^2 cell mesh")


def oscillating_m(mesh: MacroMesh, cell: CellMesh, m, cfg: EpsConfig) -> np.ndarray:
    """m(x / eps) at the macro Gauss points."""
    return cell.interpolate(m, cell_coordinates(mesh.quad_points, cfg.eps))


def as_nodal(mesh: Grid, phi) -> np.ndarray:
    if callable(phi):
        return mesh.nodal(phi)
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 0:
        return np.full(mesh.n_nodes, float(phi))
    return phi


def solve_eps_state(phi, m, cfg: EpsConfig, loads: LoadCase, cell: CellMesh, lx: float = 1.0, ly: float = 1.0, boundary=None, materials: Materials | None = None, tol: float = 1e-10):
    """Equilibrium with the oscillating coefficient; returns (state, mesh)."""
    materials = materials or Materials.isotropic()
    _check_resolution(cell, cfg)
    mesh = eps_mesh(lx, ly, cfg, boundary)
    phi_n = as_nodal(mesh, phi)
    phi_q = mesh.values_at_quad(phi_n)
    m_q = oscillating_m(mesh, cell, m, cfg)
    d = materials.mixture_voigt(phi_q, m_q)
    rhs = load_vector(mesh, phi_q, loads)
    u = solve_spd(assemble_elasticity(mesh, d), rhs, "dirichlet", tol, fixed=mesh.fixed_dofs)
    comp = float(rhs @ u)
    return StateSolution(u, comp, -0.5 * comp, phi_q, d, None), mesh


def oscillation_term(mesh: MacroMesh, cell: CellMesh, m, cfg: EpsConfig) -> float:
    """Average over Omega of |grad_y m|^2 evaluated at x / eps."""
    g = cell.interpolate_grad(m, cell_coordinates(mesh.quad_points, cfg.eps))
    return mesh.integrate_quad(np.sum(g * g, axis=-1)) / mesh.area


def oscillating_average(mesh: MacroMesh, cell: CellMesh, func, m, cfg: EpsConfig) -> float:
    """Average over Omega of func(m(x / eps))."""
    return mesh.integrate_quad(func(oscillating_m(mesh, cell, m, cfg))) / mesh.area


def eval_J_eps(phi, m, cfg: EpsConfig, u, mesh: MacroMesh, cell: CellMesh, loads: LoadCase, volume_cap: float, micro_cap: float, reg_phi: float = 0.5, reg_m: float = 0.5) -> float:
    phi_n = as_nodal(mesh, phi)
    if not (admissible(mesh, phi_n, 0.0, 1.0, volume_cap) and admissible(cell, m, 1.0, 2.0, micro_cap)):
        return np.inf
    comp = float(load_vector(mesh, mesh.values_at_quad(phi_n), loads) @ u)
    return comp + reg_m * oscillation_term(mesh, cell, m, cfg) + reg_phi * integrate_h1_seminorm(mesh, phi_n)


def mm_energy(grid: Grid, phi, eps: float, dw: DoubleWell, well_factor: float = 1.0) -> float:
    """(eps / 2) int |grad phi|^2 + (well_factor / eps) int H(phi)."""
    phi_n = as_nodal(grid, phi)
    grad = 0.5 * eps * integrate_h1_seminorm(grid, phi_n)
    well = well_factor / eps * grid.integrate_quad(dw(grid.values_at_quad(phi_n)))
    return grad + well


def eval_Js_eps(phi, m, cfg: EpsConfig, u, mesh: MacroMesh, cell: CellMesh, loads: LoadCase, dw: DoubleWell, volume_cap: float, micro_cap: float) -> float:
    """Compliance plus Modica-Mortola terms for phi on Omega and m(x / eps) on the cells."""
    phi_n = as_nodal(mesh, phi)
    if not (admissible(mesh, phi_n, 0.0, 1.0, volume_cap) and admissible(cell, m, 1.0, 2.0, micro_cap)):
        return np.inf
    eps, wf = cfg.eps, cfg.well_factor
    comp = float(load_vector(mesh, mesh.values_at_quad(phi_n), loads) @ u)
    val = comp + mm_energy(mesh, phi_n, eps, dw, wf)
    val += 0.5 * eps * oscillation_term(mesh, cell, m, cfg)
    val += wf / eps * oscillating_average(mesh, cell, lambda v: dw(v - 1.0), m, cfg)
    return val


def mm_profile(eps: float, dw: DoubleWell | None = None, half_width: float = 0.5, n: int = 1024, well_factor: float = 1.0):
    """Numerical minimizer of the 1D Modica-Mortola energy on [-L, L].

    P1 elements with values pinned to 0 and 1 at the ends; the well term
    uses 2-point Gauss per element.  Returns (nodes, values, energy).
    """
    dw = dw or DoubleWell()
    x = np.linspace(-half_width, half_width, n + 1)
    h = x[1] - x[0]
    gpt = np.array([0.5 - 0.5 / np.sqrt(3), 0.5 + 0.5 / np.sqrt(3)])

    def energy(inner):
        v = np.concatenate([[0.0], inner, [1.0]])
        dv = np.diff(v)
        grad_e = 0.5 * eps * np.sum(dv * dv) / h
        dgrad = np.zeros_like(v)
        dgrad[:-1] -= eps * dv / h
        dgrad[1:] += eps * dv / h
        well_e = 0.0
        dwell = np.zeros_like(v)
        for g in gpt:
            val = v[:-1] * (1 - g) + v[1:] * g
            well_e += 0.5 * h * np.sum(dw(val))
            dh = 0.5 * h * dw.derivative(val)
            dwell[:-1] += dh * (1 - g)
            dwell[1:] += dh * g
        e = grad_e + well_factor / eps * well_e
        de = dgrad + well_factor / eps * dwell
        return e, de[1:-1]

    start = np.clip(dw.profile(x[1:-1] / eps), 0.0, 1.0)
    res = sopt.minimize(energy, start, jac=True, method="L-BFGS-B", bounds=[(0.0, 1.0)] * (n - 1), options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 20000})
    v = np.concatenate([[0.0], res.x, [1.0]])
    return x, v, float(res.fun)


def profile_field(mesh: Grid, x, v, center: float = 0.5) -> np.ndarray:
    """Nodal field phi(x) = profile(x1 - center) for a vertical interface."""
    return np.interp(mesh.node_coords[:, 0] - center, x, v)


@dataclass
class SweepInstance:
    """Data for Gamma-sweeps.

    For the 'energy' and 'cost' kinds: phi (callable on Omega), cell field m,
    loads, boundary and the unit-cell mesh.  For 'mm': a disk of ``radius``
    at ``center`` in the unit square resolved with ``mm_resolution``
    elements per eps.
    """

    phi: Callable | float = 1.0
    m: np.ndarray | None = None
    cell: CellMesh | None = None
    loads: LoadCase = field(default_factory=LoadCase)
    lx: float = 1.0
    ly: float = 1.0
    boundary: tuple = (BoundarySegment("left", "D"),)
    materials: Materials = field(default_factory=Materials.isotropic)
    elements_per_cell: int = 8
    n_levels: int = 33
    volume_cap: float | None = None
    micro_cap: float | None = None
    dw: DoubleWell = field(default_factory=DoubleWell)
    center: tuple = (0.5, 0.5)
    radius: float = 0.3
    mm_resolution: int = 8
    tol: float = 1e-11


def _reference(inst: SweepInstance, mesh: MacroMesh, table: CStarTable):
    phi_n = as_nodal(mesh, inst.phi)
    return solve_state(phi_n, table, inst.loads, mesh, inst.tol), phi_n


def gamma_sweep(kind: str, instance: SweepInstance, eps_list) -> list[dict]:
    """Values at each eps, the limit reference, and the gaps.

    kind='energy': minimum oscillating energy vs the homogenized minimum
    energy on the same grid.  kind='cost': J_eps vs J at the same (phi, m).
    kind='mm': Modica-Mortola energy of the optimal profile around a disk
    vs c_H times its circumference.
    """
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError("eps values must decrease")
    rows = []
    if kind == "mm":
        inst = instance
        ref = inst.dw.c_H * 2 * np.pi * inst.radius
        for eps in eps_list:
            n = int(np.ceil(inst.mm_resolution / eps))
            grid = Grid(n, n, 1.0, 1.0)
            c = np.asarray(inst.center)
            k = np.sqrt(2 * inst.dw.scale)

            def phi(x, eps=eps):
                d = inst.radius - np.linalg.norm(x - c, axis=-1)
                return 1.0 / (1.0 + np.exp(-k * d / eps))

            val = mm_energy(grid, phi, eps, inst.dw)
            rows.append({"eps": eps, "value": val, "reference": ref, "gap": abs(val - ref)})
    elif kind in ("energy", "cost"):
        inst = instance
        if inst.m is None or inst.cell is None:
            raise ConfigError("energy and cost sweeps need a cell field m")
        table = CStarTable(inst.m, inst.cell, inst.materials, inst.n_levels, tol=inst.tol)
        vcap = inst.volume_cap if inst.volume_cap is not None else inst.lx * inst.ly
        wcap = inst.micro_cap if inst.micro_cap is not None else 2.0
        for eps in eps_list:
            cfg = EpsConfig(eps, inst.elements_per_cell)
            st, mesh = solve_eps_state(inst.phi, inst.m, cfg, inst.loads, inst.cell, inst.lx, inst.ly, inst.boundary, inst.materials, inst.tol)
            hom, phi_n = _reference(inst, mesh, table)
            if kind == "energy":
                val, ref = st.energy, hom.energy
            else:
                val = eval_J_eps(phi_n, inst.m, cfg, st.u, mesh, inst.cell, inst.loads, vcap, wcap)
                ref = hom.compliance + 0.5 * integrate_h1_seminorm(inst.cell, inst.m) + 0.5 * integrate_h1_seminorm(mesh, phi_n)
            rows.append({"eps": eps, "value": val, "reference": ref, "gap": abs(val - ref)})
    else:
        raise ConfigError(f"unknown sweep kind {kind!r}")
    gaps = [r["gap"] for r in rows]
    mono = all(b < a for a, b in zip(gaps, gaps[1:]))
    for r in rows:
        r["decreasing"] = mono
    return rows
