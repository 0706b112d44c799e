"""Homogenized macroscopic equilibrium, compliance and cost functionals."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .cell import CStarTable, ExactCStar
from .fem import CellMesh, MacroMesh, assemble_elasticity, integrate_h1_seminorm, integrate_mean, solve_spd
from .tensors import Materials

FEAS_TOL = 1e-10


@dataclass(frozen=True)
class LoadCase:
    """Body-force density ``f`` (applied as phi f) and traction ``g`` on the N edges.

    Each entry is a callable mapping points (..., 2) to vectors (..., 2).
    The optional ``*_grad`` callables return Jacobians (..., 2, 2) with
    entry [a, b] = d f_a / d x_b; they are needed only for shape derivatives.
    """

    body_force: Callable | None = None
    traction: Callable | None = None
    body_force_grad: Callable | None = None
    traction_grad: Callable | None = None

    def scaled(self, a: float) -> "LoadCase":
        def sc(fn):
            return None if fn is None else (lambda x: a * fn(x))

        return LoadCase(sc(self.body_force), sc(self.traction), sc(self.body_force_grad), sc(self.traction_grad))

    def f(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros_like(x) if self.body_force is None else np.asarray(self.body_force(x), dtype=float)

    def g(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros_like(x) if self.traction is None else np.asarray(self.traction(x), dtype=float)

    def grad_f(self, x):
        x = np.asarray(x, dtype=float)
        if self.body_force_grad is None:
            return np.zeros(x.shape + (2,))
        return np.asarray(self.body_force_grad(x), dtype=float)

    def grad_g(self, x):
        x = np.asarray(x, dtype=float)
        if self.traction_grad is None:
            return np.zeros(x.shape + (2,))
        return np.asarray(self.traction_grad(x), dtype=float)


def box_load(vector, box=None) -> Callable:
    """Piecewise-constant vector field equal to ``vector`` inside ``box`` = (x0, x1, y0, y1)."""
    v = np.asarray(vector, dtype=float)

    def fn(x):
        x = np.asarray(x, dtype=float)
        if box is None:
            inside = np.ones(x.shape[:-1], dtype=bool)
        else:
            x0, x1, y0, y1 = box
            inside = (x[..., 0] >= x0) & (x[..., 0] <= x1) & (x[..., 1] >= y0) & (x[..., 1] <= y1)
        return inside[..., None] * v

    return fn


def sum_loads(fns) -> Callable | None:
    fns = [f for f in fns if f is not None]
    if not fns:
        return None
    return lambda x: sum(f(x) for f in fns)


@dataclass
class StateSolution:
    u: np.ndarray
    compliance: float
    energy: float
    phi_q: np.ndarray = field(repr=False, default=None)
    coefficient: np.ndarray = field(repr=False, default=None)
    dcoefficient: np.ndarray = field(repr=False, default=None)


def phi_at_quad(mesh: MacroMesh, phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if phi.shape == (mesh.n_elems, 4):
        return phi
    if phi.shape == (mesh.n_nodes,):
        return mesh.values_at_quad(phi)
    raise ValueError(f"phi has shape {phi.shape}")


def load_vector(mesh: MacroMesh, phi_q: np.ndarray, loads: LoadCase) -> np.ndarray:
    """Discrete right-hand side: int phi f . v + int_{Gamma_N} g . v."""
    rhs = np.zeros(mesh.n_dofs)
    if loads.body_force is not None:
        fq = loads.f(mesh.quad_points) * phi_q[..., None]
        fe = mesh.qweight * np.einsum("qa,eqc->eac", mesh.N, fq).reshape(mesh.n_elems, 8)
        rhs += mesh.assemble_vector(fe)
    nm = mesh.neumann
    if loads.traction is not None and nm["edges"].size:
        gq = loads.g(nm["points"]) * nm["weights"][..., None]
        contrib = np.einsum("qa,kqc->kac", nm["shape"], gq)
        dofs = np.stack([2 * nm["nodes"], 2 * nm["nodes"] + 1], axis=2)
        rhs += np.bincount(dofs.ravel(), weights=contrib.ravel(), minlength=mesh.n_dofs)
    return rhs


def solve_with_coefficient(mesh: MacroMesh, d: np.ndarray, rhs: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    k = assemble_elasticity(mesh, d)
    return solve_spd(k, rhs, "dirichlet", tol, fixed=mesh.fixed_dofs)


def solve_state(phi, provider, loads: LoadCase, mesh: MacroMesh, tol: float = 1e-10) -> StateSolution:
    """Equilibrium displacement for the homogenized tensor C*(phi(x))."""
    phi_q = phi_at_quad(mesh, phi)
    d, dd = provider.evaluate(phi_q)
    rhs = load_vector(mesh, phi_q, loads)
    u = solve_with_coefficient(mesh, d, rhs, tol)
    comp = float(rhs @ u)
    return StateSolution(u, comp, -0.5 * comp, phi_q, d, dd)


def compliance(phi, u, loads: LoadCase, mesh: MacroMesh) -> float:
    """int phi f . u + int_{Gamma_N} g . u (same quadrature as the load vector)."""
    return float(load_vector(mesh, phi_at_quad(mesh, phi), loads) @ u)


def elastic_energy(mesh: MacroMesh, d: np.ndarray, u: np.ndarray) -> float:
    """int C e(u) . e(u)."""
    e = mesh.strain_at_quad(u)
    return mesh.integrate_quad(np.einsum("eqa,eqab,eqb->eq", e, d, e))


def admissible(grid, field_, lo, hi, cap, tol=FEAS_TOL) -> bool:
    field_ = np.asarray(field_)
    if field_.min() < lo - tol or field_.max() > hi + tol:
        return False
    return integrate_mean(grid, field_) <= cap + tol * grid.area


def eval_J(phi, m, u, mesh: MacroMesh, cell: CellMesh, loads: LoadCase, volume_cap: float, micro_cap: float, reg_phi: float = 0.5, reg_m: float = 0.5) -> float:
    """compliance + reg_m int_Y |grad m|^2 + reg_phi int |grad phi|^2, +inf outside the admissible set."""
    if not (admissible(mesh, phi, 0.0, 1.0, volume_cap) and admissible(cell, m, 1.0, 2.0, micro_cap)):
        return np.inf
    return compliance(phi, u, loads, mesh) + reg_m * integrate_h1_seminorm(cell, m) + reg_phi * integrate_h1_seminorm(mesh, phi)


@dataclass
class TwoScaleProblem:
    """Data of the homogenized optimization problem."""

    mesh: MacroMesh
    cell: CellMesh
    loads: LoadCase
    volume_cap: float
    micro_cap: float
    materials: Materials = field(default_factory=Materials.isotropic)
    reg_phi: float = 0.5
    reg_m: float = 0.5
    tol: float = 1e-10
    n_levels: int = 17
    mode: str = "table"
    rule: str = "hermite"
    threads: int = 1

    def __post_init__(self):
        # V = |Omega| is accepted: the cap is then vacuous (used with phi frozen at 1)
        if not 0 < self.volume_cap <= self.mesh.area:
            raise ValueError("volume cap must lie in (0, |Omega|]")
        if not 1 < self.micro_cap < 2:
            raise ValueError("micro cap must lie in (1, 2)")
        if self.mode not in ("table", "exact"):
            raise ValueError(f"unknown corrector mode {self.mode!r}")

    def with_(self, **kw) -> "TwoScaleProblem":
        return replace(self, **kw)

    def provider(self, m):
        if self.mode == "exact":
            return ExactCStar(m, self.cell, self.materials, self.tol)
        return CStarTable(m, self.cell, self.materials, self.n_levels, self.rule, self.tol, self.threads)

    def feasible(self, phi, m) -> bool:
        return admissible(self.mesh, phi, 0.0, 1.0, self.volume_cap) and admissible(self.cell, m, 1.0, 2.0, self.micro_cap)

    def objective_parts(self, phi, m, state: StateSolution) -> dict:
        rp = self.reg_phi * integrate_h1_seminorm(self.mesh, phi)
        rm = self.reg_m * integrate_h1_seminorm(self.cell, m)
        return {"compliance": state.compliance, "reg_phi": rp, "reg_m": rm, "objective": state.compliance + rp + rm}

    def evaluate(self, phi, m, provider=None):
        """Reduced objective G(phi, m); returns (value, state, provider)."""
        provider = provider if provider is not None else self.provider(m)
        state = solve_state(phi, provider, self.loads, self.mesh, self.tol)
        if not self.feasible(phi, m):
            return np.inf, state, provider
        return self.objective_parts(phi, m, state)["objective"], state, provider
