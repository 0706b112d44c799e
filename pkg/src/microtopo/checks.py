"""Finite-difference verification of every derivative in the package.

Each check returns rows ``{"quantity", "t", "error", "ratio"}`` for a
sequence of halved steps.  Unless stated otherwise the error is the Taylor
remainder |X(t) - X(0) - t X'| (ratio 4 under halving for a correct
derivative).  The sharp shape check uses the difference-quotient error
|(X(t) - X(0)) / t - X'| instead (ratio 2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cell import dcstar, homogenized_voigt, solve_correctors, solve_linearized_corrector
from .fem import BoundarySegment, CellMesh, MacroMesh
from .gradient import assemble_gradient, solve_sensitivity
from .sharp.shape import SharpDesign, c_tilde, fit_multipliers, shape_derivative, sharp_state, smto_residual, transported_cell_tensor, transported_cost
from .sharp.variations import CellSine, CellSwirl, CompactSwirl, RadialBump, TranslationBump
from .state import LoadCase, TwoScaleProblem
from .tensors import Materials


def halving_steps(t0: float, n: int) -> list[float]:
    return [t0 / 2**k for k in range(n)]


def _rows(quantity: str, steps, errors) -> list[dict]:
    rows = []
    for k, (t, e) in enumerate(zip(steps, errors)):
        ratio = errors[k - 1] / e if k and e > 0 else np.nan
        rows.append({"quantity": quantity, "t": t, "error": float(e), "ratio": float(ratio)})
    return rows


def last_ratio(rows: list[dict]) -> float:
    return rows[-1]["ratio"]


def taylor_check(quantity: str, fn, x0, dx, steps, norm=np.linalg.norm) -> list[dict]:
    """Remainder ||fn(t) - fn(0) - t dx|| for the given steps; fn(0) = x0."""
    errs = [float(norm(np.asarray(fn(t)) - x0 - t * dx)) for t in steps]
    return _rows(quantity, steps, errs)


# ---- fixtures -------------------------------------------------------------


@dataclass
class SmoothFixture:
    """Small random two-scale instance for the diffuse derivatives."""

    seed: int = 1
    nx: int = 8
    ny: int = 4
    nc: int = 8
    tol: float = 1e-13
    problem: TwoScaleProblem = field(init=False)
    phi: np.ndarray = field(init=False)
    m: np.ndarray = field(init=False)
    psi: np.ndarray = field(init=False)
    mu: np.ndarray = field(init=False)

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        mesh = MacroMesh(self.nx, self.ny, 2.0, 1.0, [BoundarySegment("left", "D"), BoundarySegment("right", "N", 0.3, 0.7)])
        cell = CellMesh(self.nc)

        def body(x):
            return np.stack([0.3 + 0 * x[..., 0], -np.ones_like(x[..., 0])], axis=-1)

        def trac(x):
            return np.stack([np.zeros_like(x[..., 0]), -np.ones_like(x[..., 0])], axis=-1)

        loads = LoadCase(body_force=body, traction=trac)
        self.problem = TwoScaleProblem(mesh, cell, loads, 1.9, 1.9, mode="exact", tol=self.tol)
        self.phi = 0.2 + 0.6 * rng.random(mesh.n_nodes)
        self.m = 1.2 + 0.6 * rng.random(cell.n_nodes)
        self.psi = rng.standard_normal(mesh.n_nodes)
        self.mu = rng.standard_normal(cell.n_nodes)


def check_cstar(s: float, m, psi_val: float, mu, cell: CellMesh, materials: Materials, steps, tol: float = 1e-13) -> list[dict]:
    """(a) Cbar* against C*(s + t psi, m + t mu)."""
    cs = solve_correctors(s, m, cell, materials, tol)
    c0 = homogenized_voigt(cs)
    dc = dcstar(s, m, cs, psi_val, mu).voigt

    def fn(t):
        return homogenized_voigt(solve_correctors(s + t * psi_val, m + t * mu, cell, materials, tol))

    return taylor_check("cstar", fn, c0, dc, steps)


def check_correctors(s: float, m, psi_val: float, mu, cell: CellMesh, materials: Materials, steps, tol: float = 1e-13) -> list[dict]:
    """(b) linearized correctors against corrector differences."""
    cs = solve_correctors(s, m, cell, materials, tol)
    wbar = solve_linearized_corrector(s, m, psi_val, mu, cs)

    def fn(t):
        return solve_correctors(s + t * psi_val, m + t * mu, cell, materials, tol).w

    return taylor_check("correctors", fn, cs.w, wbar, steps)


def check_state(fx: SmoothFixture, steps) -> list[dict]:
    """(c) state sensitivity against state differences (exact C* mode)."""
    pb = fx.problem
    _, st, prov = pb.evaluate(fx.phi, fx.m)
    v = solve_sensitivity(fx.phi, fx.m, fx.psi, fx.mu, st, prov, pb)

    def fn(t):
        return pb.evaluate(fx.phi + t * fx.psi, fx.m + t * fx.mu)[1].u

    return taylor_check("state", fn, st.u, v, steps)


def check_gradient(fx: SmoothFixture, steps) -> list[dict]:
    """(d) reduced gradient against G(phi + t psi, m + t mu).

    The caps are relaxed so that every perturbed design stays feasible and
    G is finite along the whole sequence.
    """
    pb = fx.problem.with_(volume_cap=fx.problem.mesh.area, micro_cap=1.999)
    _, st, prov = pb.evaluate(fx.phi, fx.m)
    g0 = pb.objective_parts(fx.phi, fx.m, st)["objective"]
    d = assemble_gradient(fx.phi, fx.m, st, prov, pb).directional(fx.psi, fx.mu)

    def fn(t):
        p, m = fx.phi + t * fx.psi, fx.m + t * fx.mu
        _, s, _ = pb.evaluate(p, m)
        return pb.objective_parts(p, m, s)["objective"]

    return taylor_check("gradient", fn, g0, d, steps, norm=abs)


@dataclass
class SharpFixture:
    """Sharp disk design with smooth loads and admissible variation fields."""

    nx: int = 32
    ny: int = 16
    nc: int = 16
    tol: float = 1e-12
    materials: Materials = field(default_factory=Materials.isotropic)

    def __post_init__(self):
        self.mesh = MacroMesh(self.nx, self.ny, 2.0, 1.0, [BoundarySegment("left", "D"), BoundarySegment("right", "N")])
        self.cell = CellMesh(self.nc)

        def body(x):
            return np.stack([0.3 + 0 * x[..., 0], -1.0 - 0.5 * x[..., 0]], axis=-1)

        def body_grad(x):
            return np.broadcast_to(np.array([[0.0, 0.0], [-0.5, 0.0]]), x.shape + (2,))

        def trac(x):
            return np.stack([0 * x[..., 1], -(1.0 + 0.5 * np.sin(np.pi * x[..., 1]))], axis=-1)

        def trac_grad(x):
            out = np.zeros(x.shape + (2,))
            out[..., 1, 1] = -0.5 * np.pi * np.cos(np.pi * x[..., 1])
            return out

        self.loads = LoadCase(body, trac, body_grad, trac_grad)
        self.design = SharpDesign.from_level_sets(
            self.mesh,
            self.cell,
            lambda x: np.hypot(x[..., 0] - 1.0, x[..., 1] - 0.5) - 0.25,
            lambda y: 0.3 - np.hypot(y[..., 0] - 0.5, y[..., 1] - 0.5),
        )
        self.phi_field = TranslationBump([1.0, 0.5], 0.45, [0.7, 0.4]) + TranslationBump([2.0, 0.5], 0.35, [0.0, 1.0])
        self.psi_field = CellSine((0.5, 0.3), (1, 1), (1, 0), (0.2, 0.0)) + CellSwirl(0.2)


def check_ctilde(fx: SharpFixture, steps) -> list[dict]:
    """(e) C~* against C* of the transported cell."""
    st = sharp_state(fx.design, fx.mesh, fx.cell, fx.loads, fx.materials, fx.tol)
    ct = c_tilde(st.correctors, fx.psi_field)

    def fn(t):
        return transported_cell_tensor(fx.design.m_q, fx.psi_field, t, fx.cell, fx.materials, fx.tol)

    return taylor_check("ctilde", fn, st.c1star, ct, steps)


def check_shape_derivative(fx: SharpFixture, steps) -> list[dict]:
    """(f) shape derivative against the transported sharp cost (first order)."""
    st = sharp_state(fx.design, fx.mesh, fx.cell, fx.loads, fx.materials, fx.tol)
    d = shape_derivative(fx.design, st, fx.phi_field, fx.psi_field, fx.mesh, fx.cell, fx.loads, fx.materials)["total"]
    j0 = transported_cost(fx.design, fx.phi_field, fx.psi_field, 0.0, fx.mesh, fx.cell, fx.loads, fx.materials, tol=fx.tol)
    errs = []
    for t in steps:
        jt = transported_cost(fx.design, fx.phi_field, fx.psi_field, t, fx.mesh, fx.cell, fx.loads, fx.materials, tol=fx.tol)
        errs.append(abs((jt - j0) / t - d))
    return _rows("shape", steps, errs)


def derivative_suite(steps=None, shape_steps=None) -> dict:
    """All six checks on the default fixtures; returns rows per quantity."""
    steps = steps or halving_steps(1e-2, 4)
    shape_steps = shape_steps or halving_steps(1e-2, 4)
    fx = SmoothFixture()
    cell = fx.problem.cell
    mat = fx.problem.materials
    rng = np.random.default_rng(7)
    m = 1.2 + 0.6 * rng.random(cell.n_nodes)
    mu = rng.standard_normal(cell.n_nodes)
    sfx = SharpFixture()
    return {
        "cstar": check_cstar(0.6, m, 0.8, mu, cell, mat, steps),
        "correctors": check_correctors(0.6, m, 0.8, mu, cell, mat, steps),
        "state": check_state(fx, steps),
        "gradient": check_gradient(fx, steps),
        "ctilde": check_ctilde(sfx, steps),
        "shape": check_shape_derivative(sfx, shape_steps),
    }


# ---- first-order optimality fixtures --------------------------------------


def _unit_square(n: int) -> MacroMesh:
    return MacroMesh(n, n, 1.0, 1.0, [BoundarySegment("left", "D"), BoundarySegment("right", "N")])


def derivative_free_residuals(n: int = 64, nc: int = 32, materials: Materials | None = None) -> np.ndarray:
    """Optimality residuals at (lam, mu) = (0, 0) for designs with a zero shape derivative.

    With no loads and straight interfaces, fields tangent to the interfaces
    (or vanishing there) change neither the compliance nor the perimeters.
    """
    materials = materials or Materials.isotropic()
    mesh, cell = _unit_square(n), CellMesh(nc)
    loads = LoadCase()
    design = SharpDesign.from_level_sets(mesh, cell, lambda x: 0.5 - x[..., 0] + 1e-9, lambda y: 0.5 - y[..., 0] + 1e-9)
    st = sharp_state(design, mesh, cell, loads, materials)
    pairs = [
        (CompactSwirl([0.5, 0.5], 0.3), CellSwirl()),
        (TranslationBump([0.5, 0.5], 0.3, [0.0, 1.0]), CellSine((0.0, 1.0), (1, 1), (0, 0))),
        (None, None),
    ]
    return smto_residual(design, st, pairs, 0.0, 0.0, mesh, cell, loads, materials)


def disk_fit(n: int = 64, nc: int = 32, materials: Materials | None = None) -> dict:
    """Multiplier fit on a lightly loaded disk design over six variation pairs.

    Under a tiny load the disk is close to optimal for perimeter plus volume,
    where lam and mu approach -c_H / r for the two radii.
    """
    materials = materials or Materials.isotropic()
    mesh, cell = _unit_square(n), CellMesh(nc)

    def body(x):
        return np.stack([0 * x[..., 0], -1e-3 + 0 * x[..., 0]], axis=-1)

    loads = LoadCase(body_force=body)
    design = SharpDesign.from_level_sets(
        mesh, cell, lambda x: 0.25 - np.hypot(x[..., 0] - 0.5, x[..., 1] - 0.5), lambda y: 0.3 - np.hypot(y[..., 0] - 0.5, y[..., 1] - 0.5)
    )
    st = sharp_state(design, mesh, cell, loads, materials)
    c = [0.5, 0.5]
    pairs = [
        (RadialBump(c, 0.4), None),
        (TranslationBump(c, 0.4, [1.0, 0.0]) + RadialBump(c, 0.35, 0.5), None),
        (RadialBump([0.55, 0.45], 0.4), None),
        (None, RadialBump(c, 0.45, domain="cell", period=1.0)),
        (None, RadialBump([0.52, 0.5], 0.45, 0.7, domain="cell", period=1.0)),
        (RadialBump(c, 0.3), RadialBump(c, 0.4, domain="cell", period=1.0)),
    ]
    return fit_multipliers(design, st, pairs, mesh, cell, loads, materials)


__all__ = [
    "SharpFixture",
    "SmoothFixture",
    "check_correctors",
    "check_cstar",
    "check_ctilde",
    "check_gradient",
    "check_shape_derivative",
    "check_state",
    "derivative_free_residuals",
    "derivative_suite",
    "disk_fit",
    "halving_steps",
    "last_ratio",
    "taylor_check",
]
