"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import time

import numpy as np
import pytest

from microtopo.cell import homogenized_tensor_reduced, homogenized_voigt, solve_correctors
from microtopo.checks import derivative_free_residuals, derivative_suite, disk_fit, halving_steps
from microtopo.eps import DoubleWell, SweepInstance, gamma_sweep, mm_profile
from microtopo.fem import BoundarySegment, CellMesh, Grid, MacroMesh
from microtopo.optimize import OptimConfig, optimize
from microtopo.sharp.interface import extract_interface
from microtopo.state import FEAS_TOL, LoadCase, TwoScaleProblem, box_load
from microtopo.tensors import Materials, spectral_bounds, voigt_to_mandel

MAT = Materials.isotropic()


def report(capsys, n, ok, detail, t0):
    with capsys.disabled():
        print(f"\n[acceptance {n}] {'PASS' if ok else 'FAIL'}  {detail}  ({time.perf_counter() - t0:.1f} s)")
    assert ok, detail


def test_1_constant_data(capsys):
    t0 = time.perf_counter()
    cell = CellMesh(8)
    worst = 0.0
    for s in (0.0, 0.2, 0.5, 0.9, 1.0):
        for c in (1.0, 1.3, 2.0):
            expect = MAT.mixture_voigt(s, c)
            got = homogenized_voigt(solve_correctors(s, np.full(cell.n_nodes, c), cell, MAT, 1e-13))
            worst = max(worst, np.abs(got - expect).max() / np.abs(expect).max())
    report(capsys, 1, worst <= 1e-12, f"max relative error {worst:.2e} (tol 1e-12)", t0)


def test_2_homogenized_tensor_laws(capsys):
    t0 = time.perf_counter()
    cell = CellMesh(32)
    rng = np.random.default_rng(2024)
    alpha = spectral_bounds(MAT.c2)[0]
    beta = 2.0 * spectral_bounds(MAT.c1)[1]
    sym = excess = order = form = 0.0
    for _ in range(50):
        s = rng.uniform(0, 1)
        m = rng.uniform(1, 2, cell.n_nodes)
        cs = solve_correctors(s, m, cell, MAT, 1e-12)
        c = homogenized_voigt(cs)
        raw = cell.qweight * np.einsum("eqak,eqab,eqbl->kl", cs.strain, cs.coefficient, cs.strain)
        scale = np.abs(c).max()
        sym = max(sym, np.abs(raw - raw.T).max() / scale)
        lo, hi = spectral_bounds(c)
        excess = max(excess, alpha - lo, hi - beta)
        voigt = cell.qweight * cs.coefficient.sum(axis=(0, 1))
        order = max(order, -np.linalg.eigvalsh(voigt_to_mandel(voigt - c)).min() / scale)
        form = max(form, np.abs(homogenized_tensor_reduced(s, m, cs) - c).max() / scale)
    ok = sym <= 1e-12 and excess <= 0 and order <= 1e-12 and form <= 1e-8
    detail = f"asym {sym:.1e}, bound excess {excess:.1e}, Voigt-order defect {order:.1e}, formula gap {form:.1e}"
    report(capsys, 2, ok, detail, t0)


def test_3_derivative_suite(capsys):
    t0 = time.perf_counter()
    rows = derivative_suite(halving_steps(1e-2, 4), halving_steps(1e-2, 4))
    ratios = {k: v[-1]["ratio"] for k, v in rows.items()}
    bands = {k: (1.5, 2.5) if k == "shape" else (3.0, 5.0) for k in ratios}
    ok = all(bands[k][0] <= r <= bands[k][1] for k, r in ratios.items())
    report(capsys, 3, ok, ", ".join(f"{k} {r:.3f}" for k, r in ratios.items()), t0)


def test_4_gamma_sweep(capsys):
    t0 = time.perf_counter()
    cell = CellMesh(8)
    y = cell.node_coords
    m = np.where((y[:, 0] < 0.5) ^ (y[:, 1] < 0.5), 2.0, 1.0)
    inst = SweepInstance(
        phi=lambda x: 0.6 + 0.3 * np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1]),
        m=m,
        cell=cell,
        loads=LoadCase(body_force=box_load([0.0, -1.0]), traction=box_load([0.5, -1.0])),
        boundary=(BoundarySegment("left", "D"), BoundarySegment("right", "N")),
        elements_per_cell=8,
    )
    parts, ok = [], True
    for kind in ("energy", "cost"):
        gaps = [r["gap"] for r in gamma_sweep(kind, inst, [1 / 2, 1 / 4, 1 / 8])]
        good = all(b < a for a, b in zip(gaps, gaps[1:])) and gaps[-1] <= 0.25 * gaps[0]
        ok &= good
        parts.append(f"{kind} gaps " + " > ".join(f"{g:.2e}" for g in gaps))
    report(capsys, 4, ok, "; ".join(parts), t0)


def test_5_modica_mortola_constant(capsys):
    t0 = time.perf_counter()
    _, _, energy = mm_profile(1 / 32)
    ratio = energy / (np.sqrt(2) / 6)
    grid = Grid(128, 128)
    poly = extract_interface(grid.nodal(lambda x: 0.3 - np.hypot(x[:, 0] - 0.5, x[:, 1] - 0.5)), grid)
    perim = poly.perimeter / (2 * np.pi * 0.3) - 1
    ok = 0.98 <= ratio <= 1.02 and abs(perim) <= 0.015 and DoubleWell().c_H == pytest.approx(np.sqrt(2) / 6, rel=1e-12)
    report(capsys, 5, ok, f"profile energy / c_H = {ratio:.5f}, disk perimeter error {perim:+.2e}", t0)


def _cantilever_run():
    mesh = MacroMesh(64, 32, 2.0, 1.0, [BoundarySegment("left", "D"), BoundarySegment("right", "N", 0.4, 0.6)])
    cell = CellMesh(32)
    pb = TwoScaleProblem(mesh, cell, LoadCase(traction=box_load([0.0, -5.0])), 0.4 * mesh.area, 1.5)
    phi0 = np.full(mesh.n_nodes, 0.4)
    m0 = np.full(cell.n_nodes, 1.5)
    worst = []

    def watch(it, phi, m, row):
        w_phi, w_m = mesh.lumped_weights, cell.lumped_weights
        worst.append(max(-phi.min(), phi.max() - 1, w_phi @ phi - pb.volume_cap, 1 - m.min(), m.max() - 2, w_m @ m - pb.micro_cap))

    cfg = OptimConfig(max_iters=200, h1_precondition=True, h1_tau=0.03, tol_relative=1e-4)
    res = optimize(phi0, m0, pb, cfg, callback=watch)
    return res, max(worst)


def test_6_optimizer_contract(capsys):
    t0 = time.perf_counter()
    a, infeas = _cantilever_run()
    b, _ = _cantilever_run()
    obj = a.history.column("objective")
    stat = a.history.column("stationarity")
    reduction = stat[1] / stat.min()
    identical = a.history.rows == b.history.rows and np.array_equal(a.phi, b.phi) and np.array_equal(a.m, b.m)
    ok = infeas <= FEAS_TOL and np.all(np.diff(obj) <= 0) and reduction >= 1e3 and len(stat) <= 201 and identical
    detail = f"{len(stat) - 1} iterations, infeasibility {infeas:.1e}, reduction {reduction:.2e}, monotone {bool(np.all(np.diff(obj) <= 0))}, identical {identical}"
    report(capsys, 6, ok, detail, t0)


def test_7_optimality_residual(capsys):
    t0 = time.perf_counter()
    res = np.abs(derivative_free_residuals()).max()
    fit = disk_fit()
    gain = fit["norm_before"] / fit["norm_after"]
    ok = res <= 1e-8 and gain >= 10
    report(capsys, 7, ok, f"derivative-free residual {res:.1e}, fit reduction {gain:.0f}x (lam {fit['lam']:.4f}, mu {fit['mu']:.4f})", t0)
