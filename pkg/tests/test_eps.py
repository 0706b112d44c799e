import numpy as np
import pytest

from microtopo.eps import (
    ConfigError,
    DoubleWell,
    EpsConfig,
    SweepInstance,
    gamma_sweep,
    mm_energy,
    mm_profile,
    oscillating_average,
    profile_field,
    solve_eps_state,
)
from microtopo.fem import BoundarySegment, CellMesh, Grid
from microtopo.state import LoadCase, box_load


def test_c_H_of_quartic_well():
    assert DoubleWell().c_H == pytest.approx(np.sqrt(2) / 6, rel=1e-12)
    assert DoubleWell(4.0).c_H == pytest.approx(2 * np.sqrt(2) / 6, rel=1e-12)


def test_profile_solves_equipartition_ode():
    dw = DoubleWell(2.0)
    s = np.linspace(-3, 3, 41)
    h = 1e-6
    dq = (dw.profile(s + h) - dw.profile(s - h)) / (2 * h)
    assert np.allclose(dq, np.sqrt(2 * dw(dw.profile(s))), rtol=1e-7, atol=1e-12)


def test_mm_profile_energy_matches_constant():
    x, v, e = mm_profile(1 / 32)
    assert 0.98 <= e / (np.sqrt(2) / 6) <= 1.02
    assert np.all(np.diff(v) >= -1e-8)
    assert v[0] == 0.0 and v[-1] == 1.0


def test_well_factor_half_scales_constant():
    _, _, e1 = mm_profile(1 / 32, n=512)
    _, _, e2 = mm_profile(1 / 32, n=512, well_factor=0.5)
    assert e2 / e1 == pytest.approx(1 / np.sqrt(2), rel=5e-3)


def test_profile_field_interface_energy_in_2d():
    eps = 1 / 32
    x, v, e = mm_profile(eps)
    grid = Grid(256, 8, 1.0, 1 / 32)
    phi = profile_field(grid, x, v)
    # a straight interface of length 1/32
    assert mm_energy(grid, phi, eps, DoubleWell()) * 32 == pytest.approx(e, rel=1e-2)


def test_tiling_and_resolution_errors():
    with pytest.raises(ConfigError):
        EpsConfig(0.0)
    with pytest.raises(ConfigError):
        EpsConfig(0.25, elements_per_cell=4)
    with pytest.raises(ConfigError):
        EpsConfig(0.3).cells(1.0)
    assert EpsConfig(0.125).cells(2.0) == 16
    loads = LoadCase(body_force=box_load([0.0, -1.0]))
    with pytest.raises(ConfigError):
        solve_eps_state(1.0, np.full(CellMesh(16).n_nodes, 1.5), EpsConfig(0.5, 8), loads, CellMesh(16), boundary=[BoundarySegment("left", "D")])


def test_oscillating_average_equals_cell_integral():
    cell = CellMesh(8)
    m = 1.0 + cell.nodal(lambda y: np.sin(np.pi * y[:, 0]) ** 2)
    cfg = EpsConfig(0.25, 8)
    from microtopo.eps import eps_mesh

    mesh = eps_mesh(1.0, 1.0, cfg)
    avg = oscillating_average(mesh, cell, lambda v: v**2, m, cfg)
    assert avg == pytest.approx(cell.integrate_quad(cell.values_at_quad(m) ** 2), rel=1e-12)


def test_small_gamma_sweep_decreases():
    cell = CellMesh(8)
    y = cell.node_coords
    m = np.where((y[:, 0] < 0.5) ^ (y[:, 1] < 0.5), 2.0, 1.0)
    inst = SweepInstance(
        phi=lambda x: 0.6 + 0.3 * np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1]),
        m=m,
        cell=cell,
        loads=LoadCase(body_force=box_load([0.0, -1.0])),
        boundary=(BoundarySegment("left", "D"),),
    )
    rows = gamma_sweep("energy", inst, [1 / 2, 1 / 4])
    assert rows[1]["gap"] < rows[0]["gap"]
    assert rows[0]["decreasing"]
    with pytest.raises(ConfigError):
        gamma_sweep("energy", inst, [1 / 4, 1 / 2])
    with pytest.raises(ConfigError):
        gamma_sweep("other", inst, [1 / 2])


def test_mm_sweep_approaches_perimeter():
    rows = gamma_sweep("mm", SweepInstance(radius=0.3), [1 / 8, 1 / 16, 1 / 32])
    assert rows[-1]["gap"] / rows[-1]["reference"] < 0.02
    assert rows[-1]["gap"] < rows[0]["gap"]


def test_scaled_well_doubles_interface_energy():
    _, _, e1 = mm_profile(1 / 32)
    _, _, e4 = mm_profile(1 / 32, DoubleWell(4.0))
    assert e4 / e1 == pytest.approx(2.0, rel=0.02)


def test_eps_state_constant_m_and_linearity():
    from microtopo.cell import CStarTable
    from microtopo.eps import eps_mesh, oscillation_term
    from microtopo.fem import integrate_h1_seminorm
    from microtopo.state import solve_state
    from microtopo.tensors import Materials

    cell = CellMesh(8)
    cfg = EpsConfig(0.25, 8)
    loads = LoadCase(body_force=box_load([0.3, -1.0]))
    bnd = [BoundarySegment("left", "D")]
    m = np.full(cell.n_nodes, 1.4)
    st, mesh = solve_eps_state(0.7, m, cfg, loads, cell, boundary=bnd, tol=1e-12)
    table = CStarTable(m, cell, Materials.isotropic(), n_levels=5, tol=1e-12)
    ref = solve_state(np.full(mesh.n_nodes, 0.7), table, loads, mesh, 1e-12)
    assert np.allclose(st.u, ref.u, rtol=1e-8, atol=1e-12)
    st2, _ = solve_eps_state(0.7, m, cfg, loads.scaled(2.0), cell, boundary=bnd, tol=1e-12)
    assert st2.energy == pytest.approx(4 * st.energy, rel=1e-10)
    assert oscillation_term(mesh, cell, m, cfg) < 1e-28
    m2 = 1.0 + cell.nodal(lambda y: np.sin(np.pi * y[:, 0]) ** 2 * np.sin(np.pi * y[:, 1]) ** 2)
    mesh2 = eps_mesh(1.0, 1.0, cfg)
    assert oscillation_term(mesh2, cell, m2, cfg) == pytest.approx(integrate_h1_seminorm(cell, m2), rel=1e-12)
