import numpy as np
import pytest

from microtopo.fem import BoundarySegment, CellMesh, MacroMesh, assemble_elasticity
from microtopo.state import (
    LoadCase,
    TwoScaleProblem,
    box_load,
    compliance,
    elastic_energy,
    eval_J,
    load_vector,
    solve_state,
)


def _problem(mode="exact", **kw):
    mesh = MacroMesh(8, 4, 2.0, 1.0, [BoundarySegment("left", "D"), BoundarySegment("right", "N", 0.25, 0.75)])
    loads = LoadCase(body_force=box_load([0.0, -1.0]), traction=box_load([0.0, -2.0]))
    args = dict(volume_cap=1.2, micro_cap=1.5, mode=mode, tol=1e-12)
    args.update(kw)
    return TwoScaleProblem(mesh, CellMesh(6), loads, **args)


def _design(pb, seed=0):
    rng = np.random.default_rng(seed)
    phi = 0.3 + 0.4 * rng.random(pb.mesh.n_nodes)
    m = 1.2 + 0.5 * rng.random(pb.cell.n_nodes)
    return phi, m - (m.mean() - 1.45)


def test_load_vector_totals():
    pb = _problem()
    phi_q = np.ones((pb.mesh.n_elems, 4))
    rhs = load_vector(pb.mesh, phi_q, pb.loads)
    # body force over the area 2 plus traction over the band of length 1/2
    assert rhs[1::2].sum() == pytest.approx(-2.0 - 1.0, rel=1e-13)
    assert rhs[0::2].sum() == pytest.approx(0.0, abs=1e-14)


def test_compliance_equals_energy_and_dense_oracle():
    pb = _problem()
    phi, m = _design(pb)
    prov = pb.provider(m)
    st = solve_state(phi, prov, pb.loads, pb.mesh, 1e-13)
    assert st.compliance == pytest.approx(elastic_energy(pb.mesh, st.coefficient, st.u), rel=1e-10)
    assert st.compliance == pytest.approx(compliance(phi, st.u, pb.loads, pb.mesh), rel=1e-14)
    assert st.energy == pytest.approx(-0.5 * st.compliance)
    k = assemble_elasticity(pb.mesh, st.coefficient).toarray()
    free = ~pb.mesh.fixed_dofs
    rhs = load_vector(pb.mesh, st.phi_q, pb.loads)
    dense = np.linalg.solve(k[np.ix_(free, free)], rhs[free])
    assert np.allclose(st.u[free], dense, rtol=1e-9, atol=1e-12)


def test_table_and_exact_modes_agree_closely():
    pb = _problem()
    phi, m = _design(pb, 1)
    ge, _, _ = pb.evaluate(phi, m)
    gt, _, _ = pb.with_(mode="table", n_levels=17).evaluate(phi, m)
    assert gt == pytest.approx(ge, rel=1e-4)


def test_infeasible_designs_give_infinity():
    pb = _problem()
    phi, m = _design(pb)
    val, st, _ = pb.evaluate(phi, m)
    assert np.isfinite(val)
    assert np.isinf(pb.evaluate(np.ones_like(phi), m)[0])
    assert np.isinf(pb.evaluate(phi, m + 0.3)[0])
    bad = phi.copy()
    bad[0] = 1.1
    assert np.isinf(eval_J(bad, m, st.u, pb.mesh, pb.cell, pb.loads, 1.2, 1.5))
    assert eval_J(phi, m, st.u, pb.mesh, pb.cell, pb.loads, 1.2, 1.5) == pytest.approx(val)


def test_problem_validation():
    with pytest.raises(ValueError):
        _problem(volume_cap=0.0)
    with pytest.raises(ValueError):
        _problem(volume_cap=2.5)
    with pytest.raises(ValueError):
        _problem(micro_cap=2.0)
    with pytest.raises(ValueError):
        _problem(mode="fast")
    pb = _problem()
    with pytest.raises(ValueError):
        solve_state(np.ones(3), pb.provider(np.full(pb.cell.n_nodes, 1.4)), pb.loads, pb.mesh)


def test_scaled_loads_scale_compliance_quadratically():
    pb = _problem()
    phi, m = _design(pb, 2)
    prov = pb.provider(m)
    a = solve_state(phi, prov, pb.loads, pb.mesh, 1e-13).compliance
    b = solve_state(phi, prov, pb.loads.scaled(3.0), pb.mesh, 1e-13).compliance
    assert b == pytest.approx(9 * a, rel=1e-10)
