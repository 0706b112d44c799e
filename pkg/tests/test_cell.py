import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microtopo.cell import (
    CStarTable,
    ContractError,
    ExactCStar,
    dcstar,
    homogenized_tensor,
    homogenized_tensor_reduced,
    homogenized_voigt,
    solve_correctors,
)
from microtopo.fem import CellMesh
from microtopo.tensors import Materials, spectral_bounds, voigt_to_mandel

MAT = Materials.isotropic()


def _laminate(d1, d2, frac):
    """Closed-form effective Voigt matrix of layers stacked along y1.

    Layer 1 occupies a fraction ``frac`` of the period.  Continuity of
    sigma11, sigma12 and of eps22 across the layers gives harmonic means in
    the normal directions and a corrected arithmetic mean for C2222.
    """
    w = np.array([frac, 1 - frac])
    d = np.stack([d1, d2])
    inv11 = w @ (1 / d[:, 0, 0])
    r = w @ (d[:, 0, 1] / d[:, 0, 0])
    c11 = 1 / inv11
    c12 = r * c11
    c22 = w @ (d[:, 1, 1] - d[:, 0, 1] ** 2 / d[:, 0, 0]) + r**2 * c11
    c33 = 1 / (w @ (1 / d[:, 2, 2]))
    return np.array([[c11, c12, 0], [c12, c22, 0], [0, 0, c33]])


def test_constant_m_matches_mixture_exactly():
    cell = CellMesh(6)
    for s, m in [(0.0, 1.0), (0.35, 1.7), (1.0, 2.0)]:
        cs = solve_correctors(s, np.full(cell.n_nodes, m), cell, MAT, 1e-13)
        assert np.abs(cs.w).max() < 1e-12
        expect = MAT.mixture_voigt(s, m)
        err = np.abs(homogenized_voigt(cs) - expect).max() / np.abs(expect).max()
        assert err < 1e-12


@pytest.mark.parametrize("s", [1.0, 0.6])
def test_laminate_against_closed_form(s):
    n = 16
    cell = CellMesh(n)
    # m = 2 on elements with y1 < 1/2, m = 1 elsewhere; piecewise constant per column
    cols = np.arange(cell.n_elems) % n
    m_q = np.where(cols < n // 2, 2.0, 1.0)[:, None] * np.ones((1, 4))
    cs = solve_correctors(s, m_q, cell, MAT, 1e-13)
    d1 = MAT.mixture_voigt(s, 2.0)
    d2 = MAT.mixture_voigt(s, 1.0)
    assert np.allclose(homogenized_voigt(cs), _laminate(d1, d2, 0.5), rtol=1e-10, atol=1e-12)


def _random_m(cell, seed):
    rng = np.random.default_rng(seed)
    return 1.0 + rng.random(cell.n_nodes)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_symmetry_and_hashin_bounds(seed, s):
    cell = CellMesh(8)
    m = _random_m(cell, seed)
    cs = solve_correctors(s, m, cell, MAT, 1e-12)
    c = homogenized_voigt(cs)
    assert np.array_equal(c, c.T)
    d = cs.coefficient
    w = cell.qweight
    upper = w * d.sum(axis=(0, 1))
    lower = np.linalg.inv(w * np.linalg.inv(d).sum(axis=(0, 1)))
    mc, mu, ml = (voigt_to_mandel(a) for a in (c, upper, lower))
    assert np.linalg.eigvalsh(mu - mc).min() > -1e-9 * np.abs(mu).max()
    assert np.linalg.eigvalsh(mc - ml).min() > -1e-9 * np.abs(mu).max()
    lo, _ = spectral_bounds(c)
    assert lo > 0


def test_energy_and_reduced_formulas_agree():
    cell = CellMesh(10)
    m = _random_m(cell, 2)
    cs = solve_correctors(0.7, m, cell, MAT, 1e-13)
    a = homogenized_tensor(0.7, m, cs).voigt
    b = homogenized_tensor_reduced(0.7, m, cs)
    assert np.allclose(a, b, rtol=1e-9, atol=1e-11)


def test_contract_errors():
    cell = CellMesh(4)
    m = _random_m(cell, 0)
    cs = solve_correctors(0.5, m, cell, MAT)
    with pytest.raises(ContractError):
        homogenized_tensor(0.4, m, cs)
    with pytest.raises(ContractError):
        dcstar(0.5, m + 0.1, cs, 1.0, 0.0)
    with pytest.raises(ValueError):
        solve_correctors(1.2, m, cell, MAT)
    with pytest.raises(ValueError):
        solve_correctors(0.5, np.ones(3), cell, MAT)


def test_table_exact_at_levels_and_close_between():
    cell = CellMesh(6)
    m = _random_m(cell, 3)
    table = CStarTable(m, cell, MAT, n_levels=9, tol=1e-13)
    exact = ExactCStar(m, cell, MAT, tol=1e-13)
    for k, s in enumerate(table.levels):
        c, _ = table.evaluate(s)
        assert np.array_equal(c, table.cstar[k])
    s = np.array([0.0625, 0.51, 0.93])
    ct, dt = table.evaluate(s)
    ce, de = exact.evaluate(s)
    scale = np.abs(ce).max(axis=(1, 2), keepdims=True)
    assert np.all(np.abs(ct - ce) <= 5e-3 * scale)
    assert np.all(np.abs(dt - de) <= 5e-3 * np.abs(de).max(axis=(1, 2), keepdims=True))
    assert table.matches(m) and not table.matches(m + 1)
    with pytest.raises(ValueError):
        CStarTable(m, cell, MAT, n_levels=1)
    with pytest.raises(ValueError):
        CStarTable(m, cell, MAT, rule="linear")


def test_table_derivative_is_derivative_of_interpolant():
    cell = CellMesh(4)
    m = _random_m(cell, 4)
    for rule in ("hermite", "pchip"):
        table = CStarTable(m, cell, MAT, n_levels=5, rule=rule)
        s, h = 0.37, 1e-6
        fd = (table.evaluate(s + h)[0] - table.evaluate(s - h)[0]) / (2 * h)
        assert np.allclose(table.evaluate(s)[1], fd, rtol=1e-6, atol=1e-8)


def test_threaded_table_is_identical():
    cell = CellMesh(4)
    m = _random_m(cell, 5)
    a = CStarTable(m, cell, MAT, n_levels=5)
    b = CStarTable(m, cell, MAT, n_levels=5, threads=3)
    assert np.array_equal(a.cstar, b.cstar)


def test_dcstar_central_difference():
    cell = CellMesh(6)
    m = _random_m(cell, 6)
    mu = np.random.default_rng(6).standard_normal(cell.n_nodes)
    s, psi, h = 0.4, 0.7, 1e-5
    cs = solve_correctors(s, m, cell, MAT, 1e-13)
    d = dcstar(s, m, cs, psi, mu).voigt
    plus = homogenized_voigt(solve_correctors(s + h * psi, m + h * mu, cell, MAT, 1e-13))
    minus = homogenized_voigt(solve_correctors(s - h * psi, m - h * mu, cell, MAT, 1e-13))
    assert np.allclose(d, (plus - minus) / (2 * h), rtol=1e-6, atol=1e-9)


def test_table_refinement_checkerboard():
    cell = CellMesh(16)
    y = cell.node_coords
    m = np.where((y[:, 0] < 0.5) ^ (y[:, 1] < 0.5), 2.0, 1.0)
    s = np.random.default_rng(0).random(50)
    a = CStarTable(m, cell, MAT, n_levels=17, tol=1e-12).evaluate(s)[0]
    b = CStarTable(m, cell, MAT, n_levels=33, tol=1e-12).evaluate(s)[0]
    rel = np.abs(a - b).max(axis=(1, 2)) / np.abs(b).max(axis=(1, 2))
    assert rel.max() < 1e-4


@pytest.mark.parametrize("rule", ["hermite", "pchip"])
def test_table_exact_for_constant_m(rule):
    cell = CellMesh(4)
    s = np.linspace(0, 1, 37)
    c, dc = CStarTable(np.full(cell.n_nodes, 1.3), cell, MAT, n_levels=5, rule=rule, tol=1e-13).evaluate(s)
    assert np.allclose(c, MAT.mixture_voigt(s, 1.3), rtol=1e-11, atol=1e-15)
    assert np.allclose(dc, 1.3 * MAT.c1.voigt - MAT.c2.voigt, rtol=1e-9, atol=1e-12)


def test_contrast_detection():
    assert MAT.contrast == pytest.approx(1e-3)
    other = Materials(MAT.c1, MAT.c1 * 0.01 + Materials.isotropic(1.0, 0.1).c1 * 0.001)
    assert other.contrast is None


@pytest.mark.parametrize("rule", ["hermite", "pchip"])
def test_table_is_monotone_in_s(rule):
    cell = CellMesh(16)
    y = cell.node_coords
    m = np.where((y[:, 0] < 0.5) ^ (y[:, 1] < 0.5), 2.0, 1.0)
    table = CStarTable(m, cell, MAT, 17, rule)
    c, dc = table.evaluate(np.linspace(0, 1, 2001))
    steps = np.diff(voigt_to_mandel(c), axis=0)
    assert min(np.linalg.eigvalsh(steps).min(axis=1)) >= -1e-12
    assert np.linalg.eigvalsh(voigt_to_mandel(dc)).min() > 0


def test_checkerboard_correctors_match_dense_solve():
    from microtopo.cell import UNIT_STRAINS, _load_vectors

    cell = CellMesh(8)
    y = cell.node_coords
    m = np.where((y[:, 0] < 0.5) ^ (y[:, 1] < 0.5), 2.0, 1.0)
    cs = solve_correctors(1.0, m, cell, MAT, 1e-13)
    k = cs.stiffness.toarray()
    rhs = _load_vectors(cell, np.einsum("eqab,bk->eqak", cs.coefficient, UNIT_STRAINS))
    # pin node 0 to remove rigid translations, then shift to zero mean
    dense = np.zeros_like(rhs)
    dense[2:] = np.linalg.solve(k[2:, 2:], rhs[2:])
    dense = dense.reshape(-1, 2, 3)
    dense = (dense - dense.mean(axis=0)).reshape(-1, 3)
    assert np.allclose(cs.w, dense, atol=1e-8 * np.abs(dense).max())
