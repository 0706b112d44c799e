import numpy as np
import pytest

from microtopo.checks import SmoothFixture, check_gradient, check_state, halving_steps
from microtopo.gradient import assemble_gradient, chain_rule_directional, solve_sensitivity, stationarity_measure


@pytest.fixture(scope="module")
def fx():
    return SmoothFixture(nx=6, ny=3, nc=6)


def test_gradient_central_difference(fx):
    pb = fx.problem.with_(volume_cap=fx.problem.mesh.area, micro_cap=1.999)
    val, st, prov = pb.evaluate(fx.phi, fx.m)
    d = assemble_gradient(fx.phi, fx.m, st, prov, pb).directional(fx.psi, fx.mu)
    h = 1e-5
    gp = pb.evaluate(fx.phi + h * fx.psi, fx.m + h * fx.mu)[0]
    gm = pb.evaluate(fx.phi - h * fx.psi, fx.m - h * fx.mu)[0]
    assert d == pytest.approx((gp - gm) / (2 * h), rel=1e-6)


def test_adjoint_matches_chain_rule(fx):
    pb = fx.problem
    _, st, prov = pb.evaluate(fx.phi, fx.m)
    adj = assemble_gradient(fx.phi, fx.m, st, prov, pb).directional(fx.psi, fx.mu)
    direct = chain_rule_directional(fx.phi, fx.m, fx.psi, fx.mu, st, prov, pb)
    assert adj == pytest.approx(direct, rel=1e-9)


def test_taylor_ratios(fx):
    steps = halving_steps(1e-2, 3)
    for rows in (check_state(fx, steps), check_gradient(fx, steps)):
        assert 3.5 <= rows[-1]["ratio"] <= 4.5


def test_state_sensitivity_is_linear(fx):
    pb = fx.problem
    _, st, prov = pb.evaluate(fx.phi, fx.m)
    a = solve_sensitivity(fx.phi, fx.m, fx.psi, fx.mu, st, prov, pb)
    b = solve_sensitivity(fx.phi, fx.m, 2 * fx.psi, 2 * fx.mu, st, prov, pb)
    assert np.allclose(b, 2 * a, rtol=1e-8, atol=1e-12)


def test_strict_provider_contract(fx):
    pb = fx.problem
    _, st, prov = pb.evaluate(fx.phi, fx.m)
    with pytest.raises(ValueError):
        assemble_gradient(fx.phi, fx.m + 0.01, st, prov, pb)
    assemble_gradient(fx.phi, fx.m + 0.01, st, prov, pb, strict=False)


def test_stationarity_measure(fx):
    pb = fx.problem.with_(volume_cap=fx.problem.mesh.area, micro_cap=1.999)
    _, st, prov = pb.evaluate(fx.phi, fx.m)
    g = assemble_gradient(fx.phi, fx.m, st, prov, pb)
    gp, gm = g.full()
    # interior point with inactive caps: the measure is the plain lumped L2 norm
    expect = np.sqrt(pb.mesh.lumped_weights @ gp**2 + pb.cell.lumped_weights @ gm**2)
    assert stationarity_measure(fx.phi, fx.m, g, pb) == pytest.approx(expect, rel=1e-12)
    only_m = stationarity_measure(fx.phi, fx.m, g, pb, include=(False, True))
    assert only_m == pytest.approx(np.sqrt(pb.cell.lumped_weights @ gm**2), rel=1e-12)
    # at phi = 1 everywhere, ascent in phi is blocked
    ones = np.ones_like(fx.phi)
    _, st1, _ = pb.evaluate(ones, fx.m, prov)
    g1 = assemble_gradient(ones, fx.m, st1, prov, pb)
    gp1, _ = g1.full()
    blocked = stationarity_measure(ones, fx.m, g1, pb, include=(True, False))
    assert blocked == pytest.approx(np.sqrt(pb.mesh.lumped_weights @ np.maximum(gp1, 0) ** 2), rel=1e-10)
