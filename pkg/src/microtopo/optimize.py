"""Projected-gradient descent for the homogenized two-scale problem."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import Grid, integrate_mean
from .gradient import GradientPair, assemble_gradient, stationarity_measure
from .state import TwoScaleProblem

log = logging.getLogger(__name__)


@dataclass
class OptimConfig:
    max_iters: int = 200
    tol_stationarity: float = 1e-8
    step0: float = 1.0
    armijo_c: float = 1e-4
    shrink: float = 0.5
    max_shrinks: int = 40
    barzilai_borwein: bool = True
    step_min: float = 1e-12
    step_max: float = 1e6
    h1_precondition: bool = False
    h1_tau: float = 0.01
    retab_tol: float = 1e-3
    tol_relative: float = 0.0
    freeze_phi: bool = False
    freeze_m: bool = False

    def __post_init__(self):
        if not self.step0 > 0:
            raise ValueError("step0 must be positive")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.h1_tau < 0:
            raise ValueError("h1_tau must be nonnegative")


@dataclass
class OptimHistory:
    rows: list = field(default_factory=list)
    converged: bool = False
    line_search_failed: bool = False
    message: str = ""

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows])

    @property
    def keys(self) -> list:
        return list(self.rows[0]) if self.rows else []


@dataclass
class OptimResult:
    phi: np.ndarray
    m: np.ndarray
    u: np.ndarray
    history: OptimHistory
    config: OptimConfig

    @property
    def converged(self) -> bool:
        return self.history.converged


def project_admissible(field_: np.ndarray, lo: float, hi: float, cap: float, weights: np.ndarray) -> np.ndarray:
    """Projection onto {lo <= x <= hi, sum w x <= cap} in the w-weighted L2 metric.

    The solution is clip(field - c, lo, hi) with the smallest shift c >= 0
    that meets the cap.  The shift is found by bisection and the feasible
    end of the final bracket (rightmost multiplier) is returned.
    """
    if not lo < hi:
        raise ValueError("lower bound must be below upper bound")
    z = np.asarray(field_, dtype=float)
    w = np.asarray(weights, dtype=float)
    area = float(w.sum())
    if cap < lo * area * (1 - 1e-14):
        raise ValueError(f"cap {cap} below the minimum attainable integral {lo * area}")
    y = np.clip(z, lo, hi)
    if w @ y <= cap:
        return y
    c_lo, c_hi = 0.0, float(z.max() - lo)
    for _ in range(300):
        c = 0.5 * (c_lo + c_hi)
        if c <= c_lo or c >= c_hi:
            break
        if w @ np.clip(z - c, lo, hi) > cap:
            c_lo = c
        else:
            c_hi = c
    return np.clip(z - c_hi, lo, hi)


class _Metric:
    """Inner product for steps: lumped mass, optionally plus tau * stiffness."""

    def __init__(self, grid: Grid, tau: float, h1: bool):
        self.w = grid.lumped_weights
        self.h1 = h1 and tau > 0
        if self.h1:
            self.mat = (sp.diags(self.w) + tau * grid.laplacian).tocsc()
            self.lu = spla.splu(self.mat)

    def direction(self, g: np.ndarray) -> np.ndarray:
        """Steepest-descent direction for the L2 gradient representative g."""
        if self.h1:
            return -self.lu.solve(self.w * g)
        return -g

    def norm2(self, s: np.ndarray) -> float:
        if self.h1:
            return float(s @ (self.mat @ s))
        return float(self.w @ (s * s))


def step(phi, m, grad: GradientPair, step_size: float, problem: TwoScaleProblem, config: OptimConfig, metrics=None, precondition=None):
    """Projected gradient step of length ``step_size``."""
    if metrics is None:
        metrics = (_Metric(problem.mesh, config.h1_tau, config.h1_precondition), _Metric(problem.cell, config.h1_tau, config.h1_precondition))
    h1 = config.h1_precondition if precondition is None else precondition
    gp, gm = grad.full()
    mp, mm = metrics
    dp = mp.direction(gp) if h1 else -gp
    dm = mm.direction(gm) if h1 else -gm
    if config.freeze_phi:
        phi_new = np.array(phi, dtype=float)
    else:
        phi_new = project_admissible(phi + step_size * dp, 0.0, 1.0, problem.volume_cap, problem.mesh.lumped_weights)
    if config.freeze_m:
        m_new = np.array(m, dtype=float)
    else:
        m_new = project_admissible(m + step_size * dm, 1.0, 2.0, problem.micro_cap, problem.cell.lumped_weights)
    return phi_new, m_new


def _l2_norm(grid: Grid, f: np.ndarray) -> float:
    return float(np.sqrt(grid.lumped_weights @ (f * f)))


def optimize(phi0, m0, problem: TwoScaleProblem, config: OptimConfig | None = None, callback=None) -> OptimResult:
    config = config or OptimConfig()
    mesh, cell = problem.mesh, problem.cell
    phi = np.array(phi0, dtype=float)
    m = np.array(m0, dtype=float)
    if not problem.feasible(phi, m):
        raise ValueError("initial design is not admissible")
    metrics = (_Metric(mesh, config.h1_tau, config.h1_precondition), _Metric(cell, config.h1_tau, config.h1_precondition))
    history = OptimHistory()

    provider = problem.provider(m)
    value, state, _ = problem.evaluate(phi, m, provider)
    grad = assemble_gradient(phi, m, state, provider, problem)
    t = config.step0
    prev = None
    n_tab = 1
    for it in range(config.max_iters + 1):
        stat = stationarity_measure(phi, m, grad, problem, include=(not config.freeze_phi, not config.freeze_m))
        if it == 0:
            stat0 = stat
        parts = problem.objective_parts(phi, m, state)
        history.rows.append(
            {
                "iteration": it,
                "objective": parts["objective"],
                "compliance": parts["compliance"],
                "reg_phi": parts["reg_phi"],
                "reg_m": parts["reg_m"],
                "step": t if it else 0.0,
                "stationarity": stat,
                "volume_phi": integrate_mean(mesh, phi),
                "volume_m": integrate_mean(cell, m),
                "tables": n_tab,
            }
        )
        if callback is not None:
            callback(it, phi, m, history.rows[-1])
        log.debug("iter %d  G=%.10g  stat=%.3e  t=%.3e", it, value, stat, t)
        if stat <= max(config.tol_stationarity, config.tol_relative * stat0):
            history.converged = True
            history.message = "stationarity tolerance reached"
            break
        if it == config.max_iters:
            history.message = "iteration limit reached"
            break

        gp, gm = grad.full()
        if prev is not None and config.barzilai_borwein:
            s_p, s_m = phi - prev[0], m - prev[1]
            y_p, y_m = gp - prev[2], gm - prev[3]
            sy = mesh.lumped_weights @ (s_p * y_p) + cell.lumped_weights @ (s_m * y_m)
            ss = metrics[0].norm2(s_p) + metrics[1].norm2(s_m)
            if sy > 0 and ss > 0:
                t = float(np.clip(ss / sy, config.step_min, config.step_max))
            else:
                t = min(2 * t, config.step_max)
        accepted = False
        precondition = config.h1_precondition
        for _ in range(config.max_shrinks + 1):
            phi_t, m_t = step(phi, m, grad, t, problem, config, metrics, precondition)
            pred = grad.directional(phi_t - phi, m_t - m)
            if pred >= 0:
                if precondition:
                    precondition = False
                    continue
                break
            if _l2_norm(cell, m_t - provider.m) > config.retab_tol:
                prov_t = problem.provider(m_t)
            else:
                prov_t = provider
            val_t, state_t, _ = problem.evaluate(phi_t, m_t, prov_t)
            if val_t <= value + config.armijo_c * pred:
                accepted = True
                break
            t *= config.shrink
            if t < config.step_min:
                break
        if not accepted:
            history.line_search_failed = True
            history.message = "line search failed"
            break
        if prov_t is not provider:
            n_tab += 1
        prev = (phi, m, gp, gm)
        phi, m, value, state, provider = phi_t, m_t, val_t, state_t, prov_t
        grad = assemble_gradient(phi, m, state, provider, problem, strict=False)
    return OptimResult(phi, m, state.u, history, config)


def config_dict(config: OptimConfig) -> dict:
    return asdict(config)
