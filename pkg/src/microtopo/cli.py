"""Command-line driver: ``microtopo <subcommand> --config run.yaml --out dir``.

Configuration is a flat YAML mapping (see ``RunConfig`` for the keys and
defaults).  Any key can be overridden through the environment variable
``MICROTOPO_<KEY>`` (upper case), whose value is parsed as YAML.  Every run
writes ``manifest.json`` (config echo, versions, timings, status) and a
``results.json``; exit codes are 0 (success), 2 (configuration error),
3 (solver failure) and 4 (no convergence).
"""

from __future__ import annotations

import argparse
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import checks
from .eps import ConfigError, DoubleWell, EpsConfig, SweepInstance, gamma_sweep, mm_profile
from .fem import AssemblyError, BoundarySegment, CellMesh, MacroMesh, SolverError
from .io import export_csv, export_vtk, write_json
from .optimize import OptimConfig, optimize
from .sharp.shape import SharpDesign, shape_derivative, sharp_state, transported_cost
from .state import LoadCase, TwoScaleProblem, box_load
from .tensors import Materials

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_NONCONVERGED = 0, 2, 3, 4
ENV_PREFIX = "MICROTOPO_"
SUBCOMMANDS = ("homogenize", "solve", "optimize", "check-grad", "gamma-sweep", "mm-profile", "sharp-derivative")
SIDES = ("left", "right", "bottom", "top")

log = logging.getLogger("microtopo")


class NotConverged(RuntimeError):
    pass


@dataclass
class RunConfig:
    # macro mesh on [0, lx] x [0, ly]
    nx: int = 64
    ny: int = 32
    lx: float = 2.0
    ly: float = 1.0
    # cell mesh and tabulation
    cell_n: int = 32
    n_levels: int = 17
    corrector_mode: str = "table"
    interpolation: str = "hermite"
    solver_tol: float = 1e-10
    # materials
    young: float = 1.0
    poisson: float = 0.3
    delta: float = 1e-3
    # boundary: clamped sides, one traction band
    dirichlet_sides: list = field(default_factory=lambda: ["left"])
    traction_side: str = "right"
    traction_band: list = field(default_factory=lambda: [0.4, 0.6])
    traction: list = field(default_factory=lambda: [0.0, -1.0])
    body_force: list = field(default_factory=lambda: [0.0, 0.0])
    body_force_box: list | None = None
    # constraints and regularization
    volume_cap: float = 0.8
    micro_cap: float = 1.5
    reg_phi: float = 0.5
    reg_m: float = 0.5
    # initial design
    phi_init: float = 0.4
    m_init: float = 1.5
    m_pattern: str = "constant"
    init_noise: float = 0.0
    # optimizer
    max_iters: int = 200
    tol_stationarity: float = 1e-8
    tol_relative: float = 0.0
    step0: float = 1.0
    armijo_c: float = 1e-4
    barzilai_borwein: bool = True
    h1_precondition: bool = True
    h1_tau: float = 0.03
    retab_tol: float = 1e-3
    freeze_phi: bool = False
    freeze_m: bool = False
    # homogenize
    s_samples: int = 11
    # finite differences
    fd_t0: float = 1e-2
    fd_halvings: int = 4
    fd_ratio_low: float = 3.0
    fd_ratio_high: float = 5.0
    fd_shape_low: float = 1.5
    fd_shape_high: float = 2.5
    # epsilon problems and Modica-Mortola
    eps_list: list = field(default_factory=lambda: [0.5, 0.25, 0.125])
    elements_per_cell: int = 8
    sweep_kind: str = "energy"
    double_well: str = "quartic"
    well_scale: float = 1.0
    well_factor: float = 1.0
    mm_eps: float = 1.0 / 32
    mm_points: int = 1024
    # sharp designs (disk hole in Omega, disk inclusion in Y)
    sharp_hole_radius: float = 0.25
    sharp_inclusion_radius: float = 0.3
    # run control
    seed: int = 0
    threads: int = 1

    @classmethod
    def keys(cls) -> list:
        return [f.name for f in fields(cls)]

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.nx >= 1 and self.ny >= 1 and self.cell_n >= 2, "mesh sizes must be positive")
        need(self.lx > 0 and self.ly > 0, "domain lengths must be positive")
        need(self.n_levels >= 2, "n_levels must be at least 2")
        need(self.corrector_mode in ("table", "exact"), "corrector_mode must be 'table' or 'exact'")
        need(self.interpolation in ("hermite", "pchip"), "interpolation must be 'hermite' or 'pchip'")
        need(self.young > 0 and -1 < self.poisson < 0.5, "material constants out of range")
        need(0 < self.delta < 1, "delta must lie in (0, 1)")
        area = self.lx * self.ly
        need(0 < self.volume_cap < area, f"volume_cap must lie in (0, {area})")
        need(1 < self.micro_cap < 2, "micro_cap must lie in (1, 2)")
        need(all(s in SIDES for s in self.dirichlet_sides) and self.dirichlet_sides, "dirichlet_sides must list sides")
        need(self.traction_side in SIDES, "traction_side must be a side name")
        need(len(self.traction_band) == 2 and self.traction_band[0] < self.traction_band[1], "traction_band must be [start, end]")
        need(len(self.traction) == 2 and len(self.body_force) == 2, "load vectors must have two components")
        need(self.body_force_box is None or len(self.body_force_box) == 4, "body_force_box must be [x0, x1, y0, y1]")
        need(0 <= self.phi_init <= 1 and 1 <= self.m_init <= 2, "initial design out of bounds")
        need(self.m_pattern in ("constant", "checkerboard", "random"), "m_pattern must be constant, checkerboard or random")
        need(self.sweep_kind in ("energy", "cost", "mm"), "sweep_kind must be energy, cost or mm")
        need(self.double_well == "quartic", "only the quartic double well is available")
        need(self.well_scale > 0 and self.well_factor > 0, "well parameters must be positive")
        need(self.fd_halvings >= 2 and self.fd_t0 > 0, "need fd_t0 > 0 and at least two halvings")
        need(self.threads >= 1, "threads must be positive")
        need(self.s_samples >= 2, "s_samples must be at least 2")
        if self.traction_side in self.dirichlet_sides:
            need(False, "traction side is clamped")
        for e in self.eps_list:
            EpsConfig(float(e), self.elements_per_cell).cells(self.lx)
            EpsConfig(float(e), self.elements_per_cell).cells(self.ly)


def _coerce(name: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    if isinstance(default, list) or default is None:
        if value is None and default is None:
            return None
        if not isinstance(value, list):
            raise ConfigError(f"{name}: expected a list, got {value!r}")
        return value
    return value


def load_config(path=None, env=None, overrides=None) -> RunConfig:
    """Read the YAML file, apply MICROTOPO_* environment overrides, validate."""
    data = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    env = os.environ if env is None else env
    keys = RunConfig.keys()
    for name, raw in env.items():
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower()
            if key not in keys:
                raise ConfigError(f"environment override {name} names an unknown key")
            data[key] = yaml.safe_load(raw)
    data.update(overrides or {})
    unknown = sorted(set(data) - set(keys))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    defaults = RunConfig()
    kw = {k: _coerce(k, v, getattr(defaults, k)) for k, v in data.items()}
    cfg = RunConfig(**kw)
    cfg.validate()
    return cfg


# ---- building blocks ------------------------------------------------------


def build_mesh(cfg: RunConfig) -> MacroMesh:
    side_len = cfg.lx if cfg.traction_side in ("bottom", "top") else cfg.ly
    a, b = cfg.traction_band
    bnd = [BoundarySegment(s, "D") for s in cfg.dirichlet_sides]
    bnd.append(BoundarySegment(cfg.traction_side, "N", a * side_len, b * side_len))
    return MacroMesh(cfg.nx, cfg.ny, cfg.lx, cfg.ly, bnd)


def build_loads(cfg: RunConfig) -> LoadCase:
    body = None if not any(cfg.body_force) else box_load(cfg.body_force, cfg.body_force_box)
    trac = None if not any(cfg.traction) else box_load(cfg.traction)
    return LoadCase(body_force=body, traction=trac)


def build_problem(cfg: RunConfig) -> TwoScaleProblem:
    return TwoScaleProblem(
        build_mesh(cfg),
        CellMesh(cfg.cell_n),
        build_loads(cfg),
        cfg.volume_cap,
        cfg.micro_cap,
        Materials.isotropic(cfg.young, cfg.poisson, cfg.delta),
        cfg.reg_phi,
        cfg.reg_m,
        cfg.solver_tol,
        cfg.n_levels,
        cfg.corrector_mode,
        cfg.interpolation,
        cfg.threads,
    )


def initial_m(cfg: RunConfig, cell: CellMesh, rng: np.random.Generator) -> np.ndarray:
    y = cell.node_coords
    if cfg.m_pattern == "constant":
        m = np.full(cell.n_nodes, cfg.m_init)
    elif cfg.m_pattern == "checkerboard":
        m = np.where((y[:, 0] < 0.5) ^ (y[:, 1] < 0.5), 2.0, 1.0)
    else:
        m = rng.uniform(1.0, 2.0, cell.n_nodes)
    if cfg.init_noise > 0:
        m = np.clip(m + cfg.init_noise * rng.standard_normal(cell.n_nodes), 1.0, 2.0)
    return m


def initial_phi(cfg: RunConfig, mesh: MacroMesh, rng: np.random.Generator) -> np.ndarray:
    phi = np.full(mesh.n_nodes, cfg.phi_init)
    if cfg.init_noise > 0:
        phi = np.clip(phi + cfg.init_noise * rng.standard_normal(mesh.n_nodes), 0.0, 1.0)
    return phi


def _nodal_u(u):
    return np.asarray(u).reshape(-1, 2)


# ---- subcommands ----------------------------------------------------------


def cmd_homogenize(cfg: RunConfig, out: Path, rng) -> dict:
    pb = build_problem(cfg)
    m = initial_m(cfg, pb.cell, rng)
    provider = pb.provider(m)
    rows = []
    labels = [(0, 0, "c1111"), (0, 1, "c1122"), (0, 2, "c1112"), (1, 1, "c2222"), (1, 2, "c2212"), (2, 2, "c1212")]
    for s in np.linspace(0.0, 1.0, cfg.s_samples):
        c, dc = provider.evaluate(np.array([s]))
        row = {"s": float(s)}
        row.update({lab: float(c[0, i, j]) for i, j, lab in labels})
        row.update({"d" + lab: float(dc[0, i, j]) for i, j, lab in labels})
        rows.append(row)
    export_csv(rows, out / "cstar.csv")
    export_vtk(out / "m.vtk", pb.cell, {"m": m}, "cell microstructure")
    return {"rows": len(rows), "mode": provider.mode}


def cmd_solve(cfg: RunConfig, out: Path, rng) -> dict:
    pb = build_problem(cfg)
    phi = initial_phi(cfg, pb.mesh, rng)
    m = initial_m(cfg, pb.cell, rng)
    value, state, _ = pb.evaluate(phi, m)
    export_vtk(out / "state.vtk", pb.mesh, {"phi": phi, "u": _nodal_u(state.u)}, "macro state")
    parts = pb.objective_parts(phi, m, state)
    return {"feasible": bool(np.isfinite(value)), **parts}


def cmd_optimize(cfg: RunConfig, out: Path, rng) -> dict:
    pb = build_problem(cfg)
    phi0 = initial_phi(cfg, pb.mesh, rng)
    m0 = initial_m(cfg, pb.cell, rng)
    oc = OptimConfig(
        max_iters=cfg.max_iters,
        tol_stationarity=cfg.tol_stationarity,
        tol_relative=cfg.tol_relative,
        step0=cfg.step0,
        armijo_c=cfg.armijo_c,
        barzilai_borwein=cfg.barzilai_borwein,
        h1_precondition=cfg.h1_precondition,
        h1_tau=cfg.h1_tau,
        retab_tol=cfg.retab_tol,
        freeze_phi=cfg.freeze_phi,
        freeze_m=cfg.freeze_m,
    )
    res = optimize(phi0, m0, pb, oc)
    export_csv(res.history.rows, out / "history.csv")
    export_vtk(out / "design.vtk", pb.mesh, {"phi": res.phi, "u": _nodal_u(res.u)}, "optimized macro design")
    export_vtk(out / "m.vtk", pb.cell, {"m": res.m}, "optimized microstructure")
    last = res.history.rows[-1]
    summary = {
        "converged": res.converged,
        "message": res.history.message,
        "iterations": last["iteration"],
        "objective": last["objective"],
        "stationarity": last["stationarity"],
        "stationarity_initial": res.history.rows[0]["stationarity"],
    }
    if not res.converged:
        raise NotConverged(res.history.message, summary)
    return summary


def cmd_check_grad(cfg: RunConfig, out: Path, rng) -> dict:
    steps = checks.halving_steps(cfg.fd_t0, cfg.fd_halvings)
    suite = checks.derivative_suite(steps, steps)
    rows = []
    verdict = {}
    for name, rs in suite.items():
        lo, hi = (cfg.fd_shape_low, cfg.fd_shape_high) if name == "shape" else (cfg.fd_ratio_low, cfg.fd_ratio_high)
        ok = lo <= checks.last_ratio(rs) <= hi
        verdict[name] = ok
        for r in rs:
            rows.append({**r, "expected_low": lo, "expected_high": hi, "pass": ok})
    export_csv(rows, out / "fd.csv")
    return {"pass": verdict, "all_pass": all(verdict.values())}


def cmd_gamma_sweep(cfg: RunConfig, out: Path, rng) -> dict:
    cell = CellMesh(cfg.cell_n)
    m = initial_m(cfg, cell, rng)
    mesh = build_mesh(cfg)
    inst = SweepInstance(
        phi=lambda x: 0.6 + 0.3 * np.sin(np.pi * x[..., 0] / cfg.lx) * np.sin(np.pi * x[..., 1] / cfg.ly),
        m=m,
        cell=cell,
        loads=build_loads(cfg),
        lx=cfg.lx,
        ly=cfg.ly,
        boundary=mesh.boundary,
        materials=Materials.isotropic(cfg.young, cfg.poisson, cfg.delta),
        elements_per_cell=cfg.elements_per_cell,
        n_levels=max(cfg.n_levels, 33),
        dw=DoubleWell(cfg.well_scale),
    )
    rows = gamma_sweep(cfg.sweep_kind, inst, cfg.eps_list)
    export_csv(rows, out / "gamma.csv")
    return {"kind": cfg.sweep_kind, "decreasing": rows[0]["decreasing"], "final_over_first": rows[-1]["gap"] / rows[0]["gap"]}


def cmd_mm_profile(cfg: RunConfig, out: Path, rng) -> dict:
    dw = DoubleWell(cfg.well_scale)
    x, v, energy = mm_profile(cfg.mm_eps, dw, n=cfg.mm_points, well_factor=cfg.well_factor)
    export_csv([{"x": float(a), "phi": float(b)} for a, b in zip(x, v)], out / "profile.csv")
    return {"eps": cfg.mm_eps, "energy": energy, "c_H": dw.c_H, "ratio": energy / dw.c_H}


def cmd_sharp_derivative(cfg: RunConfig, out: Path, rng) -> dict:
    """Shape derivative of a hole-in-plate sharp design against transported costs.

    Uses the smooth built-in loads of ``checks.SharpFixture`` (the shape
    derivative needs load gradients); the load keys of the config are ignored.
    """
    fx = checks.SharpFixture(nx=cfg.nx, ny=cfg.ny, nc=cfg.cell_n, materials=Materials.isotropic(cfg.young, cfg.poisson, cfg.delta))
    if not (cfg.lx == 2.0 and cfg.ly == 1.0):
        raise ConfigError("sharp-derivative runs on the [0, 2] x [0, 1] fixture domain")
    cx, cy = 0.5 * fx.mesh.lx, 0.5 * fx.mesh.ly
    if not 0 < cfg.sharp_hole_radius < 0.4 or not 0 < cfg.sharp_inclusion_radius < 0.45:
        raise ConfigError("sharp radii must keep the interfaces inside the variation supports")
    fx.design = SharpDesign.from_level_sets(
        fx.mesh,
        fx.cell,
        lambda x: np.hypot(x[..., 0] - cx, x[..., 1] - cy) - cfg.sharp_hole_radius,
        lambda y: cfg.sharp_inclusion_radius - np.hypot(y[..., 0] - 0.5, y[..., 1] - 0.5),
    )
    dw = DoubleWell(cfg.well_scale)
    st = sharp_state(fx.design, fx.mesh, fx.cell, fx.loads, fx.materials, fx.tol)
    terms = shape_derivative(fx.design, st, fx.phi_field, fx.psi_field, fx.mesh, fx.cell, fx.loads, fx.materials, dw)
    j0 = transported_cost(fx.design, fx.phi_field, fx.psi_field, 0.0, fx.mesh, fx.cell, fx.loads, fx.materials, dw, fx.tol)
    rows = []
    prev = None
    for t in checks.halving_steps(cfg.fd_t0, cfg.fd_halvings):
        jt = transported_cost(fx.design, fx.phi_field, fx.psi_field, t, fx.mesh, fx.cell, fx.loads, fx.materials, dw, fx.tol)
        fd = (jt - j0) / t
        err = abs(fd - terms["total"])
        rows.append({"t": t, "fd": fd, "analytic": terms["total"], "error": err, "ratio": prev / err if prev else float("nan")})
        prev = err
    export_csv(rows, out / "sharp.csv")
    return {"terms": terms, "final_ratio": rows[-1]["ratio"]}


COMMANDS = {
    "homogenize": cmd_homogenize,
    "solve": cmd_solve,
    "optimize": cmd_optimize,
    "check-grad": cmd_check_grad,
    "gamma-sweep": cmd_gamma_sweep,
    "mm-profile": cmd_mm_profile,
    "sharp-derivative": cmd_sharp_derivative,
}


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"artifact": pkg, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__, "pyyaml": yaml.__version__}


def run(subcommand: str, config_path=None, out_dir="out", threads=None, seed=None, env=None) -> int:
    """Execute one subcommand; always writes ``manifest.json`` in ``out_dir``."""
    out = Path(out_dir)
    manifest = {"subcommand": subcommand, "config_path": str(config_path) if config_path else None, "versions": _versions()}
    t0 = time.perf_counter()
    status = EXIT_OK
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {out}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if subcommand not in COMMANDS:
            raise ConfigError(f"unknown subcommand {subcommand!r}")
        overrides = {}
        if threads is not None:
            overrides["threads"] = threads
        if seed is not None:
            overrides["seed"] = seed
        cfg = load_config(config_path, env, overrides)
        manifest["config"] = asdict(cfg)
        rng = np.random.default_rng(cfg.seed)
        results = COMMANDS[subcommand](cfg, out, rng)
        write_json(results, out / "results.json")
        manifest["status"] = "ok"
    except ConfigError as exc:
        status = EXIT_CONFIG
        manifest["status"] = "config error"
        manifest["error"] = str(exc)
    except (SolverError, AssemblyError, ArithmeticError, np.linalg.LinAlgError) as exc:
        status = EXIT_SOLVER
        manifest["status"] = "solver failure"
        manifest["error"] = str(exc)
    except NotConverged as exc:
        status = EXIT_NONCONVERGED
        manifest["status"] = "not converged"
        manifest["error"] = exc.args[0]
        write_json(exc.args[1], out / "results.json")
    except ValueError as exc:
        status = EXIT_CONFIG
        manifest["status"] = "config error"
        manifest["error"] = str(exc)
    finally:
        manifest["exit_code"] = status
        manifest["timings"] = {"total_seconds": time.perf_counter() - t0}
        write_json(manifest, out / "manifest.json")
    if status != EXIT_OK:
        print(f"{subcommand}: {manifest['status']}: {manifest.get('error', '')}", file=sys.stderr)
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="microtopo", description="Two-scale topology optimization workflows.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", default=None, help="flat YAML configuration file")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return run(args.subcommand, args.config, args.out, args.threads, args.seed)


if __name__ == "__main__":
    sys.exit(main())
