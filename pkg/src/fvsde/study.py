"""Refinement sweeps, Monte Carlo error estimation and rate fitting.

Strong errors are always computed with coupled noise: one fine Brownian path
per path index, block-summed to every coarser grid, so that the sampled
differences isolate discretization error from sampling error.  Spatially
nested comparisons evaluate the coarse field on the finer partition through
the parent-cell map.

All studies reduce Monte Carlo samples in a fixed order independent of the
worker count, so reports (and the CSV files written from them) are
bit-identical for any --workers value.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import discrete_ops as ops
from .discrete_ops import TpfaOperator
from .errors import ConfigError
from .fields import CellField
from .mesh import (TensorMesh, build_tensor_mesh, cell_average, inject,
                   injection_map, refine, validate_admissibility)
from .noise import NoisePath, TimeGrid, coarsen, sample_path
from .presets import get_preset
from .projections import (SmoothFunctionSpec, centered_projection,
                          elliptic_projection, elliptic_residual)
from .scheme import (StepperParams, build_workspace, energy_balance_defects,
                     integrate_workspace, run_path, trajectory_mass_defects)
from .stats import fit_rate, mc_mean_ci

__all__ = [
    "StudyConfig",
    "RateRow",
    "RateReport",
    "HoelderReport",
    "PropertyReport",
    "default_config",
    "run_spatial_rate_study",
    "run_temporal_rate_study",
    "run_coupled_rate_study",
    "run_hoelder_diagnostic",
    "run_property_suite",
    "fit_rate",
    "mc_mean_ci",
]

STUDIES = ("properties", "spatial", "temporal", "coupled", "hoelder",
           "projections")

_DEFAULTS: dict[str, dict] = {
    "properties":  {"preset": "stochastic", "mesh": (8, 8), "levels": 3,
                    "steps": (8,), "ref_steps": 64, "paths": 4},
    "spatial":     {"preset": "heat2d", "mesh": (8, 8), "levels": 4,
                    "steps": (), "ref_steps": 1, "paths": 2},
    "temporal":    {"preset": "stochastic", "mesh": (32, 32), "levels": 1,
                    "steps": (8, 16, 32, 64, 128), "ref_steps": 1024,
                    "paths": 64},
    "coupled":     {"preset": "stochastic", "mesh": (8, 8), "levels": 4,
                    "steps": (8, 16, 32, 64), "ref_steps": 512, "paths": 64},
    "hoelder":     {"preset": "lowmode", "mesh": (16, 16), "levels": 1,
                    "steps": (), "ref_steps": 2048, "paths": 64},
    "projections": {"preset": "stochastic", "mesh": (8, 8), "levels": 4,
                    "steps": (), "ref_steps": 1, "paths": 2},
}

HOELDER_SEPARATIONS = (1, 2, 4)


@dataclass(frozen=True)
class StudyConfig:
    """Everything needed to reproduce a study run."""

    study: str = "properties"
    preset: str = "stochastic"
    mesh: tuple[int, ...] = (8, 8)
    levels: int = 3
    steps: tuple[int, ...] = (8,)
    ref_steps: int = 64
    paths: int = 4
    seed: int = 12345
    workers: int = 1
    out_dir: str | None = None
    left_interpolant: bool = False

    def validate(self) -> "StudyConfig":
        if self.study not in STUDIES:
            raise ConfigError(f"unknown study {self.study!r}; "
                              f"choose from {STUDIES}")
        if len(self.mesh) not in (2, 3) or any(n < 1 for n in self.mesh):
            raise ConfigError(f"mesh counts must be 2 or 3 positive integers, "
                              f"got {self.mesh}")
        if self.paths < 2:
            raise ConfigError("paths must be >= 2 (confidence intervals need "
                              "at least two samples)")
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.ref_steps < 1:
            raise ConfigError("ref_steps must be >= 1")
        for n in self.steps:
            if n < 1 or self.ref_steps % n != 0:
                raise ConfigError(
                    f"step count {n} does not divide ref_steps={self.ref_steps}")
        if self.study == "coupled" and len(self.steps) != self.levels:
            raise ConfigError("coupled study needs one step count per level")
        if self.study == "temporal" and not self.steps:
            raise ConfigError("temporal study needs a step-count chain")
        if self.study == "hoelder" and self.ref_steps < 2 * max(HOELDER_SEPARATIONS):
            raise ConfigError("hoelder study needs ref_steps >= "
                              f"{2 * max(HOELDER_SEPARATIONS)}")
        return self


def default_config(study: str, **overrides) -> StudyConfig:
    """Config with per-study defaults, selectively overridden."""
    if study not in STUDIES:
        raise ConfigError(f"unknown study {study!r}; choose from {STUDIES}")
    base = dict(_DEFAULTS[study])
    base.update(overrides)
    return StudyConfig(study=study, **base).validate()


@dataclass(frozen=True)
class RateRow:
    level: int
    h: float
    tau: float
    n_paths: int
    err_mean_sq: float
    ci_half_width: float


@dataclass
class RateReport:
    """Error table across refinement levels with a fitted log-log slope."""

    study: str
    rows: list[RateRow]
    scale_name: str                 # which column the slope is fitted against
    slope: float
    intercept: float
    fit_residual: float
    slopes_so_far: list[float]
    metadata: dict = field(default_factory=dict)
    inconclusive: bool = False

    @property
    def errors(self) -> list[float]:
        return [math.sqrt(r.err_mean_sq) for r in self.rows]


@dataclass
class HoelderReport:
    value: RateReport
    gradient: RateReport


def _report(study: str, rows: list[RateRow], scales: list[float],
            fit_errors: list[float], scale_name: str, metadata: dict,
            inconclusive: bool = False) -> RateReport:
    if any(e <= 0.0 for e in fit_errors):
        raise ConfigError(
            f"{study}: a level has error exactly zero (it coincides with the "
            "reference); drop it from the refinement chain")
    slope, intercept, resid = fit_rate(list(zip(scales, fit_errors)))
    so_far = [float("nan")]
    for i in range(2, len(rows) + 1):
        so_far.append(fit_rate(list(zip(scales[:i], fit_errors[:i])))[0])
    return RateReport(study, rows, scale_name, slope, intercept, resid,
                      so_far, metadata, inconclusive)


def _base_metadata(config: StudyConfig, problem, extra: dict | None = None) -> dict:
    params = StepperParams()
    md = {
        "preset": config.preset,
        "seed": config.seed,
        "paths": config.paths,
        "mesh": list(config.mesh),
        "horizon": problem.horizon,
        "newton_tol": params.newton_tol,
        "linear_tol": params.linear_tol,
        "tau_lbeta_margin": params.stability_margin,
        "commit": os.environ.get("FVSDE_COMMIT", "unknown"),
    }
    if extra:
        md.update(extra)
    return md


# ---------------------------------------------------------------------------
# Monte Carlo engines (one object per worker process)
# ---------------------------------------------------------------------------

class _TemporalEngine:
    """Coupled time-refinement comparison on one fixed mesh."""

    def __init__(self, config: StudyConfig):
        self.config = config
        self.problem = get_preset(config.preset)
        self.mesh = build_tensor_mesh(self.problem.domain, config.mesh)
        self.params = StepperParams()
        tpfa = TpfaOperator(self.mesh)
        self.u0 = cell_average(self.problem.u0, self.mesh).values
        self.grids = [TimeGrid(n, self.problem.horizon) for n in config.steps]
        self.ref_grid = TimeGrid(config.ref_steps, self.problem.horizon)
        self.workspaces = [build_workspace(self.problem, self.mesh, g.tau, tpfa)
                           for g in self.grids]
        self.ref_ws = build_workspace(self.problem, self.mesh,
                                      self.ref_grid.tau, tpfa)
        self.m = self.mesh.measures

    def run_one(self, path_index: int) -> np.ndarray:
        path = sample_path(self.config.seed, path_index,
                           self.config.ref_steps, self.problem.horizon)
        ref_states, _, _ = integrate_workspace(
            self.ref_ws, self.u0, path.increments, self.params)
        ref_final = ref_states[-1]
        out = np.empty(len(self.grids))
        for i, (grid, ws) in enumerate(zip(self.grids, self.workspaces)):
            inc = coarsen(path, grid.n_steps)
            states, _, _ = integrate_workspace(ws, self.u0, inc, self.params)
            diff = states[-1] - ref_final
            out[i] = float(np.dot(self.m, diff * diff))
        return out


class _CoupledEngine:
    """Simultaneous tau and h refinement against a fine coupled reference."""

    def __init__(self, config: StudyConfig):
        self.config = config
        self.problem = get_preset(config.preset)
        self.params = StepperParams()
        meshes = [build_tensor_mesh(self.problem.domain, config.mesh)]
        for _ in range(config.levels - 1):
            meshes.append(refine(meshes[-1]))
        self.meshes = meshes
        self.ref_mesh = meshes[-1]
        self.ref_grid = TimeGrid(config.ref_steps, self.problem.horizon)
        self.grids = [TimeGrid(n, self.problem.horizon) for n in config.steps]
        self.maps = [injection_map(m, self.ref_mesh) for m in meshes]
        self.u0s = [cell_average(self.problem.u0, m).values for m in meshes]
        self.workspaces = [build_workspace(self.problem, m, g.tau)
                           for m, g in zip(meshes, self.grids)]
        self.ref_ws = build_workspace(self.problem, self.ref_mesh,
                                      self.ref_grid.tau,
                                      self.workspaces[-1].tpfa)
        self.ref_u0 = cell_average(self.problem.u0, self.ref_mesh).values
        self.m_ref = self.ref_mesh.measures

    def _node_indices(self, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
        ratio = self.config.ref_steps // n_steps
        ks = np.arange(n_steps + 1)
        if self.config.left_interpolant:
            return ks, ks * ratio
        coarse = np.minimum(ks + 1, n_steps)
        ref = np.minimum(ks * ratio + 1, self.config.ref_steps)
        return coarse, ref

    def run_one(self, path_index: int) -> list[np.ndarray]:
        path = sample_path(self.config.seed, path_index,
                           self.config.ref_steps, self.problem.horizon)
        ref_states, _, _ = integrate_workspace(
            self.ref_ws, self.ref_u0, path.increments, self.params)
        out = []
        for level in range(self.config.levels):
            grid = self.grids[level]
            inc = coarsen(path, grid.n_steps)
            states, _, _ = integrate_workspace(
                self.workspaces[level], self.u0s[level], inc, self.params)
            c_idx, r_idx = self._node_indices(grid.n_steps)
            lifted = states[c_idx][:, self.maps[level]]
            diff = lifted - ref_states[r_idx]
            out.append((diff * diff) @ self.m_ref)
        return out


class _HoelderEngine:
    """Squared time increments of one fine run, in L2 and H1 seminorm."""

    def __init__(self, config: StudyConfig):
        self.config = config
        self.problem = get_preset(config.preset)
        self.mesh = build_tensor_mesh(self.problem.domain, config.mesh)
        self.params = StepperParams()
        self.grid = TimeGrid(config.ref_steps, self.problem.horizon)
        self.ws = build_workspace(self.problem, self.mesh, self.grid.tau)
        self.u0 = cell_average(self.problem.u0, self.mesh).values
        self.m = self.mesh.measures
        self.k = self.mesh.edge_cells[:, 0]
        self.l = self.mesh.edge_cells[:, 1]
        self.t = self.mesh.transmissibilities

    def run_one(self, path_index: int) -> tuple[np.ndarray, np.ndarray]:
        path = sample_path(self.config.seed, path_index,
                           self.config.ref_steps, self.problem.horizon)
        states, _, _ = integrate_workspace(self.ws, self.u0, path.increments,
                                           self.params)
        vals = np.empty(len(HOELDER_SEPARATIONS))
        grads = np.empty(len(HOELDER_SEPARATIONS))
        for i, sep in enumerate(HOELDER_SEPARATIONS):
            d = states[sep:] - states[:-sep]
            vals[i] = float(np.mean((d * d) @ self.m))
            dd = d[:, self.k] - d[:, self.l]
            grads[i] = float(np.mean((dd * dd) @ self.t))
        return vals, grads


_ENGINES = {"temporal": _TemporalEngine, "coupled": _CoupledEngine,
            "hoelder": _HoelderEngine}

_WORKER_ENGINE = None


def _worker_init(kind: str, config: StudyConfig) -> None:
    global _WORKER_ENGINE
    _WORKER_ENGINE = _ENGINES[kind](config)


def _worker_block(indices: list[int]):
    return [_WORKER_ENGINE.run_one(p) for p in indices]


def _map_paths(kind: str, config: StudyConfig) -> list:
    """Per-path engine results, in path order regardless of worker count."""
    n_workers = min(config.workers, config.paths)
    if n_workers <= 1:
        engine = _ENGINES[kind](config)
        return [engine.run_one(p) for p in range(config.paths)]
    blocks = [list(map(int, b))
              for b in np.array_split(np.arange(config.paths), n_workers)
              if len(b)]
    results: list = []
    with ProcessPoolExecutor(max_workers=n_workers, initializer=_worker_init,
                             initargs=(kind, config)) as pool:
        futures = [pool.submit(_worker_block, block) for block in blocks]
        for fut in futures:            # submission order == path order
            results.extend(fut.result())
    return results


def _inconclusive(means: np.ndarray, cis: np.ndarray) -> bool:
    """Adjacent levels whose sampling uncertainty swamps their separation.

    Relative CI half-widths combine in quadrature; coupling makes adjacent
    level errors positively correlated, so this is still conservative.
    """
    if np.any(means <= 0.0):
        raise ConfigError("a level has error exactly zero (it coincides with "
                          "the reference); drop it from the refinement chain")
    for i in range(len(means) - 1):
        gap = abs(math.log(means[i]) - math.log(means[i + 1]))
        rel = math.hypot(cis[i] / means[i], cis[i + 1] / means[i + 1])
        if rel >= gap:
            return True
    return False


# ---------------------------------------------------------------------------
# Studies
# ---------------------------------------------------------------------------

def run_spatial_rate_study(config: StudyConfig) -> RateReport:
    """Deterministic mesh-refinement sweep against the closed-form solution.

    Time steps scale like h^2 so the implicit Euler error stays subdominant;
    the error column is the discrete L2 distance between the final state and
    the cell averages of the exact solution.
    """
    config.validate()
    problem = get_preset(config.preset)
    if problem.exact_solution is None:
        raise ConfigError(f"preset {config.preset!r} has no closed-form "
                          "solution; the spatial study needs one")
    params = StepperParams()
    mesh = build_tensor_mesh(problem.domain, config.mesh)
    rows, scales, errs, regs = [], [], [], []
    for level in range(config.levels):
        if level > 0:
            mesh = refine(mesh)
        hx = max(float(np.max(sp)) for sp in mesh.spacings)
        n_steps = max(1, math.ceil(problem.horizon / (0.5 * hx * hx)))
        grid = TimeGrid(n_steps, problem.horizon)
        ws = build_workspace(problem, mesh, grid.tau)
        u0 = cell_average(problem.u0, mesh).values
        states, _, _ = integrate_workspace(ws, u0, np.zeros(n_steps), params)
        exact = cell_average(
            lambda x: problem.exact_solution(x, problem.horizon), mesh).values
        diff = states[-1] - exact
        err_sq = float(np.dot(mesh.measures, diff * diff))
        rows.append(RateRow(level, mesh.size_h, grid.tau, 1, err_sq, 0.0))
        scales.append(mesh.size_h)
        errs.append(math.sqrt(err_sq))
        regs.append(mesh.regularity)
    md = _base_metadata(config, problem, {"mesh_regularity": regs,
                                          "tau_rule": "0.5*h_axis^2"})
    return _report("spatial", rows, scales, errs, "h", md)


def run_temporal_rate_study(config: StudyConfig) -> RateReport:
    """Strong time-refinement study, coupled to a fine reference on one mesh.

    Errors are RMS over paths of the final-time discrete L2 distance between
    each coarse run and the reference run driven by the same Brownian path.
    """
    config.validate()
    problem = get_preset(config.preset)
    samples = np.asarray(_map_paths("temporal", config))   # (paths, levels)
    mesh = build_tensor_mesh(problem.domain, config.mesh)
    rows, scales, errs = [], [], []
    means, cis = [], []
    for i, n in enumerate(config.steps):
        mean, ci = mc_mean_ci(samples[:, i])
        tau = problem.horizon / n
        rows.append(RateRow(i, mesh.size_h, tau, config.paths, mean, ci))
        scales.append(tau)
        errs.append(math.sqrt(mean))
        means.append(mean)
        cis.append(ci)
    md = _base_metadata(config, problem, {
        "mesh_regularity": mesh.regularity,
        "ref_steps": config.ref_steps,
    })
    flag = _inconclusive(np.asarray(means), np.asarray(cis))
    return _report("temporal", rows, scales, errs, "tau", md, flag)


def run_coupled_rate_study(config: StudyConfig) -> RateReport:
    """Simultaneous tau, h refinement against the finest coupled level.

    Per level, the Monte Carlo mean of the squared discrete L2 distance is
    taken at every shared time node (coarse states lifted through the
    parent-cell map, right-interpolant node convention unless configured
    otherwise); the level error is the sup over nodes.
    """
    config.validate()
    problem = get_preset(config.preset)
    results = _map_paths("coupled", config)   # [path][level] -> per-node array
    engine_meshes = [build_tensor_mesh(problem.domain, config.mesh)]
    for _ in range(config.levels - 1):
        engine_meshes.append(refine(engine_meshes[-1]))
    rows, scales, errs, means, cis = [], [], [], [], []
    for level in range(config.levels):
        stacked = np.stack([results[p][level] for p in range(config.paths)])
        node_means = stacked.mean(axis=0)
        sup_node = int(np.argmax(node_means))
        mean, ci = mc_mean_ci(stacked[:, sup_node])
        h = engine_meshes[level].size_h
        tau = problem.horizon / config.steps[level]
        rows.append(RateRow(level, h, tau, config.paths, mean, ci))
        scales.append(h)
        errs.append(math.sqrt(mean))
        means.append(mean)
        cis.append(ci)
    md = _base_metadata(config, problem, {
        "mesh_regularity": [m.regularity for m in engine_meshes],
        "ref_steps": config.ref_steps,
        "interpolant": "left" if config.left_interpolant else "right",
    })
    flag = _inconclusive(np.asarray(means), np.asarray(cis))
    return _report("coupled", rows, scales, errs, "h", md, flag)


def run_hoelder_diagnostic(config: StudyConfig) -> HoelderReport:
    """Mean squared time increments against the separation |t - s|.

    Separations are dyadic multiples of the step; anchors s run over the whole
    trajectory.  Expected slope about 1 for both the squared L2 increment and
    the squared discrete H1-seminorm increment.
    """
    config.validate()
    problem = get_preset(config.preset)
    results = _map_paths("hoelder", config)
    mesh = build_tensor_mesh(problem.domain, config.mesh)
    tau = problem.horizon / config.ref_steps
    vals = np.stack([r[0] for r in results])
    grads = np.stack([r[1] for r in results])
    reports = []
    for label, data in (("hoelder_l2", vals), ("hoelder_h1", grads)):
        rows, scales, fit_errs, means, cis = [], [], [], [], []
        for i, sep in enumerate(HOELDER_SEPARATIONS):
            mean, ci = mc_mean_ci(data[:, i])
            rows.append(RateRow(i, mesh.size_h, sep * tau, config.paths,
                                mean, ci))
            scales.append(sep * tau)
            fit_errs.append(mean)      # slope of the *squared* increment
            means.append(mean)
            cis.append(ci)
        md = _base_metadata(config, problem, {
            "mesh_regularity": mesh.regularity,
            "fine_steps": config.ref_steps,
            "separations": list(HOELDER_SEPARATIONS),
        })
        flag = _inconclusive(np.asarray(means), np.asarray(cis))
        reports.append(_report(label, rows, scales, fit_errs,
                               "dt", md, flag))
    return HoelderReport(value=reports[0], gradient=reports[1])


# ---------------------------------------------------------------------------
# Property suite
# ---------------------------------------------------------------------------

@dataclass
class PropertyCheck:
    name: str
    passed: bool
    detail: str


@dataclass
class PropertyReport:
    checks: list[PropertyCheck]

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _suite_meshes() -> list[TensorMesh]:
    graded = build_tensor_mesh(((0.0, 1.0), (0.0, 1.0)), (5, 3),
                               spacings=[[0.1, 0.15, 0.2, 0.25, 0.3],
                                         [0.5, 0.3, 0.2]])
    return [
        build_tensor_mesh(((0.0, 1.0), (0.0, 1.0)), (4, 4)),
        graded,
        build_tensor_mesh(((0.0, 1.0), (0.0, 1.0), (0.0, 1.0)), (3, 3, 2)),
    ]


def _check_dibp(rng) -> str:
    worst = 0.0
    for mesh in _suite_meshes():
        for _ in range(20):
            w = CellField(mesh, rng.standard_normal(mesh.n_cells))
            v = CellField(mesh, rng.standard_normal(mesh.n_cells))
            scale = (ops.discrete_h1_seminorm(w) * ops.discrete_h1_seminorm(v)
                     + 1.0)
            rel = ops.dibp_gap(w, v) / scale
            worst = max(worst, rel)
            if rel > 1e-12:
                raise AssertionError(f"relative DIBP gap {rel:.3e}")
    return f"worst relative gap {worst:.2e}"


def _check_tpfa_operator(rng) -> str:
    mesh = build_tensor_mesh(((0.0, 1.0), (0.0, 1.0)), (6, 5))
    op = TpfaOperator(mesh)
    m = mesh.measures
    worst = 0.0
    for _ in range(10):
        w = rng.standard_normal(mesh.n_cells)
        v = rng.standard_normal(mesh.n_cells)
        lw, lv = op.laplacian_values(w), op.laplacian_values(v)
        sym = abs(np.sum(m * lw * v) - np.sum(m * w * lv))
        worst = max(worst, sym)
        if sym > 1e-10:
            raise AssertionError(f"weighted self-adjointness defect {sym:.3e}")
        if np.sum(m * lw * w) > 1e-10:
            raise AssertionError("operator is not negative semidefinite")
    const = op.laplacian_values(np.ones(mesh.n_cells))
    if np.max(np.abs(const)) > 1e-13:
        raise AssertionError("constants are not in the kernel")
    return f"worst self-adjointness defect {worst:.2e}"


def _check_poincare(rng) -> str:
    mesh = build_tensor_mesh(((0.0, 1.0), (0.0, 1.0)), (8, 8))
    cp = ops.poincare_constant_estimate(mesh)
    m = mesh.measures
    for _ in range(30):
        w = rng.standard_normal(mesh.n_cells)
        w -= np.dot(m, w) / m.sum()
        f = CellField(mesh, w)
        lhs = ops.discrete_l2_norm(f) ** 2
        rhs = cp * ops.discrete_h1_seminorm(f) ** 2 + 1e-10
        if lhs > rhs:
            raise AssertionError(f"Poincare violated: {lhs:.6e} > {rhs:.6e}")
    return f"C_p = {cp:.6f}"


def _check_upwind_telescoping(rng) -> str:
    mesh = build_tensor_mesh(((0.0, 1.0), (0.0, 1.0)), (6, 6))
    worst = 0.0
    for _ in range(10):
        vel = ops.EdgeVelocity(mesh, 0.0, 1.0,
                               rng.standard_normal(mesh.n_interior_edges))
        u = CellField(mesh, rng.standard_normal(mesh.n_cells))
        trace = ops.upwind_trace(u, vel)
        flux = mesh.edge_measures * vel.values * trace
        per_cell = np.zeros(mesh.n_cells)
        np.add.at(per_cell, mesh.edge_cells[:, 0], flux)
        np.add.at(per_cell, mesh.edge_cells[:, 1], -flux)
        total = abs(per_cell.sum())
        scale = np.sum(np.abs(flux)) + 1.0
        worst = max(worst, total / scale)
        if total > 1e-12 * scale:
            raise AssertionError(f"upwind flux sum {total:.3e}")
    return f"worst relative defect {worst:.2e}"


def _check_mass_identity(rng) -> str:
    for preset in ("additive", "stochastic"):
        problem = get_preset(preset)
        mesh = build_tensor_mesh(problem.domain, (8, 8))
        grid = TimeGrid(16, problem.horizon)
        for p in range(2):
            path = sample_path(4242, p, 64, problem.horizon)
            traj = run_path(problem, mesh, grid, path)
            defects = trajectory_mass_defects(traj, problem)
            bound = np.arange(1, grid.n_steps + 1) * 1e-9
            if np.any(defects > bound):
                raise AssertionError(
                    f"{preset}: mass defect {defects.max():.3e}")
    return "mass identity holds to n*1e-9 on both noise presets"


def _check_energy(preset: str) -> str:
    problem = get_preset(preset)
    mesh = build_tensor_mesh(problem.domain, (16, 16))
    grid = TimeGrid(32, problem.horizon)
    path = sample_path(7, 0, 32, problem.horizon)
    traj = run_path(problem, mesh, grid, path)
    excess = energy_balance_defects(traj)
    if np.any(excess > 1e-9):
        raise AssertionError(f"energy excess {excess.max():.3e}")
    return f"max energy excess {excess.max():.2e}"


def _check_projection(rng) -> str:
    spec = SmoothFunctionSpec(
        fn=lambda x: np.cos(np.pi * x[:, 0]) * np.cos(2 * np.pi * x[:, 1]),
        laplacian=lambda x: -5 * np.pi**2 * np.cos(np.pi * x[:, 0])
        * np.cos(2 * np.pi * x[:, 1]),
        domain=((0.0, 1.0), (0.0, 1.0)))
    spec2 = SmoothFunctionSpec(
        fn=lambda x: np.cos(2 * np.pi * x[:, 0]),
        laplacian=lambda x: -4 * np.pi**2 * np.cos(2 * np.pi * x[:, 0]),
        domain=((0.0, 1.0), (0.0, 1.0)))
    mesh = build_tensor_mesh(spec.domain, (12, 12))
    p1 = elliptic_projection(spec, mesh)
    res = elliptic_residual(spec, p1)
    if res > 1e-11:
        raise AssertionError(f"projection residual {res:.3e}")
    combo = SmoothFunctionSpec(
        fn=lambda x: 2.0 * spec.fn(x) - 3.0 * spec2.fn(x),
        laplacian=lambda x: 2.0 * spec.laplacian(x) - 3.0 * spec2.laplacian(x),
        domain=spec.domain)
    p2 = elliptic_projection(spec2, mesh)
    pc = elliptic_projection(combo, mesh)
    lin = np.max(np.abs(pc.values - (2.0 * p1.values - 3.0 * p2.values)))
    if lin > 1e-9:
        raise AssertionError(f"projection linearity defect {lin:.3e}")
    hat = centered_projection(combo.fn, mesh)
    hat_lin = np.max(np.abs(
        hat.values - (2.0 * centered_projection(spec.fn, mesh).values
                      - 3.0 * centered_projection(spec2.fn, mesh).values)))
    if hat_lin > 1e-12:
        raise AssertionError("centered projection is not linear")
    return f"residual {res:.2e}, linearity defect {lin:.2e}"


def _check_coupling_zero() -> str:
    problem = get_preset("stochastic")
    mesh = build_tensor_mesh(problem.domain, (8, 8))
    grid = TimeGrid(32, problem.horizon)
    path = sample_path(99, 3, 32, problem.horizon)
    a = run_path(problem, mesh, grid, path)
    b = run_path(problem, mesh, grid, path)
    if not np.array_equal(a.states, b.states):
        raise AssertionError("identical runs differ")
    inc = coarsen(path, 32)
    if not np.array_equal(inc, path.increments):
        raise AssertionError("identity coarsening is not exact")
    return "reference coupled against itself gives error 0"


def _check_nested_injection(rng) -> str:
    coarse = build_tensor_mesh(((0.0, 1.0), (0.0, 1.0)), (4, 4))
    fine = refine(refine(coarse))
    w = CellField(coarse, rng.standard_normal(coarse.n_cells))
    lifted = inject(w, fine)
    n_c = ops.discrete_l2_norm(w)
    n_f = ops.discrete_l2_norm(lifted)
    if abs(n_c - n_f) > 1e-13 * (n_c + 1.0):
        raise AssertionError(f"injection changed the norm: {n_c} vs {n_f}")
    again = inject(w, fine)
    if np.max(np.abs(lifted.values - again.values)) != 0.0:
        raise AssertionError("injection is not deterministic")
    return "injection preserves the discrete norm"


def _check_measurability() -> str:
    problem = get_preset("stochastic")
    mesh = build_tensor_mesh(problem.domain, (6, 6))
    grid = TimeGrid(16, problem.horizon)
    path = sample_path(5, 1, 16, problem.horizon)
    cut = 9
    truncated = NoisePath(path.horizon, path.n_fine,
                          np.concatenate([path.increments[:cut],
                                          np.zeros(16 - cut)]),
                          path.seed, path.path_index)
    a = run_path(problem, mesh, grid, path)
    b = run_path(problem, mesh, grid, truncated)
    if not np.array_equal(a.states[:cut + 1], b.states[:cut + 1]):
        raise AssertionError("state depends on future increments")
    return f"states 0..{cut} depend only on increments 1..{cut}"


def _check_moment_bound() -> str:
    problem = get_preset("stochastic")
    mesh = build_tensor_mesh(problem.domain, (8, 8))
    sups = []
    for n_steps in (32, 64):
        grid = TimeGrid(n_steps, problem.horizon)
        acc = []
        for p in range(16):
            path = sample_path(31337, p, 64, problem.horizon)
            traj = run_path(problem, mesh, grid, path)
            norms_sq = (traj.states**2) @ mesh.measures
            acc.append(norms_sq.max())
        sups.append(float(np.mean(acc)))
    ratio = sups[1] / sups[0]
    if not 0.5 <= ratio <= 2.0:
        raise AssertionError(f"sup_n E||u||^2 moved by {ratio:.3f} under "
                             "tau refinement")
    return f"sup_n E||u||^2: {sups[0]:.4f} vs {sups[1]:.4f} across tau levels"


def _check_mesh_geometry() -> str:
    for mesh in _suite_meshes():
        report = validate_admissibility(mesh)
        if not report.ok:
            raise AssertionError("; ".join(report.violations))
    m0 = build_tensor_mesh(((0.0, 1.0), (0.0, 1.0)), (4, 4))
    regs = {m0.regularity}
    m = m0
    for _ in range(2):
        m = refine(m)
        regs.add(m.regularity)
    if len(regs) != 1:
        raise AssertionError(f"reg(T) drifts across levels: {sorted(regs)}")
    return f"admissible; reg(T) = {m0.regularity} constant under refinement"


def run_property_suite(config: StudyConfig) -> PropertyReport:
    """Execute every module invariant on randomized, seeded inputs."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    checks: list[tuple[str, Callable[[], str]]] = [
        ("mesh_admissibility_and_regularity", _check_mesh_geometry),
        ("dibp_identity", lambda: _check_dibp(rng)),
        ("tpfa_self_adjoint_negative_kernel", lambda: _check_tpfa_operator(rng)),
        ("discrete_poincare", lambda: _check_poincare(rng)),
        ("upwind_flux_telescoping", lambda: _check_upwind_telescoping(rng)),
        ("mass_martingale_identity", lambda: _check_mass_identity(rng)),
        ("energy_dissipation_diffusion", lambda: _check_energy("diffusion")),
        ("energy_dissipation_convection", lambda: _check_energy("convection")),
        ("elliptic_projection_contract", lambda: _check_projection(rng)),
        ("coupling_zero_error", _check_coupling_zero),
        ("nested_injection_zero", lambda: _check_nested_injection(rng)),
        ("measurability_truncation", _check_measurability),
        ("moment_boundedness", _check_moment_bound),
    ]
    out = []
    for name, fn in checks:
        try:
            detail = fn()
            out.append(PropertyCheck(name, True, detail))
        except Exception as exc:  # noqa: BLE001 - report, don't crash
            out.append(PropertyCheck(name, False, f"{type(exc).__name__}: {exc}"))
    return PropertyReport(out)
