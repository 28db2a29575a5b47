"""Semi-implicit Euler / two-point flux time stepper.

Per step, given the previous cell vector u^{n-1} and the Brownian increment
dW_n, the new vector u^n solves, for every control volume K,

    m_K (u_K - u_K^{n-1})
      + tau * sum_{sigma in E_K^int} m_sigma v_{K,sigma} f(u_sigma)
      + tau * sum_{sigma in E_K^int} (m_sigma / d_KL) (u_K - u_L)
      = m_K g(u_K^{n-1}) dW_n + tau m_K beta(u_K),

with u_sigma the upstream value (u_K when v_{K,sigma} >= 0, else u_L).  The
noise coefficient is explicit, everything else implicit.  The nonlinear
system is solved by Newton with an analytic Jacobian; each linear system is
handled by a direct sparse factorization, and for affine f and beta (the
rate-study presets) the Jacobian is constant, so one factorization is reused
for the whole trajectory.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu, spsolve

from . import discrete_ops as ops
from .discrete_ops import EdgeVelocity, TpfaOperator
from .errors import CouplingError, SolverError, StabilityWarning, StepFailure
from .fields import CellField
from .mesh import TensorMesh, cell_average
from .noise import NoisePath, TimeGrid, coarsen

__all__ = [
    "ProblemSpec",
    "StepperParams",
    "StepWorkspace",
    "Trajectory",
    "assemble_residual",
    "newton_advance",
    "run_path",
    "build_workspace",
    "integrate_workspace",
    "trajectory_mass_defects",
    "energy_balance_defects",
]

_MONOTONE_SAMPLES = np.linspace(-5.0, 5.0, 201)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Data tuple (u0, f, beta, g, v, T) plus derivative-bound metadata.

    All scalar coefficient functions are vectorized over numpy arrays.
    `velocity(t, x)` maps an (n, d) point array to an (n, d) velocity array;
    it is assumed divergence-free with zero normal trace on the boundary
    (the flags record this and diagnostics rely on it).  The Lipschitz
    bounds are metadata for diagnostics, not used by the solver itself.
    """

    name: str
    domain: tuple[tuple[float, float], ...]
    horizon: float
    u0: Callable[[np.ndarray], np.ndarray]
    f: Callable[[np.ndarray], np.ndarray]
    f_prime: Callable[[np.ndarray], np.ndarray]
    beta: Callable[[np.ndarray], np.ndarray]
    beta_prime: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    velocity: Callable[[float, np.ndarray], np.ndarray] | None = None
    lipschitz_f: float = 1.0
    lipschitz_beta: float = 0.0
    lipschitz_g: float = 0.0
    f_is_linear: bool = False
    beta_is_linear: bool = False
    velocity_time_independent: bool = True
    velocity_divergence_free: bool = True
    velocity_tangential: bool = True
    exact_solution: Callable[[np.ndarray, float], np.ndarray] | None = None

    def __post_init__(self):
        zero = np.zeros(1)
        if abs(float(self.f(zero)[0])) > 1e-12:
            raise ValueError(f"{self.name}: f(0) must vanish")
        if abs(float(self.beta(zero)[0])) > 1e-12:
            raise ValueError(f"{self.name}: beta(0) must vanish")
        fs = np.asarray(self.f(_MONOTONE_SAMPLES), dtype=float)
        if np.any(np.diff(fs) < -1e-12):
            raise ValueError(f"{self.name}: f is not non-decreasing on samples")

    @property
    def dimension(self) -> int:
        return len(self.domain)


@dataclass(frozen=True)
class StepperParams:
    """Newton and linear-solve settings.

    The residual norm is sqrt(sum_K R_K^2 / m_K), compared against
    newton_tol * max(1, ||u^{n-1}||_2).  Linear systems use a direct sparse
    factorization; linear_tol is retained as the contract bound for any
    iterative replacement.  tau * L_beta above `stability_margin` triggers a
    StabilityWarning (solvability of the implicit reaction term).
    """

    newton_tol: float = 1e-11
    max_newton_iterations: int = 30
    linear_tol: float = 1e-12
    stability_margin: float = 0.5


@dataclass(eq=False)
class Trajectory:
    """One realized discrete path u_h^0 .. u_h^N with per-step solver data."""

    mesh: TensorMesh
    grid: TimeGrid
    states: np.ndarray                  # (N+1, n_cells)
    newton_iterations: list[int]
    residual_norms: list[float]
    increments: np.ndarray              # the driving dW_n actually used
    problem_name: str = ""

    def field(self, n: int) -> CellField:
        return CellField(self.mesh, self.states[n])

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1


class StepWorkspace:
    """Precomputed per-(mesh, tau, edge velocity) assembly data.

    Holds the mass vector, the assembled stiffness, the upwind convection
    structure, and, for affine f and beta, one reusable LU factorization of
    the constant Jacobian.  Monte Carlo drivers build a workspace per level
    once and push many paths through it.
    """

    def __init__(self, problem: ProblemSpec, mesh: TensorMesh, tau: float,
                 edge_vel: EdgeVelocity | None, tpfa: TpfaOperator | None = None):
        self.problem = problem
        self.mesh = mesh
        self.tau = float(tau)
        self.tpfa = tpfa if tpfa is not None else TpfaOperator(mesh)
        self.m = mesh.measures
        self.stiffness = self.tpfa.stiffness
        self.edge_vel = edge_vel
        if edge_vel is not None and np.any(edge_vel.values != 0.0):
            self.K = mesh.edge_cells[:, 0]
            self.L = mesh.edge_cells[:, 1]
            self.m_vel = mesh.edge_measures * edge_vel.values
            self.upwind_idx = ops.upwind_cells(edge_vel)
            self.has_convection = True
        else:
            self.has_convection = False
        self.linear = problem.f_is_linear and problem.beta_is_linear
        self.lu = None
        if self.linear:
            self.lu = self._factorize(self.jacobian(np.zeros(mesh.n_cells)))

    @staticmethod
    def _factorize(matrix):
        try:
            return splu(matrix.tocsc())
        except RuntimeError as exc:
            raise SolverError(f"Jacobian factorization failed: {exc}") from exc

    def residual(self, candidate: np.ndarray, previous: np.ndarray,
                 d_w: float) -> np.ndarray:
        p = self.problem
        r = self.m * (candidate - previous) + self.tau * (self.stiffness @ candidate)
        if self.has_convection:
            flux = self.tau * self.m_vel * np.asarray(p.f(candidate[self.upwind_idx]))
            np.add.at(r, self.K, flux)
            np.add.at(r, self.L, -flux)
        r -= self.m * np.asarray(p.g(previous)) * d_w
        r -= self.tau * self.m * np.asarray(p.beta(candidate))
        return r

    def jacobian(self, candidate: np.ndarray):
        p = self.problem
        diag = self.m * (1.0 - self.tau * np.asarray(p.beta_prime(candidate)))
        j = sp.diags(diag) + self.tau * self.stiffness
        if self.has_convection:
            data = self.tau * self.m_vel * np.asarray(p.f_prime(candidate[self.upwind_idx]))
            n = self.mesh.n_cells
            conv = sp.coo_matrix(
                (np.concatenate([data, -data]),
                 (np.concatenate([self.K, self.L]),
                  np.concatenate([self.upwind_idx, self.upwind_idx]))),
                shape=(n, n))
            j = j + conv.tocsr()
        return j

    def residual_norm(self, r: np.ndarray) -> float:
        return float(np.sqrt(np.sum(r * r / self.m)))

    def advance(self, previous: np.ndarray, d_w: float,
                params: StepperParams) -> tuple[np.ndarray, int, float]:
        scale = max(1.0, float(np.sqrt(np.sum(self.m * previous**2))))
        u = previous.copy()
        max_it = params.max_newton_iterations
        for it in range(max_it + 1):
            r = self.residual(u, previous, d_w)
            rnorm = self.residual_norm(r)
            if rnorm <= params.newton_tol * scale:
                return u, it, rnorm
            if it == max_it:
                raise StepFailure(
                    f"Newton stalled at residual {rnorm:.3e} after {max_it} "
                    f"iterations", residual=rnorm)
            if self.lu is not None:
                delta = self.lu.solve(-r)
            else:
                with warnings.catch_warnings():
                    warnings.simplefilter("error", sp.linalg.MatrixRankWarning)
                    try:
                        delta = spsolve(self.jacobian(u).tocsr(), -r)
                    except sp.linalg.MatrixRankWarning as exc:
                        raise SolverError("singular Jacobian") from exc
            if not np.all(np.isfinite(delta)):
                raise SolverError("singular Jacobian (non-finite update)")
            u = u + delta
        raise AssertionError("unreachable")


def _check_stability(problem: ProblemSpec, tau: float, params: StepperParams):
    if tau * problem.lipschitz_beta > params.stability_margin:
        warnings.warn(
            f"tau * L_beta = {tau * problem.lipschitz_beta:.3g} exceeds "
            f"{params.stability_margin}; the implicit reaction solve may lose "
            f"its contraction margin", StabilityWarning, stacklevel=3)


def assemble_residual(problem: ProblemSpec, candidate: CellField,
                      previous: CellField, d_w: float,
                      edge_vel: EdgeVelocity | None, tau: float) -> CellField:
    """Per-cell residual of the implicit system at a candidate state."""
    ws = StepWorkspace(problem, candidate.mesh, tau, edge_vel)
    return CellField(candidate.mesh,
                     ws.residual(candidate.values, previous.values, d_w))


def newton_advance(problem: ProblemSpec, previous: CellField, d_w: float,
                   edge_vel: EdgeVelocity | None, tau: float,
                   params: StepperParams | None = None,
                   ) -> tuple[CellField, int, float]:
    """Solve one implicit step; returns (state, iterations, residual norm)."""
    params = params or StepperParams()
    _check_stability(problem, tau, params)
    ws = StepWorkspace(problem, previous.mesh, tau, edge_vel)
    u, it, rnorm = ws.advance(previous.values, d_w, params)
    return CellField(previous.mesh, u), it, rnorm


def run_path(problem: ProblemSpec, mesh: TensorMesh, grid: TimeGrid,
             path: NoisePath, params: StepperParams | None = None,
             tpfa: TpfaOperator | None = None) -> Trajectory:
    """Run the scheme over the whole grid with one Brownian path.

    The path's fine increments are block-summed onto the grid (the grid step
    count must divide the path resolution), u_h^0 is the cell average of u0,
    and each step advances by Newton.  Step failures abort the path and carry
    the failing step index.
    """
    params = params or StepperParams()
    if abs(path.horizon - grid.horizon) > 1e-12 * grid.horizon:
        raise CouplingError(
            f"path horizon {path.horizon!r} differs from grid horizon "
            f"{grid.horizon!r}")
    increments = coarsen(path, grid.n_steps)
    _check_stability(problem, grid.tau, params)
    tpfa = tpfa if tpfa is not None else TpfaOperator(mesh)

    u0 = cell_average(problem.u0, mesh).values

    if problem.velocity is None or problem.velocity_time_independent:
        ws = build_workspace(problem, mesh, grid.tau, tpfa)
        states, iterations, residuals = integrate_workspace(
            ws, u0, increments, params)
    else:
        states = np.empty((grid.n_steps + 1, mesh.n_cells))
        states[0] = u0
        iterations, residuals = [], []
        nodes = grid.nodes
        for n in range(1, grid.n_steps + 1):
            ev = ops.edge_velocity(problem.velocity, mesh,
                                   nodes[n - 1], nodes[n])
            step_ws = StepWorkspace(problem, mesh, grid.tau, ev, tpfa)
            try:
                u, it, rnorm = step_ws.advance(states[n - 1],
                                               increments[n - 1], params)
            except StepFailure as exc:
                raise StepFailure(f"step {n}: {exc}", step=n,
                                  residual=exc.residual) from exc
            states[n] = u
            iterations.append(it)
            residuals.append(rnorm)
    return Trajectory(mesh, grid, states, iterations, residuals, increments,
                      problem_name=problem.name)


def build_workspace(problem: ProblemSpec, mesh: TensorMesh, tau: float,
                    tpfa: TpfaOperator | None = None) -> StepWorkspace:
    """Workspace for repeated stepping with a time-independent velocity."""
    if problem.velocity is None:
        return StepWorkspace(problem, mesh, tau, None, tpfa)
    ev = ops.edge_velocity(problem.velocity, mesh, 0.0, tau)
    return StepWorkspace(problem, mesh, tau, ev, tpfa)


def integrate_workspace(ws: StepWorkspace, u0_values: np.ndarray,
                        increments: np.ndarray, params: StepperParams,
                        ) -> tuple[np.ndarray, list[int], list[float]]:
    """Drive a whole trajectory through one prebuilt workspace."""
    n_steps = len(increments)
    states = np.empty((n_steps + 1, ws.mesh.n_cells))
    states[0] = u0_values
    iterations: list[int] = []
    residuals: list[float] = []
    for n in range(1, n_steps + 1):
        try:
            u, it, rnorm = ws.advance(states[n - 1], increments[n - 1], params)
        except StepFailure as exc:
            raise StepFailure(f"step {n}: {exc}", step=n,
                              residual=exc.residual) from exc
        states[n] = u
        iterations.append(it)
        residuals.append(rnorm)
    return states, iterations, residuals


def trajectory_mass_defects(traj: Trajectory, problem: ProblemSpec) -> np.ndarray:
    """Defect of the discrete mass identity at every step.

    Summing the scheme over all cells telescopes the flux terms, leaving
    mass(u^n) = mass(u^0) + sum_k [ dW_k sum_K m_K g(u_K^{k-1})
                                    + tau sum_K m_K beta(u_K^k) ].
    Returns the per-step absolute defect (solver tolerance accumulation).
    """
    m = traj.mesh.measures
    tau = traj.grid.tau
    masses = traj.states @ m
    g_terms = traj.increments * (np.asarray([
        np.dot(m, problem.g(traj.states[k])) for k in range(traj.n_steps)]))
    b_terms = tau * np.asarray([
        np.dot(m, problem.beta(traj.states[k + 1])) for k in range(traj.n_steps)])
    predicted = masses[0] + np.cumsum(g_terms + b_terms)
    return np.abs(masses[1:] - predicted)


def energy_balance_defects(traj: Trajectory) -> np.ndarray:
    """LHS - RHS of the per-path energy inequality for noise-free runs.

    With g = 0 and beta = 0, multiplying the scheme by u_K^n and summing gives
    ||u^n||^2 + sum_k (||u^k - u^{k-1}||^2 + 2 tau |u^k|_{1,h}^2) <= ||u^0||^2,
    with equality for pure diffusion (upwinding only adds dissipation).
    Returns the per-step excess; values <= tolerance certify the inequality.
    """
    mesh = traj.mesh
    m = mesh.measures
    tau = traj.grid.tau
    norms_sq = (traj.states**2) @ m
    jumps_sq = ((traj.states[1:] - traj.states[:-1])**2) @ m
    k, l = mesh.edge_cells[:, 0], mesh.edge_cells[:, 1]
    t = mesh.transmissibilities
    semi_sq = (traj.states[1:, k] - traj.states[1:, l])**2 @ t
    lhs = norms_sq[1:] + np.cumsum(jumps_sq + 2.0 * tau * semi_sq)
    return lhs - norms_sq[0]
