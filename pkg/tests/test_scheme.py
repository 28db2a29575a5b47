import numpy as np
import pytest

import fvsde.discrete_ops as ops
from fvsde.discrete_ops import discrete_l2_norm, mass
from fvsde.errors import StabilityWarning, StepFailure
from fvsde.fields import CellField
from fvsde.mesh import build_tensor_mesh, cell_average
from fvsde.noise import NoisePath, TimeGrid, brownian_values, sample_path
from fvsde.presets import get_preset
from fvsde.scheme import (ProblemSpec, StepperParams, StepWorkspace,
                          assemble_residual, energy_balance_defects,
                          newton_advance, run_path, trajectory_mass_defects)

UNIT_SQUARE = ((0.0, 1.0), (0.0, 1.0))


def _identity(u):
    return np.asarray(u, dtype=float)


def _one(u):
    return np.ones_like(np.asarray(u, dtype=float))


def _zero(u):
    return np.zeros_like(np.asarray(u, dtype=float))


def _custom(name, u0_const, beta=None, beta_prime=None, g=None, horizon=0.2,
            lipschitz_beta=0.0, f=None, f_prime=None, **kw):
    return ProblemSpec(
        name=name,
        domain=UNIT_SQUARE,
        horizon=horizon,
        u0=lambda x: np.full(x.shape[0], u0_const),
        f=f or _identity, f_prime=f_prime or _one,
        beta=beta or _zero, beta_prime=beta_prime or _zero,
        g=g or _zero,
        velocity=None,
        lipschitz_f=1.0, lipschitz_beta=lipschitz_beta, lipschitz_g=0.0,
        f_is_linear=True, beta_is_linear=True,
        **kw)


def test_problem_spec_rejects_bad_coefficients():
    with pytest.raises(ValueError):
        _custom("bad_f", 1.0, f=lambda u: np.asarray(u) + 1.0)
    with pytest.raises(ValueError):
        _custom("bad_beta", 1.0, beta=lambda u: np.asarray(u) + 0.5,
                beta_prime=_one)
    with pytest.raises(ValueError):
        _custom("decreasing_f", 1.0, f=lambda u: -np.asarray(u))


def test_residual_zero_at_diffusive_steady_state():
    problem = _custom("steady", 3.0)
    mesh = build_tensor_mesh(UNIT_SQUARE, (4, 4))
    state = CellField(mesh, np.full(16, 3.0))
    r = assemble_residual(problem, state, state, 0.0, None, tau=0.05)
    np.testing.assert_allclose(r.values, 0.0, atol=1e-14)


def test_residual_sum_telescopes_to_closed_form():
    # summing the per-cell residual over K cancels every flux term, leaving
    # sum m (u - u_prev) - dW sum m g(u_prev) - tau sum m beta(u)
    problem = get_preset("stochastic")
    mesh = build_tensor_mesh(UNIT_SQUARE, (6, 6))
    rng = np.random.default_rng(42)
    cand = CellField(mesh, rng.standard_normal(36))
    prev = CellField(mesh, rng.standard_normal(36))
    tau, d_w = 0.01, 0.37
    ev = ops.edge_velocity(problem.velocity, mesh, 0.0, tau)
    r = assemble_residual(problem, cand, prev, d_w, ev, tau)
    m = mesh.measures
    expected = (np.sum(m * (cand.values - prev.values))
                - d_w * np.sum(m * problem.g(prev.values))
                - tau * np.sum(m * problem.beta(cand.values)))
    scale = np.sum(np.abs(r.values)) + 1.0
    assert abs(r.values.sum() - expected) <= 1e-13 * scale


def test_newton_one_iteration_for_affine_problem():
    problem = get_preset("stochastic")
    mesh = build_tensor_mesh(problem.domain, (8, 8))
    grid = TimeGrid(8, problem.horizon)
    path = sample_path(3, 0, 8, problem.horizon)
    traj = run_path(problem, mesh, grid, path)
    assert traj.newton_iterations == [1] * 8
    assert max(traj.residual_norms) < 1e-11 * 10


def test_pure_diffusion_preserves_mass():
    problem = get_preset("diffusion")
    mesh = build_tensor_mesh(problem.domain, (8, 8))
    grid = TimeGrid(4, problem.horizon)
    path = sample_path(1, 0, 4, problem.horizon)
    traj = run_path(problem, mesh, grid, path)
    m0 = mass(traj.field(0))
    for n in range(1, 5):
        assert abs(mass(traj.field(n)) - m0) <= 1e-11


def test_scalar_implicit_euler_closed_form():
    # beta(u) = u, f = 0, g = 0, constant state: one step solves
    # u1 = c / (1 - tau) exactly (per-cell scalar implicit Euler)
    problem = _custom("reaction", 2.0, beta=_identity, beta_prime=_one,
                      f=_zero, f_prime=_zero, horizon=0.2, lipschitz_beta=1.0)
    mesh = build_tensor_mesh(UNIT_SQUARE, (3, 3))
    grid = TimeGrid(1, 0.2)
    path = NoisePath(0.2, 1, np.zeros(1), 0, 0)
    traj = run_path(problem, mesh, grid, path)
    np.testing.assert_allclose(traj.states[1], 2.0 / (1.0 - 0.2), rtol=1e-12)


def test_additive_constant_shift_closed_form():
    # g = 1, everything else zero, constant datum: u1 = u0 + dW per cell
    problem = _custom("shift", 2.0, g=_one, f=_zero, f_prime=_zero)
    mesh = build_tensor_mesh(UNIT_SQUARE, (3, 3))
    grid = TimeGrid(1, 0.2)
    d_w = 0.731
    path = NoisePath(0.2, 1, np.array([d_w]), 0, 0)
    traj = run_path(problem, mesh, grid, path)
    np.testing.assert_allclose(traj.states[1], 2.0 + d_w, rtol=1e-12)


def test_jacobian_matches_finite_differences():
    problem = get_preset("nonlinear")
    mesh = build_tensor_mesh(problem.domain, (4, 4))
    tau = 0.01
    ev = ops.edge_velocity(problem.velocity, mesh, 0.0, tau)
    ws = StepWorkspace(problem, mesh, tau, ev)
    rng = np.random.default_rng(17)
    u = rng.standard_normal(16)
    prev = rng.standard_normal(16)
    jac = ws.jacobian(u).toarray()
    eps = 1e-7
    for j in range(16):
        up = u.copy(); up[j] += eps
        dn = u.copy(); dn[j] -= eps
        col = (ws.residual(up, prev, 0.0) - ws.residual(dn, prev, 0.0)) / (2 * eps)
        np.testing.assert_allclose(jac[:, j], col, atol=1e-6)


def test_nonlinear_newton_converges():
    problem = get_preset("nonlinear")
    mesh = build_tensor_mesh(problem.domain, (8, 8))
    grid = TimeGrid(8, problem.horizon)
    path = sample_path(11, 0, 8, problem.horizon)
    traj = run_path(problem, mesh, grid, path)
    assert max(traj.newton_iterations) >= 2
    assert max(traj.residual_norms) < 1e-10


def test_mass_martingale_identity_additive_noise():
    # g = c, beta = 0: mass(u^n) - mass(u^0) = c |Lambda| W(t_n)
    problem = get_preset("additive")
    mesh = build_tensor_mesh(problem.domain, (8, 8))
    grid = TimeGrid(32, problem.horizon)
    path = sample_path(6, 0, 128, problem.horizon)
    traj = run_path(problem, mesh, grid, path)
    w = brownian_values(path, 32)
    m0 = mass(traj.field(0))
    for n in range(1, 33):
        defect = abs(mass(traj.field(n)) - m0 - 0.5 * 1.0 * w[n])
        assert defect <= n * 1e-9


def test_mass_identity_general_coefficients():
    problem = get_preset("stochastic")
    mesh = build_tensor_mesh(problem.domain, (8, 8))
    grid = TimeGrid(16, problem.horizon)
    path = sample_path(8, 1, 64, problem.horizon)
    traj = run_path(problem, mesh, grid, path)
    defects = trajectory_mass_defects(traj, problem)
    assert np.all(defects <= np.arange(1, 17) * 1e-9)


def test_energy_identity_pure_diffusion_is_tight():
    problem = get_preset("diffusion")
    mesh = build_tensor_mesh(problem.domain, (16, 16))
    grid = TimeGrid(16, problem.horizon)
    path = NoisePath(problem.horizon, 16, np.zeros(16), 0, 0)
    traj = run_path(problem, mesh, grid, path)
    excess = energy_balance_defects(traj)
    # equality up to accumulated solver tolerance, and never above it
    assert np.max(np.abs(excess)) <= 1e-9


def test_energy_inequality_with_upwind_convection():
    problem = get_preset("convection")
    mesh = build_tensor_mesh(problem.domain, (16, 16))
    grid = TimeGrid(16, problem.horizon)
    path = NoisePath(problem.horizon, 16, np.zeros(16), 0, 0)
    traj = run_path(problem, mesh, grid, path)
    excess = energy_balance_defects(traj)
    assert np.all(excess <= 1e-9)
    # upwinding strictly dissipates here
    assert excess[-1] < 0.0


def test_downwind_mutation_breaks_energy_inequality(monkeypatch):
    problem = get_preset("convection")
    mesh = build_tensor_mesh(problem.domain, (16, 16))
    grid = TimeGrid(16, problem.horizon)
    path = NoisePath(problem.horizon, 16, np.zeros(16), 0, 0)

    def downwind_cells(edge_vel):
        m = edge_vel.mesh
        return np.where(edge_vel.values >= 0.0,
                        m.edge_cells[:, 1], m.edge_cells[:, 0])

    monkeypatch.setattr(ops, "upwind_cells", downwind_cells)
    traj = run_path(problem, mesh, grid, path)
    excess = energy_balance_defects(traj)
    assert np.max(excess) > 1e-9


def test_trajectory_is_deterministic():
    problem = get_preset("stochastic")
    mesh = build_tensor_mesh(problem.domain, (6, 6))
    grid = TimeGrid(8, problem.horizon)
    path = sample_path(1234, 5, 32, problem.horizon)
    a = run_path(problem, mesh, grid, path)
    b = run_path(problem, mesh, grid, path)
    assert np.array_equal(a.states, b.states)


def test_states_depend_only_on_past_increments():
    problem = get_preset("stochastic")
    mesh = build_tensor_mesh(problem.domain, (5, 5))
    grid = TimeGrid(12, problem.horizon)
    path = sample_path(2, 0, 12, problem.horizon)
    cut = 7
    inc = path.increments.copy()
    inc[cut:] = 0.0
    truncated = NoisePath(path.horizon, path.n_fine, inc, path.seed,
                          path.path_index)
    a = run_path(problem, mesh, grid, path)
    b = run_path(problem, mesh, grid, truncated)
    assert np.array_equal(a.states[:cut + 1], b.states[:cut + 1])
    assert not np.array_equal(a.states[cut + 1], b.states[cut + 1])


def test_step_failure_carries_step_index():
    problem = get_preset("nonlinear")
    mesh = build_tensor_mesh(problem.domain, (4, 4))
    grid = TimeGrid(4, problem.horizon)
    path = sample_path(3, 3, 4, problem.horizon)
    params = StepperParams(max_newton_iterations=0)
    with pytest.raises(StepFailure) as info:
        run_path(problem, mesh, grid, path, params)
    assert info.value.step == 1
    assert info.value.residual is not None and info.value.residual > 0.0


def test_stability_warning_on_large_tau_lbeta():
    problem = _custom("stiff_reaction", 1.0, beta=_identity, beta_prime=_one,
                      f=_zero, f_prime=_zero, horizon=0.8, lipschitz_beta=1.0)
    mesh = build_tensor_mesh(UNIT_SQUARE, (2, 2))
    prev = CellField(mesh, np.ones(4))
    with pytest.warns(StabilityWarning):
        newton_advance(problem, prev, 0.0, None, tau=0.8)


def test_newton_advance_matches_run_path_step():
    problem = get_preset("diffusion")
    mesh = build_tensor_mesh(problem.domain, (6, 6))
    prev = cell_average(problem.u0, mesh)
    state, iterations, residual = newton_advance(problem, prev, 0.0, None,
                                                 tau=0.01)
    grid = TimeGrid(1, 0.01 * 1)
    # same tau, zero noise: one run_path step must agree bitwise
    horizon_problem = get_preset("diffusion")
    traj = run_path(
        ProblemSpec(**{**horizon_problem.__dict__, "horizon": 0.01}),
        mesh, grid, NoisePath(0.01, 1, np.zeros(1), 0, 0))
    assert np.array_equal(traj.states[1], state.values)
    assert iterations <= 2
    assert discrete_l2_norm(state) <= discrete_l2_norm(prev)
