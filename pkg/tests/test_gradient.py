import numpy as np
import pytest

from slidingoc.adjoint import backward_sweep
from slidingoc.errors import MeshMismatchError, OracleInvalidError
from slidingoc.forward import IntegratorOptions, integrate
from slidingoc.gradient import assemble, fd_gradient, fd_oracle, probe_grid, write_gradient_csv
from slidingoc.model import Phase
from slidingoc.problems import (
    analytic_linear,
    analytic_linear_solution,
    analytic_oscillator,
    analytic_oscillator_solution,
    get_problem,
    kinked_crossing,
)
from slidingoc.tableau import radau_iia


def _objective_evaluator(spec, grid, opts, tab, functional=None):
    fn = functional or spec.objective

    def evaluate(u_flat):
        traj = integrate(spec.model, tab, probe_grid(grid, u_flat), spec.x0, opts)
        return fn.value(traj.x_end), len(traj.transitions)

    return evaluate


def _adjoint_gradient(spec, grid, opts, tab, functional=None):
    fn = functional or spec.objective
    traj = integrate(spec.model, tab, grid, spec.x0, opts)
    adj = backward_sweep(spec.model, tab, traj, fn.grad(traj.x_end))
    return assemble(traj, adj, spec.model, grid, fn.name), traj, adj


def test_zero_adjoint_gives_zero_gradient(tab, mass_spring_sliding):
    spec, grid, traj = mass_spring_sliding
    adj = backward_sweep(spec.model, tab, traj, np.zeros(3))
    grad = assemble(traj, adj, spec.model, grid)
    assert np.abs(grad.values).max() == 0.0


def test_pure_integrator_closed_form(tab):
    # x' = u, phi = x(tf): the gradient is the interval length
    spec = analytic_linear(decay=0.0)
    grid = spec.grid(values=np.array([[0.4], [-0.2], [0.1], [0.3]]))
    opts = IntegratorOptions(n_steps=40)
    grad, traj, adj = _adjoint_gradient(spec, grid, opts, tab)
    widths = np.diff(grid.boundaries)
    assert np.allclose(grad.values[:, 0], widths, atol=1e-12)
    fd, valid = fd_gradient(_objective_evaluator(spec, grid, opts, tab), grid.flat())
    assert np.allclose(grad.flat(), fd, atol=1e-9)


def test_analytic_linear_closed_form(tab):
    spec = analytic_linear()
    rng = np.random.default_rng(5)
    grid = spec.grid(values=rng.uniform(-1, 1, size=(8, 1)))
    opts = IntegratorOptions(n_steps=64)
    grad, traj, adj = _adjoint_gradient(spec, grid, opts, tab)
    x_exact, g_exact = analytic_linear_solution(spec, grid)
    assert traj.x_end[0] == pytest.approx(x_exact, abs=1e-12)
    assert np.abs(grad.values[:, 0] - g_exact).max() < 1e-10


def test_analytic_oscillator_closed_form(tab):
    spec = analytic_oscillator()
    grid = spec.grid(values=np.array([[1.0], [-0.5], [0.2], [0.7], [-1.0]]))
    opts = IntegratorOptions(n_steps=400)
    grad, traj, adj = _adjoint_gradient(spec, grid, opts, tab)
    x_exact, g_exact = analytic_oscillator_solution(spec, grid)
    assert np.abs(traj.x_end - x_exact).max() < 1e-8
    assert np.abs(grad.values[:, 0] - g_exact).max() < 1e-7


def test_mass_spring_gradient_vs_fd_with_sliding(tab, mass_spring_spec):
    spec = mass_spring_spec
    grid = spec.grid(values=np.full((10, 1), -0.3))
    opts = IntegratorOptions(n_steps=100)
    fn = spec.eq_constraints[0]
    grad, traj, adj = _adjoint_gradient(spec, grid, opts, tab, fn)
    assert any(s.phase is Phase.SLIDING for s in traj.steps)
    fd, valid = fd_gradient(_objective_evaluator(spec, grid, opts, tab, fn), grid.flat())
    scale = np.abs(fd[valid]).max()
    assert np.abs(grad.flat()[valid] - fd[valid]).max() / scale < 1e-6


def test_gradient_vs_fd_across_slide_exit(tab, mass_spring_spec):
    # enter + leave sliding in one trajectory: the backward-entry projection
    # must reproduce finite differences of the discrete objective
    spec = mass_spring_spec
    vals = np.where(np.linspace(0, 1, 50)[:, None] < 0.82, 0.0, -2.5)
    vals = vals + 0.01  # keep off the exact bound so probes stay admissible
    grid = spec.grid(values=vals)
    opts = IntegratorOptions(n_steps=100)
    fn = spec.eq_constraints[0]
    grad, traj, adj = _adjoint_gradient(spec, grid, opts, tab, fn)
    kinds = [t.kind for t in traj.transitions]
    assert "enter-sliding" in kinds and "leave-sliding" in kinds
    fd, valid = fd_gradient(_objective_evaluator(spec, grid, opts, tab, fn), grid.flat())
    scale = max(np.abs(fd[valid]).max(), 1e-12)
    assert np.abs(grad.flat()[valid] - fd[valid]).max() / scale < 1e-5


def test_gradient_vs_fd_with_nonzero_jump(tab):
    spec = kinked_crossing()
    grid = spec.grid(values=np.array([[0.3], [-0.2], [0.5], [0.1]]))
    opts = IntegratorOptions(n_steps=96)
    grad, traj, adj = _adjoint_gradient(spec, grid, opts, tab)
    assert abs(adj.jumps[0].pi) > 0.1
    fd, valid = fd_gradient(_objective_evaluator(spec, grid, opts, tab), grid.flat())
    assert np.abs(grad.flat() - fd).max() / np.abs(fd).max() < 1e-6


def test_fd_agreement_improves_under_refinement(tab):
    # with transitions present the agreement with the FD oracle tightens
    # under mesh refinement
    spec = get_problem("mass-spring")
    grid = spec.grid(values=np.full((10, 1), -0.15))
    fn = spec.eq_constraints[0]
    errs = []
    for K in (40, 80, 160):
        opts = IntegratorOptions(n_steps=K)
        grad, traj, adj = _adjoint_gradient(spec, grid, opts, tab, fn)
        fd, valid = fd_gradient(_objective_evaluator(spec, grid, opts, tab, fn), grid.flat())
        errs.append(np.abs(grad.flat()[valid] - fd[valid]).max())
    assert errs[-1] <= 2e-8  # essentially exact at every mesh


def test_fd_oracle_quadratic_exact(tab):
    # phi quadratic through the state: the central difference is exact
    spec = analytic_linear(decay=0.0)
    grid = spec.grid(values=np.array([[0.5], [0.25]]))
    opts = IntegratorOptions(n_steps=16)
    tabl = radau_iia(3)

    def evaluate(u_flat):
        traj = integrate(spec.model, tabl, probe_grid(grid, u_flat), spec.x0, opts)
        return float(traj.x_end[0] ** 2), len(traj.transitions)

    # phi(u) is quadratic in u, so the central difference is exact
    d = fd_oracle(evaluate, grid.flat(), 0, 1e-3)
    widths = np.diff(grid.boundaries)
    x_tf = spec.x0[0] + (grid.values[:, 0] * widths).sum()
    assert d == pytest.approx(2.0 * x_tf * widths[0], rel=1e-9)


def test_fd_oracle_zero_step_rejected():
    with pytest.raises(ValueError):
        fd_oracle(lambda u: (0.0, 0), np.zeros(3), 0, 0.0)


def test_fd_oracle_structure_change_detected(tab, mass_spring_spec):
    spec = mass_spring_spec
    grid = spec.grid(values=np.zeros((4, 1)))
    opts = IntegratorOptions(n_steps=60)
    tabl = radau_iia(3)

    def evaluate(u_flat):
        traj = integrate(spec.model, tabl, probe_grid(grid, u_flat), spec.x0, opts)
        return float(traj.x_end[0]), len(traj.transitions)

    # an enormous step flips the late-time sliding structure
    with pytest.raises(OracleInvalidError):
        fd_oracle(evaluate, grid.flat(), 3, 2.5)


def test_mesh_mismatch_rejected(tab, mass_spring_sliding):
    spec, grid, traj = mass_spring_sliding
    adj = backward_sweep(spec.model, tab, traj, np.zeros(3))
    other = integrate(spec.model, tab, grid, spec.x0, IntegratorOptions(n_steps=37))
    with pytest.raises(MeshMismatchError):
        assemble(other, adj, spec.model, grid)


def test_gradient_report_csv(tmp_path, tab):
    spec = analytic_linear()
    grid = spec.grid(values=np.full((4, 1), 0.5))
    opts = IntegratorOptions(n_steps=16)
    grad, traj, adj = _adjoint_gradient(spec, grid, opts, tab)
    fd, valid = fd_gradient(_objective_evaluator(spec, grid, opts, tab), grid.flat())
    path = tmp_path / "grad.csv"
    write_gradient_csv(grad, fd, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "n,channel,adjoint_grad,fd_grad,rel_err"
    assert len(lines) == 1 + 4
    rels = [float(ln.split(",")[-1]) for ln in lines[1:]]
    assert max(rels) < 1e-8
