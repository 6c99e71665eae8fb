"""Acceptance suite: every criterion at its stated tolerance.

Each test prints a single ``ACCEPTANCE <n> ... PASS/FAIL`` line; run with
``pytest tests/test_acceptance.py -v -s`` for the full report.
"""

import time

import numpy as np
import pytest

from slidingoc.adjoint import backward_sweep, terminal_conditions
from slidingoc.forward import IntegratorOptions, integrate
from slidingoc.gradient import assemble, fd_gradient, probe_grid
from slidingoc.model import Phase
from slidingoc.nlp import SqpOptions, build_endpoint_nlp, solve
from slidingoc.problems import get_problem
from slidingoc.studies import jump_study, order_study, switching_time_study
from slidingoc.tableau import radau_iia

TAB = radau_iia(3)


def _report(num, name, ok, detail=""):
    print(f"ACCEPTANCE {num} {name}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


@pytest.fixture(scope="module")
def mass_spring_solution():
    spec = get_problem("mass-spring")
    nlp = build_endpoint_nlp(spec, IntegratorOptions(n_steps=100), n_controls=100)
    res = solve(nlp, spec.grid().flat(), SqpOptions(eps=1e-6, max_iter=150))
    return spec, res


@pytest.fixture(scope="module")
def race_car_solution():
    spec = get_problem("race-car")
    nlp = build_endpoint_nlp(spec, IntegratorOptions(n_steps=150), n_controls=10)
    res = solve(nlp, spec.grid().flat(), SqpOptions(eps=1e-6, max_iter=400))
    return spec, res


def _adjoint_vs_fd(spec, grid, opts, functional):
    traj = integrate(spec.model, TAB, grid, spec.x0, opts)
    adj = backward_sweep(spec.model, TAB, traj, functional.grad(traj.x_end))
    grad = assemble(traj, adj, spec.model, grid).flat()

    def evaluate(u_flat):
        t2 = integrate(spec.model, TAB, probe_grid(grid, u_flat), spec.x0, opts)
        return functional.value(t2.x_end), len(t2.transitions)

    fd, valid = fd_gradient(evaluate, grid.flat())
    scale = max(np.abs(fd[valid]).max(), 1e-12)
    return np.abs(grad[valid] - fd[valid]).max() / scale, traj


def test_criterion_1_discrete_gradient_exactness():
    t0 = time.monotonic()
    spec = get_problem("analytic-linear")
    rng = np.random.default_rng(1)
    grid = spec.grid(values=rng.uniform(-1, 1, (20, 1)))
    err_lin, _ = _adjoint_vs_fd(spec, grid, IntegratorOptions(n_steps=100), spec.objective)

    ms = get_problem("mass-spring")
    grid_ms = ms.grid(values=np.full((20, 1), 0.5))  # stays clear of the belt
    err_ms, traj = _adjoint_vs_fd(ms, grid_ms, IntegratorOptions(n_steps=100), ms.eq_constraints[0])
    transition_free = len(traj.transitions) == 0
    elapsed = time.monotonic() - t0
    ok = err_lin <= 1e-8 and err_ms <= 1e-6 and transition_free and elapsed < 5.0
    _report(1, "discrete-gradient exactness", ok,
            f"analytic {err_lin:.2e} (<=1e-8), mass-spring {err_ms:.2e} (<=1e-6), "
            f"transition-free={transition_free}, {elapsed:.1f}s")


def test_criterion_2_integration_orders():
    t0 = time.monotonic()
    meshes = [50, 100, 200, 400, 800]
    u = np.array([[1.0], [-1.0], [0.5], [-0.5], [1.0]])
    ode = order_study(get_problem("analytic-osc"), u, meshes)
    dae = order_study(get_problem("sliding-osc"), u, meshes)
    by_ode = {q.name: q for q in ode.quantities}
    by_dae = {q.name: q for q in dae.quantities}
    elapsed = time.monotonic() - t0
    checks = {
        "ode-state>=4.5": by_ode["state"].slope >= 4.5,
        "ode-adjoint>=3.5": by_ode["adjoint"].slope >= 3.5,
        "ode-gradient>=2.5": by_ode["gradient"].slope >= 2.5,
        "dae-state>=4.5": by_dae["state"].slope >= 4.5,
        "dae-algebraic>=2.5": by_dae["algebraic"].slope >= 2.5,
        "dae-adjoint>=1.5": by_dae["adjoint"].slope >= 1.5,
        "dae-gradient>=1.7": by_dae["gradient"].slope >= 1.7,
        "runtime<120s": elapsed < 120.0,
    }
    slopes = {q.name: round(q.slope, 2) for q in ode.quantities}
    slopes.update({f"dae-{q.name}": round(q.slope, 2) for q in dae.quantities})
    _report(2, "integration orders", all(checks.values()), f"{slopes}, {elapsed:.1f}s "
            + str([k for k, v in checks.items() if not v]))


def test_criterion_3_jump_convergence():
    spec = get_problem("kinked-crossing")
    u = np.array([[0.3], [-0.2], [0.5], [0.1]])
    details = []
    ok = True
    for formula in ("discrete", "simple"):
        rep = jump_study(spec, u, [12, 24, 48, 96], formula=formula, ref_refinement=16)
        q = rep.quantities[0]
        strictly_decreasing = all(a > b for a, b in zip(q.errors, q.errors[1:]))
        ok = ok and strictly_decreasing and q.slope >= 1.0
        details.append(f"{formula}: slope {q.slope:.2f}, decreasing={strictly_decreasing}")
    _report(3, "jump convergence", ok, "; ".join(details))


def test_criterion_4_surface_tracking():
    opts = IntegratorOptions(n_steps=100, newton_tol=1e-12)
    worst_main, worst_stage = 0.0, 0.0
    for name, values in (("mass-spring", np.zeros((10, 1))),
                         ("race-car", np.full((5, 2), [0.1, 0.3]))):
        spec = get_problem(name)
        traj = integrate(spec.model, TAB, spec.grid(values=values), spec.x0, opts)
        slid = False
        for s in traj.steps:
            if s.phase is Phase.SLIDING:
                slid = True
                worst_main = max(worst_main, abs(spec.model.g(s.x)[0]),
                                 abs(spec.model.g(s.x_end)[0]))
                for i in range(3):
                    worst_stage = max(worst_stage, abs(spec.model.g(s.stages_x[i])[0]))
        assert slid, f"{name} run contains no sliding segment"
    ok = worst_main <= 1e-8 and worst_stage <= 1e-10
    _report(4, "surface tracking", ok,
            f"max |g(x_k)| {worst_main:.2e} (<=1e-8), max stage |g| {worst_stage:.2e} (<=1e-10)")


def test_criterion_5_adjoint_algebraic_constraint():
    opts = IntegratorOptions(n_steps=100)
    worst_stage = 0.0
    worst_res = 0.0
    for name, values, phi in (
        ("mass-spring", np.zeros((10, 1)), np.array([1.0, 0.7, -0.2])),
        ("race-car", np.full((5, 2), [0.0, 0.3]), np.array([1.0, 0.3, -0.2, 0.5, 0.1])),
    ):
        spec = get_problem(name)
        traj = integrate(spec.model, TAB, spec.grid(values=values), spec.x0, opts)
        adj = backward_sweep(spec.model, TAB, traj, phi)
        for k, s in enumerate(traj.steps):
            if s.phase is Phase.SLIDING:
                Lf = adj.stages_f[k]
                for i in range(3):
                    worst_stage = max(worst_stage, abs((spec.model.g_x(s.stages_x[i]) @ Lf[i])[0]))
        assert traj.terminal_phase is Phase.SLIDING
        _, _, _, res = terminal_conditions(
            spec.model, traj.x_end, traj.z_end, traj.steps[-1].u, phi, sliding=True
        )
        worst_res = max(worst_res, res)
    ok = worst_stage <= 1e-8 and worst_res <= 1e-10
    _report(5, "adjoint algebraic constraint", ok,
            f"max |g_x lam_fi| {worst_stage:.2e} (<=1e-8), terminal residual {worst_res:.2e} (<=1e-10)")


def test_criterion_6_mass_spring_end_to_end(mass_spring_solution):
    spec, res = mass_spring_solution
    traj = res.final.extra
    slides = traj.phase_spans(Phase.SLIDING)
    constraint = abs(res.final.c_eq[0])
    ok = (res.converged and constraint <= 1e-6 and np.abs(res.u).max() <= 2.5 + 1e-12
          and len(slides) > 0)
    _report(6, "mass-spring end-to-end", ok,
            f"{res.status} in {res.iterations} iters, |x1(tf)-0.6| {constraint:.2e}, "
            f"|u|max {np.abs(res.u).max():.3f}, sliding spans {[(round(a, 3), round(b, 3)) for a, b in slides]}")


def test_criterion_7_race_car_end_to_end(race_car_solution):
    spec, res = race_car_solution
    traj = res.final.extra
    u = res.u.reshape(-1, 2)
    c = np.abs(res.final.c_eq)
    slides = traj.phase_spans(Phase.SLIDING)
    slides_near_end = bool(slides) and abs(slides[-1][1] - spec.tf) < 1e-9
    ok = (res.converged and c.max() <= 1e-6
          and np.abs(u[:, 0]).max() <= 0.3 + 1e-12 and np.abs(u[:, 1]).max() <= 1.0 + 1e-12
          and slides_near_end)
    _report(7, "race-car end-to-end", ok,
            f"{res.status} in {res.iterations} iters, max endpoint violation {c.max():.2e}, "
            f"sliding spans {[(round(a, 3), round(b, 3)) for a, b in slides]}")


def test_criterion_8_switching_time_accuracy():
    spec = get_problem("crossing-osc")
    rep = switching_time_study(spec, [10, 20, 40, 80, 160])
    q = rep.quantities[0]
    ok = q.slope >= 3.5 and q.monotone
    _report(8, "switching-time accuracy", ok,
            f"slope {q.slope:.2f} (>=3.5), errors {[f'{e:.1e}' for e in q.errors]}")
