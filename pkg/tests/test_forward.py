import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slidingoc.errors import IntegrationError
from slidingoc.forward import (
    IntegratorOptions,
    hermite_interpolant,
    integrate,
    locate_switch,
    step_dae,
    step_ode,
)
from slidingoc.model import HybridModel, Phase, consistent_z
from slidingoc.problems import (
    crossing_oscillator,
    get_problem,
    kinked_crossing,
    sliding_oscillator,
)

OPTS = IntegratorOptions()


def _scalar_model(f, f_x, n_x=1):
    def f_u(x, u):
        return np.zeros((n_x, 1))

    def g(x):
        return np.array([x[0] - 1e3])

    def g_x(x):
        row = np.zeros((1, n_x))
        row[0, 0] = 1.0
        return row

    return HybridModel(
        n_x=n_x, n_z=1, n_u=1,
        f1=f, f1_x=f_x, f1_u=f_u,
        f2=f, f2_x=f_x, f2_u=f_u,
        f_slide=f, f_slide_x=f_x, f_slide_u=f_u,
        g=g, g_x=g_x, gxT_z_x=lambda x, z: np.zeros((n_x, n_x)),
    )


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------


def test_step_ode_zero_field(tab):
    m = _scalar_model(lambda x, u: np.zeros(1), lambda x, u: np.zeros((1, 1)))
    x1, X = step_ode(m, tab, np.array([0.7]), np.zeros(1), 0.1, Phase.REGION1, OPTS)
    assert x1[0] == pytest.approx(0.7, abs=1e-15)
    assert np.allclose(X, 0.7, atol=1e-15)


def test_step_ode_exponential_local_order(tab):
    lam = -1.0
    m = _scalar_model(lambda x, u: lam * x, lambda x, u: np.array([[lam]]))
    h = 0.1
    x1, _ = step_ode(m, tab, np.array([1.0]), np.zeros(1), h, Phase.REGION1, OPTS)
    # one step of the order-5 scheme: local error below C h^6
    assert abs(x1[0] - np.exp(lam * h)) < 5.0 * h**6


def test_step_ode_constant_slope_exact(tab):
    m = _scalar_model(lambda x, u: np.array([u[0]]), lambda x, u: np.zeros((1, 1)))
    x1, _ = step_ode(m, tab, np.array([0.2]), np.array([3.0]), 0.25, Phase.REGION1, OPTS)
    assert x1[0] == pytest.approx(0.2 + 0.25 * 3.0, abs=1e-14)


def test_step_dae_tangent_field_keeps_zero_z(tab):
    # base field parallel to the surface x2 = 0: z stays zero, motion follows it

    def f(x, u):
        return np.array([1.0 + 0.5 * x[0], 0.0, -x[2]])

    def f_x(x, u):
        return np.array([[0.5, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, -1.0]])

    m = HybridModel(
        n_x=3, n_z=1, n_u=1,
        f1=f, f1_x=f_x, f1_u=lambda x, u: np.zeros((3, 1)),
        f2=f, f2_x=f_x, f2_u=lambda x, u: np.zeros((3, 1)),
        f_slide=f, f_slide_x=f_x, f_slide_u=lambda x, u: np.zeros((3, 1)),
        g=lambda x: np.array([x[1]]), g_x=lambda x: np.array([[0.0, 1.0, 0.0]]),
        gxT_z_x=lambda x, z: np.zeros((3, 3)),
    )
    x = np.array([0.4, 0.0, 0.2])
    u = np.zeros(1)
    z = consistent_z(m, x, u)
    assert abs(z[0]) < 1e-14
    x1, z1, X, Z = step_dae(m, tab, x, z, u, 0.05, OPTS)
    assert np.abs(Z).max() < 1e-12
    assert abs(z1[0]) < 1e-12
    assert np.abs([m.g(X[i])[0] for i in range(3)]).max() < 1e-12


def test_step_dae_equilibrium_on_surface(tab):
    # x' = z e, 0 = e^T x, consistent start at the origin stays put
    e = np.array([1.0, 0.0])

    def f(x, u):
        return np.zeros(2)

    m = HybridModel(
        n_x=2, n_z=1, n_u=1,
        f1=f, f1_x=lambda x, u: np.zeros((2, 2)), f1_u=lambda x, u: np.zeros((2, 1)),
        f2=f, f2_x=lambda x, u: np.zeros((2, 2)), f2_u=lambda x, u: np.zeros((2, 1)),
        f_slide=f, f_slide_x=lambda x, u: np.zeros((2, 2)), f_slide_u=lambda x, u: np.zeros((2, 1)),
        g=lambda x: np.array([e @ x]), g_x=lambda x: e[None, :],
        gxT_z_x=lambda x, z: np.zeros((2, 2)),
    )
    x1, z1, X, Z = step_dae(m, tab, np.zeros(2), np.zeros(1), np.zeros(1), 0.1, OPTS)
    assert np.abs(x1).max() < 1e-14
    assert abs(z1[0]) < 1e-14


def test_step_dae_mass_spring_stages_on_surface(tab, mass_spring_spec):
    m = mass_spring_spec.model
    x = np.array([0.3, 0.2, 0.1])
    u = np.array([0.7])
    z = consistent_z(m, x, u)
    x1, z1, X, Z = step_dae(m, tab, x, z, u, 0.01, OPTS)
    # the belt pins the velocity at every stage
    assert np.abs(X[:, 1] - 0.2).max() <= OPTS.newton_tol
    assert abs(x1[1] - 0.2) <= 10 * OPTS.newton_tol


# ---------------------------------------------------------------------------
# dense output and event localization
# ---------------------------------------------------------------------------


def test_hermite_matches_endpoints():
    x0 = np.array([1.0, -2.0])
    x1 = np.array([0.3, 0.4])
    f0 = np.array([0.1, 0.2])
    f1 = np.array([-0.5, 1.0])
    p = hermite_interpolant(x0, f0, x1, f1, 0.2)
    assert np.allclose(p.value(0.0), x0, atol=1e-15)
    assert np.allclose(p.value(1.0), x1, atol=1e-15)
    assert np.allclose(p.derivative(0.0), 0.2 * f0, atol=1e-15)
    assert np.allclose(p.derivative(1.0), 0.2 * f1, atol=1e-15)


@given(st.lists(st.floats(-2.0, 2.0), min_size=4, max_size=4))
@settings(max_examples=40, deadline=None)
def test_hermite_exact_on_cubics(coeffs):
    h = 0.7
    poly = np.polynomial.Polynomial(coeffs)
    dpoly = poly.deriv()

    def x(t):
        return np.array([poly(t)])

    def dx(t):
        return np.array([dpoly(t)])

    p = hermite_interpolant(x(0.0), dx(0.0), x(h), dx(h), h)
    for tau in (1.0 / 3.0, 0.5, 0.81):
        assert p.value(tau)[0] == pytest.approx(poly(tau * h), abs=1e-12)


def test_locate_switch_linear_one_secant_step(tab):
    m = _scalar_model(lambda x, u: np.ones(1), lambda x, u: np.zeros((1, 1)))
    m = dataclasses.replace(m, g=lambda x: np.array([x[0]]), g_x=lambda x: np.array([[1.0]]))
    h = 0.4
    p = hermite_interpolant(np.array([-0.2]), np.array([1.0]), np.array([0.2]), np.array([1.0]), h)
    t_t = locate_switch(m, 1.0, h, p, 1e-12)
    assert t_t == pytest.approx(1.0 + 0.5 * h, abs=1e-14)


def test_locate_switch_synthetic_cubic(tab):
    # cubic with a single root at tau = 0.3 inside the step
    poly = np.polynomial.Polynomial([0, 1]) - 0.3
    poly = poly * (np.polynomial.Polynomial([1.2, 1])) * (np.polynomial.Polynomial([-1.7, 1]))
    dpoly = poly.deriv()
    h = 0.25
    m = _scalar_model(lambda x, u: np.ones(1), lambda x, u: np.zeros((1, 1)))
    m = dataclasses.replace(m, g=lambda x: np.array([x[0]]), g_x=lambda x: np.array([[1.0]]))
    p = hermite_interpolant(
        np.array([poly(0.0)]), np.array([dpoly(0.0) / h]),
        np.array([poly(1.0)]), np.array([dpoly(1.0) / h]), h,
    )
    t_t = locate_switch(m, 0.0, h, p, 1e-13)
    assert abs(p.value((t_t - 0.0) / h)[0]) <= 1e-12
    assert t_t == pytest.approx(0.3 * h, abs=1e-12)


def test_switch_time_perturbation_sensitivity(tab):
    # a state perturbation delta-x at the crossing moves the located time by
    # -(g_x f)^{-1} g_x delta-x to first order
    spec = crossing_oscillator()
    m = spec.model
    omega = 4.0
    grid = spec.grid()
    opts = IntegratorOptions(n_steps=50)
    base = integrate(m, tab, grid, spec.x0, opts)
    t0 = base.transitions[0].t
    delta0 = np.array([1e-6, 0.0])
    shifted = integrate(m, tab, grid, spec.x0 + delta0, opts)
    t1 = shifted.transitions[0].t
    # propagate the initial perturbation to the crossing (closed-form rotation)
    rot = np.array([
        [np.cos(omega * t0), np.sin(omega * t0)],
        [-np.sin(omega * t0), np.cos(omega * t0)],
    ])
    dx_t = rot @ delta0
    x_t = base.steps[base.transitions[0].index].x
    gf = (m.g_x(x_t) @ m.f1(x_t, np.zeros(1)))[0]
    predicted = -(m.g_x(x_t) @ dx_t)[0] / gf
    assert (t1 - t0) == pytest.approx(predicted, rel=2e-3)


# ---------------------------------------------------------------------------
# full integrations
# ---------------------------------------------------------------------------


def test_integrate_no_crossing_zero_transitions(tab):
    spec = get_problem("analytic-linear")
    traj = integrate(spec.model, tab, spec.grid(), spec.x0, IntegratorOptions(n_steps=40))
    assert len(traj.transitions) == 0
    assert all(s.phase is Phase.REGION1 for s in traj.steps)


def test_integrate_mass_spring_sliding_tracks_belt(mass_spring_sliding):
    spec, grid, traj = mass_spring_sliding
    kinds = [t.kind for t in traj.transitions]
    assert "enter-sliding" in kinds
    entry = [t for t in traj.transitions if t.kind == "enter-sliding"][0]
    sliding_pts = [s.x[1] for s in traj.steps if s.phase is Phase.SLIDING]
    assert sliding_pts, "no sliding steps recorded"
    assert np.abs(np.array(sliding_pts) - 0.2).max() <= 1e-9
    assert abs(traj.x_end[1] - 0.2) <= 1e-9
    assert entry.t < traj.tf


def test_integrate_race_car_reaches_and_tracks_surface(tab, race_car_spec):
    spec = race_car_spec
    u = np.array([[0.1, 0.9], [0.0, 0.9], [0.0, 0.2], [-0.1, 0.0]])
    traj = integrate(spec.model, tab, spec.grid(values=u), spec.x0, IntegratorOptions(n_steps=120))
    kinds = [t.kind for t in traj.transitions]
    assert "enter-sliding" in kinds
    g_on_slide = [abs(spec.model.g(s.x)[0]) for s in traj.steps if s.phase is Phase.SLIDING]
    assert max(g_on_slide) <= 1e-8
    assert traj.steps[-1].phase is Phase.SLIDING


def test_integrate_steps_aligned_to_control_boundaries(tab, mass_spring_spec):
    spec = mass_spring_spec
    grid = spec.grid(values=np.zeros((7, 1)))  # boundaries not commensurate with 50 steps
    traj = integrate(spec.model, tab, grid, spec.x0, IntegratorOptions(n_steps=50))
    ends = np.array([s.t_end for s in traj.steps])
    for b in grid.boundaries[1:-1]:
        assert np.min(np.abs(ends - b)) < 1e-12
    # no step straddles a boundary
    for s in traj.steps:
        n0 = grid.interval_of(s.t + 1e-13)
        n1 = grid.interval_of(s.t_end - 1e-13)
        assert n0 == n1 == s.interval


def test_integrate_step_ratio_rule(tab, mass_spring_spec):
    spec = mass_spring_spec
    opts = IntegratorOptions(n_steps=50)
    traj = integrate(spec.model, tab, spec.grid(values=np.zeros((10, 1))), spec.x0, opts)
    h_base = (spec.tf - spec.t0) / 50
    trans_times = {t.t for t in traj.transitions}
    hs = [s.h for s in traj.steps if s.t not in trans_times and s.t_end not in trans_times]
    assert max(hs) <= h_base + 1e-12
    assert min(hs) >= opts.step_ratio_floor * h_base - 1e-12


def test_integrate_deterministic(tab, mass_spring_spec):
    spec = mass_spring_spec
    grid = spec.grid(values=np.full((10, 1), 0.3))
    opts = IntegratorOptions(n_steps=60)
    t1 = integrate(spec.model, tab, grid, spec.x0, opts)
    t2 = integrate(spec.model, tab, grid, spec.x0, opts)
    assert len(t1.steps) == len(t2.steps)
    for a, b in zip(t1.steps, t2.steps):
        assert a.t == b.t and a.h == b.h
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.stages_x, b.stages_x)
    assert np.array_equal(t1.x_end, t2.x_end)


def test_integrate_initial_sliding_from_surface(tab):
    spec = sliding_oscillator()
    traj = integrate(spec.model, tab, spec.grid(), spec.x0, IntegratorOptions(n_steps=50))
    assert all(s.phase is Phase.SLIDING for s in traj.steps)
    assert len(traj.transitions) == 0
    assert traj.z_end is not None


def test_integrate_cross_region_structure(tab):
    spec = kinked_crossing()
    traj = integrate(spec.model, tab, spec.grid(), spec.x0, IntegratorOptions(n_steps=48))
    assert [t.kind for t in traj.transitions] == ["cross-region"]
    tr = traj.transitions[0]
    assert traj.steps[tr.index - 1].phase is Phase.REGION1
    assert traj.steps[tr.index].phase is Phase.REGION2
    # the transition landed on a mesh point of its own making
    assert traj.steps[tr.index - 1].t_end == pytest.approx(tr.t, abs=1e-14)
    x_t = traj.steps[tr.index].x
    assert abs(spec.model.g(x_t)[0]) <= 1e-10


def test_integrate_divergence_guard(tab):
    m = _scalar_model(lambda x, u: np.array([x[0] ** 2]), lambda x, u: np.array([[2 * x[0]]]))
    from slidingoc.model import ControlGrid

    grid = ControlGrid.uniform(1, 0.0, 2.0, np.zeros((1, 1)), [-1.0], [1.0])
    with pytest.raises(IntegrationError):
        integrate(m, tab, grid, np.array([2.0]), IntegratorOptions(n_steps=50))


def test_newton_failure_recovers_by_halving(tab):
    # a tight iteration cap fails at the base step; halved fragments succeed
    def f(x, u):
        return np.array([np.sin(8 * x[0]) * 4 - x[0]])

    def f_x(x, u):
        return np.array([[32 * np.cos(8 * x[0]) - 1]])

    m = _scalar_model(f, f_x)
    from slidingoc.model import ControlGrid

    grid = ControlGrid.uniform(1, 0.0, 1.0, np.zeros((1, 1)), [-1.0], [1.0])
    traj = integrate(m, tab, grid, np.array([0.2]), IntegratorOptions(n_steps=4, newton_maxiter=3))
    assert len(traj.steps) > 4  # halving happened
    ref = integrate(m, tab, grid, np.array([0.2]), IntegratorOptions(n_steps=256))
    assert abs(traj.x_end[0] - ref.x_end[0]) < 1e-7


def test_newton_failure_exhausts_to_error(tab):
    def f(x, u):
        return np.array([np.sin(8 * x[0]) * 4 - x[0]])

    def f_x(x, u):
        return np.array([[32 * np.cos(8 * x[0]) - 1]])

    m = _scalar_model(f, f_x)
    from slidingoc.model import ControlGrid

    grid = ControlGrid.uniform(1, 0.0, 1.0, np.zeros((1, 1)), [-1.0], [1.0])
    with pytest.raises(IntegrationError):
        integrate(m, tab, grid, np.array([0.2]), IntegratorOptions(n_steps=4, newton_maxiter=1))


def test_trajectory_csv_roundtrip(tmp_path, mass_spring_sliding):
    from slidingoc.forward import write_trajectory_csv

    spec, grid, traj = mass_spring_sliding
    path = tmp_path / "traj.csv"
    write_trajectory_csv(traj, path)
    text = path.read_text()
    assert text.endswith("\n") and "\r" not in text
    lines = text.splitlines()
    assert lines[0] == "t,phase,x0,x1,x2,z0,u0"
    assert len(lines) == len(traj.steps) + 2
    assert any(",sliding," in ln for ln in lines)
    data = np.genfromtxt(path, delimiter=",", skip_header=1, usecols=(0, 2, 3, 4))
    assert np.all(np.diff(data[:, 0]) >= 0)
