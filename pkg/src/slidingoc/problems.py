"""Benchmark and oracle problems.

Each problem ships as a :class:`ProblemSpec`: a hybrid model, a control
parameterization template, the endpoint objective and constraints, and a
provenance tag for every numeric parameter (``"paper"`` for values stated in
the source problem descriptions, ``"default"`` for repo-chosen values).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .errors import ProblemLookupError
from .model import ControlGrid, HybridModel

Array = np.ndarray


@dataclass(frozen=True)
class Functional:
    """Endpoint functional ``phi(x(tf))`` with its gradient."""

    name: str
    value: Callable[[Array], float]
    grad: Callable[[Array], Array]
    kind: str = "objective"  # objective | eq | ineq


@dataclass(frozen=True)
class ProblemSpec:
    """One optimal control problem instance."""

    name: str
    model: HybridModel
    t0: float
    tf: float
    x0: Array
    n_controls: int
    n_steps: int
    u_min: Array
    u_max: Array
    objective: Functional
    eq_constraints: tuple = ()
    ineq_constraints: tuple = ()
    provenance: Mapping[str, str] = field(default_factory=dict)
    reference: Mapping[str, float] = field(default_factory=dict)

    def grid(self, values=None, n_controls: Optional[int] = None) -> ControlGrid:
        """Uniform control grid; zero (clipped) values when none are given."""
        n_u = len(np.atleast_1d(self.u_min))
        if values is not None:
            values = np.asarray(values, dtype=float)
            N = n_controls or (values.size // n_u)
        else:
            N = n_controls or self.n_controls
            values = np.clip(np.zeros((N, n_u)), self.u_min, self.u_max)
        values = np.asarray(values, dtype=float).reshape(N, n_u)
        return ControlGrid.uniform(N, self.t0, self.tf, values, self.u_min, self.u_max)

    def functionals(self) -> tuple:
        return (self.objective,) + tuple(self.eq_constraints) + tuple(self.ineq_constraints)


# ---------------------------------------------------------------------------
# mass on a moving belt with dry friction
# ---------------------------------------------------------------------------


def mass_spring() -> ProblemSpec:
    """Mass-spring system riding a belt with Coulomb-Stribeck friction.

    State ``(position, velocity, force integrator)``; scalar control feeds
    the third state.  The surface is ``velocity - v_belt = 0``; sticking is
    the sliding mode, admissible while the friction force stays within its
    static bound.  Physical parameters are repo defaults, chosen so the
    position target is reachable and the optimal trajectory ends stuck on
    the belt: the mass starts faster than the belt and is braked onto it.
    """
    fhat = 1.0  # static friction bound / mass
    delta = 3.0
    v_belt = 0.2
    spring = 1.0

    def fric1(x):  # slip with velocity below the belt
        return fhat / (1.0 + delta * (v_belt - x[1]))

    def fric2(x):  # slip with velocity above the belt
        return fhat / (1.0 + delta * (x[1] - v_belt))

    def f1(x, u):
        return np.array([x[1], -spring * x[0] + fric1(x) + x[2], u[0]])

    def f1_x(x, u):
        d = delta * fhat / (1.0 + delta * (v_belt - x[1])) ** 2
        return np.array([[0.0, 1.0, 0.0], [-spring, d, 1.0], [0.0, 0.0, 0.0]])

    def f2(x, u):
        return np.array([x[1], -spring * x[0] - fric2(x) + x[2], u[0]])

    def f2_x(x, u):
        d = delta * fhat / (1.0 + delta * (x[1] - v_belt)) ** 2
        return np.array([[0.0, 1.0, 0.0], [-spring, d, 1.0], [0.0, 0.0, 0.0]])

    def f_slide(x, u):
        return np.array([x[1], -spring * x[0] + x[2], u[0]])

    def f_slide_x(x, u):
        return np.array([[0.0, 1.0, 0.0], [-spring, 0.0, 1.0], [0.0, 0.0, 0.0]])

    def f_u(x, u):
        return np.array([[0.0], [0.0], [1.0]])

    def g(x):
        return np.array([x[1] - v_belt])

    def g_x(x):
        return np.array([[0.0, 1.0, 0.0]])

    def gxT_z_x(x, z):
        return np.zeros((3, 3))

    def slide_bounds(x, z, u):
        # sticking admissible while |friction| <= static bound
        return np.array([fhat - z[0], z[0] + fhat])

    model = HybridModel(
        n_x=3, n_z=1, n_u=1,
        f1=f1, f1_x=f1_x, f1_u=f_u,
        f2=f2, f2_x=f2_x, f2_u=f_u,
        f_slide=f_slide, f_slide_x=f_slide_x, f_slide_u=f_u,
        g=g, g_x=g_x, gxT_z_x=gxT_z_x,
        slide_bounds=slide_bounds,
        name="mass-spring",
    )
    return ProblemSpec(
        name="mass-spring",
        model=model,
        t0=0.0,
        tf=1.0,
        x0=np.array([0.0, 1.0, 0.0]),
        n_controls=100,
        n_steps=100,
        u_min=np.array([-2.5]),
        u_max=np.array([2.5]),
        objective=Functional("x2_tf", lambda x: float(x[1]), lambda x: np.array([0.0, 1.0, 0.0])),
        eq_constraints=(
            Functional("x1_target", lambda x: float(x[0] - 0.6), lambda x: np.array([1.0, 0.0, 0.0]), "eq"),
        ),
        provenance={
            "tf": "paper", "u_bounds": "paper", "x1_target": "paper", "n_controls": "paper",
            "objective": "paper", "surface": "paper",
            "mass": "default", "spring": "default", "friction_bound": "default",
            "stribeck_delta": "default", "belt_velocity": "default", "x0": "default",
            "n_steps": "default",
        },
        reference={"slides_before_tf": 1.0},
    )


# ---------------------------------------------------------------------------
# planar race car with lateral dry friction
# ---------------------------------------------------------------------------


def race_car() -> ProblemSpec:
    """Planar car steered by acceleration and steering-rate controls.

    State ``(x1, x2, v1, v2, theta)``; the surface is the lateral velocity
    ``n(theta)^T v``; off the surface the car drifts under a constant-magnitude
    lateral friction force, on it the heading tracks the velocity direction.
    """
    mu_n = 0.5

    def tvec(th):
        return np.array([np.cos(th), np.sin(th)])

    def nvec(th):
        return np.array([-np.sin(th), np.cos(th)])

    def _field(x, u, fric):
        th = x[4]
        t, n = tvec(th), nvec(th)
        v = x[2:4]
        acc = u[0] * t + fric * n
        return np.array([v[0], v[1], acc[0], acc[1], u[1] * (t @ v)])

    def _field_x(x, u, fric):
        th = x[4]
        sin, cos = np.sin(th), np.cos(th)
        v1, v2 = x[2], x[3]
        J = np.zeros((5, 5))
        J[0, 2] = 1.0
        J[1, 3] = 1.0
        J[2, 4] = -u[0] * sin - fric * cos
        J[3, 4] = u[0] * cos - fric * sin
        J[4, 2] = u[1] * cos
        J[4, 3] = u[1] * sin
        J[4, 4] = u[1] * (-v1 * sin + v2 * cos)
        return J

    def f1(x, u):  # region 1: n^T v < 0, friction pushes the lateral velocity up
        return _field(x, u, mu_n)

    def f1_x(x, u):
        return _field_x(x, u, mu_n)

    def f2(x, u):
        return _field(x, u, -mu_n)

    def f2_x(x, u):
        return _field_x(x, u, -mu_n)

    def f_slide(x, u):
        return _field(x, u, 0.0)

    def f_slide_x(x, u):
        return _field_x(x, u, 0.0)

    def f_u(x, u):
        th = x[4]
        v = x[2:4]
        B = np.zeros((5, 2))
        B[2, 0] = np.cos(th)
        B[3, 0] = np.sin(th)
        B[4, 1] = tvec(th) @ v
        return B

    def g(x):
        return np.array([-x[2] * np.sin(x[4]) + x[3] * np.cos(x[4])])

    def g_x(x):
        th = x[4]
        return np.array([[0.0, 0.0, -np.sin(th), np.cos(th), -(x[2] * np.cos(th) + x[3] * np.sin(th))]])

    def gxT_z_x(x, z):
        th = x[4]
        sin, cos = np.sin(th), np.cos(th)
        H = np.zeros((5, 5))
        H[2, 4] = H[4, 2] = -cos
        H[3, 4] = H[4, 3] = -sin
        H[4, 4] = x[2] * sin - x[3] * cos
        return z[0] * H

    def slide_bounds(x, z, u):
        tv = tvec(x[4]) @ x[2:4]
        lever = u[1] * tv * tv
        return np.array([mu_n + lever, mu_n - lever])

    model = HybridModel(
        n_x=5, n_z=1, n_u=2,
        f1=f1, f1_x=f1_x, f1_u=f_u,
        f2=f2, f2_x=f2_x, f2_u=f_u,
        f_slide=f_slide, f_slide_x=f_slide_x, f_slide_u=f_u,
        g=g, g_x=g_x, gxT_z_x=gxT_z_x,
        slide_bounds=slide_bounds,
        name="race-car",
    )
    e = np.eye(5)
    return ProblemSpec(
        name="race-car",
        model=model,
        t0=0.0,
        tf=3.0,
        x0=np.array([0.0, 1.0, 1.0, 0.0, 0.0]),
        n_controls=10,
        n_steps=150,
        u_min=np.array([-0.3, -1.0]),
        u_max=np.array([0.3, 1.0]),
        objective=Functional("x1_tf", lambda x: float(x[0]), lambda x: e[0].copy()),
        eq_constraints=(
            Functional("x2_tf", lambda x: float(x[1]), lambda x: e[1].copy(), "eq"),
            Functional("v2_tf", lambda x: float(x[3]), lambda x: e[3].copy(), "eq"),
            Functional("theta_tf", lambda x: float(x[4]), lambda x: e[4].copy(), "eq"),
        ),
        ineq_constraints=(
            Functional("v1_forward", lambda x: float(-x[2]), lambda x: -e[2].copy(), "ineq"),
        ),
        provenance={
            "tf": "paper", "friction": "paper", "x0_position": "paper", "v0": "paper",
            "n_controls": "paper", "u_bounds": "paper", "objective": "paper",
            "constraints": "paper", "theta0": "default", "n_steps": "default",
        },
        reference={"slides_near_tf": 1.0},
    )


# ---------------------------------------------------------------------------
# analytic oracle problems (no surface interaction)
# ---------------------------------------------------------------------------


def _far_surface(n_x):
    def g(x):
        return np.array([x[0] - 1e3])

    def g_x(x):
        row = np.zeros((1, n_x))
        row[0, 0] = 1.0
        return row

    def gxT_z_x(x, z):
        return np.zeros((n_x, n_x))

    return g, g_x, gxT_z_x


def analytic_linear(decay: float = 1.0) -> ProblemSpec:
    """Scalar ``x' = -decay * x + u`` with closed-form trajectory and gradient."""

    def f(x, u):
        return np.array([-decay * x[0] + u[0]])

    def f_x(x, u):
        return np.array([[-decay]])

    def f_u(x, u):
        return np.array([[1.0]])

    g, g_x, gxT_z_x = _far_surface(1)
    model = HybridModel(
        n_x=1, n_z=1, n_u=1,
        f1=f, f1_x=f_x, f1_u=f_u,
        f2=f, f2_x=f_x, f2_u=f_u,
        f_slide=f, f_slide_x=f_x, f_slide_u=f_u,
        g=g, g_x=g_x, gxT_z_x=gxT_z_x,
        name="analytic-linear",
    )
    return ProblemSpec(
        name="analytic-linear",
        model=model,
        t0=0.0,
        tf=1.0,
        x0=np.array([1.0]),
        n_controls=20,
        n_steps=100,
        u_min=np.array([-5.0]),
        u_max=np.array([5.0]),
        objective=Functional("x_tf", lambda x: float(x[0]), lambda x: np.array([1.0])),
        provenance={"all": "default"},
        reference={"decay": decay},
    )


def analytic_linear_solution(spec: ProblemSpec, grid: ControlGrid):
    """Closed-form ``x(tf)`` and gradient for :func:`analytic_linear`."""
    lam = spec.reference["decay"]
    t0, tf = grid.t0, grid.tf
    x = spec.x0[0] * np.exp(-lam * (tf - t0))
    grad = np.zeros(grid.n_intervals)
    for n in range(grid.n_intervals):
        a, b = grid.boundaries[n], grid.boundaries[n + 1]
        w = (np.exp(-lam * (tf - b)) - np.exp(-lam * (tf - a))) / lam
        x += grid.values[n, 0] * w
        grad[n] = w
    return float(x), grad


def analytic_oscillator(omega: float = 25.0) -> ProblemSpec:
    """Planar rotation ``x' = omega J x + B u`` with closed forms.

    The large frequency keeps discretization errors well above the round-off
    floor on the mesh range used by the order studies.
    """

    def f(x, u):
        return np.array([omega * x[1] + u[0], -omega * x[0]])

    def f_x(x, u):
        return np.array([[0.0, omega], [-omega, 0.0]])

    def f_u(x, u):
        return np.array([[1.0], [0.0]])

    g, g_x, gxT_z_x = _far_surface(2)
    model = HybridModel(
        n_x=2, n_z=1, n_u=1,
        f1=f, f1_x=f_x, f1_u=f_u,
        f2=f, f2_x=f_x, f2_u=f_u,
        f_slide=f, f_slide_x=f_x, f_slide_u=f_u,
        g=g, g_x=g_x, gxT_z_x=gxT_z_x,
        name="analytic-osc",
    )
    return ProblemSpec(
        name="analytic-osc",
        model=model,
        t0=0.0,
        tf=1.0,
        x0=np.array([0.3, 1.0]),
        n_controls=5,
        n_steps=100,
        u_min=np.array([-5.0]),
        u_max=np.array([5.0]),
        objective=Functional("x1_tf", lambda x: float(x[0]), lambda x: np.array([1.0, 0.0])),
        provenance={"all": "default"},
        reference={"omega": omega},
    )


def analytic_oscillator_solution(spec: ProblemSpec, grid: ControlGrid):
    """Closed-form state and objective gradient for :func:`analytic_oscillator`."""
    om = spec.reference["omega"]

    def rot(t):
        return np.array([[np.cos(om * t), np.sin(om * t)], [-np.sin(om * t), np.cos(om * t)]])

    Ainv = np.array([[0.0, -1.0], [1.0, 0.0]]) / om
    tf = grid.tf
    x = rot(tf - grid.t0) @ spec.x0
    grad = np.zeros(grid.n_intervals)
    B = np.array([1.0, 0.0])
    for n in range(grid.n_intervals):
        a, c = grid.boundaries[n], grid.boundaries[n + 1]
        W = Ainv @ (rot(tf - a) - rot(tf - c)) @ B
        x = x + grid.values[n, 0] * W
        grad[n] = W[0]
    return x, grad


# ---------------------------------------------------------------------------
# synthetic hybrid problems for order studies
# ---------------------------------------------------------------------------


def sliding_oscillator(omega: float = 15.0, couple: float = 10.0, bound: float = 50.0) -> ProblemSpec:
    """Synthetic DAE study problem: fast rotation constrained to a curved surface.

    Starts on the surface with strong attractivity and never exits, giving a
    clean sliding-phase order measurement with a nontrivial algebraic
    variable and a genuinely nonlinear surface.
    """
    bend = 0.3

    def f_slide(x, u):
        return np.array([
            -omega * x[2] + u[0] + np.sin(x[1]),
            couple * (x[0] + x[2]) + 0.5 * np.cos(x[0]) + 2.0 * x[1],
            omega * np.tanh(x[0]) + x[1],
        ])

    def f_slide_x(x, u):
        return np.array([
            [0.0, np.cos(x[1]), -omega],
            [couple - 0.5 * np.sin(x[0]), 2.0, couple],
            [omega / np.cosh(x[0]) ** 2, 1.0, 0.0],
        ])

    def f_u(x, u):
        return np.array([[1.0], [0.0], [0.0]])

    def g(x):
        return np.array([x[1] - bend * np.sin(x[0])])

    def g_x(x):
        return np.array([[-bend * np.cos(x[0]), 1.0, 0.0]])

    def gxT_z_x(x, z):
        H = np.zeros((3, 3))
        H[0, 0] = bend * np.sin(x[0])
        return z[0] * H

    def f1(x, u):
        return f_slide(x, u) + bound * g_x(x)[0]

    def f1_x(x, u):
        return f_slide_x(x, u) + gxT_z_x(x, np.array([bound]))

    def f2(x, u):
        return f_slide(x, u) - bound * g_x(x)[0]

    def f2_x(x, u):
        return f_slide_x(x, u) - gxT_z_x(x, np.array([bound]))

    def slide_bounds(x, z, u):
        return np.array([bound - z[0], z[0] + bound])

    model = HybridModel(
        n_x=3, n_z=1, n_u=1,
        f1=f1, f1_x=f1_x, f1_u=f_u,
        f2=f2, f2_x=f2_x, f2_u=f_u,
        f_slide=f_slide, f_slide_x=f_slide_x, f_slide_u=f_u,
        g=g, g_x=g_x, gxT_z_x=gxT_z_x,
        slide_bounds=slide_bounds,
        name="sliding-osc",
    )
    x0 = np.array([1.0, bend * np.sin(1.0), 0.3])
    return ProblemSpec(
        name="sliding-osc",
        model=model,
        t0=0.0,
        tf=1.0,
        x0=x0,
        n_controls=5,
        n_steps=100,
        u_min=np.array([-5.0]),
        u_max=np.array([5.0]),
        objective=Functional("x1_tf", lambda x: float(x[0]), lambda x: np.array([1.0, 0.0, 0.0])),
        provenance={"all": "default"},
    )


def crossing_oscillator(omega: float = 4.0, level: float = 0.95) -> ProblemSpec:
    """Harmonic oscillator crossing a surface at an analytically known time.

    Both regional fields coincide, so the trajectory crosses transversally
    at ``t = asin(level) / omega`` (from ``x = (sin, cos)(omega t)``).
    """

    def f(x, u):
        return np.array([omega * x[1], -omega * x[0]])

    def f_x(x, u):
        return np.array([[0.0, omega], [-omega, 0.0]])

    def f_u(x, u):
        return np.zeros((2, 1))

    def g(x):
        return np.array([x[0] - level])

    def g_x(x):
        return np.array([[1.0, 0.0]])

    def gxT_z_x(x, z):
        return np.zeros((2, 2))

    model = HybridModel(
        n_x=2, n_z=1, n_u=1,
        f1=f, f1_x=f_x, f1_u=f_u,
        f2=f, f2_x=f_x, f2_u=f_u,
        f_slide=f, f_slide_x=f_x, f_slide_u=f_u,
        g=g, g_x=g_x, gxT_z_x=gxT_z_x,
        name="crossing-osc",
    )
    return ProblemSpec(
        name="crossing-osc",
        model=model,
        t0=0.0,
        tf=1.0,
        x0=np.array([0.0, 1.0]),
        n_controls=1,
        n_steps=100,
        u_min=np.array([-1.0]),
        u_max=np.array([1.0]),
        objective=Functional("x1_tf", lambda x: float(x[0]), lambda x: np.array([1.0, 0.0])),
        provenance={"all": "default"},
        reference={"t_cross": float(np.arcsin(level) / omega)},
    )


def kinked_crossing(omega: float = 12.0, zeta: float = 0.5) -> ProblemSpec:
    """Drift into a stiff damped oscillator across a transversal surface.

    Region 1 is a plain double integrator; crossing ``x1 = 0.35`` switches to
    a stiff damped spring centered above the surface, so the trajectory never
    returns.  The field jump at the crossing is large and not aligned with
    ``g_x^T``, giving a nonzero adjoint jump whose discretization error is
    governed by the regular mesh width; used by the jump-convergence studies.
    """
    level = 0.35
    center = 0.8

    def f1(x, u):
        return np.array([x[1], u[0]])

    def f1_x(x, u):
        return np.array([[0.0, 1.0], [0.0, 0.0]])

    def f2(x, u):
        return np.array([x[1], -omega**2 * (x[0] - center) - 2.0 * zeta * omega * x[1] + u[0]])

    def f2_x(x, u):
        return np.array([[0.0, 1.0], [-omega**2, -2.0 * zeta * omega]])

    def f_u(x, u):
        return np.array([[0.0], [1.0]])

    def g(x):
        return np.array([x[0] - level])

    def g_x(x):
        return np.array([[1.0, 0.0]])

    def gxT_z_x(x, z):
        return np.zeros((2, 2))

    model = HybridModel(
        n_x=2, n_z=1, n_u=1,
        f1=f1, f1_x=f1_x, f1_u=f_u,
        f2=f2, f2_x=f2_x, f2_u=f_u,
        f_slide=f1, f_slide_x=f1_x, f_slide_u=f_u,
        g=g, g_x=g_x, gxT_z_x=gxT_z_x,
        name="kinked-crossing",
    )
    return ProblemSpec(
        name="kinked-crossing",
        model=model,
        t0=0.0,
        tf=1.0,
        x0=np.array([0.0, 0.6]),
        n_controls=4,
        n_steps=96,
        u_min=np.array([-2.0]),
        u_max=np.array([2.0]),
        objective=Functional("x1_tf", lambda x: float(x[0]), lambda x: np.array([1.0, 0.0])),
        provenance={"all": "default"},
        reference={"level": level},
    )


_REGISTRY: dict[str, Callable[[], ProblemSpec]] = {
    "mass-spring": mass_spring,
    "race-car": race_car,
    "analytic-linear": analytic_linear,
    "analytic-osc": analytic_oscillator,
    "sliding-osc": sliding_oscillator,
    "crossing-osc": crossing_oscillator,
    "kinked-crossing": kinked_crossing,
}


def problem_names() -> tuple:
    return tuple(sorted(_REGISTRY))


def get_problem(name: str) -> ProblemSpec:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ProblemLookupError(
            f"unknown problem {name!r}; available: {', '.join(problem_names())}"
        ) from None
    return factory()
