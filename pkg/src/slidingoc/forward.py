"""Forward integration of hybrid trajectories.

ODE phases and sliding DAE phases are both advanced with the 3-stage
Radau IIA scheme; stage systems are solved by full Newton with analytic
Jacobians.  Surface crossings are detected by endpoint sign checks, localized
on a cubic Hermite interpolant with a secant/bisection root solve, and the
offending step is re-taken so the transition lands on a mesh point.  All
stage data is recorded for the backward sweep.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import IntegrationError, StepFailure
from .model import (
    ControlGrid,
    HybridModel,
    Phase,
    attractivity,
    consistent_z,
    is_attractive,
    slide_admissible,
    sliding_rhs,
    sliding_rhs_x,
)
from .tableau import Tableau

_TINY = 1e-14


@dataclass(frozen=True)
class IntegratorOptions:
    """Tolerances and mesh controls for one integration.

    ``n_steps`` is the base step count over the horizon; steps are split at
    control-interval boundaries and at localized transitions.  Fragments
    shorter than ``step_ratio_floor`` times the base step are merged into
    the following step unless they end at a control boundary.
    """

    n_steps: int = 100
    newton_tol: float = 1e-12
    newton_maxiter: int = 25
    surface_tol: float = 1e-9
    root_tol: float = 1e-12
    step_ratio_floor: float = 0.1
    max_retake: int = 8
    max_accepted_steps: int = 0  # 0: derived from n_steps
    state_bound: float = 1e12

    def accepted_cap(self) -> int:
        return self.max_accepted_steps or (50 * self.n_steps + 1000)


class TransitionKind:
    ENTER_SLIDING = "enter-sliding"
    LEAVE_SLIDING = "leave-sliding"
    CROSS_REGION = "cross-region"


@dataclass(frozen=True)
class StepRecord:
    """One accepted integration step with its stage data."""

    k: int
    t: float
    h: float
    phase: Phase
    interval: int
    u: np.ndarray
    x: np.ndarray
    z: Optional[np.ndarray]
    stages_x: np.ndarray
    stages_z: Optional[np.ndarray]
    x_end: np.ndarray
    z_end: Optional[np.ndarray]

    @property
    def t_end(self) -> float:
        return self.t + self.h


@dataclass(frozen=True)
class TransitionRecord:
    """Phase change located at ``t``; ``index`` is the post-transition step."""

    index: int
    t: float
    kind: str
    pre_phase: Phase
    post_phase: Phase


@dataclass(frozen=True)
class TrajectoryRecord:
    """Complete forward trajectory: steps, transitions, terminal state."""

    steps: tuple
    transitions: tuple
    grid: ControlGrid
    x_end: np.ndarray
    z_end: Optional[np.ndarray]

    @property
    def t0(self) -> float:
        return self.steps[0].t

    @property
    def tf(self) -> float:
        return self.steps[-1].t_end

    @property
    def terminal_phase(self) -> Phase:
        return self.steps[-1].phase

    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.steps] + [self.tf])

    def states(self) -> np.ndarray:
        return np.vstack([s.x for s in self.steps] + [self.x_end])

    def phase_spans(self, phase: Phase):
        """(t_start, t_end) spans of maximal segments in ``phase``."""
        spans = []
        start = None
        for s in self.steps:
            if s.phase is phase and start is None:
                start = s.t
            elif s.phase is not phase and start is not None:
                spans.append((start, s.t))
                start = None
        if start is not None:
            spans.append((start, self.tf))
        return spans


# ---------------------------------------------------------------------------
# stage systems
# ---------------------------------------------------------------------------


def _ode_stage_matrix(tab: Tableau, fx: Sequence[np.ndarray], h: float) -> np.ndarray:
    s = tab.s
    n = fx[0].shape[0]
    J = np.zeros((s * n, s * n))
    for i in range(s):
        for j in range(s):
            blk = -h * tab.A[i, j] * fx[j]
            if i == j:
                blk = blk + np.eye(n)
            J[i * n : (i + 1) * n, j * n : (j + 1) * n] = blk
    return J


def step_ode(model, tab, x, u, h, phase, opts) -> tuple[np.ndarray, np.ndarray]:
    """One Radau IIA step of ``x' = f(x, u)`` with the regional field.

    Returns ``(x_end, stages)`` where ``stages`` has shape ``(s, n_x)``.
    Raises ``StepFailure`` if Newton does not reach ``opts.newton_tol``.
    """
    f, f_x, _ = model.region_field(phase)
    s, n = tab.s, model.n_x
    X = np.tile(x, (s, 1))
    for _ in range(opts.newton_maxiter):
        fs = [f(X[j], u) for j in range(s)]
        F = np.concatenate([X[i] - x - h * sum(tab.A[i, j] * fs[j] for j in range(s)) for i in range(s)])
        if np.abs(F).max() <= opts.newton_tol:
            break
        fx = [f_x(X[j], u) for j in range(s)]
        J = _ode_stage_matrix(tab, fx, h)
        try:
            d = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise StepFailure(f"singular ODE stage system at t-step h={h:g}") from exc
        X = X + d.reshape(s, n)
    else:
        raise StepFailure(f"ODE stage Newton stalled (h={h:g}, residual {np.abs(F).max():.3e})")
    fs = [f(X[i], u) for i in range(s)]
    x_end = x + h * sum(tab.b[i] * fs[i] for i in range(s))
    return x_end, X


def _dae_stage_matrix(model, tab, X, Z, u, h) -> np.ndarray:
    """Jacobian of the stacked DAE stage residual (rows ordered x_i then -g_i)."""
    s, n, m = tab.s, model.n_x, model.n_z
    w = n + m
    J = np.zeros((s * w, s * w))
    fx = [sliding_rhs_x(model, X[j], Z[j], u) for j in range(s)]
    fz = [model.g_x(X[j]).T for j in range(s)]
    gx = [model.g_x(X[j]) for j in range(s)]
    for i in range(s):
        rx = slice(i * w, i * w + n)
        rz = slice(i * w + n, (i + 1) * w)
        for j in range(s):
            cx = slice(j * w, j * w + n)
            cz = slice(j * w + n, (j + 1) * w)
            blk = -h * tab.A[i, j] * fx[j]
            if i == j:
                blk = blk + np.eye(n)
            J[rx, cx] = blk
            J[rx, cz] = -h * tab.A[i, j] * fz[j]
        J[rz, slice(i * w, i * w + n)] = -gx[i]
    return J


def step_dae(model, tab, x, z, u, h, opts):
    """One Radau IIA step of the sliding DAE.

    Solves the coupled stage system for ``(X_i, Z_i)`` by full Newton on the
    stacked residual, then forms the main updates.  ``z`` enters only the
    algebraic main update, not the stage system.

    Returns ``(x_end, z_end, stages_x, stages_z)``.
    """
    s, n, m = tab.s, model.n_x, model.n_z
    w = n + m
    X = np.tile(x, (s, 1))
    Z = np.tile(z, (s, 1))
    for _ in range(opts.newton_maxiter):
        fs = [sliding_rhs(model, X[j], Z[j], u) for j in range(s)]
        F = np.zeros(s * w)
        for i in range(s):
            F[i * w : i * w + n] = X[i] - x - h * sum(tab.A[i, j] * fs[j] for j in range(s))
            F[i * w + n : (i + 1) * w] = -model.g(X[i])
        if np.abs(F).max() <= opts.newton_tol:
            break
        J = _dae_stage_matrix(model, tab, X, Z, u, h)
        try:
            d = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise StepFailure(f"singular DAE stage system (h={h:g})") from exc
        d = d.reshape(s, w)
        X = X + d[:, :n]
        Z = Z + d[:, n:]
    else:
        raise StepFailure(f"DAE stage Newton stalled (h={h:g}, residual {np.abs(F).max():.3e})")
    fs = [sliding_rhs(model, X[i], Z[i], u) for i in range(s)]
    x_end = x + h * sum(tab.b[i] * fs[i] for i in range(s))
    z_end = z + sum(tab.b_minus[i] * (Z[i] - z) for i in range(s))
    return x_end, z_end, X, Z


# ---------------------------------------------------------------------------
# dense output and event localization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HermiteCubic:
    """Cubic Hermite interpolant on the scaled variable ``tau in [0, 1]``.

    Matches value and (scaled) derivative at both step ends:
    ``p(0) = x0``, ``p(1) = x1``, ``p'(0) = h f0``, ``p'(1) = h f1``.
    """

    x0: np.ndarray
    f0: np.ndarray
    x1: np.ndarray
    f1: np.ndarray
    h: float

    def value(self, tau: float) -> np.ndarray:
        t2 = tau * tau
        t3 = t2 * tau
        return (
            (2 * t3 - 3 * t2 + 1) * self.x0
            + self.h * (t3 - 2 * t2 + tau) * self.f0
            + (-2 * t3 + 3 * t2) * self.x1
            + self.h * (t3 - t2) * self.f1
        )

    def derivative(self, tau: float) -> np.ndarray:
        """Derivative with respect to ``tau`` (scale by ``1/h`` for d/dt)."""
        t2 = tau * tau
        return (
            (6 * t2 - 6 * tau) * self.x0
            + self.h * (3 * t2 - 4 * tau + 1) * self.f0
            + (-6 * t2 + 6 * tau) * self.x1
            + self.h * (3 * t2 - 2 * tau) * self.f1
        )

    __call__ = value


def hermite_interpolant(x0, f0, x1, f1, h) -> HermiteCubic:
    """Cubic Hermite dense output for one step (exact on cubics)."""
    return HermiteCubic(
        np.asarray(x0, float), np.asarray(f0, float), np.asarray(x1, float), np.asarray(f1, float), float(h)
    )


def _first_bracket(phi: Callable[[float], float], grid: np.ndarray):
    """Earliest sign-change subinterval of ``phi`` over ``grid`` values."""
    vals = [phi(t) for t in grid]
    for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if fa == 0.0 and abs(a - grid[0]) > 0:
            return a, a, fa, fa
        if fa * fb < 0.0 or fb == 0.0:
            return a, b, fa, fb
    return None


def _secant_bisect(phi, a, b, fa, fb, tol, maxit=80):
    """Root of ``phi`` in [a, b] by secant steps with a bisection safeguard."""
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    lo, hi, flo, fhi = a, b, fa, fb
    t0, t1, f0, f1 = a, b, fa, fb
    for _ in range(maxit):
        if f1 != f0:
            t2 = t1 - f1 * (t1 - t0) / (f1 - f0)
        else:
            t2 = 0.5 * (lo + hi)
        if not (lo <= t2 <= hi):
            t2 = 0.5 * (lo + hi)
        f2 = phi(t2)
        if abs(f2) <= tol or hi - lo <= _TINY * max(1.0, abs(hi)):
            return t2
        if flo * f2 < 0.0:
            hi, fhi = t2, f2
        else:
            lo, flo = t2, f2
        t0, f0, t1, f1 = t1, f1, t2, f2
    return 0.5 * (lo + hi)


def locate_switch(model, t, h, interp: HermiteCubic, root_tol: float) -> float:
    """Earliest time in ``[t, t + h]`` with ``g`` vanishing on the interpolant.

    Requires a sign change of ``g`` along the interpolant (precondition);
    raises ``IntegrationError`` otherwise.
    """

    def phi(tau: float) -> float:
        return float(model.g(interp.value(tau))[0])

    scan = np.concatenate(([0.0], 0.5 - 0.5 * np.cos(np.linspace(0.0, np.pi, 9))[1:]))
    br = _first_bracket(phi, scan)
    if br is None:
        raise IntegrationError("locate_switch: no sign change on the interpolant")
    a, b, fa, fb = br
    tau = a if a == b else _secant_bisect(phi, a, b, fa, fb, root_tol)
    return t + tau * h


def _lagrange_weights(nodes: np.ndarray, tau: float) -> np.ndarray:
    w = np.ones(len(nodes))
    for i, ni in enumerate(nodes):
        for j, nj in enumerate(nodes):
            if i != j:
                w[i] *= (tau - nj) / (ni - nj)
    return w


# ---------------------------------------------------------------------------
# hybrid integration driver
# ---------------------------------------------------------------------------


def _build_mesh(grid: ControlGrid, n_steps: int):
    """Mesh points covering the horizon, split at control boundaries.

    Each control interval gets an integer number of equal steps no longer
    than the base step; returns ``(points, hard_flags, h_base)`` where hard
    points are control boundaries (never merged away).
    """
    t0, tf = grid.t0, grid.tf
    h_base = (tf - t0) / n_steps
    pts = [t0]
    hard = [True]
    for n in range(grid.n_intervals):
        a, b = grid.boundaries[n], grid.boundaries[n + 1]
        m = max(1, int(np.ceil((b - a) / h_base - 1e-12)))
        for j in range(1, m + 1):
            pts.append(a + (b - a) * j / m)
            hard.append(j == m)
    return np.array(pts), np.array(hard), h_base


def _initial_phase(model, x0, u, opts):
    gv = float(model.g(x0)[0])
    if abs(gv) <= opts.surface_tol:
        if is_attractive(model, x0, u):
            return Phase.SLIDING, consistent_z(model, x0, u)
        s1, s2 = attractivity(model, x0, u)
        return (Phase.REGION1 if -s1 >= s2 else Phase.REGION2), None
    return (Phase.REGION1 if gv < 0 else Phase.REGION2), None


def _exit_region(model, x, u) -> Phase:
    """Region whose field carries the state off the surface consistently."""
    s1, s2 = attractivity(model, x, u)
    return Phase.REGION1 if -s1 >= s2 else Phase.REGION2


def _crossed(phase: Phase, g_end: float) -> bool:
    if phase is Phase.REGION1:
        return g_end > 0.0
    return g_end < 0.0


def integrate(model: HybridModel, tab: Tableau, grid: ControlGrid, x0, opts: IntegratorOptions) -> TrajectoryRecord:
    """Integrate the hybrid trajectory over the control horizon.

    Steps are split at control boundaries; detected surface crossings and
    sliding exits are localized and the step re-taken so transitions land on
    mesh points; sliding entries initialize ``z`` from ``consistent_z``.
    """
    x0 = np.asarray(x0, dtype=float)
    mesh, hard, h_base = _build_mesh(grid, opts.n_steps)
    floor = opts.step_ratio_floor * h_base

    steps: list[StepRecord] = []
    transitions: list[TransitionRecord] = []

    t = grid.t0
    x = x0.copy()
    phase, z = _initial_phase(model, x0, grid.value(grid.interval_of(t + 0.5 * h_base)), opts)
    idx = 1
    pending: list[float] = []  # LIFO of Newton-bisection sub-targets
    interval = grid.interval_of(t + 0.5 * min(h_base, mesh[idx] - t))

    while idx < len(mesh):
        if len(steps) > opts.accepted_cap() or len(transitions) > opts.accepted_cap():
            raise IntegrationError("step count exceeded; integration diverged")
        target = pending[-1] if pending else float(mesh[idx])
        if target - t <= _TINY * max(1.0, abs(target)):
            if pending:
                pending.pop()
            else:
                idx += 1
            continue
        h = target - t
        new_interval = grid.interval_of(t + 0.5 * h)
        if new_interval != interval or not steps:
            interval = new_interval
            u = grid.value(interval)
            # control jumps can end sliding admissibility at the boundary
            if phase is Phase.SLIDING:
                z = consistent_z(model, x, u)
                if not slide_admissible(model, x, z, u):
                    post = _exit_region(model, x, u)
                    transitions.append(
                        TransitionRecord(len(steps), t, TransitionKind.LEAVE_SLIDING, Phase.SLIDING, post)
                    )
                    phase, z = post, None
        u = grid.value(interval)

        if phase is Phase.SLIDING:
            try:
                x1, z1, X, Z = step_dae(model, tab, x, z, u, h, opts)
            except StepFailure:
                if h <= 1e-3 * floor:
                    raise IntegrationError(f"DAE step failure at t={t:g} with h={h:g}")
                pending.append(t + 0.5 * h)
                continue
            exit_t = _detect_slide_exit(model, tab, t, h, x, z, u, x1, z1, X, Z, opts)
            if exit_t is not None:
                x, z, t = _retake_slide_exit(model, tab, steps, transitions, t, h, x, z, u, exit_t, opts, interval)
                phase = transitions[-1].post_phase
                z = None
                if not pending and float(mesh[idx]) - t < floor and not hard[idx] and idx + 1 < len(mesh):
                    idx += 1
                continue
            steps.append(StepRecord(len(steps), t, h, phase, interval, u, x, z, X, Z, x1, z1))
            x, z, t = x1, z1, target
        else:
            try:
                x1, X = step_ode(model, tab, x, u, h, phase, opts)
            except StepFailure:
                if h <= 1e-3 * floor:
                    raise IntegrationError(f"ODE step failure at t={t:g} with h={h:g}")
                pending.append(t + 0.5 * h)
                continue
            g_end = float(model.g(x1)[0])
            if _crossed(phase, g_end):
                g_start = float(model.g(x)[0])
                if abs(g_start) <= max(opts.root_tol, 32.0 * _TINY) and steps:
                    # crossing fell exactly on the previous mesh point
                    if is_attractive(model, x, u):
                        kind, post = TransitionKind.ENTER_SLIDING, Phase.SLIDING
                    else:
                        kind = TransitionKind.CROSS_REGION
                        post = Phase.REGION2 if phase is Phase.REGION1 else Phase.REGION1
                    transitions.append(TransitionRecord(len(steps), t, kind, phase, post))
                    if post is Phase.SLIDING:
                        phase, z = post, consistent_z(model, x, u)
                    else:
                        phase, z = post, None
                    continue
                x, t = _retake_crossing(model, tab, steps, transitions, t, h, x, u, x1, X, phase, opts, interval)
                tr = transitions[-1]
                if tr.kind == TransitionKind.ENTER_SLIDING:
                    phase = Phase.SLIDING
                    u_post = grid.value(grid.interval_of(t + _TINY))
                    z = consistent_z(model, x, u_post)
                else:
                    phase, z = tr.post_phase, None
                if not pending and float(mesh[idx]) - t < floor and not hard[idx] and idx + 1 < len(mesh):
                    idx += 1
                continue
            steps.append(StepRecord(len(steps), t, h, phase, interval, u, x, None, X, None, x1, None))
            x, t = x1, target
        if np.abs(x).max() > opts.state_bound:
            raise IntegrationError(f"state diverged at t={t:g}")
        if pending:
            pending.pop()
        else:
            idx += 1

    return TrajectoryRecord(tuple(steps), tuple(transitions), grid, x, z)


def _retake_crossing(model, tab, steps, transitions, t, h, x, u, x1, X, phase, opts, interval):
    """Localize a surface crossing, re-take the step to land on it.

    After the interpolant root, the landing point is polished by Newton
    corrections on ``g`` evaluated at the re-taken endpoint, so the recorded
    transition state satisfies ``|g| <= root_tol`` (up to the iteration cap).
    """
    f, _, _ = model.region_field(phase)
    interp = hermite_interpolant(x, f(x, u), x1, f(x1, u), h)
    t_t = locate_switch(model, t, h, interp, opts.root_tol)
    x_t, X_t = x1, X
    if t_t >= t + h - _TINY * max(1.0, abs(t + h)):
        t_t = t + h
    else:
        for _ in range(opts.max_retake):
            h_t = t_t - t
            if h_t <= _TINY * max(1.0, abs(t)):
                h_t = 32.0 * _TINY * max(1.0, abs(t))
                t_t = t + h_t
            x_t, X_t = step_ode(model, tab, x, u, h_t, phase, opts)
            gv = float(model.g(x_t)[0])
            if abs(gv) <= opts.root_tol:
                break
            dg = float((model.g_x(x_t) @ f(x_t, u))[0])
            if dg == 0.0:
                break
            t_new = min(max(t_t - gv / dg, t + 0.25 * h_t), t + h)
            if abs(t_new - t_t) <= _TINY * max(1.0, abs(t_t)):
                break
            t_t = t_new
        else:
            x_t, X_t = step_ode(model, tab, x, u, t_t - t, phase, opts)
    pre_phase = phase
    steps.append(StepRecord(len(steps), t, t_t - t, pre_phase, interval, u, x, None, X_t, None, x_t, None))
    if is_attractive(model, x_t, u):
        kind, post = TransitionKind.ENTER_SLIDING, Phase.SLIDING
    else:
        kind = TransitionKind.CROSS_REGION
        post = Phase.REGION2 if pre_phase is Phase.REGION1 else Phase.REGION1
    transitions.append(TransitionRecord(len(steps), t_t, kind, pre_phase, post))
    return x_t, t_t


def _detect_slide_exit(model, tab, t, h, x, z, u, x1, z1, X, Z, opts):
    """Earliest admissibility-loss time inside a sliding step, or None."""
    if model.slide_bounds is None:
        if slide_admissible(model, x1, z1, u):
            return None

        def row(tau):
            xt, zt = _slide_interp(model, tab, t, h, x, z, u, x1, z1, X, Z, tau)
            s1, s2 = attractivity(model, xt, u)
            return -s1 * s2

        br = _first_bracket(row, np.linspace(0.0, 1.0, 9))
        if br is None:
            return t + h
        a, b, fa, fb = br
        tau = a if a == b else _secant_bisect(row, a, b, fa, fb, opts.root_tol)
        return t + tau * h
    r_end = model.slide_bounds(x1, z1, u)
    r_stage = [model.slide_bounds(X[i], Z[i], u) for i in range(tab.s)]
    if np.min(r_end) > 0.0 and all(np.min(r) > 0.0 for r in r_stage):
        return None
    m = len(np.atleast_1d(r_end))
    best = None
    for j in range(m):

        def row(tau, jj=j):
            xt, zt = _slide_interp(model, tab, t, h, x, z, u, x1, z1, X, Z, tau)
            return float(np.atleast_1d(model.slide_bounds(xt, zt, u))[jj])

        br = _first_bracket(row, np.linspace(0.0, 1.0, 9))
        if br is None:
            continue
        a, b, fa, fb = br
        tau = a if a == b else _secant_bisect(row, a, b, fa, fb, opts.root_tol)
        tj = t + tau * h
        if best is None or tj < best:
            best = tj
    return best if best is not None else t + h


def _slide_interp(model, tab, t, h, x, z, u, x1, z1, X, Z, tau):
    """Dense output inside a sliding step: Hermite for x, Lagrange for z."""
    fx0 = sliding_rhs(model, x, z, u)
    fx1 = sliding_rhs(model, x1, z1, u)
    interp = hermite_interpolant(x, fx0, x1, fx1, h)
    nodes = np.concatenate(([0.0], tab.c))
    zvals = np.vstack([z[None, :], Z])
    w = _lagrange_weights(nodes, tau)
    return interp.value(tau), w @ zvals


def _retake_slide_exit(model, tab, steps, transitions, t, h, x, z, u, exit_t, opts, interval):
    """Re-take a sliding step to end at the localized exit time."""
    h_t = exit_t - t
    if h_t <= _TINY * max(1.0, abs(t)):
        h_t = 32.0 * _TINY * max(1.0, abs(t))
        exit_t = t + h_t
    if exit_t >= t + h - _TINY * max(1.0, abs(t + h)):
        exit_t, h_t = t + h, h
    x_t, z_t, X_t, Z_t = step_dae(model, tab, x, z, u, h_t, opts)
    steps.append(StepRecord(len(steps), t, h_t, Phase.SLIDING, interval, u, x, z, X_t, Z_t, x_t, z_t))
    post = _exit_region(model, x_t, u)
    transitions.append(TransitionRecord(len(steps), exit_t, TransitionKind.LEAVE_SLIDING, Phase.SLIDING, post))
    return x_t, z_t, exit_t


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def write_trajectory_csv(traj: TrajectoryRecord, path) -> None:
    """Trajectory CSV: one row per accepted step plus the terminal state."""
    n_x = traj.steps[0].x.size
    n_z = traj.steps[0].stages_z.shape[1] if traj.steps[0].stages_z is not None else _nz(traj)
    n_u = traj.grid.n_u
    header = (
        ["t", "phase"]
        + [f"x{i}" for i in range(n_x)]
        + [f"z{i}" for i in range(n_z)]
        + [f"u{i}" for i in range(n_u)]
    )
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for s in traj.steps:
            zrow = list(s.z) if s.z is not None else [float("nan")] * n_z
            writer.writerow(
                [f"{s.t:.17g}", s.phase.value]
                + [f"{v:.17g}" for v in s.x]
                + [f"{v:.17g}" for v in zrow]
                + [f"{v:.17g}" for v in s.u]
            )
        last = traj.steps[-1]
        zrow = list(traj.z_end) if traj.z_end is not None else [float("nan")] * n_z
        writer.writerow(
            [f"{traj.tf:.17g}", last.phase.value]
            + [f"{v:.17g}" for v in traj.x_end]
            + [f"{v:.17g}" for v in zrow]
            + [f"{v:.17g}" for v in traj.grid.value(last.interval)]
        )


def _nz(traj: TrajectoryRecord) -> int:
    for s in traj.steps:
        if s.stages_z is not None:
            return s.stages_z.shape[1]
    return 1
