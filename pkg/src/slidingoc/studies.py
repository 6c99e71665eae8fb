"""Convergence-order studies: state, algebraic, adjoint, gradient, jumps.

Each study integrates the same problem on a nested family of meshes, takes
the finest mesh as reference (or an analytic value where one exists), and
fits log-log slopes by least squares.  Slopes are checked against minimal
expected orders; a non-monotone error sequence is flagged as a mesh-range
anomaly.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .adjoint import backward_sweep
from .forward import IntegratorOptions, TransitionKind, integrate
from .gradient import assemble
from .model import Phase
from .problems import ProblemSpec
from .tableau import radau_iia


@dataclass(frozen=True)
class StudyQuantity:
    """Error sequence and fitted slope for one studied quantity."""

    name: str
    mesh_sizes: tuple
    errors: tuple
    slope: float
    threshold: float
    monotone: bool

    @property
    def passed(self) -> bool:
        return self.monotone and self.slope >= self.threshold


@dataclass(frozen=True)
class StudyReport:
    """All quantities of one convergence study."""

    problem: str
    quantities: tuple

    @property
    def passed(self) -> bool:
        return all(q.passed for q in self.quantities)

    @property
    def anomalies(self) -> tuple:
        return tuple(q.name for q in self.quantities if not q.monotone)

    def lines(self):
        out = []
        for q in self.quantities:
            status = "pass" if q.passed else ("non-monotone" if not q.monotone else "below-order")
            errs = ", ".join(f"{e:.3e}" for e in q.errors)
            out.append(
                f"{self.problem}/{q.name}: slope {q.slope:.2f} (min {q.threshold:.2f}) [{status}]  errors [{errs}]"
            )
        return out


def fit_slope(hs: Sequence[float], errors: Sequence[float]) -> float:
    hs = np.asarray(hs, float)
    errors = np.maximum(np.asarray(errors, float), 1e-300)
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


def _is_monotone(errors) -> bool:
    e = np.asarray(errors, float)
    return bool(np.all(np.diff(e) < 0.0))


# default minimal orders: paper orders minus 0.5 slope allowance
ODE_THRESHOLDS = {"state": 4.5, "adjoint": 3.5, "gradient": 2.5}
DAE_THRESHOLDS = {"state": 4.5, "algebraic": 2.5, "adjoint": 1.5, "gradient": 1.7}
JUMP_THRESHOLD = 1.0
SWITCH_THRESHOLD = 3.5


def _run_mesh(spec: ProblemSpec, u_values, K: int, base_opts: IntegratorOptions):
    tab = radau_iia(3)
    grid = spec.grid(values=u_values)
    opts = IntegratorOptions(
        n_steps=K,
        newton_tol=base_opts.newton_tol,
        newton_maxiter=base_opts.newton_maxiter,
        surface_tol=base_opts.surface_tol,
        root_tol=base_opts.root_tol,
        step_ratio_floor=base_opts.step_ratio_floor,
    )
    traj = integrate(spec.model, tab, grid, spec.x0, opts)
    adj = backward_sweep(spec.model, tab, traj, spec.objective.grad(traj.x_end))
    grad = assemble(traj, adj, spec.model, grid).values
    z_end = traj.z_end if traj.terminal_phase is Phase.SLIDING else None
    return {
        "K": K,
        "x": traj.x_end.copy(),
        "z": None if z_end is None else z_end.copy(),
        "lam0": adj.lam_left[0].copy(),
        "grad": grad.copy(),
        "sliding": any(s.phase is Phase.SLIDING for s in traj.steps),
    }


def order_study(spec: ProblemSpec, u_values, mesh_sizes: Sequence[int],
                opts: Optional[IntegratorOptions] = None, threads: int = 1,
                thresholds: Optional[dict] = None) -> StudyReport:
    """Errors of x(tf), z(tf), adjoint at t0 and reduced gradient vs finest mesh."""
    opts = opts or IntegratorOptions()
    Ks = sorted(mesh_sizes)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda K: _run_mesh(spec, u_values, K, opts), Ks))
    else:
        results = [_run_mesh(spec, u_values, K, opts) for K in Ks]
    ref = results[-1]
    coarse = results[:-1]
    sliding = ref["sliding"]
    if thresholds is None:
        thresholds = DAE_THRESHOLDS if sliding else ODE_THRESHOLDS
    hs = [(spec.tf - spec.t0) / r["K"] for r in coarse]
    quantities = []

    def add(name, errors):
        errors = tuple(float(e) for e in errors)
        quantities.append(
            StudyQuantity(
                name=name,
                mesh_sizes=tuple(r["K"] for r in coarse),
                errors=errors,
                slope=fit_slope(hs, errors),
                threshold=thresholds.get(name, 0.0),
                monotone=_is_monotone(errors),
            )
        )

    add("state", [np.abs(r["x"] - ref["x"]).max() for r in coarse])
    if sliding and ref["z"] is not None and all(r["z"] is not None for r in coarse):
        add("algebraic", [np.abs(r["z"] - ref["z"]).max() for r in coarse])
    add("adjoint", [np.abs(r["lam0"] - ref["lam0"]).max() for r in coarse])
    add("gradient", [np.abs(r["grad"] - ref["grad"]).max() for r in coarse])
    return StudyReport(problem=spec.name, quantities=tuple(quantities))


def _first_entry_pi(spec: ProblemSpec, u_values, K: int, opts: IntegratorOptions, formula: str):
    tab = radau_iia(3)
    grid = spec.grid(values=u_values)
    run_opts = IntegratorOptions(
        n_steps=K,
        newton_tol=opts.newton_tol,
        newton_maxiter=opts.newton_maxiter,
        surface_tol=opts.surface_tol,
        root_tol=opts.root_tol,
        step_ratio_floor=opts.step_ratio_floor,
    )
    traj = integrate(spec.model, tab, grid, spec.x0, run_opts)
    adj = backward_sweep(spec.model, tab, traj, spec.objective.grad(traj.x_end), formula)
    for jr in adj.jumps:
        if jr.kind in (TransitionKind.ENTER_SLIDING, TransitionKind.CROSS_REGION):
            return jr.pi, jr.t
    raise ValueError(f"no surface transition found on mesh K={K} for {spec.name}")


def jump_study(spec: ProblemSpec, u_values, mesh_sizes: Sequence[int],
               formula: str = "discrete", ref_refinement: int = 16,
               opts: Optional[IntegratorOptions] = None, threads: int = 1) -> StudyReport:
    """Convergence of the adjoint jump multiplier at the first transition.

    The reference multiplier is computed with the same formula on a mesh
    ``ref_refinement`` times finer than the finest study mesh.
    """
    opts = opts or IntegratorOptions()
    Ks = sorted(mesh_sizes)
    jobs = Ks + [ref_refinement * Ks[-1]]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda K: _first_entry_pi(spec, u_values, K, opts, formula), jobs))
    else:
        results = [_first_entry_pi(spec, u_values, K, opts, formula) for K in jobs]
    pi_ref = results[-1][0]
    errors = tuple(abs(pi - pi_ref) for pi, _ in results[:-1])
    hs = [(spec.tf - spec.t0) / K for K in Ks]
    q = StudyQuantity(
        name=f"pi-{formula}",
        mesh_sizes=tuple(Ks),
        errors=errors,
        slope=fit_slope(hs, errors),
        threshold=JUMP_THRESHOLD,
        monotone=_is_monotone(errors),
    )
    return StudyReport(problem=spec.name, quantities=(q,))


def switching_time_study(spec: ProblemSpec, mesh_sizes: Sequence[int],
                         opts: Optional[IntegratorOptions] = None, threads: int = 1) -> StudyReport:
    """Accuracy of the localized switching time against the analytic value."""
    opts = opts or IntegratorOptions()
    t_exact = spec.reference["t_cross"]
    tab = radau_iia(3)
    Ks = sorted(mesh_sizes)

    def run(K):
        run_opts = IntegratorOptions(
            n_steps=K,
            newton_tol=opts.newton_tol,
            newton_maxiter=opts.newton_maxiter,
            surface_tol=opts.surface_tol,
            root_tol=opts.root_tol,
            step_ratio_floor=opts.step_ratio_floor,
        )
        grid = spec.grid()
        traj = integrate(spec.model, tab, grid, spec.x0, run_opts)
        if not traj.transitions:
            raise ValueError(f"no transition located on mesh K={K}")
        return abs(traj.transitions[0].t - t_exact)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            errors = tuple(pool.map(run, Ks))
    else:
        errors = tuple(run(K) for K in Ks)
    hs = [(spec.tf - spec.t0) / K for K in Ks]
    q = StudyQuantity(
        name="switching-time",
        mesh_sizes=tuple(Ks),
        errors=errors,
        slope=fit_slope(hs, errors),
        threshold=SWITCH_THRESHOLD,
        monotone=_is_monotone(errors),
    )
    return StudyReport(problem=spec.name, quantities=(q,))
