"""Reduced gradients of endpoint functionals over piecewise-constant controls.

The gradient of ``phi(x(tf))`` with respect to the control value on interval
``n`` is assembled from the adjoint stage values of every step inside that
interval,

    d phi / d u_n = - sum_k h(k) sum_i b_i f_u(X_i, u_n)^T lam_fi(k),

with ``f_u`` taken from the active phase's field (the sliding field's control
Jacobian does not involve ``z``).  A central finite-difference oracle over
full re-integrations provides the independent cross-check.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .adjoint import AdjointRecord
from .errors import MeshMismatchError, OracleInvalidError
from .forward import TrajectoryRecord
from .model import ControlGrid, HybridModel, Phase
from .tableau import radau_iia as _radau_iia

_B = _radau_iia(3).b


@dataclass(frozen=True)
class ReducedGradient:
    """Gradient values per control interval and channel, ``(N, n_u)``."""

    values: np.ndarray
    functional: str
    n_intervals: int
    n_u: int

    def flat(self) -> np.ndarray:
        return self.values.ravel().copy()


def assemble(traj: TrajectoryRecord, adj: AdjointRecord, model: HybridModel,
             grid: ControlGrid, functional: str = "objective") -> ReducedGradient:
    """Assemble the reduced gradient from stored stage adjoints."""
    if adj.n_steps != len(traj.steps):
        raise MeshMismatchError(
            f"adjoint record has {adj.n_steps} steps, trajectory {len(traj.steps)}"
        )
    out = np.zeros((grid.n_intervals, grid.n_u))
    b = _B
    for k, st in enumerate(traj.steps):
        Lf = adj.stages_f[k]
        if st.phase is Phase.SLIDING:
            f_u = model.f_slide_u
        else:
            _, _, f_u = model.region_field(st.phase)
        acc = np.zeros(grid.n_u)
        for i in range(len(b)):
            acc += b[i] * (f_u(st.stages_x[i], st.u).T @ Lf[i])
        out[st.interval] -= st.h * acc
    return ReducedGradient(out, functional, grid.n_intervals, grid.n_u)


def probe_grid(grid: ControlGrid, values) -> ControlGrid:
    """Copy of ``grid`` with the box widened for FD probe evaluations."""
    values = np.asarray(values, dtype=float).reshape(grid.n_intervals, grid.n_u)
    inf = np.full(grid.n_u, np.inf)
    return ControlGrid(grid.boundaries.copy(), values, -inf, inf)


def fd_oracle(evaluate: Callable[[np.ndarray], tuple[float, int]], u_flat: np.ndarray,
              index: int, du: float) -> float:
    """Central difference of the discrete objective in one control component.

    ``evaluate`` maps a flat control vector to ``(objective, n_transitions)``
    via a full re-integration.  The oracle is invalid when the perturbed
    trajectories differ in transition count (the objective is only piecewise
    smooth in ``u``).

    Raises
    ------
    OracleInvalidError
        On a transition-structure change between the two perturbations.
    ValueError
        If ``du`` is zero.
    """
    if du == 0.0:
        raise ValueError("fd_oracle requires a nonzero step")
    up = np.array(u_flat, dtype=float)
    um = np.array(u_flat, dtype=float)
    up[index] += du
    um[index] -= du
    fp, tp = evaluate(up)
    fm, tm = evaluate(um)
    if tp != tm:
        raise OracleInvalidError(
            f"transition count changed under perturbation of component {index}: {tm} vs {tp}"
        )
    return (fp - fm) / (2.0 * du)


def fd_gradient(evaluate, u_flat, du_scale: float = 1e-6):
    """FD oracle over all components; invalid entries returned as NaN."""
    u_flat = np.asarray(u_flat, dtype=float)
    out = np.zeros_like(u_flat)
    valid = np.ones(u_flat.size, dtype=bool)
    for i in range(u_flat.size):
        du = du_scale * (1.0 + abs(u_flat[i]))
        try:
            out[i] = fd_oracle(evaluate, u_flat, i, du)
        except OracleInvalidError:
            out[i] = np.nan
            valid[i] = False
    return out, valid


def write_gradient_csv(grad: ReducedGradient, fd_vals: np.ndarray, path) -> None:
    """Comparison CSV: interval, channel, adjoint value, FD value, rel. error."""
    fd_vals = np.asarray(fd_vals, dtype=float).reshape(grad.values.shape)
    scale = max(1.0, np.nanmax(np.abs(fd_vals)) if np.isfinite(fd_vals).any() else 1.0)
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["n", "channel", "adjoint_grad", "fd_grad", "rel_err"])
        for n in range(grad.n_intervals):
            for c in range(grad.n_u):
                a = grad.values[n, c]
                f = fd_vals[n, c]
                rel = abs(a - f) / scale if np.isfinite(f) else float("nan")
                writer.writerow([n, c, f"{a:.17g}", f"{f:.17g}", f"{rel:.6e}"])
