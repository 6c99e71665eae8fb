"""Hybrid-system contract and control parameterization.

A hybrid model carries two regional vector fields separated by a scalar
switching surface ``g(x) = 0`` (region 1 where ``g < 0``, region 2 where
``g > 0``) and a sliding base field.  Sliding motion is the index-2 DAE

    x' = f_slide(x, u) + g_x(x)^T z,    0 = g(x),

whose algebraic variable ``z`` acts as an equivalent control confined to the
range given by ``slide_bounds``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, IndexConditionError


class Phase(enum.Enum):
    """Trajectory phase: region 1 (g < 0), region 2 (g > 0), or sliding."""

    REGION1 = "region1"
    REGION2 = "region2"
    SLIDING = "sliding"


Array = np.ndarray
VecField = Callable[[Array, Array], Array]
MatField = Callable[[Array, Array], Array]


@dataclass(frozen=True)
class HybridModel:
    """Evaluators and Jacobians defining one hybrid control system.

    All evaluators are pure functions of their arguments; models hold no
    mutable state, so a single instance may be shared across threads.

    Attributes
    ----------
    n_x, n_z, n_u : int
        State, algebraic, and control dimensions (``n_z = 1`` in all
        shipped problems; the API carries general ``n_z``).
    f1, f1_x, f1_u : callable
        Region-1 vector field ``f1(x, u)`` and its Jacobians.
    f2, f2_x, f2_u : callable
        Region-2 vector field and Jacobians.
    f_slide, f_slide_x, f_slide_u : callable
        Sliding base field and Jacobians (``z`` enters separately through
        ``g_x^T z``).
    g, g_x : callable
        Surface ``g(x) -> (n_z,)`` and Jacobian ``g_x(x) -> (n_z, n_x)``.
    gxT_z_x : callable
        ``(x, z) -> d/dx (g_x(x)^T z)``, an ``(n_x, n_x)`` matrix; needed by
        the sliding-phase adjoint.
    slide_bounds : callable, optional
        ``(x, z, u) -> (m,)`` residuals that stay positive while sliding is
        admissible; a nonpositive entry triggers a sliding exit.  When
        absent, admissibility falls back to the two-sided attractivity test.
    """

    n_x: int
    n_z: int
    n_u: int
    f1: VecField
    f1_x: MatField
    f1_u: MatField
    f2: VecField
    f2_x: MatField
    f2_u: MatField
    f_slide: VecField
    f_slide_x: MatField
    f_slide_u: MatField
    g: Callable[[Array], Array]
    g_x: Callable[[Array], Array]
    gxT_z_x: Callable[[Array, Array], Array]
    slide_bounds: Optional[Callable[[Array, Array, Array], Array]] = None
    name: str = "model"

    def region_field(self, phase: Phase):
        """Vector field and Jacobians for an ODE phase."""
        if phase is Phase.REGION1:
            return self.f1, self.f1_x, self.f1_u
        if phase is Phase.REGION2:
            return self.f2, self.f2_x, self.f2_u
        raise ConfigurationError("sliding phase has no single ODE field")


def sliding_rhs(model: HybridModel, x: Array, z: Array, u: Array) -> Array:
    """Sliding-phase right-hand side ``f_slide(x, u) + g_x(x)^T z``."""
    return model.f_slide(x, u) + model.g_x(x).T @ z


def sliding_rhs_x(model: HybridModel, x: Array, z: Array, u: Array) -> Array:
    """State Jacobian of the sliding right-hand side."""
    return model.f_slide_x(x, u) + model.gxT_z_x(x, z)


def consistent_z(model: HybridModel, x: Array, u: Array) -> Array:
    """Algebraic value keeping the sliding motion on the surface.

    Solves ``(g_x g_x^T) z = -g_x f_slide(x, u)`` so that
    ``g_x (f_slide + g_x^T z) = 0``.

    Raises
    ------
    IndexConditionError
        If ``g_x g_x^T`` is singular at ``x``.
    """
    gx = model.g_x(x)
    gram = gx @ gx.T
    rhs = -gx @ model.f_slide(x, u)
    try:
        z = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise IndexConditionError(f"singular g_x g_x^T at x = {x!r}") from exc
    if not np.all(np.isfinite(z)):
        raise IndexConditionError(f"non-finite consistent z at x = {x!r}")
    return z


def attractivity(model: HybridModel, x: Array, u: Array) -> tuple[float, float]:
    """One-sided surface velocities ``(g_x f1, g_x f2)`` at ``x``.

    The surface is attractive (sliding admissible) when the product is
    negative: region-1 flow raises ``g`` while region-2 flow lowers it.
    """
    gx = model.g_x(x)
    s1 = float((gx @ model.f1(x, u))[0]) if model.n_z == 1 else float(gx @ model.f1(x, u))
    s2 = float((gx @ model.f2(x, u))[0]) if model.n_z == 1 else float(gx @ model.f2(x, u))
    return s1, s2


def is_attractive(model: HybridModel, x: Array, u: Array) -> bool:
    s1, s2 = attractivity(model, x, u)
    return s1 * s2 < 0.0 and s1 > 0.0


def slide_admissible(model: HybridModel, x: Array, z: Array, u: Array) -> bool:
    """Whether sliding may continue at ``(x, z, u)``."""
    if model.slide_bounds is not None:
        return bool(np.min(model.slide_bounds(x, z, u)) > 0.0)
    s1, s2 = attractivity(model, x, u)
    return s1 * s2 < 0.0


@dataclass(frozen=True)
class ControlGrid:
    """Piecewise-constant control on ``N`` intervals.

    Integration step boundaries never straddle an interval boundary; the
    integrator splits its mesh at every ``boundaries[n]``.
    """

    boundaries: Array
    values: Array
    u_min: Array
    u_max: Array

    def __post_init__(self):
        bounds = np.asarray(self.boundaries, dtype=float)
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        if vals.shape[0] != len(bounds) - 1:
            raise ConfigurationError(
                f"{vals.shape[0]} control values for {len(bounds) - 1} intervals"
            )
        if np.any(np.diff(bounds) <= 0):
            raise ConfigurationError("control boundaries must be strictly increasing")
        lo = np.broadcast_to(np.asarray(self.u_min, dtype=float), vals.shape[1:])
        hi = np.broadcast_to(np.asarray(self.u_max, dtype=float), vals.shape[1:])
        if np.any(vals < lo - 1e-12) or np.any(vals > hi + 1e-12):
            raise ConfigurationError("control values violate the box bounds")
        object.__setattr__(self, "boundaries", _ro(bounds))
        object.__setattr__(self, "values", _ro(vals))
        object.__setattr__(self, "u_min", _ro(np.asarray(lo, dtype=float)))
        object.__setattr__(self, "u_max", _ro(np.asarray(hi, dtype=float)))

    @classmethod
    def uniform(cls, n_intervals, t0, tf, values, u_min, u_max) -> "ControlGrid":
        bounds = np.linspace(t0, tf, n_intervals + 1)
        return cls(bounds, values, u_min, u_max)

    @property
    def n_intervals(self) -> int:
        return self.values.shape[0]

    @property
    def n_u(self) -> int:
        return self.values.shape[1]

    @property
    def t0(self) -> float:
        return float(self.boundaries[0])

    @property
    def tf(self) -> float:
        return float(self.boundaries[-1])

    def interval_of(self, t: float) -> int:
        """Index of the interval containing ``t`` (right-open, last closed)."""
        n = int(np.searchsorted(self.boundaries, t, side="right") - 1)
        return min(max(n, 0), self.n_intervals - 1)

    def value(self, n: int) -> Array:
        return self.values[n]

    def with_values(self, values) -> "ControlGrid":
        values = np.asarray(values, dtype=float).reshape(self.n_intervals, self.n_u)
        return ControlGrid(self.boundaries.copy(), values, self.u_min, self.u_max)

    def flat(self) -> Array:
        return self.values.ravel().copy()


def _ro(a: Array) -> Array:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def fd_jacobian(fn, x: Array, step: float = 1e-6) -> Array:
    """Central finite-difference Jacobian of ``fn`` at ``x`` (prototyping aid)."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(fn(x))
    J = np.zeros((f0.size, x.size))
    for i in range(x.size):
        h = step * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.atleast_1d(fn(xp)) - np.atleast_1d(fn(xm))) / (2.0 * h)
    return J


def check_jacobians(model: HybridModel, points, controls, rtol: float = 1e-5) -> float:
    """Cross-check analytic Jacobians against central differences.

    Returns the worst relative deviation over all supplied points; meant for
    test-time validation, not runtime use.
    """
    worst = 0.0
    pairs = [
        (model.f1, model.f1_x, "x"),
        (model.f2, model.f2_x, "x"),
        (model.f_slide, model.f_slide_x, "x"),
        (model.f1, model.f1_u, "u"),
        (model.f2, model.f2_u, "u"),
        (model.f_slide, model.f_slide_u, "u"),
    ]
    for x, u in zip(points, controls):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        for fn, jac, wrt in pairs:
            if wrt == "x":
                J_fd = fd_jacobian(lambda xx: fn(xx, u), x)
            else:
                J_fd = fd_jacobian(lambda uu: fn(x, uu), u)
            J = jac(x, u)
            scale = max(1.0, np.abs(J).max())
            worst = max(worst, np.abs(J - J_fd).max() / scale)
        Jg_fd = fd_jacobian(model.g, x)
        scale = max(1.0, np.abs(model.g_x(x)).max())
        worst = max(worst, np.abs(model.g_x(x) - Jg_fd).max() / scale)
        z = np.linspace(0.3, 0.7, model.n_z)
        Jz_fd = fd_jacobian(lambda xx: model.g_x(xx).T @ z, x)
        scale = max(1.0, np.abs(model.gxT_z_x(x, z)).max())
        worst = max(worst, np.abs(model.gxT_z_x(x, z) - Jz_fd).max() / scale)
    if worst > rtol:
        raise ConfigurationError(f"Jacobian cross-check failed: {worst:.3e} > {rtol:.1e}")
    return worst
