"""Runge-Kutta coefficient sets for forward and backward integration.

The forward scheme is the 3-stage Radau IIA collocation method (classical
order 5, stage order 3, stiffly accurate).  The backward scheme induced by
transposition, ``abar_ij = a_ji b_j / b_i``, ``bbar = b``, ``cbar = 1 - c``,
is the 3-stage Radau IA method with its stages listed in reverse order.
Coefficients are entered from closed-form literature values and verified
against the order conditions at construction time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Tableau:
    """Coefficients of an implicit Runge-Kutta scheme plus derived data.

    Attributes
    ----------
    s : int
        Stage count.
    A, b, c : ndarray
        Stage matrix, weights, abscissae.
    A_inv : ndarray
        Inverse of ``A`` (the schemes used here always have invertible ``A``).
    b_minus : ndarray
        ``b_minus[i] = sum_j b[j] * A_inv[j, i]``; weights of the algebraic
        update ``z+ = z + sum_i b_minus[i] (Z_i - z)``.
    A_bar, b_bar, c_bar : ndarray
        Coefficients of the induced backward (adjoint) scheme.
    b_bar_minus : ndarray
        Algebraic-update weights of the backward scheme,
        ``A_bar^{-T} b_bar``.
    stability_radius : float
        ``R(inf) = 1 - b^T A^{-1} 1``; zero for Radau schemes.
    """

    s: int
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    A_inv: np.ndarray
    b_minus: np.ndarray
    A_bar: np.ndarray
    b_bar: np.ndarray
    c_bar: np.ndarray
    b_bar_minus: np.ndarray
    stability_radius: float


def _check_order_conditions(A, b, c, order, stage_order, label):
    for k in range(1, order + 1):
        resid = abs(b @ c ** (k - 1) - 1.0 / k)
        if resid > _TOL:
            raise ConfigurationError(
                f"{label}: order condition B({k}) violated, residual {resid:.3e}"
            )
    for q in range(1, stage_order + 1):
        resid = np.abs(A @ c ** (q - 1) - c**q / q).max()
        if resid > _TOL:
            raise ConfigurationError(
                f"{label}: stage condition C({q}) violated, residual {resid:.3e}"
            )


def _build(A, b, c, order, stage_order, label) -> Tableau:
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    s = len(b)
    _check_order_conditions(A, b, c, order, stage_order, label)
    if np.any(b == 0.0):
        raise ConfigurationError(f"{label}: zero weight makes the scheme degenerate")
    A_inv = np.linalg.inv(A)
    if not np.all(np.isfinite(A_inv)):
        raise ConfigurationError(f"{label}: stage matrix is singular")
    b_minus = A_inv.T @ b
    stability_radius = float(1.0 - b @ A_inv @ np.ones(s))
    A_bar = (A.T * b[None, :]) / b[:, None]
    b_bar = b.copy()
    c_bar = 1.0 - c
    b_bar_minus = np.linalg.inv(A_bar).T @ b_bar
    return Tableau(
        s=s,
        A=_frozen(A),
        b=_frozen(b),
        c=_frozen(c),
        A_inv=_frozen(A_inv),
        b_minus=_frozen(b_minus),
        A_bar=_frozen(A_bar),
        b_bar=_frozen(b_bar),
        c_bar=_frozen(c_bar),
        b_bar_minus=_frozen(b_bar_minus),
        stability_radius=stability_radius,
    )


def radau_iia(s: int = 3) -> Tableau:
    """Return the s-stage Radau IIA tableau (only ``s = 3`` is supported).

    Raises
    ------
    ConfigurationError
        If ``s != 3`` or any order condition fails (transcription guard).
    """
    if s != 3:
        raise ConfigurationError(f"unsupported stage count {s}; only s = 3 is available")
    r6 = np.sqrt(6.0)
    A = np.array(
        [
            [(88.0 - 7.0 * r6) / 360.0, (296.0 - 169.0 * r6) / 1800.0, (-2.0 + 3.0 * r6) / 225.0],
            [(296.0 + 169.0 * r6) / 1800.0, (88.0 + 7.0 * r6) / 360.0, (-2.0 - 3.0 * r6) / 225.0],
            [(16.0 - r6) / 36.0, (16.0 + r6) / 36.0, 1.0 / 9.0],
        ]
    )
    b = A[2].copy()
    c = np.array([(4.0 - r6) / 10.0, (4.0 + r6) / 10.0, 1.0])
    tab = _build(A, b, c, order=5, stage_order=3, label="radau_iia(3)")
    if abs(tab.c[-1] - 1.0) > _TOL:
        raise ConfigurationError("radau_iia(3): c_s != 1 (stiff accuracy lost)")
    if abs(tab.stability_radius) > _TOL:
        raise ConfigurationError(
            f"radau_iia(3): R(inf) = {tab.stability_radius:.3e}, expected 0"
        )
    return tab


def adjoint_tableau(tab: Tableau) -> Tableau:
    """Return the backward scheme of ``tab`` as a stand-alone tableau.

    The returned tableau has ``A = tab.A_bar``, ``b = tab.b_bar``,
    ``c = tab.c_bar``; for Radau IIA this is the Radau IA scheme with the
    stage ordering reversed (classical order 5, stage order 2).  Applying
    the transform twice returns the original coefficients.
    """
    return _build(
        tab.A_bar,
        tab.b_bar,
        tab.c_bar,
        order=5,
        stage_order=2,
        label="adjoint_tableau",
    )
