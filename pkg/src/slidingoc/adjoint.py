"""Backward (adjoint) sweeps over recorded trajectories.

The sweep is the discrete adjoint of the Radau IIA recursion: stage systems
are linear, with coefficients ``abar_ij = a_ji b_j / b_i`` and Jacobians
evaluated at the stored forward stage values.  At transition points the
adjoint jumps by a multiple of ``g_x^T``; the multiplier is obtained from the
step-size sensitivities of the discrete schemes on both sides (the default
"discrete" formula) or from a pointwise field-difference quotient (the
"simple" formula).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import IndexConditionError, TangentialCrossingError, TerminalConditionError
from .forward import StepRecord, TrajectoryRecord, TransitionKind
from .model import Phase, sliding_rhs, sliding_rhs_x


@dataclass(frozen=True)
class JumpRecord:
    """Adjoint jump at one transition (post-side and pre-side values).

    ``degenerate`` marks a tangential crossing where the multiplier formula
    is ill-posed and the sweep fell back to a continuous adjoint.
    """

    step_index: int
    t: float
    kind: str
    pi: float
    lam_post: np.ndarray
    lam_pre: np.ndarray
    degenerate: bool = False


@dataclass(frozen=True)
class AdjointRecord:
    """Backward sweep output aligned with a trajectory's steps.

    ``lam_left[k]``/``lam_right[k]`` are the adjoint values at the start/end
    of step ``k`` on that step's own side of any transition; stage arrays
    hold the values entering the reduced-gradient quadrature.
    """

    lam_left: tuple
    lam_right: tuple
    lam_g_left: tuple
    stages_f: tuple
    stages_g: tuple
    jumps: tuple
    lam_tf: np.ndarray
    lam_g_tf: Optional[np.ndarray]
    nu1: Optional[np.ndarray]
    n_steps: int


def terminal_conditions(model, x_tf, z_tf, u_tf, phi_x, sliding: bool, fd_step: float = 1e-6):
    """Consistent terminal adjoint values.

    For a sliding terminal phase, solves the linear system coupling
    ``(lam_f, lam_g, nu1)``: ``phi_x^T + lam_f = nu1 g_x^T``, the algebraic
    constraint ``g_x lam_f = 0``, and its differentiated (hidden) companion.
    For an ODE terminal phase simply ``lam_f = -phi_x^T``.

    Returns ``(lam_f, lam_g, nu1, residual)``.
    """
    phi_x = np.asarray(phi_x, dtype=float)
    if not sliding:
        return -phi_x.copy(), None, None, 0.0
    n, m = model.n_x, model.n_z
    gx = model.g_x(x_tf)
    f2v = sliding_rhs(model, x_tf, z_tf, u_tf)
    gxp = (model.g_x(x_tf + fd_step * f2v) - model.g_x(x_tf - fd_step * f2v)) / (2.0 * fd_step)
    ffx = model.f_slide_x(x_tf, u_tf)
    gzx = model.gxT_z_x(x_tf, z_tf)
    M = np.zeros((n + 2 * m, n + 2 * m))
    rhs = np.zeros(n + 2 * m)
    M[:n, :n] = np.eye(n)
    M[:n, n + m :] = -gx.T
    rhs[:n] = -phi_x
    M[n : n + m, :n] = gx
    M[n + m :, :n] = gxp - gx @ ffx.T - gx @ gzx.T
    M[n + m :, n : n + m] = gx @ gx.T
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise TerminalConditionError("terminal adjoint system is singular") from exc
    residual = float(np.abs(M @ sol - rhs).max())
    if residual > 1e-8:
        raise TerminalConditionError(f"terminal adjoint residual {residual:.3e}")
    lam_f = sol[:n]
    lam_g = sol[n : n + m]
    nu1 = sol[n + m :]
    return lam_f, lam_g, nu1, residual


def backward_step_ode(model, tab, step: StepRecord, lam_next):
    """Discrete adjoint of one ODE step: returns ``(lam, stages)``."""
    s, n = tab.s, model.n_x
    _, f_x, _ = model.region_field(step.phase)
    u = step.u
    fxs = [f_x(step.stages_x[i], u) for i in range(s)]
    M = np.zeros((s * n, s * n))
    rhs = np.tile(lam_next, s)
    for i in range(s):
        for j in range(s):
            blk = -step.h * tab.A_bar[i, j] * fxs[j].T
            if i == j:
                blk = blk + np.eye(n)
            M[i * n : (i + 1) * n, j * n : (j + 1) * n] = blk
    sol = np.linalg.solve(M, rhs)
    Lf = sol.reshape(s, n)
    lam = lam_next + step.h * sum(tab.b[i] * (fxs[i].T @ Lf[i]) for i in range(s))
    return lam, Lf


def backward_step_dae(model, tab, step: StepRecord, lam_next, lam_g_next):
    """Discrete adjoint of one sliding step.

    Solves the linear stage system for ``(lam_fi, lam_gi)`` with the
    algebraic rows ``g_x(X_i) lam_fi = 0``, then forms the main updates;
    the algebraic main value uses the backward scheme's inverse weights.

    Returns ``(lam, lam_g, stages_f, stages_g)``.
    """
    s, n, m = tab.s, model.n_x, model.n_z
    u = step.u
    X, Z = step.stages_x, step.stages_z
    fxs = [sliding_rhs_x(model, X[i], Z[i], u) for i in range(s)]
    gxs = [model.g_x(X[i]) for i in range(s)]
    dim = s * (n + m)
    M = np.zeros((dim, dim))
    rhs = np.zeros(dim)
    for i in range(s):
        rf = slice(i * n, (i + 1) * n)
        rhs[rf] = lam_next
        for j in range(s):
            cf = slice(j * n, (j + 1) * n)
            cg = slice(s * n + j * m, s * n + (j + 1) * m)
            blk = -step.h * tab.A_bar[i, j] * fxs[j].T
            if i == j:
                blk = blk + np.eye(n)
            M[rf, cf] = blk
            M[rf, cg] = -step.h * tab.A_bar[i, j] * gxs[j].T
        rg = slice(s * n + i * m, s * n + (i + 1) * m)
        M[rg, slice(i * n, (i + 1) * n)] = gxs[i]
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise IndexConditionError("singular adjoint stage system on sliding step") from exc
    Lf = sol[: s * n].reshape(s, n)
    Lg = sol[s * n :].reshape(s, m)
    lam = lam_next + step.h * sum(tab.b[i] * (fxs[i].T @ Lf[i] + gxs[i].T @ Lg[i]) for i in range(s))
    lam_g = lam_g_next + sum(tab.b_bar_minus[i] * (Lg[i] - lam_g_next) for i in range(s))
    return lam, lam_g, Lf, Lg


def _w_tail(model, tab, step: StepRecord):
    """Step-size sensitivity of the scheme map, ``w_f`` block only.

    Solves the stage block of ``F_{X+} w = F_h`` for the step's own scheme
    (ODE or sliding DAE) and returns
    ``h * sum_i b_i (f_x_i w_i [+ f_z_i w_z_i]) - sum_i b_i f_i``.
    """
    s, n = tab.s, model.n_x
    u = step.u
    h = step.h
    if step.phase is Phase.SLIDING:
        m = model.n_z
        X, Z = step.stages_x, step.stages_z
        fs = [sliding_rhs(model, X[j], Z[j], u) for j in range(s)]
        fxs = [sliding_rhs_x(model, X[j], Z[j], u) for j in range(s)]
        fzs = [model.g_x(X[j]).T for j in range(s)]
        gxs = [model.g_x(X[j]) for j in range(s)]
        w = n + m
        J = np.zeros((s * w, s * w))
        rhs = np.zeros(s * w)
        for i in range(s):
            rx = slice(i * w, i * w + n)
            rz = slice(i * w + n, (i + 1) * w)
            rhs[rx] = -sum(tab.A[i, j] * fs[j] for j in range(s))
            for j in range(s):
                cx = slice(j * w, j * w + n)
                cz = slice(j * w + n, (j + 1) * w)
                blk = -h * tab.A[i, j] * fxs[j]
                if i == j:
                    blk = blk + np.eye(n)
                J[rx, cx] = blk
                J[rx, cz] = -h * tab.A[i, j] * fzs[j]
            J[rz, slice(i * w, i * w + n)] = -gxs[i]
        sol = np.linalg.solve(J, rhs).reshape(s, w)
        Wx, Wz = sol[:, :n], sol[:, n:]
        tail = h * sum(tab.b[i] * (fxs[i] @ Wx[i] + fzs[i] @ Wz[i]) for i in range(s))
        tail -= sum(tab.b[i] * fs[i] for i in range(s))
        return tail
    f, f_x, _ = model.region_field(step.phase)
    X = step.stages_x
    fs = [f(X[j], u) for j in range(s)]
    fxs = [f_x(X[j], u) for j in range(s)]
    J = np.zeros((s * n, s * n))
    rhs = np.zeros(s * n)
    for i in range(s):
        rhs[i * n : (i + 1) * n] = -sum(tab.A[i, j] * fs[j] for j in range(s))
        for j in range(s):
            blk = -h * tab.A[i, j] * fxs[j]
            if i == j:
                blk = blk + np.eye(n)
            J[i * n : (i + 1) * n, j * n : (j + 1) * n] = blk
    W = np.linalg.solve(J, rhs).reshape(s, n)
    tail = h * sum(tab.b[i] * (fxs[i] @ W[i]) for i in range(s))
    tail -= sum(tab.b[i] * fs[i] for i in range(s))
    return tail


def jump_pi_discrete(model, tab, pre_step, post_step, lam_post, lam_next, min_denominator=1e-8):
    """Jump multiplier from the discrete step-size sensitivities.

    ``lam_post`` is the adjoint at the transition approached from the
    post side; ``lam_next`` is the adjoint at the end of the post step.

    Raises
    ------
    TangentialCrossingError
        If the denominator ``g_x . d_pre`` falls below the regularity
        threshold (tangential crossing).
    """
    gx = model.g_x(post_step.x)[0]
    d_pre = _w_tail(model, tab, pre_step)
    d_post = _w_tail(model, tab, post_step)
    den = float(gx @ d_pre)
    scale = max(1.0, float(np.abs(gx).max() * np.abs(d_pre).max()))
    if abs(den) < min_denominator * scale:
        raise TangentialCrossingError(
            f"jump denominator {den:.3e} below threshold",
            diagnostics={"den": den, "gx": gx, "d_pre": d_pre, "t": post_step.t},
        )
    return float((lam_post @ d_pre - lam_next @ d_post) / den)


def jump_pi_simple(model, x, z, u, lam_post, pre_phase, post_phase, min_denominator=1e-8):
    """Pointwise jump multiplier from the field difference at the transition.

    ``pi = -lam_post^T (f_post - f_pre) / (g_x f_pre)`` where the fields are
    evaluated at the transition state with the pre-step's control.
    """
    f_pre, _, _ = model.region_field(pre_phase)
    fp = f_pre(x, u)
    if post_phase is Phase.SLIDING:
        fq = sliding_rhs(model, x, z, u)
    else:
        f_post, _, _ = model.region_field(post_phase)
        fq = f_post(x, u)
    gx = model.g_x(x)[0]
    den = float(gx @ fp)
    scale = max(1.0, float(np.abs(gx).max() * np.abs(fp).max()))
    if abs(den) < min_denominator * scale:
        raise TangentialCrossingError(
            f"jump denominator {den:.3e} below threshold",
            diagnostics={"den": den, "gx": gx, "f_pre": fp},
        )
    return float(-(lam_post @ (fq - fp)) / den)


def apply_jump(lam_post, pi, gx_row):
    """Pre-side adjoint ``lam_post - pi * g_x^T``."""
    return lam_post - pi * np.asarray(gx_row, dtype=float)


def slide_entry_projection(model, x, z, u, lam_in, fd_step: float = 1e-6):
    """Consistent adjoint values at a backward-time entry into sliding.

    Reuses the terminal-condition machinery with the endpoint gradient
    replaced by the incoming ``-lam_in``; the projection removes the
    ``g_x^T`` component so the algebraic adjoint constraint holds.
    """
    lam_f, lam_g, nu1, _ = terminal_conditions(model, x, z, u, -lam_in, True, fd_step)
    return lam_f, lam_g, nu1


def backward_sweep(model, tab, traj: TrajectoryRecord, phi_x, jump_formula: str = "discrete",
                   min_denominator: float = 1e-8) -> AdjointRecord:
    """Propagate adjoints backward over a recorded trajectory.

    ``phi_x`` is the endpoint-functional gradient at ``x(tf)``.  Jumps are
    applied at every transition: the discrete (default) or simple formula at
    surface crossings and sliding entries, and the consistency projection at
    sliding exits (where the backward sweep enters the sliding phase).
    """
    return backward_sweep_batch(model, tab, traj, [phi_x], jump_formula, min_denominator)[0]


def backward_sweep_batch(model, tab, traj: TrajectoryRecord, phi_x_list,
                         jump_formula: str = "discrete",
                         min_denominator: float = 1e-8) -> list:
    """Backward sweeps for several endpoint functionals in one pass.

    The sweep is linear in the terminal gradient, so all functionals share
    the stage-system factorizations; one :class:`AdjointRecord` is returned
    per entry of ``phi_x_list``.
    """
    steps = traj.steps
    K = len(steps)
    nf = len(phi_x_list)
    n = model.n_x
    trans_by_post = {tr.index: tr for tr in traj.transitions if tr.index < K}
    u_last = steps[-1].u
    sliding_end = steps[-1].phase is Phase.SLIDING

    lam = np.zeros((n, nf))
    lam_g = np.zeros((model.n_z, nf)) if sliding_end else None
    nu1 = np.zeros((model.n_z, nf)) if sliding_end else None
    for j, phi_x in enumerate(phi_x_list):
        lj, gj, nj, _ = terminal_conditions(model, traj.x_end, traj.z_end, u_last, phi_x, sliding_end)
        lam[:, j] = lj
        if sliding_end:
            lam_g[:, j] = gj
            nu1[:, j] = nj
    lam_tf = lam.copy()
    lam_g_tf = None if lam_g is None else lam_g.copy()

    lam_left = [None] * K
    lam_right = [None] * K
    lam_g_left = [None] * K
    stages_f = [None] * K
    stages_g = [None] * K
    jumps = [[] for _ in range(nf)]

    for k in range(K - 1, -1, -1):
        st = steps[k]
        lam_right[k] = lam.copy()
        if st.phase is Phase.SLIDING:
            if lam_g is None:
                lam_g = np.zeros((model.n_z, nf))
            lam_k, lam_g_k, Lf, Lg = _step_dae_batch(model, tab, st, lam, lam_g)
            stages_g[k] = Lg
        else:
            lam_k, Lf = _step_ode_batch(model, tab, st, lam)
            lam_g_k = None
        stages_f[k] = Lf
        lam_left[k] = lam_k.copy()
        lam_g_left[k] = None if lam_g_k is None else lam_g_k.copy()

        tr = trans_by_post.get(k)
        if tr is not None and k > 0:
            pre = steps[k - 1]
            lam_post_val = lam_k
            degenerate = False
            if tr.kind == TransitionKind.LEAVE_SLIDING:
                lam = np.zeros((n, nf))
                lam_g = np.zeros((model.n_z, nf))
                pis = np.zeros(nf)
                for j in range(nf):
                    lj, gj, nj = slide_entry_projection(
                        model, pre.x_end, pre.z_end, pre.u, lam_post_val[:, j]
                    )
                    lam[:, j] = lj
                    lam_g[:, j] = gj
                    pis[j] = float(nj[0])
            else:
                gx_row = model.g_x(st.x)[0]
                try:
                    if jump_formula == "simple":
                        pis = np.array([
                            jump_pi_simple(model, st.x, st.z, pre.u, lam_post_val[:, j],
                                           pre.phase, st.phase, min_denominator)
                            for j in range(nf)
                        ])
                    else:
                        d_pre = _w_tail(model, tab, pre)
                        d_post = _w_tail(model, tab, st)
                        den = float(gx_row @ d_pre)
                        scale = max(1.0, float(np.abs(gx_row).max() * np.abs(d_pre).max()))
                        if abs(den) < min_denominator * scale:
                            raise TangentialCrossingError(
                                f"jump denominator {den:.3e} below threshold",
                                diagnostics={"den": den, "t": st.t},
                            )
                        pis = (lam_post_val.T @ d_pre - lam_right[k].T @ d_post) / den
                except TangentialCrossingError:
                    # grazing transition: the multiplier is ill-posed, keep
                    # the adjoint continuous and flag the record
                    pis = np.zeros(nf)
                    degenerate = True
                lam = lam_post_val - np.outer(gx_row, pis)
                lam_g = None
            for j in range(nf):
                jumps[j].append(
                    JumpRecord(k, tr.t, tr.kind, float(pis[j]), lam_post_val[:, j].copy(),
                               lam[:, j].copy(), degenerate)
                )
        else:
            lam, lam_g = lam_k, lam_g_k

    records = []
    for j in range(nf):
        records.append(
            AdjointRecord(
                lam_left=tuple(a[:, j].copy() for a in lam_left),
                lam_right=tuple(a[:, j].copy() for a in lam_right),
                lam_g_left=tuple(None if a is None else a[:, j].copy() for a in lam_g_left),
                stages_f=tuple(a[:, :, j].copy() for a in stages_f),
                stages_g=tuple(None if a is None else a[:, :, j].copy() for a in stages_g),
                jumps=tuple(reversed(jumps[j])),
                lam_tf=lam_tf[:, j].copy(),
                lam_g_tf=None if lam_g_tf is None else lam_g_tf[:, j].copy(),
                nu1=None if nu1 is None else nu1[:, j].copy(),
                n_steps=K,
            )
        )
    return records


def _step_ode_batch(model, tab, step: StepRecord, lam_next):
    """ODE backward step for a matrix of adjoint columns ``(n_x, nf)``."""
    s, n = tab.s, model.n_x
    nf = lam_next.shape[1]
    _, f_x, _ = model.region_field(step.phase)
    fxs = [f_x(step.stages_x[i], step.u) for i in range(s)]
    M = np.zeros((s * n, s * n))
    rhs = np.tile(lam_next, (s, 1))
    for i in range(s):
        for j in range(s):
            blk = -step.h * tab.A_bar[i, j] * fxs[j].T
            if i == j:
                blk = blk + np.eye(n)
            M[i * n : (i + 1) * n, j * n : (j + 1) * n] = blk
    sol = np.linalg.solve(M, rhs)
    Lf = sol.reshape(s, n, nf)
    lam = lam_next + step.h * sum(tab.b[i] * (fxs[i].T @ Lf[i]) for i in range(s))
    return lam, Lf


def _step_dae_batch(model, tab, step: StepRecord, lam_next, lam_g_next):
    """Sliding backward step for a matrix of adjoint columns ``(n_x, nf)``."""
    s, n, m = tab.s, model.n_x, model.n_z
    nf = lam_next.shape[1]
    u = step.u
    X, Z = step.stages_x, step.stages_z
    fxs = [sliding_rhs_x(model, X[i], Z[i], u) for i in range(s)]
    gxs = [model.g_x(X[i]) for i in range(s)]
    dim = s * (n + m)
    M = np.zeros((dim, dim))
    rhs = np.zeros((dim, nf))
    for i in range(s):
        rf = slice(i * n, (i + 1) * n)
        rhs[rf] = lam_next
        for j in range(s):
            cf = slice(j * n, (j + 1) * n)
            cg = slice(s * n + j * m, s * n + (j + 1) * m)
            blk = -step.h * tab.A_bar[i, j] * fxs[j].T
            if i == j:
                blk = blk + np.eye(n)
            M[rf, cf] = blk
            M[rf, cg] = -step.h * tab.A_bar[i, j] * gxs[j].T
        rg = slice(s * n + i * m, s * n + (i + 1) * m)
        M[rg, slice(i * n, (i + 1) * n)] = gxs[i]
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise IndexConditionError("singular adjoint stage system on sliding step") from exc
    Lf = sol[: s * n].reshape(s, n, nf)
    Lg = sol[s * n :].reshape(s, m, nf)
    lam = lam_next + step.h * sum(tab.b[i] * (fxs[i].T @ Lf[i] + gxs[i].T @ Lg[i]) for i in range(s))
    lam_g = lam_g_next + sum(tab.b_bar_minus[i] * (Lg[i] - lam_g_next) for i in range(s))
    return lam, lam_g, Lf, Lg


def reconstruct_step_multipliers(model, tab, step: StepRecord, Lf, Lg, lam_right):
    """Rebuild the augmented multiplier residual for one sliding step.

    Forms the full transposed discrete-step system applied to the recovered
    ``R`` vector (stage rows from the stage adjoints, tail ``lam_right``)
    and returns the residual against the augmented right-hand side whose
    stage entries vanish; a small residual confirms the reduced (lambda-only)
    representation.
    """
    s, n, m = tab.s, model.n_x, model.n_z
    u = step.u
    X, Z, h = step.stages_x, step.stages_z, step.h
    fxs = [sliding_rhs_x(model, X[i], Z[i], u) for i in range(s)]
    fzs = [model.g_x(X[i]).T for i in range(s)]
    gxs = [model.g_x(X[i]) for i in range(s)]
    w = n + m
    dim = s * w + n
    F = np.zeros((dim, dim))
    for i in range(s):
        rx = slice(i * w, i * w + n)
        rz = slice(i * w + n, (i + 1) * w)
        for j in range(s):
            cx = slice(j * w, j * w + n)
            cz = slice(j * w + n, (j + 1) * w)
            blk = -h * tab.A[i, j] * fxs[j]
            if i == j:
                blk = blk + np.eye(n)
            F[rx, cx] = blk
            F[rx, cz] = -h * tab.A[i, j] * fzs[j]
        F[rz, slice(i * w, i * w + n)] = -gxs[i]
        F[s * w :, rx.start : rx.start + n] = -h * tab.b[i] * fxs[i]
        F[s * w :, i * w + n : (i + 1) * w] = -h * tab.b[i] * fzs[i]
    F[s * w :, s * w :] = np.eye(n)
    R = np.zeros(dim)
    for i in range(s):
        R[i * w : i * w + n] = h * tab.b[i] * (fxs[i].T @ Lf[i] + gxs[i].T @ Lg[i])
        R[i * w + n : (i + 1) * w] = h * tab.b[i] * Lg[i]
    R[s * w :] = lam_right
    lhs = F.T @ R
    rhs = np.zeros(dim)
    rhs[s * w :] = lam_right
    return lhs - rhs


def write_adjoint_csv(adj: AdjointRecord, traj: TrajectoryRecord, path) -> None:
    """Adjoint CSV sorted by time, with pre/post rows duplicated at jumps."""
    import csv as _csv

    n_x = adj.lam_tf.size
    n_z = 1 if adj.lam_g_tf is None else adj.lam_g_tf.size
    header = ["t", "side"] + [f"lam_f{i}" for i in range(n_x)] + [f"lam_g{i}" for i in range(n_z)]
    jump_by_idx = {j.step_index: j for j in adj.jumps}
    with open(path, "w", newline="\n") as fh:
        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for k, st in enumerate(traj.steps):
            jr = jump_by_idx.get(k)
            if jr is not None:
                writer.writerow(_adj_row(jr.t, "pre", jr.lam_pre, None, n_z))
                writer.writerow(_adj_row(jr.t, "post", jr.lam_post, adj.lam_g_left[k], n_z))
            else:
                writer.writerow(_adj_row(st.t, "", adj.lam_left[k], adj.lam_g_left[k], n_z))
        writer.writerow(_adj_row(traj.tf, "", adj.lam_tf, adj.lam_g_tf, n_z))


def _adj_row(t, side, lam, lam_g, n_z):
    gvals = [float("nan")] * n_z if lam_g is None else list(lam_g)
    return [f"{t:.17g}", side] + [f"{v:.17g}" for v in lam] + [f"{v:.17g}" for v in gvals]
