"""SQP solver for the discretized optimal control problem.

Decision variables are the flattened piecewise-constant control values under
box bounds, with a few endpoint equality/inequality constraints.  The search
direction comes from a dense active-set QP; curvature is maintained by
damped BFGS updates; globalization uses a backtracking line search on an
l1 penalty merit function.  All functionals of one iterate are evaluated off
a single forward trajectory with one backward sweep per functional.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .adjoint import backward_sweep_batch
from .errors import ConfigurationError, IntegrationError
from .forward import IntegratorOptions, integrate
from .gradient import assemble
from .problems import ProblemSpec
from .tableau import Tableau, radau_iia


@dataclass(frozen=True)
class NlpEval:
    """All functional values and gradients at one control iterate."""

    phi: float
    grad_phi: np.ndarray
    c_eq: np.ndarray
    A_eq: np.ndarray
    c_in: np.ndarray
    A_in: np.ndarray
    n_transitions: int = 0
    extra: Optional[object] = None


@dataclass(frozen=True)
class Nlp:
    """Smooth NLP over box-bounded variables with few general constraints."""

    n: int
    lb: np.ndarray
    ub: np.ndarray
    evaluate: Callable[[np.ndarray], NlpEval]
    evaluate_value: Optional[Callable[[np.ndarray], NlpEval]] = None  # values only, no gradients
    name: str = "nlp"

    def values_at(self, u: np.ndarray) -> NlpEval:
        return (self.evaluate_value or self.evaluate)(u)


@dataclass(frozen=True)
class SqpOptions:
    eps: float = 1e-6
    max_iter: int = 200
    armijo: float = 0.1
    backtrack: float = 0.5
    min_alpha: float = 1e-8
    penalty0: float = 1.0
    h0: float = 0.0  # 0: scale from the initial gradient and box width


@dataclass
class IterRow:
    k: int
    phi: float
    max_eq: float
    max_in: float
    sigma: float
    alpha: float
    n_transitions: int


@dataclass
class SqpResult:
    u: np.ndarray
    converged: bool
    iterations: int
    status: str
    log: list
    sigma: float
    final: NlpEval
    multipliers_eq: np.ndarray
    multipliers_in: np.ndarray


# ---------------------------------------------------------------------------
# dense active-set QP
# ---------------------------------------------------------------------------


class QpFailure(Exception):
    pass


def solve_qp(H, gvec, A_eq, b_eq, A_in, b_in, lb, ub, max_iter=None):
    """Minimize ``0.5 d'Hd + g'd`` s.t. ``A_eq d = b_eq``, ``A_in d <= b_in``,
    ``lb <= d <= ub`` with SPD ``H``.

    Primal-dual active-set iteration on the box and inequality working sets;
    equalities stay active throughout.  Falls back to single-exchange (most
    violated first) when the full-exchange iteration cycles.

    Returns ``(d, mu_eq, mu_in, status)`` with ``status`` in
    ``{"optimal", "infeasible"}``.
    """
    n = len(gvec)
    A_eq = np.zeros((0, n)) if A_eq is None or len(A_eq) == 0 else np.atleast_2d(A_eq)
    b_eq = np.zeros(0) if A_eq.shape[0] == 0 else np.atleast_1d(b_eq)
    A_in = np.zeros((0, n)) if A_in is None or len(A_in) == 0 else np.atleast_2d(A_in)
    b_in = np.zeros(0) if A_in.shape[0] == 0 else np.atleast_1d(b_in)
    m_in = A_in.shape[0]
    if max_iter is None:
        max_iter = 50 * (n + m_in + 2)

    lower = np.zeros(n, dtype=bool)
    upper = np.zeros(n, dtype=bool)
    act_in = np.zeros(m_in, dtype=bool)
    seen = set()
    single_exchange = False
    d = np.clip(np.zeros(n), lb, ub)
    mu_eq = np.zeros(A_eq.shape[0])
    mu_in = np.zeros(m_in)

    for _ in range(max_iter):
        key = (lower.tobytes(), upper.tobytes(), act_in.tobytes())
        if key in seen:
            single_exchange = True
        seen.add(key)

        free = ~(lower | upper)
        d = np.where(lower, lb, np.where(upper, ub, 0.0))
        rows = [A_eq[i] for i in range(A_eq.shape[0])] + [A_in[j] for j in range(m_in) if act_in[j]]
        rhs_rows = [b_eq[i] for i in range(A_eq.shape[0])] + [b_in[j] for j in range(m_in) if act_in[j]]
        A_act = np.array(rows) if rows else np.zeros((0, n))
        b_act = np.array(rhs_rows) if rhs_rows else np.zeros(0)
        nf = int(free.sum())
        ma = A_act.shape[0]
        KKT = np.zeros((nf + ma, nf + ma))
        KKT[:nf, :nf] = H[np.ix_(free, free)]
        if ma:
            KKT[:nf, nf:] = A_act[:, free].T
            KKT[nf:, :nf] = A_act[:, free]
            KKT[nf:, nf:] = -1e-14 * np.eye(ma)
        rhs = np.concatenate([
            -gvec[free] - H[np.ix_(free, ~free)] @ d[~free],
            (b_act - A_act[:, ~free] @ d[~free]) if ma else np.zeros(0),
        ])
        try:
            sol = np.linalg.solve(KKT, rhs)
        except np.linalg.LinAlgError:
            try:
                sol = np.linalg.lstsq(KKT, rhs, rcond=None)[0]
            except np.linalg.LinAlgError:
                raise QpFailure("singular KKT system")
        d[free] = sol[:nf]
        mus = sol[nf:]
        mu_eq = mus[: A_eq.shape[0]]
        mu_act = mus[A_eq.shape[0]:]
        mu_in = np.zeros(m_in)
        mu_in[np.flatnonzero(act_in)] = mu_act

        lam = H @ d + gvec + A_eq.T @ mu_eq + A_in.T @ mu_in

        viol = []
        tol = 1e-11 * (1.0 + np.abs(d).max())
        for i in range(n):
            if free[i]:
                if d[i] < lb[i] - tol:
                    viol.append(("lo", i, lb[i] - d[i]))
                elif d[i] > ub[i] + tol:
                    viol.append(("hi", i, d[i] - ub[i]))
        for j in range(m_in):
            if not act_in[j]:
                r = A_in[j] @ d - b_in[j]
                if r > tol:
                    viol.append(("in", j, r))
        dual = []
        for i in range(n):
            if lower[i] and lam[i] < -tol:
                dual.append(("lo", i, -lam[i]))
            if upper[i] and lam[i] > tol:
                dual.append(("hi", i, lam[i]))
        for j in range(m_in):
            if act_in[j] and mu_in[j] < -tol:
                dual.append(("in", j, -mu_in[j]))

        if not viol and not dual:
            if A_eq.shape[0] and np.abs(A_eq @ d - b_eq).max() > 1e-8 * (1.0 + np.abs(b_eq).max()):
                raise QpFailure("equality constraints unreachable within the box")
            return d, mu_eq, mu_in, "optimal"

        changes = viol if viol else dual
        adding = bool(viol)
        if single_exchange:
            changes = [max(changes, key=lambda v: v[2])]
        for kind, i, _ in changes:
            if adding:
                if kind == "lo":
                    lower[i] = True
                    upper[i] = False
                elif kind == "hi":
                    upper[i] = True
                    lower[i] = False
                else:
                    act_in[i] = True
            else:
                if kind == "lo":
                    lower[i] = False
                elif kind == "hi":
                    upper[i] = False
                else:
                    act_in[i] = False
    raise QpFailure("active-set iteration limit")


def qp_step(H, ev: NlpEval, lb_shift, ub_shift):
    """SQP direction subproblem around the current iterate.

    Minimizes the quadratic model subject to linearized endpoint constraints
    and the shifted box; on an infeasible linearization, retries a
    Gauss-Newton restoration objective (constraint-violation descent) under
    the box alone.

    Returns ``(d, mu_eq, mu_in, mode)`` with ``mode`` in
    ``{"qp", "restoration"}``.
    """
    try:
        d, mu_eq, mu_in, _ = solve_qp(
            H, ev.grad_phi, ev.A_eq, -ev.c_eq, ev.A_in, -ev.c_in, lb_shift, ub_shift
        )
        return d, mu_eq, mu_in, "qp"
    except QpFailure:
        pass
    Hr = H + 1e-6 * np.eye(len(ev.grad_phi))
    gr = np.zeros(len(ev.grad_phi))
    if ev.A_eq.size:
        Hr = Hr + ev.A_eq.T @ ev.A_eq * 10.0
        gr = gr + 10.0 * ev.A_eq.T @ ev.c_eq
    active = ev.c_in > 0
    if active.any():
        A = ev.A_in[active]
        Hr = Hr + A.T @ A * 10.0
        gr = gr + 10.0 * A.T @ ev.c_in[active]
    d, _, _, _ = solve_qp(Hr, gr, None, None, None, None, lb_shift, ub_shift)
    m_eq = ev.A_eq.shape[0] if ev.A_eq.size else 0
    m_in = ev.A_in.shape[0] if ev.A_in.size else 0
    return d, np.zeros(m_eq), np.zeros(m_in), "restoration"


def bfgs_powell_update(H, s, y, damping=0.2):
    """Damped BFGS update keeping the approximation positive definite.

    When the curvature product ``s'y`` falls below ``damping * s'Hs`` the
    gradient difference is blended with ``Hs`` so the update stays SPD.
    """
    s = np.asarray(s, float)
    y = np.asarray(y, float)
    Hs = H @ s
    sHs = float(s @ Hs)
    if sHs <= 0:
        raise ConfigurationError("BFGS curvature product nonpositive")
    sy = float(s @ y)
    if sy >= damping * sHs:
        theta = 1.0
    else:
        theta = (1.0 - damping) * sHs / (sHs - sy)
    yt = theta * y + (1.0 - theta) * Hs
    syt = float(s @ yt)
    if syt <= 1e-16 * sHs:
        return H.copy()
    Hn = H - np.outer(Hs, Hs) / sHs + np.outer(yt, yt) / syt
    return 0.5 * (Hn + Hn.T)


def _merit(ev: NlpEval, c_pen: float) -> float:
    return ev.phi + c_pen * (np.abs(ev.c_eq).sum() + np.clip(ev.c_in, 0.0, None).sum())


def _second_order_correction(nlp, u, d, ev, cand):
    """Feasibility-restoring correction after a rejected full step.

    Uses the current constraint Jacobians with the residuals of the trial
    point (least-norm shift), countering the curvature-induced rejection of
    otherwise good steps near the constraint manifold.
    """
    rows = []
    res = []
    if ev.A_eq.size:
        rows.append(ev.A_eq)
        res.append(cand.c_eq)
    if ev.A_in.size:
        act = cand.c_in > 0
        if act.any():
            rows.append(ev.A_in[act])
            res.append(cand.c_in[act])
    if not rows:
        return None
    A = np.vstack(rows)
    r = np.concatenate(res)
    try:
        dc = -A.T @ np.linalg.solve(A @ A.T + 1e-14 * np.eye(A.shape[0]), r)
    except np.linalg.LinAlgError:
        return None
    return np.clip(u + d + dc, nlp.lb, nlp.ub)


def _line_search(nlp, u, d, ev, m0, c_pen, descent, opts):
    """Backtracking Armijo on the l1 merit with one SOC attempt at full step.

    Returns ``(alpha, u_new)``; ``u_new`` is ``None`` on failure.  Iterates
    stay inside the box because ``d`` respects the shifted bounds.
    """
    alpha = 1.0
    tried_soc = False
    while alpha >= opts.min_alpha:
        u_try = np.clip(u + alpha * d, nlp.lb, nlp.ub)
        try:
            cand = nlp.values_at(u_try)
        except IntegrationError:
            alpha *= opts.backtrack
            continue
        if _merit(cand, c_pen) <= m0 + opts.armijo * alpha * descent:
            return alpha, u_try
        if alpha == 1.0 and not tried_soc:
            tried_soc = True
            u_soc = _second_order_correction(nlp, u, d, ev, cand)
            if u_soc is not None:
                try:
                    cand2 = nlp.values_at(u_soc)
                    if _merit(cand2, c_pen) <= m0 + opts.armijo * descent:
                        return 1.0, u_soc
                except IntegrationError:
                    pass
        alpha *= opts.backtrack
    return 0.0, None


def _viol(ev: NlpEval):
    max_eq = float(np.abs(ev.c_eq).max()) if ev.c_eq.size else 0.0
    max_in = float(np.clip(ev.c_in, 0.0, None).max()) if ev.c_in.size else 0.0
    return max_eq, max_in


def solve(nlp: Nlp, u0, opts: SqpOptions = SqpOptions()) -> SqpResult:
    """Run the SQP iteration from ``u0`` until the stopping test holds.

    Stopping requires the QP model decrease ``sigma >= -eps`` together with
    all constraint residuals within ``eps``.  All accepted iterates satisfy
    the box bounds exactly.
    """
    u = np.clip(np.asarray(u0, dtype=float), nlp.lb, nlp.ub)
    ev = nlp.evaluate(u)
    n = nlp.n
    h0 = opts.h0
    if h0 <= 0.0:
        # first QP step should be able to traverse an O(box) distance
        box = np.max(np.where(np.isfinite(nlp.ub - nlp.lb), nlp.ub - nlp.lb, 1.0))
        gscale = max(np.abs(ev.grad_phi).max(), np.abs(ev.A_eq).max() if ev.A_eq.size else 0.0, 1e-12)
        h0 = gscale / max(box, 1e-12)
    H = h0 * np.eye(n)
    c_pen = opts.penalty0
    log: list[IterRow] = []
    mu_eq = np.zeros(ev.A_eq.shape[0] if ev.A_eq.size else 0)
    mu_in = np.zeros(ev.A_in.shape[0] if ev.A_in.size else 0)
    sigma = -np.inf
    status = "max-iterations"
    converged = False
    stalls = 0

    for k in range(opts.max_iter):
        d, mu_eq_new, mu_in_new, mode = qp_step(H, ev, nlp.lb - u, nlp.ub - u)
        sigma = float(0.5 * d @ H @ d + ev.grad_phi @ d)
        max_eq, max_in = _viol(ev)
        if mode == "qp":
            mu_eq, mu_in = mu_eq_new, mu_in_new
        if sigma >= -opts.eps and max_eq <= opts.eps and max_in <= opts.eps and mode == "qp":
            log.append(IterRow(k, ev.phi, max_eq, max_in, sigma, 0.0, ev.n_transitions))
            converged = True
            status = "converged"
            break

        mults = np.concatenate([np.abs(mu_eq), np.abs(mu_in)]) if (mu_eq.size + mu_in.size) else np.zeros(1)
        need = 2.0 * float(mults.max()) if mults.size else opts.penalty0
        c_pen = max(need, 0.5 * (c_pen + need), opts.penalty0)
        m0 = _merit(ev, c_pen)
        descent = float(ev.grad_phi @ d) - c_pen * (
            np.abs(ev.c_eq).sum() + np.clip(ev.c_in, 0.0, None).sum()
        )
        if descent >= 0.0:
            descent = -max(1e-16, abs(sigma))

        alpha, u_new = _line_search(nlp, u, d, ev, m0, c_pen, descent, opts)
        if u_new is None:
            log.append(IterRow(k, ev.phi, max_eq, max_in, sigma, 0.0, ev.n_transitions))
            stalls += 1
            if stalls >= 8:
                status = "line-search-failure"
                break
            # model too optimistic here: stiffen it, shortening the next step
            H = 10.0 * H
            continue
        stalls = 0
        ev_new = nlp.evaluate(u_new)

        s = u_new - u
        gL_old = ev.grad_phi.copy()
        gL_new = ev_new.grad_phi.copy()
        if mu_eq.size:
            gL_old = gL_old + ev.A_eq.T @ mu_eq
            gL_new = gL_new + ev_new.A_eq.T @ mu_eq
        if mu_in.size:
            gL_old = gL_old + ev.A_in.T @ mu_in
            gL_new = gL_new + ev_new.A_in.T @ mu_in
        if np.abs(s).max() > 1e-10 * (1.0 + np.abs(u).max()):
            try:
                H = bfgs_powell_update(H, s, gL_new - gL_old)
            except ConfigurationError:
                H = h0 * np.eye(n)
        log.append(IterRow(k, ev.phi, max_eq, max_in, sigma, alpha, ev.n_transitions))
        u = u_new
        ev = ev_new

    max_eq, max_in = _viol(ev)
    return SqpResult(
        u=u,
        converged=converged,
        iterations=len(log),
        status=status,
        log=log,
        sigma=sigma,
        final=ev,
        multipliers_eq=mu_eq,
        multipliers_in=mu_in,
    )


# ---------------------------------------------------------------------------
# endpoint NLP built on the trajectory machinery
# ---------------------------------------------------------------------------


def build_endpoint_nlp(spec: ProblemSpec, opts: IntegratorOptions,
                       n_controls: Optional[int] = None,
                       jump_formula: str = "discrete",
                       tab: Optional[Tableau] = None) -> Nlp:
    """NLP whose functionals are endpoint values of one shared trajectory.

    Each evaluation integrates once and runs one backward sweep per
    functional (objective first), assembling all reduced gradients on the
    same mesh.
    """
    tab = tab or radau_iia(3)
    template = spec.grid(n_controls=n_controls)
    N, n_u = template.n_intervals, template.n_u
    lb = np.tile(np.atleast_1d(spec.u_min), N)
    ub = np.tile(np.atleast_1d(spec.u_max), N)
    funcs = spec.functionals()

    n_eq = len(spec.eq_constraints)
    n_in = len(spec.ineq_constraints)

    def evaluate(u_flat: np.ndarray, with_grad: bool = True) -> NlpEval:
        grid = template.with_values(np.asarray(u_flat, float).reshape(N, n_u))
        traj = integrate(spec.model, tab, grid, spec.x0, opts)
        vals = [fn.value(traj.x_end) for fn in funcs]
        if with_grad:
            adjs = backward_sweep_batch(
                spec.model, tab, traj, [fn.grad(traj.x_end) for fn in funcs], jump_formula
            )
            grads = [
                assemble(traj, adj, spec.model, grid, fn.name).flat()
                for fn, adj in zip(funcs, adjs)
            ]
        else:
            grads = [np.zeros(N * n_u)] * len(funcs)
        return NlpEval(
            phi=vals[0],
            grad_phi=grads[0],
            c_eq=np.array(vals[1 : 1 + n_eq]),
            A_eq=np.array(grads[1 : 1 + n_eq]).reshape(n_eq, N * n_u),
            c_in=np.array(vals[1 + n_eq :]),
            A_in=np.array(grads[1 + n_eq :]).reshape(n_in, N * n_u),
            n_transitions=len(traj.transitions),
            extra=traj,
        )

    return Nlp(
        n=N * n_u,
        lb=lb,
        ub=ub,
        evaluate=evaluate,
        evaluate_value=lambda u_flat: evaluate(u_flat, with_grad=False),
        name=spec.name,
    )
