"""Command-line interface: solve, simulate, check-gradient, study.

Exit codes: 0 ok, 1 study anomaly / failed check, 2 iteration limit,
3 integrator failure, 64 usage error, 65 malformed data file.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .adjoint import backward_sweep, write_adjoint_csv
from .errors import DataFormatError, IntegrationError, ProblemLookupError, SlidingOcError
from .forward import IntegratorOptions, integrate, write_trajectory_csv
from .gradient import assemble, fd_gradient, probe_grid, write_gradient_csv
from .nlp import SqpOptions, build_endpoint_nlp, solve
from .problems import get_problem, problem_names
from .studies import order_study, switching_time_study
from .tableau import radau_iia

EXIT_OK = 0
EXIT_ANOMALY = 1
EXIT_MAX_ITER = 2
EXIT_INTEGRATOR = 3
EXIT_USAGE = 64
EXIT_DATA = 65


@dataclass(frozen=True)
class RunConfig:
    """Flat run configuration; config-file keys mirror the field names."""

    problem: str = "mass-spring"
    n_controls: int = 0  # 0: problem default
    steps: int = 0  # 0: problem default
    tol_newton: float = 1e-12
    tol_surface: float = 1e-9
    tol_root: float = 1e-12
    eps: float = 1e-6
    jump: str = "discrete"
    out: str = "out"
    threads: int = 1
    seed: int = 0
    max_iter: int = 200
    grad_tol: float = 1e-6

    def validate(self):
        for name in ("tol_newton", "tol_surface", "tol_root", "eps"):
            if getattr(self, name) <= 0:
                raise DataFormatError(f"{name} must be positive")
        if self.jump not in ("discrete", "simple"):
            raise DataFormatError(f"jump must be 'discrete' or 'simple', got {self.jump!r}")
        if self.steps and self.n_controls and self.steps < self.n_controls:
            raise DataFormatError("steps must be >= n-controls")

    def integrator_options(self, n_steps: int) -> IntegratorOptions:
        return IntegratorOptions(
            n_steps=n_steps,
            newton_tol=self.tol_newton,
            surface_tol=self.tol_surface,
            root_tol=self.tol_root,
        )


_CONFIG_TYPES = {
    "problem": str, "n_controls": int, "steps": int, "tol_newton": float,
    "tol_surface": float, "tol_root": float, "eps": float, "jump": str,
    "out": str, "threads": int, "seed": int, "max_iter": int, "grad_tol": float,
}


def read_config_file(path) -> dict:
    """Flat ``key=value`` config file; '#' starts a comment."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataFormatError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataFormatError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _CONFIG_TYPES:
            raise DataFormatError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _CONFIG_TYPES[key](val)
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: bad value for {key}: {val!r}") from exc
    return values


def read_control_file(path, n_u_expected=None):
    """Control file: header ``N n_u`` then N rows of n_u values."""
    try:
        lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    except OSError as exc:
        raise DataFormatError(f"cannot read control file {path}: {exc}") from exc
    if not lines:
        raise DataFormatError(f"{path}: empty control file")
    head = lines[0].split()
    if len(head) != 2:
        raise DataFormatError(f"{path}: header must be 'N n_u'")
    try:
        N, n_u = int(head[0]), int(head[1])
    except ValueError as exc:
        raise DataFormatError(f"{path}: non-integer header") from exc
    if N <= 0 or n_u <= 0 or len(lines) - 1 != N:
        raise DataFormatError(f"{path}: expected {N} control rows, found {len(lines) - 1}")
    if n_u_expected is not None and n_u != n_u_expected:
        raise DataFormatError(f"{path}: control dimension {n_u} != problem dimension {n_u_expected}")
    vals = np.zeros((N, n_u))
    for i, ln in enumerate(lines[1:]):
        parts = ln.split()
        if len(parts) != n_u:
            raise DataFormatError(f"{path}: row {i} has {len(parts)} values, expected {n_u}")
        try:
            vals[i] = [float(p) for p in parts]
        except ValueError as exc:
            raise DataFormatError(f"{path}: non-numeric value in row {i}") from exc
    return vals


def write_manifest(cfg: RunConfig, out_dir: Path, command: str, extra=None):
    lines = [f"command={command}", f"version={__version__}"]
    for key, val in sorted(asdict(cfg).items()):
        lines.append(f"{key}={val}")
    for key, val in sorted((extra or {}).items()):
        lines.append(f"{key}={val}")
    (out_dir / "run-manifest.txt").write_text("\n".join(lines) + "\n")


def _resolve(cfg: RunConfig):
    spec = get_problem(cfg.problem)
    N = cfg.n_controls or spec.n_controls
    K = cfg.steps or max(spec.n_steps, N)
    if K < N:
        raise DataFormatError("steps must be >= n-controls")
    return spec, N, K


def _write_iteration_log(result, path):
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k", "objective", "max_eq_violation", "max_ineq_violation",
                         "sigma", "step_length", "transitions"])
        for row in result.log:
            writer.writerow([row.k, f"{row.phi:.17g}", f"{row.max_eq:.6e}",
                             f"{row.max_in:.6e}", f"{row.sigma:.6e}",
                             f"{row.alpha:.6e}", row.n_transitions])


def cmd_solve(cfg: RunConfig) -> int:
    spec, N, K = _resolve(cfg)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    opts = cfg.integrator_options(K)
    nlp = build_endpoint_nlp(spec, opts, n_controls=N, jump_formula=cfg.jump)
    u0 = spec.grid(n_controls=N).flat()
    result = solve(nlp, u0, SqpOptions(eps=cfg.eps, max_iter=cfg.max_iter))
    _write_iteration_log(result, out_dir / "iteration_log.csv")

    tab = radau_iia(3)
    grid = spec.grid(values=result.u.reshape(N, spec.grid().n_u), n_controls=N)
    traj = integrate(spec.model, tab, grid, spec.x0, opts)
    write_trajectory_csv(traj, out_dir / "trajectory.csv")
    adj = backward_sweep(spec.model, tab, traj, spec.objective.grad(traj.x_end), cfg.jump)
    write_adjoint_csv(adj, traj, out_dir / "adjoint.csv")
    grad = assemble(traj, adj, spec.model, grid)

    def evaluate(u_flat):
        g2 = probe_grid(grid, u_flat.reshape(N, grid.n_u))
        t2 = integrate(spec.model, tab, g2, spec.x0, opts)
        return spec.objective.value(t2.x_end), len(t2.transitions)

    fd_vals, _ = fd_gradient(evaluate, result.u)
    write_gradient_csv(grad, fd_vals, out_dir / "gradient_report.csv")

    write_manifest(cfg, out_dir, "solve", {
        "status": result.status, "iterations": result.iterations,
        "objective": result.final.phi, "sigma": result.sigma,
    })
    print(f"solve {spec.name}: {result.status} after {result.iterations} iterations, "
          f"objective {result.final.phi:.9g}")
    for row in (result.log[-1],) if result.log else ():
        print(f"  max |c_eq| {row.max_eq:.3e}, max c_in {row.max_in:.3e}, sigma {row.sigma:.3e}")
    return EXIT_OK if result.converged else EXIT_MAX_ITER


def cmd_simulate(cfg: RunConfig, control_file) -> int:
    spec, N, K = _resolve(cfg)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if control_file is not None:
        values = read_control_file(control_file, n_u_expected=len(np.atleast_1d(spec.u_min)))
        N = values.shape[0]
    else:
        values = spec.grid(n_controls=N).values
    grid = spec.grid(values=values, n_controls=N)
    K = max(cfg.steps or spec.n_steps, N)
    traj = integrate(spec.model, radau_iia(3), grid, spec.x0, cfg.integrator_options(K))
    write_trajectory_csv(traj, out_dir / "trajectory.csv")
    write_manifest(cfg, out_dir, "simulate", {"transitions": len(traj.transitions)})
    print(f"simulate {spec.name}: {len(traj.steps)} steps, {len(traj.transitions)} transitions, "
          f"x(tf) = {np.array2string(traj.x_end, precision=6)}")
    return EXIT_OK


def cmd_check_gradient(cfg: RunConfig, control_file=None) -> int:
    spec, N, K = _resolve(cfg)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tab = radau_iia(3)
    opts = cfg.integrator_options(K)
    if control_file is not None:
        values = read_control_file(control_file, n_u_expected=len(np.atleast_1d(spec.u_min)))
        N = values.shape[0]
    else:
        values = spec.grid(n_controls=N).values
    grid = spec.grid(values=values, n_controls=N)
    traj = integrate(spec.model, tab, grid, spec.x0, opts)
    adj = backward_sweep(spec.model, tab, traj, spec.objective.grad(traj.x_end), cfg.jump)
    grad = assemble(traj, adj, spec.model, grid)

    def evaluate(u_flat):
        g2 = probe_grid(grid, u_flat.reshape(N, grid.n_u))
        t2 = integrate(spec.model, tab, g2, spec.x0, opts)
        return spec.objective.value(t2.x_end), len(t2.transitions)

    fd_vals, valid = fd_gradient(evaluate, grid.flat())
    write_gradient_csv(grad, fd_vals, out_dir / "gradient_report.csv")
    adjoint_flat = grad.flat()
    scale = max(1.0, np.nanmax(np.abs(fd_vals[valid])) if valid.any() else 1.0)
    rel = np.abs(adjoint_flat[valid] - fd_vals[valid]) / scale
    worst = float(rel.max()) if rel.size else 0.0
    skipped = int((~valid).sum())
    write_manifest(cfg, out_dir, "check-gradient", {"max_rel_err": worst, "skipped": skipped})
    print(f"check-gradient {spec.name}: max rel err {worst:.3e} over {valid.sum()} components "
          f"({skipped} skipped), tolerance {cfg.grad_tol:g}")
    return EXIT_OK if worst <= cfg.grad_tol else EXIT_ANOMALY


def cmd_study(cfg: RunConfig) -> int:
    spec, N, K = _resolve(cfg)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    meshes = [K, 2 * K, 4 * K, 8 * K, 16 * K]
    u_values = spec.grid(n_controls=N).values
    report = order_study(spec, u_values, meshes, cfg.integrator_options(K), threads=cfg.threads)
    reports = [report]
    if spec.name == "crossing-osc":
        reports.append(switching_time_study(spec, meshes, cfg.integrator_options(K), threads=cfg.threads))
    lines = []
    for rep in reports:
        lines.extend(rep.lines())
    (out_dir / "study_report.txt").write_text("\n".join(lines) + "\n")
    write_manifest(cfg, out_dir, "study", {"meshes": meshes, "passed": all(r.passed for r in reports)})
    for line in lines:
        print(line)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_ANOMALY


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise DataFormatError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="slidingoc", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--problem", default=None, help=f"one of: {', '.join(problem_names())}")
        p.add_argument("--config", default=None, help="key=value config file; flags win")
        p.add_argument("--n-controls", type=int, default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--tol-newton", type=float, default=None)
        p.add_argument("--tol-surface", type=float, default=None)
        p.add_argument("--tol-root", type=float, default=None)
        p.add_argument("--eps", type=float, default=None)
        p.add_argument("--jump", choices=("discrete", "simple"), default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--max-iter", type=int, default=None)
        p.add_argument("--grad-tol", type=float, default=None)

    add_common(sub.add_parser("solve", help="run the SQP optimizer"))
    p_sim = sub.add_parser("simulate", help="forward integration with a given control")
    add_common(p_sim)
    p_sim.add_argument("--control-file", default=None)
    p_chk = sub.add_parser("check-gradient", help="adjoint gradient vs FD oracle")
    add_common(p_chk)
    p_chk.add_argument("--control-file", default=None)
    add_common(sub.add_parser("study", help="convergence-order study"))
    return parser


def make_config(args) -> RunConfig:
    values = {}
    if args.config:
        values.update(read_config_file(args.config))
    for key in _CONFIG_TYPES:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except DataFormatError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = make_config(args)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.control_file)
        if args.command == "check-gradient":
            return cmd_check_gradient(cfg, args.control_file)
        if args.command == "study":
            return cmd_study(cfg)
        print(f"unknown command {args.command!r}", file=sys.stderr)
        return EXIT_USAGE
    except ProblemLookupError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except IntegrationError as exc:
        print(f"integrator failure: {exc}", file=sys.stderr)
        return EXIT_INTEGRATOR
    except SlidingOcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ANOMALY


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
