"""Command-line entry point.

    pkwc run CONFIG
    pkwc verify CONFIG {energy,dependence,comparison,linfty,refine-tau,refine-eps} [--levels N]
    pkwc sweep CONFIG --axis scheme.mu --values 0.1,0.2 [--jobs 2]
    pkwc oracle-test --size 8 --seed 42 --cases 50

Exit codes: 0 all checks pass, 1 configuration error, 2 solver failure,
3 a check failed. Output goes to ``[output] dir``, placed below
``$PKWC_OUTPUT_ROOT`` when that variable is set.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .config import RunConfig, build_problem, override, parse_config, serialize_config
from .errors import ConfigurationError, PKWCError, RunAborted
from .grid import ScalarField
from .profiles import cosine_shape
from .stepper import TrajectoryState, check_energy_inequality
from .verification import (comparison_experiment, continuous_dependence_experiment,
                           linfty_confinement_check, oracle_cross_check, perturbation_ladder,
                           refinement_study)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_FAIL = 0, 1, 2, 3
EXPERIMENTS = ("energy", "dependence", "comparison", "linfty", "refine-tau", "refine-eps")


def output_dir(cfg: RunConfig, sub: str | None = None) -> Path:
    root = os.environ.get("PKWC_OUTPUT_ROOT")
    path = Path(root) / cfg.output.dir if root else Path(cfg.output.dir)
    if sub:
        path = path / sub
    path.mkdir(parents=True, exist_ok=True)
    return path


def _verdict(ok: bool, name: str, detail: str, out=None) -> int:
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}", file=out or sys.stdout)
    return EXIT_OK if ok else EXIT_FAIL


def _energy_ok(ledger) -> tuple[bool, float, bool]:
    worst = check_energy_inequality(ledger)
    F = ledger.energies()
    monotone = all(b <= a + ledger.tol_energy for a, b in zip(F, F[1:]))
    return worst >= -ledger.tol_energy, worst, monotone


def _simulate(cfg: RunConfig, out: Path):
    """Run the configured problem and write config, ledger, solve log and snapshots."""
    problem, info = build_problem(cfg)
    (out / "config.ini").write_text(serialize_config(cfg), encoding="utf-8")
    snaps = out / "snapshots"
    snaps.mkdir(exist_ok=True)
    every = cfg.output.snapshot_every

    def snap(state):
        io.write_snapshot(snaps / f"eta_{state.step_index:06d}.txt", state.eta, state.time)
        io.write_snapshot(snaps / f"theta_{state.step_index:06d}.txt", state.theta, state.time)

    def on_step(state, row):
        if state.step_index % every == 0:
            snap(state)

    snap(TrajectoryState(0, info.tau, problem.eta0, problem.theta0))
    try:
        traj, ledger = problem.solve(on_step=on_step)
    except RunAborted as exc:
        if cfg.output.ledger:
            io.write_ledger(out / "ledger.csv", exc.ledger)
            io.write_solves(out / "solves.csv", exc.ledger)
        raise
    if traj[-1].step_index % every:
        snap(traj[-1])
    if cfg.output.ledger:
        io.write_ledger(out / "ledger.csv", ledger)
        io.write_solves(out / "solves.csv", ledger)
    return problem, info, traj, ledger


def _guarded(fn):
    """Map configuration and solver failures to exit codes."""
    def wrapper(*args, **kw):
        try:
            return fn(*args, **kw)
        except ConfigurationError as exc:
            print(f"configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except (PKWCError, ArithmeticError) as exc:
            print(f"solver failure: {exc}", file=sys.stderr)
            return EXIT_SOLVER
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _run_into(cfg: RunConfig, out: Path) -> tuple[int, str]:
    problem, info, traj, ledger = _simulate(cfg, out)
    ok, worst, _ = _energy_ok(ledger)
    io.write_report(out / "report.csv", ("quantity", "value"), [
        ("steps", len(ledger)), ("tau", info.tau), ("tau0", info.tau0), ("M", info.M),
        ("worst_slack", worst), ("tol_energy", ledger.tol_energy),
        ("F_eps_initial", ledger.energies()[0] if len(ledger) else math.nan),
        ("F_eps_final", ledger.energies()[-1] if len(ledger) else math.nan),
    ])
    detail = (f"{len(ledger)} steps, tau={info.tau:.6g}, M={info.M:g}, "
              f"worst slack {worst:.3e} (tol {-ledger.tol_energy:.3e})") if len(ledger) else "0 steps"
    return (EXIT_OK if ok or not len(ledger) else EXIT_FAIL), detail


@_guarded
def cmd_run(config) -> int:
    cfg = parse_config(config)
    code, detail = _run_into(cfg, output_dir(cfg))
    return _verdict(code == EXIT_OK, "run energy inequality", detail)


def _verify_energy(cfg, out, args) -> int:
    problem, info, traj, ledger = _simulate(cfg, out)
    ok, worst, monotone = _energy_ok(ledger)
    io.write_report(out / "report.csv", ("step", "time", "F_eps", "slack"),
                    [(r.step, r.time, r.F_eps, r.slack) for r in ledger.rows])
    zero_forcing = problem.u is None and problem.v is None
    if zero_forcing:
        ok = ok and monotone
    return _verdict(ok, "energy", f"worst slack {worst:.3e} >= {-ledger.tol_energy:.3e}"
                    + (f", F_eps non-increasing: {monotone}" if zero_forcing else ""))


def _verify_linfty(cfg, out, args) -> int:
    problem, info, traj, ledger = _simulate(cfg, out)
    over = linfty_confinement_check(traj, problem.fns.M)
    io.write_report(out / "report.csv", ("step", "time", "eta_max_abs"),
                    [(s.step_index, s.time, float(np.max(np.abs(s.eta.values)))) for s in traj])
    return _verdict(over <= 1e-8, "linfty", f"max overshoot {over:.3e} <= 1e-08 (M = {problem.fns.M:g})")


def _verify_dependence(cfg, out, args) -> int:
    problem, _ = build_problem(cfg)
    same = continuous_dependence_experiment(problem, problem)
    shape = ScalarField(problem.grid, cosine_shape(problem.grid, 2))
    ladder = perturbation_ladder(problem, shape)
    rows = [("0", same.max_J, same.data_gap, same.empirical_ratio)]
    rows += [(io.fmt(d), r.max_J, r.data_gap, r.empirical_ratio)
             for d, r in zip((1e-2, 1e-3, 1e-4), ladder)]
    io.write_report(out / "report.csv", ("delta", "max_J", "data_gap", "ratio"), rows)
    ratios = [r.empirical_ratio for r in ladder]
    finite = all(math.isfinite(x) and x > 0 for x in ratios)
    spread = max(ratios) / min(ratios) if finite else math.inf
    ok = max(same.J_values) == 0.0 and finite and spread < 10
    return _verdict(ok, "dependence",
                    f"identical inputs max J = {same.max_J:.1e}; ladder ratios "
                    + ", ".join(f"{x:.4g}" for x in ratios) + f" (spread {spread:.3g} < 10)")


def _verify_comparison(cfg, out, args) -> int:
    problem, _ = build_problem(cfg)
    traj, _ = problem.solve()
    thetas = [s.theta for s in traj]
    forcing, fns, params = problem.forcing(), problem.fns, problem.params
    M = fns.M
    clip = lambda z: z.map(lambda x: np.clip(x, -M, M))
    high = problem.eta0
    low = clip(high - 0.1)
    crossing = clip(high + ScalarField(problem.grid, 0.1 * cosine_shape(problem.grid, 2)))
    ordered = comparison_experiment(low, high, thetas, forcing, fns, params)
    cross = comparison_experiment(crossing, high, thetas, forcing, fns, params)
    io.write_report(out / "report.csv", ("time", "ordered_excess_sq", "crossing_excess_sq", "crossing_bound"),
                    [(t, a, b, cross.bound) for t, a, b in zip(ordered.times, ordered.excess_sq, cross.excess_sq)])
    ok = ordered.passed and cross.passed
    return _verdict(ok, "comparison",
                    f"ordered max |[eta_low-eta_high]^+|_V = {ordered.max_excess_norm:.3e} <= 1e-08; "
                    f"crossing max {max(cross.excess_sq):.4g} <= C9*{cross.initial_excess_sq:.4g}+1e-08 "
                    f"= {cross.bound:.4g} (C9 = {cross.C9:.4g})")


def _verify_refine(axis: str):
    def check(cfg, out, args) -> int:
        problem, _ = build_problem(cfg)
        levels = args.levels or (4 if axis == "tau" else 3)
        table = refinement_study(problem, axis, levels, jobs=args.jobs)
        rows = []
        for k, val in enumerate(table.levels):
            rows.append((val, table.terminal_energies[k],
                         *(table.terminal_diffs[c][k - 1] if k else math.nan
                           for c in ("eta", "theta", "energy"))))
        io.write_report(out / "report.csv", (axis, "F_eps_terminal", "diff_eta", "diff_theta", "diff_energy"), rows)
        if axis == "tau":
            o_eta, o_theta = table.min_order("eta"), table.min_order("theta")
            ok = o_eta >= 0.7 and o_theta >= 0.7
            return _verdict(ok, "refine-tau", f"observed orders eta {o_eta:.3f}, theta {o_theta:.3f} (>= 0.7)")
        d = table.terminal_diffs["energy"]
        ok = len(d) >= 1 and all(b < a for a, b in zip(d, d[1:]))
        return _verdict(ok, "refine-eps", "terminal energy differences "
                        + ", ".join(f"{x:.3e}" for x in d) + " (decreasing)")
    return check


_VERIFIERS = {
    "energy": _verify_energy,
    "dependence": _verify_dependence,
    "comparison": _verify_comparison,
    "linfty": _verify_linfty,
    "refine-tau": _verify_refine("tau"),
    "refine-eps": _verify_refine("eps"),
}


@_guarded
def cmd_verify(config, experiment: str, levels: int | None = None, jobs: int = 1) -> int:
    if experiment not in _VERIFIERS:
        raise ConfigurationError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    cfg = parse_config(config)
    args = argparse.Namespace(levels=levels, jobs=jobs)
    return _VERIFIERS[experiment](cfg, output_dir(cfg, f"verify-{experiment}"), args)


@_guarded
def cmd_sweep(config, axis: str, values, jobs: int = 1) -> int:
    cfg = parse_config(config)
    if isinstance(values, str):
        values = [v.strip() for v in values.split(",") if v.strip()]
    points = []
    problems = []
    for raw in values:
        try:
            points.append((raw, override(cfg, axis, str(raw))))
        except ConfigurationError as exc:
            problems.extend(f"{axis}={raw}: {v}" for v in (exc.violations or [str(exc)]))
    if problems:
        raise ConfigurationError("sweep points fail validation:\n  " + "\n  ".join(problems), problems)
    root = output_dir(cfg)

    def one(point):
        raw, c = point
        try:
            return _run_into(c, _sub(root, f"{axis}={raw}"))
        except PKWCError as exc:
            return EXIT_SOLVER, f"solver failure: {exc}"

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(one, points))
    io.write_report(root / "sweep.csv", (axis, "exit_code", "detail"),
                    [(raw, code, detail) for (raw, _), (code, detail) in zip(points, results)])
    for (raw, _), (code, detail) in zip(points, results):
        print(f"  {axis}={raw}: {detail}")
    worst = max(code for code, _ in results)
    if worst == EXIT_SOLVER:
        print(f"FAIL sweep: solver failure in {sum(c == EXIT_SOLVER for c, _ in results)} point(s)")
        return EXIT_SOLVER
    n_ok = sum(c == EXIT_OK for c, _ in results)
    return _verdict(n_ok == len(results), "sweep", f"{n_ok}/{len(results)} points satisfy the energy inequality")


def _sub(root: Path, name: str) -> Path:
    path = root / name
    path.mkdir(parents=True, exist_ok=True)
    return path


@_guarded
def cmd_oracle_test(size: int = 8, seed: int = 0, cases: int = 50) -> int:
    if size < 2:
        raise ConfigurationError("--size must be at least 2")
    rep = oracle_cross_check(size, seed, cases)
    return _verdict(rep.passed, "oracle-test",
                    f"{rep.matches}/{len(rep.cases)} matches within {rep.tol:g} (worst {rep.worst:.3e})")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pkwc", description="Pseudo-parabolic KWC solver and verification harness")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="march the configured problem and write ledger and snapshots")
    r.add_argument("config")
    v = sub.add_parser("verify", help="run one verification experiment")
    v.add_argument("config")
    v.add_argument("experiment", choices=EXPERIMENTS)
    v.add_argument("--levels", type=int, default=None, help="refinement levels (refine-* only)")
    v.add_argument("--jobs", type=int, default=1)
    s = sub.add_parser("sweep", help="run the config for several values of one key")
    s.add_argument("config")
    s.add_argument("--axis", required=True, help="dotted key, e.g. scheme.mu")
    s.add_argument("--values", required=True, help="comma-separated list")
    s.add_argument("--jobs", type=int, default=1)
    o = sub.add_parser("oracle-test", help="cross-check the step solvers against the dense oracle")
    o.add_argument("--size", type=int, default=8)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--cases", type=int, default=50)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config)
    if args.command == "verify":
        return cmd_verify(args.config, args.experiment, args.levels, args.jobs)
    if args.command == "sweep":
        return cmd_sweep(args.config, args.axis, args.values, args.jobs)
    return cmd_oracle_test(args.size, args.seed, args.cases)


if __name__ == "__main__":
    sys.exit(main())
