"""Time marching: forcing averages, step-size guards, the theta-then-eta step,
energy bookkeeping and time interpolants."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .elliptic import SolveReport, solve_eta_step, solve_theta_step
from .errors import PreconditionError, RunAborted, PKWCError
from .grid import ScalarField, grad, norm_face, norm_h
from .model import ModelFns, SchemeParams, energy_F_eps

__all__ = [
    "TrajectoryState",
    "ForcingSequence",
    "LedgerRow",
    "EnergyLedger",
    "n_steps",
    "discretize_forcing",
    "zero_forcing",
    "max_stable_tau",
    "step",
    "run",
    "eta_march",
    "eval_interpolant",
    "check_energy_inequality",
]

_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(4)


@dataclass(frozen=True)
class TrajectoryState:
    step_index: int
    tau: float
    eta: ScalarField
    theta: ScalarField

    @property
    def time(self) -> float:
        return self.step_index * self.tau


@dataclass(frozen=True)
class ForcingSequence:
    """Step averages ``u_i, v_i`` for ``i = 0..n``; index 0 holds zero fields."""

    tau: float
    u: tuple[ScalarField, ...]
    v: tuple[ScalarField, ...]

    def __post_init__(self):
        if len(self.u) != len(self.v):
            raise ValueError("u and v sequences differ in length")
        for seq in (self.u, self.v):
            if np.any(seq[0].values != 0):
                raise ValueError("the index-0 forcing must be the zero field")

    @property
    def n_steps(self) -> int:
        return len(self.u) - 1

    @property
    def u_sup(self) -> float:
        return max(float(np.max(np.abs(x.values))) for x in self.u)


def n_steps(T: float, tau: float) -> int:
    """Smallest ``n`` with ``n * tau >= T`` (tolerant of rounding in ``T / tau``)."""
    if T <= 0:
        return 0
    n = math.ceil(T / tau)
    if (n - 1) * tau >= T * (1 - 1e-12):
        n -= 1
    return n


def _average(f: Callable[[float], ScalarField], a: float, b: float) -> ScalarField:
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    acc = None
    for x, w in zip(_GAUSS_NODES, _GAUSS_WEIGHTS):
        val = f(mid + half * x).values * (0.5 * w)
        acc = val if acc is None else acc + val
    return ScalarField(f(a).grid, acc)


def discretize_forcing(u: Callable[[float], ScalarField], v: Callable[[float], ScalarField],
                       tau: float, T: float) -> ForcingSequence:
    """Interval averages over ``(t_{i-1}, t_i]`` by 4-point Gauss-Legendre."""
    n = n_steps(T, tau)
    zeros = ScalarField.zeros(u(0.0).grid)
    us = [zeros] + [_average(u, (i - 1) * tau, i * tau) for i in range(1, n + 1)]
    vs = [zeros] + [_average(v, (i - 1) * tau, i * tau) for i in range(1, n + 1)]
    return ForcingSequence(tau, tuple(us), tuple(vs))


def zero_forcing(grid, tau: float, T: float) -> ForcingSequence:
    z = ScalarField.zeros(grid)
    n = n_steps(T, tau)
    return ForcingSequence(tau, (z,) * (n + 1), (z,) * (n + 1))


def max_stable_tau(fns: ModelFns, mu: float) -> tuple[float, float]:
    """``(tau1, tau0)``: contraction guard of the eta fixed point and energy guard.

    ``tau1 = sqrt(1 ^ mu^2) / |g'|_M``, ``tau0 = min(tau1, 1 / (6 |g'|_M))``.
    """
    lip = fns.lip_g_M
    if lip <= 0:
        return math.inf, math.inf
    tau1 = math.sqrt(min(1.0, mu * mu) / (lip * lip))
    return tau1, min(tau1, 1.0 / (6.0 * lip))


@dataclass(frozen=True)
class LedgerRow:
    step: int
    time: float
    F_eps_prev: float
    F_eps: float
    d_eta_h2: float
    d_eta_grad2: float
    d_theta_h2: float
    d_theta_grad2: float
    forcing_u: float
    forcing_v: float
    dissipation: float
    slack: float
    theta_iters: int
    eta_fp_iters: int
    eta_newton_iters: int
    theta_residual: float
    eta_residual: float
    theta_method: str = "newton"
    theta_backtracks: int = 0
    eta_backtracks: int = 0


@dataclass
class EnergyLedger:
    rows: list[LedgerRow] = field(default_factory=list)
    tol_rel: float = 1e-9

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    @property
    def max_abs_energy(self) -> float:
        if not self.rows:
            return 0.0
        return max(max(abs(r.F_eps), abs(r.F_eps_prev)) for r in self.rows)

    @property
    def tol_energy(self) -> float:
        return self.tol_rel * (1.0 + self.max_abs_energy)

    @property
    def worst_slack(self) -> float:
        return min(r.slack for r in self.rows)

    def energies(self) -> list[float]:
        if not self.rows:
            return []
        return [self.rows[0].F_eps_prev] + [r.F_eps for r in self.rows]


def _ledger_row(prev: TrajectoryState, new: TrajectoryState, u: ScalarField, v: ScalarField,
                fns: ModelFns, params: SchemeParams, th_rep: SolveReport, eta_rep: SolveReport,
                F_prev: float | None = None) -> LedgerRow:
    tau = params.tau
    de, dt = new.eta - prev.eta, new.theta - prev.theta
    d1, d2 = norm_h(de) ** 2, norm_face(grad(de)) ** 2
    d3, d4 = norm_h(dt) ** 2, norm_face(grad(dt)) ** 2
    if F_prev is None:
        F_prev = energy_F_eps(prev.eta, prev.theta, fns, params.eps)
    F_new = energy_F_eps(new.eta, new.theta, fns, params.eps)
    fu = tau / 2 * norm_h(u) ** 2
    fv = tau / (2 * fns.delta_alpha) * norm_h(v) ** 2
    diss = (d1 / (4 * tau) + params.mu**2 / tau * d2
            + fns.delta_alpha / (2 * tau) * d3 + params.nu**2 / tau * d4)
    return LedgerRow(
        step=new.step_index, time=new.time, F_eps_prev=F_prev, F_eps=F_new,
        d_eta_h2=d1, d_eta_grad2=d2, d_theta_h2=d3, d_theta_grad2=d4,
        forcing_u=fu, forcing_v=fv, dissipation=diss,
        slack=(F_prev + fu + fv) - (diss + F_new),
        theta_iters=th_rep.iterations, eta_fp_iters=eta_rep.iterations,
        eta_newton_iters=eta_rep.inner_iterations,
        theta_residual=th_rep.final_residual_norm, eta_residual=eta_rep.final_residual_norm,
        theta_method=th_rep.method,
        theta_backtracks=th_rep.line_search_backtracks,
        eta_backtracks=eta_rep.line_search_backtracks,
    )


def _guard(fns: ModelFns, params: SchemeParams) -> None:
    tau1, tau0 = max_stable_tau(fns, params.mu)
    if not params.tau < tau0:
        raise PreconditionError(
            f"tau = {params.tau:.6g} must be below tau0 = min(tau1, 1/(6|g'|_M)) = {tau0:.6g} "
            f"(tau1 = {tau1:.6g})"
        )


def step(state: TrajectoryState, u_i: ScalarField, v_i: ScalarField, fns: ModelFns,
         params: SchemeParams, F_prev: float | None = None) -> tuple[TrajectoryState, LedgerRow]:
    """One step: theta first (with the old eta), then eta (with the new theta)."""
    _guard(fns, params)
    theta, th_rep = solve_theta_step(state.eta, state.theta, v_i, fns, params)
    eta, eta_rep = solve_eta_step(state.eta, theta, u_i, fns, params)
    new = TrajectoryState(state.step_index + 1, params.tau, eta, theta)
    return new, _ledger_row(state, new, u_i, v_i, fns, params, th_rep, eta_rep, F_prev)


def run(eta0: ScalarField, theta0: ScalarField, forcing: ForcingSequence, fns: ModelFns,
        params: SchemeParams, on_step=None) -> tuple[list[TrajectoryState], EnergyLedger]:
    """March ``forcing.n_steps`` steps from ``(eta0, theta0)``.

    ``on_step(state, row)`` is called after every completed step.
    """
    _guard(fns, params)
    sup = float(np.max(np.abs(eta0.values)))
    if sup > fns.M:
        raise PreconditionError(f"|eta0|_inf = {sup:.6g} exceeds the truncation level M = {fns.M:.6g}")
    if not math.isclose(forcing.tau, params.tau, rel_tol=1e-12):
        raise PreconditionError(f"forcing was discretised with tau = {forcing.tau}, scheme uses {params.tau}")
    traj = [TrajectoryState(0, params.tau, eta0, theta0)]
    ledger = EnergyLedger()
    F_prev = energy_F_eps(eta0, theta0, fns, params.eps)
    for i in range(1, forcing.n_steps + 1):
        try:
            new, row = step(traj[-1], forcing.u[i], forcing.v[i], fns, params, F_prev=F_prev)
        except PKWCError as exc:
            raise RunAborted(f"step {i} failed: {exc}", traj, ledger, exc) from exc
        traj.append(new)
        ledger.rows.append(row)
        F_prev = row.F_eps
        if on_step is not None:
            on_step(new, row)
    return traj, ledger


def eta_march(eta0: ScalarField, thetas: Sequence[ScalarField], forcing: ForcingSequence,
              fns: ModelFns, params: SchemeParams) -> list[ScalarField]:
    """eta-only march against a prescribed theta sequence (``thetas[i]`` used in step ``i``)."""
    out = [eta0]
    for i in range(1, forcing.n_steps + 1):
        eta, _ = solve_eta_step(out[-1], thetas[i], forcing.u[i], fns, params)
        out.append(eta)
    return out


def _locate(t: float, tau: float, n: int) -> tuple[int, bool]:
    if t < -1e-12 * max(1.0, tau) or t > n * tau * (1 + 1e-12) + 1e-15:
        raise ValueError(f"t = {t} outside [0, {n * tau}]")
    x = t / tau
    k = round(x)
    if abs(x - k) <= 1e-9:
        return int(k), True
    return int(math.floor(x)), False


def eval_interpolant(trajectory: Sequence[TrajectoryState], t: float,
                     kind: str = "linear") -> tuple[ScalarField, ScalarField]:
    """Forward / backward piecewise-constant or piecewise-linear reconstruction at ``t``.

    forward: ``z_i`` on ``(t_{i-1}, t_i]``; backward: ``z_i`` on ``(t_i, t_{i+1}]``;
    linear: affine blend of ``z_{i-1}`` and ``z_i`` on ``[t_{i-1}, t_i)``.
    """
    tau = trajectory[0].tau
    n = len(trajectory) - 1
    k, on_node = _locate(t, tau, n)

    def pick(i):
        s = trajectory[i]
        return s.eta, s.theta

    if kind == "forward":
        return pick(k if on_node else k + 1)
    if kind == "backward":
        if on_node:
            return pick(max(k - 1, 0))
        return pick(k)
    if kind == "linear":
        if on_node:
            return pick(k)
        lam = (t - k * tau) / tau
        a, b = trajectory[k], trajectory[k + 1]
        return (b.eta * lam + a.eta * (1 - lam), b.theta * lam + a.theta * (1 - lam))
    raise ValueError(f"unknown interpolant kind {kind!r}")


def check_energy_inequality(ledger: EnergyLedger) -> float:
    """Worst (smallest) slack of the per-step energy inequality; compare against ``ledger.tol_energy``."""
    if not ledger.rows:
        raise ValueError("empty ledger")
    return ledger.worst_slack
