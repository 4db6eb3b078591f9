"""Experiments that exercise the qualitative properties of the scheme.

* continuous dependence on data through the gap functional ``J``,
* order preservation / the comparison bound for the eta equation,
* L-infinity confinement by the truncation level,
* self-convergence under refinement of ``tau`` and ``eps``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import ScalarField, _check_same, grad, norm_face, norm_h, norm_v
from .model import ModelFns, SchemeParams, energy_F_eps
from .problem import Problem
from .stepper import ForcingSequence, TrajectoryState, eta_march

__all__ = [
    "compute_J",
    "DependenceReport",
    "continuous_dependence_experiment",
    "perturbation_ladder",
    "ComparisonReport",
    "comparison_constant",
    "comparison_experiment",
    "linfty_confinement_check",
    "RefinementTable",
    "refinement_study",
    "OracleReport",
    "random_step_instance",
    "oracle_cross_check",
]


def compute_J(eta1: ScalarField, theta1: ScalarField, eta2: ScalarField, theta2: ScalarField,
              fns: ModelFns, params: SchemeParams) -> float:
    """Gap functional of two states (``alpha0`` evaluated at ``eta1``)."""
    for f in (theta1, eta2, theta2):
        _check_same(eta1.grid, f.grid)
    de, dt = eta1 - eta2, theta1 - theta2
    vol = eta1.grid.cell_volume
    return (norm_h(de) ** 2 + params.mu**2 * norm_face(grad(de)) ** 2
            + vol * float(np.sum(fns.alpha0(eta1.values) * dt.values**2))
            + params.nu**2 * norm_face(grad(dt)) ** 2)


@dataclass
class DependenceReport:
    times: list[float]
    J_values: list[float]
    data_gap: float
    empirical_ratio: float

    @property
    def max_J(self) -> float:
        return max(self.J_values)


def _forcing_gap(f1: ForcingSequence, f2: ForcingSequence) -> float:
    tau = f1.tau
    gu = sum(norm_h(a - b) ** 2 for a, b in zip(f1.u[1:], f2.u[1:]))
    gv = sum(norm_h(a - b) ** 2 for a, b in zip(f1.v[1:], f2.v[1:]))
    return tau * (gu + gv)


def _solve_pair(p1: Problem, p2: Problem):
    with ThreadPoolExecutor(max_workers=2) as pool:
        a = pool.submit(p1.solve)
        b = pool.submit(p2.solve)
        return a.result(), b.result()


def continuous_dependence_experiment(base: Problem, perturbed: Problem) -> DependenceReport:
    """Run both problems and record ``J(t_i)`` against the data gap."""
    _check_same(base.grid, perturbed.grid)
    if base.params != perturbed.params:
        raise ValueError("paired runs must share scheme parameters")
    (tr1, _), (tr2, _) = _solve_pair(base, perturbed)
    fns, params = base.fns, base.params
    J = [compute_J(a.eta, a.theta, b.eta, b.theta, fns, params) for a, b in zip(tr1, tr2)]
    gap = J[0] + _forcing_gap(base.forcing(), perturbed.forcing())
    top = max(J)
    ratio = 0.0 if top == 0 and gap == 0 else (math.inf if gap == 0 else top / gap)
    return DependenceReport([s.time for s in tr1], J, gap, ratio)


def perturbation_ladder(base: Problem, shape: ScalarField,
                        deltas: Sequence[float] = (1e-2, 1e-3, 1e-4)) -> list[DependenceReport]:
    """Perturb ``eta0`` by ``delta * shape`` for each delta (clipped into ``[-M, M]``)."""
    out = []
    for d in deltas:
        eta0 = (base.eta0 + shape * d).map(lambda x: np.clip(x, -base.fns.M, base.fns.M))
        out.append(continuous_dependence_experiment(base, base.replace(eta0=eta0)))
    return out


def comparison_constant(fns: ModelFns, mu: float, T: float) -> float:
    """``(1 + mu^2) / (1 ^ mu^2) * exp(2 T |g'|_M)``."""
    return (1 + mu * mu) / min(1.0, mu * mu) * math.exp(2 * T * fns.lip_g_M)


def _positive_part(z: ScalarField) -> ScalarField:
    return z.map(lambda x: np.maximum(x, 0.0))


@dataclass
class ComparisonReport:
    times: list[float]
    excess_sq: list[float]  # |[eta1 - eta2]^+|_V^2 per step
    initial_excess_sq: float
    C9: float
    tol: float
    ordered: bool
    eta1: list[ScalarField] = field(repr=False, default_factory=list)
    eta2: list[ScalarField] = field(repr=False, default_factory=list)

    @property
    def bound(self) -> float:
        return self.C9 * self.initial_excess_sq + self.tol

    @property
    def worst_margin(self) -> float:
        """``bound - max excess``; negative means the inequality failed."""
        return self.bound - max(self.excess_sq)

    @property
    def max_excess_norm(self) -> float:
        return math.sqrt(max(self.excess_sq))

    @property
    def passed(self) -> bool:
        if self.ordered:
            return self.max_excess_norm <= self.tol
        return self.worst_margin >= 0


def comparison_experiment(eta0_1: ScalarField, eta0_2: ScalarField, thetas: Sequence[ScalarField],
                          forcing: ForcingSequence, fns: ModelFns, params: SchemeParams,
                          tol: float = 1e-8) -> ComparisonReport:
    """Two eta-only marches against the same theta sequence and forcing.

    Checks ``|[eta1 - eta2]^+(t_i)|_V^2 <= C9 |[eta1_0 - eta2_0]^+|_V^2 + tol``.
    When the data are ordered (``eta0_1 <= eta0_2``) the positive part must
    stay below ``tol`` in V-norm.
    """
    _check_same(eta0_1.grid, eta0_2.grid)
    with ThreadPoolExecutor(max_workers=2) as pool:
        f1 = pool.submit(eta_march, eta0_1, thetas, forcing, fns, params)
        f2 = pool.submit(eta_march, eta0_2, thetas, forcing, fns, params)
        e1, e2 = f1.result(), f2.result()
    excess = [norm_v(_positive_part(a - b)) ** 2 for a, b in zip(e1, e2)]
    horizon = forcing.n_steps * params.tau
    return ComparisonReport(
        times=[i * params.tau for i in range(len(e1))],
        excess_sq=excess,
        initial_excess_sq=excess[0],
        C9=comparison_constant(fns, params.mu, horizon),
        tol=tol,
        ordered=bool(np.all(eta0_1.values <= eta0_2.values)),
        eta1=e1, eta2=e2,
    )


def linfty_confinement_check(trajectory: Sequence[TrajectoryState], M: float) -> float:
    """``max_i max_x (|eta_i(x)| - M)``; nonpositive when the truncation is never active."""
    return max(float(np.max(np.abs(s.eta.values))) - M for s in trajectory)


@dataclass
class RefinementTable:
    axis: str
    levels: list[float]
    terminal_diffs: dict[str, list[float]]
    observed_orders: dict[str, list[float]]
    terminal_energies: list[float]

    def min_order(self, component: str) -> float:
        orders = self.observed_orders.get(component, [])
        return min(orders) if orders else math.nan


def _orders(diffs: list[float]) -> list[float]:
    out = []
    for a, b in zip(diffs, diffs[1:]):
        out.append(math.log2(a / b) if a > 0 and b > 0 else math.inf)
    return out


def refinement_study(problem: Problem, axis: str, levels: int, jobs: int = 1) -> RefinementTable:
    """Successive halvings of ``tau`` or ``eps`` starting from the problem's value.

    Reports H-norm differences of the terminal states of successive levels and
    the observed orders ``log2(diff_k / diff_{k+1})``. For ``eps`` the table
    also carries the terminal regularised energies.
    """
    if axis not in ("tau", "eps"):
        raise ValueError(f"axis must be 'tau' or 'eps', got {axis!r}")
    if levels <= 0:
        return RefinementTable(axis, [], {"eta": [], "theta": [], "energy": []},
                               {"eta": [], "theta": [], "energy": []}, [])
    base = getattr(problem.params, axis)
    values = [base / 2**k for k in range(levels)]
    problems = [problem.with_params(**{axis: val}) for val in values]

    def terminal(p: Problem):
        traj, _ = p.solve()
        last = traj[-1]
        return last, energy_F_eps(last.eta, last.theta, p.fns, p.params.eps)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        finals = list(pool.map(terminal, problems))
    T_end = {round(s.time, 9) for s, _ in finals}
    if len(T_end) > 1:
        raise ValueError(f"levels end at different times {sorted(T_end)}; choose T divisible by every tau")
    diffs = {
        "eta": [norm_h(a.eta - b.eta) for (a, _), (b, _) in zip(finals, finals[1:])],
        "theta": [norm_h(a.theta - b.theta) for (a, _), (b, _) in zip(finals, finals[1:])],
        "energy": [abs(ea - eb) for (_, ea), (_, eb) in zip(finals, finals[1:])],
    }
    return RefinementTable(
        axis=axis, levels=values, terminal_diffs=diffs,
        observed_orders={k: _orders(v) for k, v in diffs.items()},
        terminal_energies=[e for _, e in finals],
    )


@dataclass
class OracleCase:
    stage: str
    cells: tuple
    params: SchemeParams
    max_diff: float


@dataclass
class OracleReport:
    cases: list[OracleCase]
    tol: float

    @property
    def matches(self) -> int:
        return sum(c.max_diff <= self.tol for c in self.cases)

    @property
    def worst(self) -> float:
        return max((c.max_diff for c in self.cases), default=0.0)

    @property
    def passed(self) -> bool:
        return self.matches == len(self.cases)


def _random_cells(rng: np.random.Generator, size: int) -> tuple[int, ...]:
    shapes = [(n,) for n in range(2, size + 1)]
    shapes += [(a, b) for a in range(2, 5) for b in range(2, 5) if a * b <= size]
    return shapes[rng.integers(len(shapes))]


def random_step_instance(rng: np.random.Generator, size: int, stage: str):
    """Random grid, polynomial model, parameters and data for one theta- or eta-step."""
    from .grid import make_grid
    from .model import polynomial_model
    from .stepper import max_stable_tau

    cells = _random_cells(rng, size)
    grid = make_grid(len(cells), cells, tuple(rng.uniform(0.5, 2.0, len(cells))))
    M = float(rng.uniform(1.0, 2.0))
    fns = polynomial_model(
        (float(rng.uniform(-0.5, 0.5)), float(rng.uniform(0.5, 2.0))),
        (float(rng.uniform(0.01, 0.5)), 0.0, float(rng.uniform(0.1, 1.0))),
        (float(rng.uniform(0.5, 1.5)), 0.0, float(rng.uniform(0.0, 1.0))),
        M=M,
    )
    mu, nu = rng.uniform(0.1, 1.0, 2)
    eps = float(rng.uniform(0.05, 0.5))
    tau1, tau0 = max_stable_tau(fns, mu)
    tau = min(tau0 if stage == "theta" else tau1, 0.9) * float(rng.uniform(0.2, 0.9))
    params = SchemeParams(float(mu), float(nu), eps, tau, T=tau)
    eta = ScalarField(grid, rng.uniform(-M, M, grid.shape))
    theta = ScalarField(grid, rng.uniform(-1.0, 1.0, grid.shape))
    force = ScalarField(grid, rng.uniform(-0.5, 0.5, grid.shape))
    return grid, fns, params, eta, theta, force


def oracle_cross_check(size: int = 8, seed: int = 0, cases: int = 50,
                       stages: Sequence[str] = ("theta", "eta"), tol: float = 1e-7) -> OracleReport:
    """Compare the production step solvers with the dense gradient-descent oracle.

    Cases alternate over ``stages``, each on a fresh random instance. The
    theta-step is compared with the minimiser of its convex functional; the
    eta-step with the minimiser of the eta functional that keeps the potential
    implicit, whose minimiser is the Picard fixed point.
    """
    from .elliptic import (eta_step_full_objective, oracle_minimize_dense, solve_eta_step,
                           solve_theta_step, upsilon_star_objective)

    rng = np.random.default_rng(seed)
    out = []
    for k in range(cases):
        stage = stages[k % len(stages)]
        grid, fns, params, eta, theta, force = random_step_instance(rng, size, stage)
        if stage == "theta":
            fast, _ = solve_theta_step(eta, theta, force, fns, params)
            ref = oracle_minimize_dense(upsilon_star_objective(eta, theta, force, fns, params), theta)
        else:
            fast, _ = solve_eta_step(eta, theta, force, fns, params)
            ref = oracle_minimize_dense(eta_step_full_objective(eta, theta, force, fns, params), eta)
        out.append(OracleCase(stage, grid.cells, params,
                              float(np.max(np.abs(fast.values - ref.values)))))
    return OracleReport(out, tol)
