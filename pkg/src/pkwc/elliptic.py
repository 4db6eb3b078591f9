"""The two convex elliptic problems solved in every time step.

theta-step
    minimise ``Upsilon_*(z)``::

        1/(2 tau) (alpha0(T_M eta~) (z - theta0~), z - theta0~)_H
        + sum_sub-cells w * alpha~_M(eta~) * gamma_eps(grad z)
        + nu^2/(2 tau) |grad(z - theta0~)|^2  -  (v~, z)_H

eta-step
    Picard iteration on the lagged potential force: each sweep minimises
    ``Upsilon(z; eta_dagger)``::

        1/(2 tau) |z - eta0~|_H^2 + 1/2 |grad z|^2 + mu^2/(2 tau) |grad(z - eta0~)|^2
        + (g(T_M eta_dagger), z)_H + (alpha~_M(z), Gamma_eps(theta~))_H - (u~, z)_H

    where ``Gamma_eps`` is the sub-cell mean of ``gamma_eps(grad theta~)``.
    The fixed point solves the full nonlinear eta equation.

Gradients returned by a :class:`ConvexObjective` are Riesz representers in the
cell-volume-weighted inner product, i.e. they *are* the discrete PDE residuals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError, OracleFailure, PreconditionError, SolverFailure
from .grid import Grid, ScalarField, _check_same, corner_matrices, laplacian_matrix
from .model import (
    ModelFns,
    SchemeParams,
    tilde_G_M,
    tilde_alpha_M,
    tilde_alpha_M_second,
    truncate,
)

__all__ = [
    "ConvexObjective",
    "SolveReport",
    "upsilon_star_objective",
    "upsilon_objective",
    "eta_step_full_objective",
    "functional_upsilon_star",
    "functional_upsilon",
    "theta_residual",
    "eta_residual",
    "newton_minimize",
    "kacanov_minimize",
    "oracle_minimize_dense",
    "solve_theta_step",
    "solve_eta_step",
    "contraction_bound",
]

_CG_RTOL = 1e-10
_ARMIJO = 1e-4


@dataclass(frozen=True)
class ConvexObjective:
    """A smooth convex functional on flattened cell vectors of ``grid``."""

    grid: Grid
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], sp.spmatrix] | None = None

    def hessian_apply(self, z: np.ndarray, d: np.ndarray) -> np.ndarray:
        return self.hessian(z) @ d

    def residual_norm(self, z: np.ndarray) -> float:
        r = self.gradient(z)
        return math.sqrt(self.grid.cell_volume * float(r @ r))


@dataclass
class SolveReport:
    iterations: int = 0
    final_residual_norm: float = math.inf
    objective_decrease: float = 0.0
    line_search_backtracks: int = 0
    inner_iterations: int = 0
    method: str = "newton"
    contraction_factors: list[float] = field(default_factory=list)

    @property
    def contraction_estimate(self) -> float:
        """Largest ratio of successive Picard increments (nan if fewer than two)."""
        return max(self.contraction_factors) if self.contraction_factors else math.nan


# -- the TV-like sub-cell term -------------------------------------------------


def _tv_parts(grid: Grid, weight: np.ndarray, z: np.ndarray, eps: float):
    """Value, gradient and Hessian of ``sum_s sum_c (vol/2^d) weight_c gamma_eps(y_s(c))``.

    Gradient and Hessian are divided by the cell volume (H-representers).
    """
    P = corner_matrices(grid)
    nsub = len(P)
    vol = grid.cell_volume
    value = 0.0
    gvec = np.zeros(grid.size)
    for Ps in P:
        Y = np.array([Pk @ z for Pk in Ps])
        gam = np.sqrt(eps * eps + np.sum(Y * Y, axis=0))
        value += vol / nsub * float(weight @ gam)
        for Pk, yk in zip(Ps, Y):
            gvec += Pk.T @ (weight * yk / gam) / nsub
    return value, gvec


def _tv_hessian(grid: Grid, weight: np.ndarray, z: np.ndarray, eps: float) -> sp.csr_matrix:
    P = corner_matrices(grid)
    nsub = len(P)
    H = sp.csr_matrix((grid.size, grid.size))
    for Ps in P:
        Y = np.array([Pk @ z for Pk in Ps])
        gam = np.sqrt(eps * eps + np.sum(Y * Y, axis=0))
        for k, Pk in enumerate(Ps):
            for l, Pl in enumerate(Ps):
                coef = -Y[k] * Y[l] / gam**3
                if k == l:
                    coef = coef + 1.0 / gam
                H = H + Pk.T @ sp.diags(weight * coef / nsub) @ Pl
    return sp.csr_matrix(H)


def _tv_cell_gamma(grid: Grid, theta: np.ndarray, eps: float) -> np.ndarray:
    P = corner_matrices(grid)
    acc = np.zeros(grid.size)
    for Ps in P:
        Y = np.array([Pk @ theta for Pk in Ps])
        acc += np.sqrt(eps * eps + np.sum(Y * Y, axis=0))
    return acc / len(P)


# -- the two functionals -------------------------------------------------------


def upsilon_star_objective(eta_tilde: ScalarField, theta0_tilde: ScalarField,
                           v_tilde: ScalarField, fns: ModelFns, params: SchemeParams) -> ConvexObjective:
    grid = eta_tilde.grid
    _check_same(grid, theta0_tilde.grid)
    _check_same(grid, v_tilde.grid)
    tau, nu2, eps, vol = params.tau, params.nu**2, params.eps, grid.cell_volume
    a0 = fns.alpha0(truncate(eta_tilde.flat, fns.M))
    w = tilde_alpha_M(eta_tilde.flat, fns)
    th0 = theta0_tilde.flat.copy()
    v = v_tilde.flat.copy()
    L = laplacian_matrix(grid)

    def value(z):
        d = z - th0
        tv, _ = _tv_parts(grid, w, z, eps)
        return (vol / (2 * tau) * float(a0 @ (d * d)) + tv
                + nu2 / (2 * tau) * vol * float(d @ (L @ d)) - vol * float(v @ z))

    def gradient(z):
        d = z - th0
        _, tvg = _tv_parts(grid, w, z, eps)
        return a0 * d / tau + tvg + nu2 / tau * (L @ d) - v

    def hessian(z):
        return sp.csr_matrix(sp.diags(a0 / tau) + nu2 / tau * L + _tv_hessian(grid, w, z, eps))

    return ConvexObjective(grid, value, gradient, hessian)


def upsilon_objective(eta_dagger: ScalarField, eta0_tilde: ScalarField, theta_tilde: ScalarField,
                      u_tilde: ScalarField, fns: ModelFns, params: SchemeParams) -> ConvexObjective:
    grid = eta_dagger.grid
    for f in (eta0_tilde, theta_tilde, u_tilde):
        _check_same(grid, f.grid)
    tau, mu2, vol = params.tau, params.mu**2, grid.cell_volume
    e0 = eta0_tilde.flat.copy()
    gl = fns.g(truncate(eta_dagger.flat, fns.M))
    Gam = _tv_cell_gamma(grid, theta_tilde.flat, params.eps)
    u = u_tilde.flat.copy()
    L = laplacian_matrix(grid)

    def value(z):
        d = z - e0
        return vol * (
            float(d @ d) / (2 * tau) + 0.5 * float(z @ (L @ z))
            + mu2 / (2 * tau) * float(d @ (L @ d))
            + float(gl @ z) + float(tilde_alpha_M(z, fns) @ Gam) - float(u @ z)
        )

    def gradient(z):
        d = z - e0
        return (d / tau + L @ z + mu2 / tau * (L @ d) + gl
                + fns.alpha_prime(truncate(z, fns.M)) * Gam - u)

    def hessian(z):
        diag = 1.0 / tau + tilde_alpha_M_second(z, fns) * Gam
        return sp.csr_matrix(sp.diags(diag) + (1.0 + mu2 / tau) * L)

    return ConvexObjective(grid, value, gradient, hessian)


def eta_step_full_objective(eta0_tilde: ScalarField, theta_tilde: ScalarField, u_tilde: ScalarField,
                            fns: ModelFns, params: SchemeParams) -> ConvexObjective:
    """The eta-step with the potential kept implicit (``tilde_G_M(z)`` in place of the lagged force).

    Strictly convex whenever ``tau * |g'|_M < 1``, which ``tau < tau1`` implies.
    Its minimiser is the Picard fixed point; used as an independent check.
    """
    grid = eta0_tilde.grid
    tau, mu2, vol = params.tau, params.mu**2, grid.cell_volume
    e0 = eta0_tilde.flat.copy()
    Gam = _tv_cell_gamma(grid, theta_tilde.flat, params.eps)
    u = u_tilde.flat.copy()
    L = laplacian_matrix(grid)

    def value(z):
        d = z - e0
        return vol * (
            float(d @ d) / (2 * tau) + 0.5 * float(z @ (L @ z))
            + mu2 / (2 * tau) * float(d @ (L @ d))
            + float(np.sum(tilde_G_M(z, fns))) + float(tilde_alpha_M(z, fns) @ Gam) - float(u @ z)
        )

    def gradient(z):
        d = z - e0
        t = truncate(z, fns.M)
        return d / tau + L @ z + mu2 / tau * (L @ d) + fns.g(t) + fns.alpha_prime(t) * Gam - u

    return ConvexObjective(grid, value, gradient)


def functional_upsilon_star(z: ScalarField, eta_tilde: ScalarField, theta0_tilde: ScalarField,
                            v_tilde: ScalarField, fns: ModelFns, params: SchemeParams) -> float:
    _check_same(z.grid, eta_tilde.grid)
    return upsilon_star_objective(eta_tilde, theta0_tilde, v_tilde, fns, params).value(z.flat)


def functional_upsilon(z: ScalarField, eta_dagger: ScalarField, eta0_tilde: ScalarField,
                       theta_tilde: ScalarField, u_tilde: ScalarField,
                       fns: ModelFns, params: SchemeParams) -> float:
    _check_same(z.grid, eta_dagger.grid)
    return upsilon_objective(eta_dagger, eta0_tilde, theta_tilde, u_tilde, fns, params).value(z.flat)


def theta_residual(theta: ScalarField, eta_prev: ScalarField, theta_prev: ScalarField,
                   v: ScalarField, fns: ModelFns, params: SchemeParams) -> ScalarField:
    """Residual of the discrete theta equation at ``theta``."""
    obj = upsilon_star_objective(eta_prev, theta_prev, v, fns, params)
    return ScalarField(theta.grid, obj.gradient(theta.flat))


def eta_residual(eta: ScalarField, eta_prev: ScalarField, theta: ScalarField,
                 u: ScalarField, fns: ModelFns, params: SchemeParams) -> ScalarField:
    """Residual of the full nonlinear discrete eta equation at ``eta``."""
    obj = upsilon_objective(eta, eta_prev, theta, u, fns, params)
    return ScalarField(eta.grid, obj.gradient(eta.flat))


# -- minimisers ----------------------------------------------------------------


def _finite(x, what: str):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite {what}")
    return x


def _linear_solve(H: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    d = H.diagonal()
    pre = spla.LinearOperator(H.shape, matvec=lambda x: x / d, dtype=float)
    x, info = spla.cg(H, rhs, rtol=_CG_RTOL, atol=0.0, maxiter=20 * H.shape[0] + 100, M=pre)
    if info != 0:
        # CG stagnated (severe ill-conditioning); a direct solve is the safe answer
        x = spla.spsolve(sp.csc_matrix(H), rhs)
    return x


def newton_minimize(obj: ConvexObjective, init: ScalarField, tol: float,
                    max_iters: int) -> tuple[ScalarField, SolveReport]:
    """Damped Newton: CG for the step, Armijo backtracking by halving.

    Stops when the H-norm of the gradient is ``<= tol``. Raises
    :class:`SolverFailure` (with the report) if ``max_iters`` is exhausted.
    """
    grid = init.grid
    vol = grid.cell_volume
    z = init.flat.copy()
    f = _finite(obj.value(z), "objective")
    f_start = f
    rep = SolveReport()
    for it in range(max_iters + 1):
        r = _finite(obj.gradient(z), "gradient")
        rn = math.sqrt(vol * float(r @ r))
        rep.iterations, rep.final_residual_norm = it, rn
        if rn <= tol:
            rep.objective_decrease = f_start - f
            return ScalarField(grid, z), rep
        if it == max_iters:
            break
        d = _linear_solve(obj.hessian(z), -r)
        slope = vol * float(r @ d)
        if slope >= 0:
            d, slope = -r, -vol * float(r @ r)
        t = 1.0
        slack = 8 * np.finfo(float).eps * max(1.0, abs(f))
        while True:
            z_new = z + t * d
            f_new = obj.value(z_new)
            if np.isfinite(f_new) and f_new <= f + _ARMIJO * t * slope + slack:
                break
            t *= 0.5
            rep.line_search_backtracks += 1
            if t < 1e-14:
                rep.objective_decrease = f_start - f
                raise SolverFailure(f"line search stalled at residual {rn:.3e}", rep)
        z, f = z_new, f_new
    rep.objective_decrease = f_start - f
    raise SolverFailure(
        f"Newton did not reach {tol:.1e} in {max_iters} iterations (residual {rep.final_residual_norm:.3e})",
        rep,
    )


def kacanov_minimize(eta_tilde: ScalarField, theta0_tilde: ScalarField, v_tilde: ScalarField,
                     fns: ModelFns, params: SchemeParams, init: ScalarField,
                     max_iters: int = 2000) -> tuple[ScalarField, SolveReport]:
    """Lagged-diffusivity iteration for the theta-step.

    Freezes ``alpha~_M(eta~) / gamma_eps(grad theta^k)`` per sub-cell, solves
    the resulting SPD linear system, repeats. Monotone in ``Upsilon_*``.
    """
    grid = eta_tilde.grid
    vol, tau, nu2, eps = grid.cell_volume, params.tau, params.nu**2, params.eps
    obj = upsilon_star_objective(eta_tilde, theta0_tilde, v_tilde, fns, params)
    a0 = fns.alpha0(truncate(eta_tilde.flat, fns.M))
    w = tilde_alpha_M(eta_tilde.flat, fns)
    th0, v = theta0_tilde.flat, v_tilde.flat
    L = laplacian_matrix(grid)
    P = corner_matrices(grid)
    base = sp.diags(a0 / tau) + nu2 / tau * L
    rhs = a0 * th0 / tau + nu2 / tau * (L @ th0) + v
    z = init.flat.copy()
    f_start = obj.value(z)
    rep = SolveReport(method="kacanov")
    prev_rn = math.inf
    stalled = 0
    for it in range(max_iters + 1):
        rn = obj.residual_norm(z)
        rep.iterations, rep.final_residual_norm = it, rn
        if rn <= params.tol_newton:
            rep.objective_decrease = f_start - obj.value(z)
            return ScalarField(grid, z), rep
        stalled = stalled + 1 if rn > 0.999 * prev_rn else 0
        if stalled >= 50:
            break
        prev_rn = rn
        K = base
        for Ps in P:
            Y = np.array([Pk @ z for Pk in Ps])
            coef = w / np.sqrt(eps * eps + np.sum(Y * Y, axis=0)) / len(P)
            for Pk in Ps:
                K = K + Pk.T @ sp.diags(coef) @ Pk
        z = _finite(_linear_solve(sp.csr_matrix(K), rhs), "Kacanov iterate")
    rep.objective_decrease = f_start - obj.value(z)
    raise SolverFailure(f"lagged-diffusivity iteration stalled at residual {rep.final_residual_norm:.3e}", rep)


def oracle_minimize_dense(obj: ConvexObjective, init: ScalarField, tol: float = 1e-10,
                          max_iters: int = 1_000_000) -> ScalarField:
    """Plain gradient descent with Armijo backtracking (Barzilai-Borwein trial steps).

    Uses only values and gradients. Meant as a slow, independent reference
    for small problems (at most 64 cells).
    """
    grid = init.grid
    if grid.size > 64:
        raise OracleFailure(f"oracle limited to 64 cells, got {grid.size}")
    vol = grid.cell_volume
    z = init.flat.copy()
    f = obj.value(z)
    if not np.isfinite(f):
        raise OracleFailure("objective is not finite at the initial point")
    r = obj.gradient(z)
    step = 1e-3
    for _ in range(max_iters):
        rn = math.sqrt(vol * float(r @ r))
        if not np.isfinite(rn):
            raise OracleFailure("non-finite gradient")
        if rn <= tol:
            return ScalarField(grid, z)
        slack = 8 * np.finfo(float).eps * max(1.0, abs(f))
        t = step
        while True:
            z_new = z - t * r
            f_new = obj.value(z_new)
            if np.isfinite(f_new) and f_new <= f - _ARMIJO * t * vol * float(r @ r) + slack:
                break
            t *= 0.5
            if t < 1e-300:
                raise OracleFailure(f"backtracking failed at residual {rn:.3e}")
        r_new = obj.gradient(z_new)
        s, y = z_new - z, r_new - r
        sy = float(s @ y)
        step = float(s @ s) / sy if sy > 0 else 2 * t
        z, f, r = z_new, f_new, r_new
    raise OracleFailure(f"oracle hit the iteration cap {max_iters}")


# -- the two per-step solves -----------------------------------------------------


def solve_theta_step(eta_prev: ScalarField, theta_prev: ScalarField, v_i: ScalarField,
                     fns: ModelFns, params: SchemeParams,
                     init: ScalarField | None = None) -> tuple[ScalarField, SolveReport]:
    """theta_i from the convex minimisation, warm-started at ``theta_prev``.

    Newton first; on failure falls back to lagged diffusivity.
    """
    if not 0 < params.tau < 1:
        raise PreconditionError(f"tau must lie in (0, 1), got {params.tau}")
    obj = upsilon_star_objective(eta_prev, theta_prev, v_i, fns, params)
    start = theta_prev if init is None else init
    try:
        return newton_minimize(obj, start, params.tol_newton, params.max_newton_iters)
    except (SolverFailure, NumericalError) as exc:
        newton_rep = getattr(exc, "report", None)
        theta, rep = kacanov_minimize(eta_prev, theta_prev, v_i, fns, params, start)
        if newton_rep is not None:
            rep.inner_iterations = newton_rep.iterations
        return theta, rep


def contraction_bound(params: SchemeParams, fns: ModelFns) -> float:
    """``tau |g'|_M / sqrt(1 ^ mu^2)``: Lipschitz constant of one Picard sweep (H into V)."""
    return params.tau * fns.lip_g_M / math.sqrt(min(1.0, params.mu**2))


def solve_eta_step(eta_prev: ScalarField, theta_i: ScalarField, u_i: ScalarField,
                   fns: ModelFns, params: SchemeParams) -> tuple[ScalarField, SolveReport]:
    """eta_i as the fixed point of the lagged-force map (Picard), each sweep a Newton solve.

    Stops when the V-norm of the increment is ``<= tol_fixed_point``; the full
    nonlinear residual must then be ``<= 10 * tol_newton``.
    """
    from .stepper import max_stable_tau  # avoid an import cycle

    tau1, _ = max_stable_tau(fns, params.mu)
    if not params.tau < tau1:
        raise PreconditionError(
            f"tau = {params.tau} violates the contraction guard tau < tau1 = {tau1:.6g}"
        )
    grid = eta_prev.grid
    vol = grid.cell_volume
    L = laplacian_matrix(grid)
    eta = eta_prev
    rep = SolveReport(method="picard")
    f_start = eta_step_full_objective(eta_prev, theta_i, u_i, fns, params).value(eta_prev.flat)
    prev_inc = math.nan
    for k in range(1, params.max_fp_iters + 1):
        obj = upsilon_objective(eta, eta_prev, theta_i, u_i, fns, params)
        new, inner = newton_minimize(obj, eta, params.tol_newton, params.max_newton_iters)
        rep.inner_iterations += inner.iterations
        rep.line_search_backtracks += inner.line_search_backtracks
        d = new.flat - eta.flat
        inc = math.sqrt(vol * (float(d @ d) + float(d @ (L @ d))))
        if np.isfinite(prev_inc) and prev_inc > 0:
            rep.contraction_factors.append(inc / prev_inc)
        prev_inc = inc
        eta = new
        rep.iterations = k
        if inc <= params.tol_fixed_point:
            break
    else:
        rep.final_residual_norm = eta_residual_norm(eta, eta_prev, theta_i, u_i, fns, params)
        raise SolverFailure(
            f"Picard iteration did not converge in {params.max_fp_iters} sweeps "
            f"(observed contraction {rep.contraction_estimate:.3g})", rep,
        )
    rep.final_residual_norm = eta_residual_norm(eta, eta_prev, theta_i, u_i, fns, params)
    rep.objective_decrease = f_start - eta_step_full_objective(
        eta_prev, theta_i, u_i, fns, params).value(eta.flat)
    if rep.final_residual_norm > 10 * params.tol_newton:
        raise SolverFailure(
            f"eta-step residual {rep.final_residual_norm:.3e} above {10 * params.tol_newton:.1e}", rep
        )
    return eta, rep


def eta_residual_norm(eta, eta_prev, theta, u, fns, params) -> float:
    r = eta_residual(eta, eta_prev, theta, u, fns, params)
    return math.sqrt(eta.grid.cell_volume * float(r.flat @ r.flat))
