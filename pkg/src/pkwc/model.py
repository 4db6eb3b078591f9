"""Material functions, truncation, the smooth norm and the free energies.

The model is described by

* ``g`` with a nonnegative primitive ``G`` (the potential of the order parameter),
* a convex ``C^1`` mobility ``alpha >= 0`` with ``alpha'(0) = 0``,
* a positive kinetic coefficient ``alpha0``,

all evaluated through the clamp ``T_M r = min(max(r, -M), M)``. Outside
``[-M, M]`` the potentials are continued linearly (``tilde_G_M`` and
``tilde_alpha_M``) so that their derivatives are exactly ``g(T_M r)`` and
``alpha'(T_M r)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ConfigurationError, ModelError
from .grid import ScalarField, _check_same, corner_gradients, grad, norm_face

__all__ = [
    "ModelFns",
    "SchemeParams",
    "truncate",
    "gamma_eps",
    "dgamma_eps",
    "polynomial_model",
    "model_from_functions",
    "default_model",
    "choose_truncation_level",
    "tilde_G_M",
    "tilde_alpha_M",
    "tilde_alpha_M_second",
    "cell_gamma",
    "energy_F",
    "energy_F_eps",
]

_SUP_SAMPLES = 2048
_SAFETY = 1.1

Fn = Callable[[np.ndarray], np.ndarray]


def truncate(r, M: float):
    """Clamp to ``[-M, M]``; works on scalars and arrays."""
    out = np.clip(r, -M, M)
    return float(out) if np.ndim(out) == 0 else out


def gamma_eps(y, eps: float, axis: int = -1):
    """``sqrt(eps**2 + |y|**2)`` with ``y`` a vector along ``axis``."""
    y = np.asarray(y, dtype=float)
    out = np.sqrt(eps * eps + np.sum(y * y, axis=axis))
    return float(out) if np.ndim(out) == 0 else out


def dgamma_eps(y, eps: float, axis: int = -1) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return y / np.expand_dims(np.asarray(gamma_eps(y, eps, axis=axis)), axis)


@dataclass(frozen=True)
class ModelFns:
    """Material functions with their truncation level and guard constants.

    All callables are vectorised over numpy arrays. ``lip_g_M`` is the
    Lipschitz bound of ``g`` on ``[-M, M]``; it feeds the step-size guards and
    the comparison constant.
    """

    g: Fn
    G: Fn
    alpha: Fn
    alpha_prime: Fn
    alpha_second: Fn
    alpha0: Fn
    alpha0_prime: Fn
    M: float
    delta_alpha: float
    lip_g_M: float
    sup_g: float
    sup_alpha_prime: float
    sup_alpha0: float
    sup_alpha0_prime: float
    name: str = "custom"
    coefficients: tuple | None = field(default=None, compare=False)

    def with_truncation(self, M: float) -> "ModelFns":
        """Same functions, new truncation level (guard constants recomputed)."""
        if self.coefficients is not None:
            gc, ac, a0c = self.coefficients
            return replace(polynomial_model(gc, ac, a0c, M), name=self.name)
        return model_from_functions(
            self.g, self.G, self.alpha, self.alpha_prime, self.alpha0, M,
            alpha_second=self.alpha_second, alpha0_prime=self.alpha0_prime,
            name=self.name,
        )


def _check_invariants(fns: ModelFns) -> None:
    problems = []
    a1 = float(fns.alpha_prime(np.array(0.0)))
    if abs(a1) > 1e-12:
        problems.append(f"alpha'(0) = {a1!r}, must vanish")
    if not fns.delta_alpha > 0:
        problems.append(f"inf alpha0 = {fns.delta_alpha!r} must be positive")
    r = np.linspace(-2 * fns.M, 2 * fns.M, 401)
    if np.any(fns.G(r) < 0):
        problems.append("G takes negative values")
    if np.any(fns.alpha(r) < 0):
        problems.append("alpha takes negative values")
    h = 1e-5
    for prim, deriv, label in ((fns.G, fns.g, "G' != g"), (fns.alpha, fns.alpha_prime, "alpha' mismatch")):
        fd = (prim(r + h) - prim(r - h)) / (2 * h)
        exact = deriv(r)
        if np.any(np.abs(fd - exact) > 1e-6 * np.maximum(1.0, np.abs(exact))):
            problems.append(label)
    if problems:
        raise ModelError("; ".join(problems))


def polynomial_model(g_coef, alpha_coef, alpha0_coef, M: float, name: str = "polynomial") -> ModelFns:
    """Built-in family: ``g`` linear, ``alpha`` and ``alpha0`` quadratic.

    Coefficients are listed from the constant term up:
    ``g(r) = g0 + g1 r``, ``alpha(r) = a0 + a1 r + a2 r^2``,
    ``alpha0(r) = d0 + d1 r + d2 r^2``. Guard constants are exact.
    """
    g0, g1 = (float(c) for c in g_coef)
    a0, a1, a2 = (float(c) for c in alpha_coef)
    d0, d1, d2 = (float(c) for c in alpha0_coef)
    M = float(M)
    if not M > 0:
        raise ModelError(f"truncation level must be positive, got {M}")
    if g1 < 0 or (g1 == 0 and g0 != 0):
        raise ModelError("g must be nondecreasing with a nonnegative primitive (g1 > 0, or g == 0)")
    if a2 < 0 or a0 < 0:
        raise ModelError("alpha must be convex and nonnegative (a2 >= 0, a0 >= 0)")
    if a1 != 0:
        raise ModelError("alpha'(0) = 0 requires a1 = 0")
    if d2 < 0 or (d2 == 0 and (d1 != 0 or d0 <= 0)) or (d2 > 0 and d0 - d1 * d1 / (4 * d2) <= 0):
        raise ModelError("alpha0 must have a positive infimum over the real line")

    if g1 > 0:
        shift = g0 / g1

        def G(r):
            return 0.5 * g1 * (np.asarray(r, dtype=float) + shift) ** 2
    else:
        def G(r):
            return np.zeros_like(np.asarray(r, dtype=float))

    def g(r):
        return g0 + g1 * np.asarray(r, dtype=float)

    def alpha(r):
        r = np.asarray(r, dtype=float)
        return a0 + a2 * r * r

    def alpha_prime(r):
        return 2 * a2 * np.asarray(r, dtype=float)

    def alpha_second(r):
        return np.full_like(np.asarray(r, dtype=float), 2 * a2)

    def alpha0(r):
        r = np.asarray(r, dtype=float)
        return d0 + d1 * r + d2 * r * r

    def alpha0_prime(r):
        return d1 + 2 * d2 * np.asarray(r, dtype=float)

    ends = np.array([-M, M])
    crit = [-d1 / (2 * d2)] if d2 > 0 and abs(d1 / (2 * d2)) < M else []
    a0_pts = np.concatenate([ends, crit])
    fns = ModelFns(
        g=g, G=G, alpha=alpha, alpha_prime=alpha_prime, alpha_second=alpha_second,
        alpha0=alpha0, alpha0_prime=alpha0_prime, M=M,
        delta_alpha=float(np.min(alpha0(a0_pts))),
        lip_g_M=abs(g1),
        sup_g=float(np.max(np.abs(g(ends)))),
        sup_alpha_prime=float(np.max(np.abs(alpha_prime(ends)))),
        sup_alpha0=float(np.max(np.abs(alpha0(a0_pts)))),
        sup_alpha0_prime=float(np.max(np.abs(alpha0_prime(ends)))),
        name=name,
        coefficients=((g0, g1), (a0, a1, a2), (d0, d1, d2)),
    )
    _check_invariants(fns)
    return fns


def model_from_functions(g, G, alpha, alpha_prime, alpha0, M: float, *,
                         alpha_second=None, alpha0_prime=None, name: str = "custom") -> ModelFns:
    """Wrap arbitrary vectorised callables.

    Guard constants are estimated by dense sampling of ``[-M, M]`` and padded
    by 10%; derivatives that are not supplied are replaced by central
    differences.
    """
    M = float(M)
    if not M > 0:
        raise ModelError(f"truncation level must be positive, got {M}")
    if alpha_second is None:
        def alpha_second(r, _h=1e-5):
            return (alpha_prime(np.asarray(r) + _h) - alpha_prime(np.asarray(r) - _h)) / (2 * _h)
    if alpha0_prime is None:
        def alpha0_prime(r, _h=1e-6):
            return (alpha0(np.asarray(r) + _h) - alpha0(np.asarray(r) - _h)) / (2 * _h)
    r = np.linspace(-M, M, _SUP_SAMPLES)
    gr = g(r)
    lip = float(np.max(np.abs(np.diff(gr) / np.diff(r))))
    fns = ModelFns(
        g=g, G=G, alpha=alpha, alpha_prime=alpha_prime, alpha_second=alpha_second,
        alpha0=alpha0, alpha0_prime=alpha0_prime, M=M,
        delta_alpha=float(np.min(alpha0(r))) / _SAFETY,
        lip_g_M=_SAFETY * lip,
        sup_g=_SAFETY * float(np.max(np.abs(gr))),
        sup_alpha_prime=_SAFETY * float(np.max(np.abs(alpha_prime(r)))),
        sup_alpha0=_SAFETY * float(np.max(np.abs(alpha0(r)))),
        sup_alpha0_prime=_SAFETY * float(np.max(np.abs(alpha0_prime(r)))),
        name=name,
    )
    _check_invariants(fns)
    return fns


DEFAULT_COEFFICIENTS = ((-1.0, 1.0), (0.01, 0.0, 0.5), (1.0, 0.0, 1.0))


def default_model(M: float = 1.0) -> ModelFns:
    """``g = r - 1``, ``G = (r-1)^2/2``, ``alpha = r^2/2 + 0.01``, ``alpha0 = 1 + r^2``."""
    return polynomial_model(*DEFAULT_COEFFICIENTS, M=M, name="default")


def choose_truncation_level(eta0: ScalarField, u_sup: float, fns: ModelFns,
                            step: float = 0.5, M_max: float = 1e6) -> float:
    """Smallest lattice point ``M = |eta0|_inf + k*step`` with ``M >= |eta0|_inf``,
    ``g(M) >= u_sup`` and ``g(-M) <= -u_sup``, rounded up to one decimal.

    ``fns.M`` is ignored.
    """
    start = float(np.max(np.abs(eta0.values)))
    u_sup = float(u_sup)
    chunk = 4096
    k0 = 0
    while start + k0 * step <= M_max:
        Ms = start + (k0 + np.arange(chunk)) * step
        Ms = Ms[Ms <= M_max]
        ok = (fns.g(Ms) >= u_sup) & (fns.g(-Ms) <= -u_sup) & (Ms > 0)
        if np.any(ok):
            M = float(Ms[np.argmax(ok)])
            return math.ceil(round(M * 10, 9)) / 10
        k0 += chunk
    raise ModelError(
        f"g not coercive enough for this forcing: no M <= {M_max:g} with "
        f"g(M) >= {u_sup:g} and g(-M) <= {-u_sup:g}"
    )


def tilde_G_M(r, fns: ModelFns):
    """Primitive of ``g(T_M r)`` that agrees with ``G`` on ``[-M, M]``."""
    M = fns.M
    r = np.asarray(r, dtype=float)
    t = np.clip(r, -M, M)
    out = fns.G(t) + fns.g(t) * (r - t)
    return float(out) if out.ndim == 0 else out


def tilde_alpha_M(r, fns: ModelFns):
    """Primitive of ``alpha'(T_M r)`` that agrees with ``alpha`` on ``[-M, M]``."""
    M = fns.M
    r = np.asarray(r, dtype=float)
    t = np.clip(r, -M, M)
    out = fns.alpha(t) + fns.alpha_prime(t) * (r - t)
    return float(out) if out.ndim == 0 else out


def tilde_alpha_M_second(r, fns: ModelFns) -> np.ndarray:
    """Generalised second derivative of ``tilde_alpha_M`` (zero outside ``[-M, M]``)."""
    r = np.asarray(r, dtype=float)
    return np.where(np.abs(r) <= fns.M, fns.alpha_second(r), 0.0)


def cell_gamma(theta: ScalarField, eps: float) -> np.ndarray:
    """Sub-cell average of ``gamma_eps(grad theta)`` per cell (``eps=0`` gives ``|grad theta|``)."""
    Y = corner_gradients(theta)
    return np.mean(np.sqrt(eps * eps + np.sum(Y * Y, axis=1)), axis=0).reshape(theta.grid.shape)


def energy_F(eta: ScalarField, theta: ScalarField, fns: ModelFns) -> float:
    """KWC energy: Dirichlet energy, potential, and ``alpha(eta)``-weighted total variation."""
    _check_same(eta.grid, theta.grid)
    vol = eta.grid.cell_volume
    return (
        0.5 * norm_face(grad(eta)) ** 2
        + vol * float(np.sum(fns.G(eta.values)))
        + vol * float(np.sum(fns.alpha(eta.values) * cell_gamma(theta, 0.0)))
    )


def energy_F_eps(eta: ScalarField, theta: ScalarField, fns: ModelFns, eps: float) -> float:
    """Regularised energy with truncated potentials and ``gamma_eps`` in place of ``|.|``."""
    _check_same(eta.grid, theta.grid)
    vol = eta.grid.cell_volume
    return (
        0.5 * norm_face(grad(eta)) ** 2
        + vol * float(np.sum(tilde_G_M(eta.values, fns)))
        + vol * float(np.sum(tilde_alpha_M(eta.values, fns) * cell_gamma(theta, eps)))
    )


@dataclass(frozen=True)
class SchemeParams:
    mu: float
    nu: float
    eps: float
    tau: float
    T: float
    tol_newton: float = 1e-9
    tol_fixed_point: float = 1e-10
    max_newton_iters: int = 50
    max_fp_iters: int = 500

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise ConfigurationError("; ".join(problems), problems)

    def violations(self) -> list[str]:
        out = []
        if not self.mu > 0:
            out.append(f"(A1) requires mu > 0, got {self.mu}")
        if not self.nu > 0:
            out.append(f"(A1) requires nu > 0, got {self.nu}")
        if not 0 < self.eps < 1:
            out.append(f"eps must lie in (0, 1), got {self.eps}")
        if not 0 < self.tau < 1:
            out.append(f"tau must lie in (0, 1), got {self.tau}")
        if not self.T >= 0:
            out.append(f"horizon T must be nonnegative, got {self.T}")
        if not (self.tol_newton > 0 and self.tol_fixed_point > 0):
            out.append("solver tolerances must be positive")
        if self.max_newton_iters < 0 or self.max_fp_iters < 1:
            out.append("iteration caps must be positive")
        return out

    def replace(self, **changes) -> "SchemeParams":
        return replace(self, **changes)
