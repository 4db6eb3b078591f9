"""A complete run description: grid, model, scheme constants, data, forcing."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

from .grid import Grid, ScalarField
from .model import ModelFns, SchemeParams
from .stepper import ForcingSequence, discretize_forcing, run, zero_forcing

TimeField = Callable[[float], ScalarField]


@dataclass(frozen=True)
class Problem:
    grid: Grid
    fns: ModelFns
    params: SchemeParams
    eta0: ScalarField
    theta0: ScalarField
    u: TimeField | None = None
    v: TimeField | None = None

    def forcing(self) -> ForcingSequence:
        if self.u is None and self.v is None:
            return zero_forcing(self.grid, self.params.tau, self.params.T)
        zero = ScalarField.zeros(self.grid)
        u = self.u or (lambda t: zero)
        v = self.v or (lambda t: zero)
        return discretize_forcing(u, v, self.params.tau, self.params.T)

    def with_params(self, **changes) -> "Problem":
        return replace(self, params=self.params.replace(**changes))

    def replace(self, **changes) -> "Problem":
        return replace(self, **changes)

    def solve(self, on_step=None):
        return run(self.eta0, self.theta0, self.forcing(), self.fns, self.params, on_step=on_step)
