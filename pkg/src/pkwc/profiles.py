"""Named initial profiles, forcing profiles and the portable random generator.

Random fields use a 64-bit linear congruential generator so that any
implementation can reproduce them bit for bit::

    state <- (6364136223846793005 * state + 1442695040888963407) mod 2**64
    U      = (state >> 11) * 2**-53            # uniform in [0, 1)

The state is initialised to the seed (taken mod 2**64). Cell values are drawn
in row-major order as ``low + (high - low) * U``.
"""

from __future__ import annotations

import numpy as np

from .grid import Grid, ScalarField

LCG_MULTIPLIER = 6364136223846793005
LCG_INCREMENT = 1442695040888963407
_MASK = (1 << 64) - 1


class LCG64:
    """Seeded 64-bit LCG; see the module docstring for the constants."""

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next_u64(self) -> int:
        self.state = (LCG_MULTIPLIER * self.state + LCG_INCREMENT) & _MASK
        return self.state

    def uniform(self, low: float = 0.0, high: float = 1.0, size: int | None = None):
        if size is None:
            return low + (high - low) * ((self.next_u64() >> 11) * 2.0**-53)
        return np.array([self.uniform(low, high) for _ in range(size)])


def cosine_shape(grid: Grid, mode: int = 1) -> np.ndarray:
    """``prod_k cos(mode * pi * x_k / L_k)`` at cell centres (satisfies the Neumann condition)."""
    out = np.ones(grid.shape)
    for x, L in zip(grid.centers(), grid.lengths):
        out = out * np.cos(mode * np.pi * x / L)
    return out


def make_profile(grid: Grid, profile: str, *, value: float = 0.0, offset: float = 0.0,
                 amplitude: float = 1.0, mode: int = 1, low: float = -1.0, high: float = 1.0,
                 seed: int = 0) -> ScalarField:
    if profile == "constant":
        return ScalarField.constant(grid, value)
    if profile == "cosine":
        return ScalarField(grid, offset + amplitude * cosine_shape(grid, mode))
    if profile == "random":
        return ScalarField(grid, LCG64(seed).uniform(low, high, grid.size))
    raise ValueError(f"unknown profile {profile!r}")


def make_forcing(grid: Grid, profile: str, *, value: float = 0.0, amplitude: float = 1.0,
                 frequency: float = 1.0, shape: str = "uniform"):
    """Return ``t -> ScalarField`` or ``None`` for the zero forcing."""
    if profile == "zero":
        return None
    if shape == "uniform":
        spatial = np.ones(grid.shape)
    elif shape == "cosine":
        spatial = cosine_shape(grid)
    else:
        raise ValueError(f"unknown forcing shape {shape!r}")
    if profile == "constant":
        return lambda t: ScalarField(grid, value * spatial)
    if profile == "sine":
        return lambda t: ScalarField(grid, amplitude * np.sin(2 * np.pi * frequency * t) * spatial)
    if profile == "ramp":
        return lambda t: ScalarField(grid, amplitude * t * spatial)
    raise ValueError(f"unknown forcing profile {profile!r}")
