import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from pkwc.grid import ScalarField, make_grid

settings.register_profile("pkwc", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pkwc")


@st.composite
def grids(draw, max_cells=16, dims=(1, 2)):
    dim = draw(st.sampled_from(dims))
    cells = tuple(draw(st.integers(2, max_cells)) for _ in range(dim))
    lengths = tuple(draw(st.floats(0.25, 4.0)) for _ in range(dim))
    return make_grid(dim, cells, lengths)


def random_field(rng, grid, low=-1.0, high=1.0):
    return ScalarField(grid, rng.uniform(low, high, grid.shape))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
