import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import grids, random_field
from pkwc.errors import ConfigurationError, GridMismatchError
from pkwc.grid import (FaceField, ScalarField, div, grad, gradient_matrices, inner_face, inner_h,
                       laplacian_matrix, make_grid, neumann_laplacian, norm_face, norm_h, norm_v)


def test_make_grid_1d_spacing():
    g = make_grid(1, [4], [1.0])
    assert g.spacing == (0.25,)
    assert g.cell_volume == 0.25


def test_make_grid_2d_spacing():
    g = make_grid(2, [3, 3], [1.0, 1.0])
    assert g.spacing == pytest.approx((1 / 3, 1 / 3), abs=0)
    assert g.cell_volume == pytest.approx(1 / 9, rel=1e-15)


@pytest.mark.parametrize("args", [
    (3, [2, 2, 2], [1, 1, 1]),
    (1, [1], [1.0]),
    (1, [4, 4], [1.0]),
    (2, [4, 4], [1.0, -1.0]),
])
def test_make_grid_rejects(args):
    with pytest.raises(ConfigurationError):
        make_grid(*args)


def test_make_grid_reports_every_problem():
    with pytest.raises(ConfigurationError) as exc:
        make_grid(1, [1], [-1.0])
    assert len(exc.value.violations) == 2


@given(grids())
def test_cell_volume_is_product_of_spacings(g):
    assert g.cell_volume == math.prod(g.spacing)


def test_grad_constant_is_zero():
    g = make_grid(2, [4, 3], [1.0, 2.0])
    w = grad(ScalarField.constant(g, 3.7))
    assert all(np.all(c == 0) for c in w.components)


def test_grad_hand_example():
    g = make_grid(1, [3], [3.0])
    assert np.array_equal(grad(ScalarField(g, [0, 1, 3])).components[0], [1, 2])


def test_div_hand_example():
    g = make_grid(1, [3], [3.0])
    assert np.array_equal(div(FaceField(g, (np.array([1.0, 2.0]),))).values, [1, 1, -2])


def test_div_zero():
    g = make_grid(2, [3, 5], [1.0, 1.0])
    assert np.all(div(FaceField.zeros(g)).values == 0)


def test_laplacian_hand_example():
    g = make_grid(1, [3], [3.0])
    assert np.array_equal(neumann_laplacian(ScalarField(g, [0, 1, 0])).values, [-1, 2, -1])


def test_laplacian_annihilates_constants():
    g = make_grid(2, [5, 4], [1.0, 3.0])
    assert np.allclose(neumann_laplacian(ScalarField.constant(g, -2.5)).values, 0, atol=0)


def _dense_gradient(g):
    """Independent dense assembly of the face difference matrices, cell by cell."""
    idx = np.arange(g.size).reshape(g.shape)
    mats = []
    for k, h in enumerate(g.spacing):
        rows = []
        for left in np.ndindex(*g.face_shape(k)):
            right = list(left)
            right[k] += 1
            r = np.zeros(g.size)
            r[idx[left]] -= 1 / h
            r[idx[tuple(right)]] += 1 / h
            rows.append(r)
        mats.append(np.array(rows))
    return mats


@given(grids(max_cells=4, dims=(2,)), st.integers(0, 2**32 - 1))
def test_grad_matches_dense_matrix(g, seed):
    z = random_field(np.random.default_rng(seed), g)
    w = grad(z)
    for k, D in enumerate(_dense_gradient(g)):
        assert np.allclose(w.components[k].ravel(), D @ z.flat, rtol=1e-14, atol=1e-14)
        assert np.allclose(gradient_matrices(g)[k].toarray(), D, rtol=0, atol=1e-12)


@given(grids(), st.integers(0, 2**32 - 1))
def test_summation_by_parts(g, seed):
    rng = np.random.default_rng(seed)
    z = random_field(rng, g)
    w = FaceField(g, tuple(rng.uniform(-1, 1, g.face_shape(k)) for k in range(g.dim)))
    lhs, rhs = inner_face(grad(z), w), inner_h(z, div(w))
    scale = (norm_h(z) + norm_face(grad(z))) * (norm_face(w) + norm_h(div(w)))
    assert abs(lhs + rhs) <= 1e-12 * scale


@given(grids(max_cells=6), st.integers(0, 2**32 - 1))
def test_laplacian_symmetric_psd(g, seed):
    rng = np.random.default_rng(seed)
    z, w = random_field(rng, g), random_field(rng, g)
    a = inner_h(neumann_laplacian(z), w)
    b = inner_h(z, neumann_laplacian(w))
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a)) * 10
    assert inner_h(neumann_laplacian(z), z) >= -1e-12 * norm_h(z) ** 2
    A = laplacian_matrix(g).toarray()
    assert np.allclose(A, A.T, atol=0)
    assert np.min(np.linalg.eigvalsh(A)) >= -1e-10 * np.max(np.abs(A))


def test_laplacian_matrix_matches_operator(rng):
    g = make_grid(2, [5, 3], [1.0, 0.6])
    z = random_field(rng, g)
    assert np.allclose(laplacian_matrix(g) @ z.flat, neumann_laplacian(z).flat, atol=1e-11)


def test_inner_h_unit_domain():
    g = make_grid(2, [4, 4], [1.0, 1.0])
    one = ScalarField.constant(g, 1.0)
    assert inner_h(one, one) == pytest.approx(1.0, rel=1e-15)


def test_norm_h_example():
    g = make_grid(1, [2], [1.0])
    assert norm_h(ScalarField(g, [3.0, 4.0])) == pytest.approx(math.sqrt(12.5), rel=1e-15)


def test_norm_v_constant():
    g = make_grid(1, [7], [1.0])
    assert norm_v(ScalarField.constant(g, -0.3)) == pytest.approx(0.3, rel=1e-15)


def test_grid_mismatch():
    a = ScalarField.zeros(make_grid(1, [4], [1.0]))
    b = ScalarField.zeros(make_grid(1, [5], [1.0]))
    with pytest.raises(GridMismatchError):
        inner_h(a, b)
    with pytest.raises(GridMismatchError):
        a + b


def test_face_field_shape_checked():
    g = make_grid(2, [3, 4], [1.0, 1.0])
    with pytest.raises(GridMismatchError):
        FaceField(g, (np.zeros((2, 4)), np.zeros((3, 4))))


def test_fields_are_read_only():
    z = ScalarField.zeros(make_grid(1, [3], [1.0]))
    with pytest.raises(ValueError):
        z.values[0] = 1.0


def test_laplacian_second_order_on_cosine():
    errs = []
    for n in (16, 32, 64, 128):
        g = make_grid(1, [n], [1.0])
        z = ScalarField(g, np.cos(np.pi * g.centers()[0]))
        errs.append(norm_h(neumann_laplacian(z) - z * np.pi**2))
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(orders) >= 1.8
