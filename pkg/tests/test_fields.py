import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from avocado.errors import GridMismatchError, GridTooSmallError, ParameterError
from avocado.fields import (Grid, InverseMap, ScalarField, VectorField, advect_inverse_map, compose_warp,
                            divergence, gradient, identity_map, jacobian_determinant, sample_map,
                            sample_scalar, sample_vector)

grids = st.builds(
    lambda dims, sp, org: Grid(dims, sp[: len(dims)], org[: len(dims)]),
    st.sampled_from([(3, 4), (5, 3), (4, 4, 3), (3, 5, 4)]),
    st.lists(st.floats(0.25, 3.0), min_size=3, max_size=3),
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
)


def test_grid_validation():
    with pytest.raises(ParameterError):
        Grid((4,))
    with pytest.raises(ParameterError):
        Grid((4, 1))
    with pytest.raises(ParameterError):
        Grid((4, 4), spacing=(1.0, 0.0))
    with pytest.raises(ParameterError):
        Grid((4, 4, 4, 4))


def test_field_shape_checked():
    g = Grid((3, 4))
    with pytest.raises(GridMismatchError):
        ScalarField(g, np.zeros((4, 3)))
    with pytest.raises(GridMismatchError):
        VectorField(g, np.zeros((3, 4, 3)))


def test_identity_map_2x2():
    phi = identity_map(Grid((2, 2)))
    assert phi.mapped[0, 0].tolist() == [0, 0]
    assert phi.mapped[1, 0].tolist() == [1, 0]
    assert phi.mapped[0, 1].tolist() == [0, 1]
    assert phi.mapped[1, 1].tolist() == [1, 1]


def test_identity_map_origin_spacing():
    phi = identity_map(Grid((3, 3), spacing=(2, 2), origin=(5, 5)))
    assert phi.mapped[1, 1].tolist() == [7.0, 7.0]


@given(grids)
def test_identity_jacobian_exactly_one(grid):
    det = jacobian_determinant(identity_map(grid)).values
    assert np.all(det == 1.0)


def test_sample_scalar_examples():
    g = Grid((4, 3))
    assert sample_scalar(ScalarField.constant(g, 3.0), (1.3, 0.4)) == 3.0
    ramp = ScalarField(g, g.coordinates()[..., 0])
    assert sample_scalar(ramp, (0.5, 1.0)) == 0.5
    assert sample_scalar(ramp, (100.0, -50.0)) == 3.0


def test_sample_vector_examples():
    g = Grid((4, 4))
    const = VectorField.constant(g, (1.0, 2.0))
    assert sample_vector(const, [(2.2, 0.7)]).tolist() == [[1.0, 2.0]]
    lin = VectorField(g, np.stack([g.coordinates()[..., 0], np.zeros(g.dims)], -1))
    assert np.allclose(sample_vector(lin, [(1.5, 2.0)]), [[1.5, 0.0]])
    assert sample_vector(lin, [(-4.0, 9.0)]).tolist() == [[0.0, 0.0]]


@given(grids, st.integers(0, 2**31 - 1))
def test_sample_exact_at_voxel_centres(grid, seed):
    rng = np.random.default_rng(seed)
    f = ScalarField(grid, rng.standard_normal(grid.dims))
    pts = grid.coordinates().reshape(-1, grid.ndims)
    assert np.array_equal(sample_scalar(f, pts), f.values.reshape(-1))


@given(grids, st.integers(0, 2**31 - 1))
def test_sampling_matches_loop_oracle(grid, seed):
    rng = np.random.default_rng(seed)
    data = rng.standard_normal(grid.dims)
    idx = rng.uniform(-1.5, np.asarray(grid.dims) + 0.5, size=(20, grid.ndims))
    got = sample_scalar(ScalarField(grid, data), grid.to_physical(idx))
    want = [oracles.multilinear(data, p) for p in idx]
    assert np.allclose(got, want, rtol=0, atol=1e-12)


def test_sample_map_holds_displacement_outside():
    g = Grid((4, 4))
    shift = InverseMap(g, g.coordinates() + np.array([0.25, -1.0]))
    got = sample_map(shift, [(10.0, -3.0), (1.5, 2.5)])
    assert np.allclose(got, [(10.25, -4.0), (1.75, 1.5)], atol=1e-14)


@given(grids, st.integers(0, 2**31 - 1), st.floats(0.01, 3.0))
def test_advect_zero_velocity_bitwise(grid, seed, dt):
    rng = np.random.default_rng(seed)
    phi = InverseMap(grid, grid.coordinates() + rng.normal(0, 0.3, grid.dims + (grid.ndims,)))
    out = advect_inverse_map(phi, VectorField.zeros(grid), dt)
    assert np.array_equal(out.mapped, phi.mapped)


def test_advect_constant_velocity_translates_interior():
    g = Grid((8, 7, 6))
    c = np.array([0.3, -0.2, 0.1])
    v = VectorField.constant(g, c)
    one = advect_inverse_map(identity_map(g), v, 0.5)
    two = advect_inverse_map(one, v, 0.5)
    x = g.coordinates()
    assert np.allclose(one.mapped[1:-1, 1:-1, 1:-1], (x - 0.5 * c)[1:-1, 1:-1, 1:-1], atol=1e-13)
    assert np.allclose(two.mapped[2:-2, 2:-2, 2:-2], (x - c)[2:-2, 2:-2, 2:-2], atol=1e-13)
    # displacement continues past the faces
    assert np.allclose(two.mapped, x - c, atol=1e-13)


def test_advect_errors():
    g = Grid((4, 4))
    with pytest.raises(GridMismatchError):
        advect_inverse_map(identity_map(g), VectorField.zeros(Grid((4, 5))), 0.1)
    with pytest.raises(ParameterError):
        advect_inverse_map(identity_map(g), VectorField.zeros(g), 0.0)


def test_jacobian_uniform_contraction():
    g = Grid((5, 5, 5))
    det = jacobian_determinant(InverseMap(g, 0.5 * g.coordinates())).values
    assert np.allclose(det[1:-1, 1:-1, 1:-1], 0.125, rtol=0, atol=1e-15)


def test_jacobian_grid_too_small():
    with pytest.raises(GridTooSmallError):
        jacobian_determinant(identity_map(Grid((2, 5))))


def test_divergence_examples():
    g = Grid((6, 8))
    assert np.all(divergence(VectorField.constant(g, (1.0, -2.0))).values == 0.0)
    j = np.arange(8)
    shear = np.zeros((6, 8, 2))
    shear[..., 0] = np.sin(2 * np.pi * j / 8)[None, :]
    assert np.abs(divergence(VectorField(g, shear)).values).max() < 1e-15


def test_divergence_ramp_seam_frozen():
    # hand evaluation of the wrapped stencil on a 5^3 grid, v = (x, 0, 0):
    # interior i: ((i+1) - (i-1)) / 2 = 1; i=0: (1 - 4) / 2 = -1.5; i=4: (0 - 3) / 2 = -1.5
    g = Grid((5, 5, 5))
    v = np.zeros((5, 5, 5, 3))
    v[..., 0] = g.coordinates()[..., 0]
    div = divergence(VectorField(g, v)).values
    assert np.all(div[1:4] == 1.0)
    assert np.all(div[0] == -1.5) and np.all(div[4] == -1.5)


@given(grids, st.integers(0, 2**31 - 1))
def test_divergence_matches_loop_oracle(grid, seed):
    v = np.random.default_rng(seed).standard_normal(grid.dims + (grid.ndims,))
    got = divergence(VectorField(grid, v)).values
    assert np.allclose(got, oracles.periodic_divergence(v, grid.spacing), atol=1e-12)


def test_divergence_slip_agrees_in_interior():
    g = Grid((6, 5, 7), spacing=(1.0, 0.5, 2.0))
    v = VectorField(g, np.random.default_rng(3).standard_normal(g.dims + (3,)))
    a = divergence(v).values
    b = divergence(v, boundary="slip").values
    assert np.allclose(a[1:-1, 1:-1, 1:-1], b[1:-1, 1:-1, 1:-1], atol=1e-14)
    with pytest.raises(GridTooSmallError):
        divergence(VectorField.zeros(Grid((2, 4))))
    with pytest.raises(ParameterError):
        divergence(v, boundary="open")


def test_gradient_pairs_with_divergence_stencil():
    g = Grid((6, 6))
    f = np.random.default_rng(0).standard_normal(g.dims)
    gr = gradient(ScalarField(g, f)).values
    assert np.allclose(gr[2, 3, 0], (f[3, 3] - f[1, 3]) / 2)
    assert np.allclose(gr[0, 3, 0], (f[1, 3] - f[5, 3]) / 2)


@given(grids, st.integers(0, 2**31 - 1))
def test_compose_identity_exact(grid, seed):
    img = ScalarField(grid, np.random.default_rng(seed).standard_normal(grid.dims))
    assert np.array_equal(compose_warp(img, identity_map(grid)).values, img.values)


def test_compose_constant_and_ramp_shift():
    g = Grid((6, 5))
    assert np.all(compose_warp(ScalarField.constant(g, 2.5), InverseMap(g, g.coordinates() * 0.7)).values == 2.5)
    ramp = ScalarField(g, g.coordinates()[..., 0] * 3.0)
    shifted = compose_warp(ramp, InverseMap(g, g.coordinates() + np.array([1.0, 0.0])))
    assert np.allclose(shifted.values[:-1], ramp.values[1:], atol=1e-13)
