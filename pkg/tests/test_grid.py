import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxedit import OutOfBounds, SparseStructure, make_latent, make_sparse
from voxedit.grid import coords_from_linear, linear_index


def test_empty_structure():
    s = make_sparse([], 64)
    assert s.voxel_sum == 0
    assert s.resolution == 64
    assert s.coords.shape == (0, 3)


def test_sort_and_dedupe():
    s = make_sparse([(1, 0, 0), (0, 0, 0), (1, 0, 0)], 4)
    assert s.coords.tolist() == [[0, 0, 0], [1, 0, 0]]
    assert s.voxel_sum == 2


def test_out_of_bounds_rejected():
    with pytest.raises(OutOfBounds):
        make_sparse([(4, 0, 0)], 4)
    with pytest.raises(OutOfBounds):
        make_sparse([(0, -1, 0)], 4)


def test_resolution_range():
    with pytest.raises(ValueError):
        make_sparse([], 1)
    with pytest.raises(ValueError):
        make_sparse([], 0x10000)  # coords are stored as u16
    make_sparse([], 0xFFFF)


def test_linear_index_round_trip():
    rng = np.random.default_rng(0)
    coords = rng.integers(0, 16, size=(100, 3))
    lin = linear_index(coords, 16)
    assert np.array_equal(coords_from_linear(lin, 16), coords.astype(np.uint16))


def test_dense_round_trip_trivial():
    s = make_sparse([], 4)
    grid = s.to_dense()
    assert grid.shape == (4, 4, 4)
    assert not grid.any()
    assert SparseStructure.from_dense(grid) == s

    full = make_sparse([(x, y, z) for x in range(2) for y in range(2) for z in range(2)], 2)
    assert full.voxel_sum == 8
    assert SparseStructure.from_dense(full.to_dense()) == full


def test_dense_round_trip_random():
    rng = np.random.default_rng(1)
    for _ in range(500):
        n = int(rng.integers(0, 120))
        coords = rng.integers(0, 8, size=(n, 3))
        s = make_sparse(coords, 8)
        assert SparseStructure.from_dense(s.to_dense()) == s


def test_from_dense_shape_check():
    with pytest.raises(ValueError):
        SparseStructure.from_dense(np.zeros((4, 4, 5), dtype=bool))


@settings(max_examples=100)
@given(
    st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7), st.integers(0, 7)), max_size=40),
    st.randoms(),
)
def test_canonical_form_order_independent(coords, shuffler):
    a = make_sparse(coords, 8)
    shuffled = list(coords)
    shuffler.shuffle(shuffled)
    b = make_sparse(shuffled, 8)
    assert a == b
    assert a.coords.tobytes() == b.coords.tobytes()


def test_structures_immutable():
    s = make_sparse([(1, 2, 3)], 8)
    with pytest.raises(ValueError):
        s.coords[0, 0] = 5


def test_make_latent_sorts_by_coord():
    lat = np.array([[1.0], [2.0]], dtype=np.float32)
    z = make_latent([(1, 0, 0), (0, 0, 0)], lat, 4)
    assert z.coords.tolist() == [[0, 0, 0], [1, 0, 0]]
    assert z.latents[:, 0].tolist() == [2.0, 1.0]
    assert z.channels == 1


def test_make_latent_rejects_duplicates_and_nonfinite():
    lat = np.ones((2, 3), dtype=np.float32)
    with pytest.raises(ValueError):
        make_latent([(0, 0, 0), (0, 0, 0)], lat, 4)
    bad = lat.copy()
    bad[1, 1] = np.nan
    with pytest.raises(ValueError):
        make_latent([(0, 0, 0), (1, 0, 0)], bad, 4)


def test_latent_equality_is_bitwise():
    lat = np.array([[0.0]], dtype=np.float32)
    neg = np.array([[-0.0]], dtype=np.float32)
    a = make_latent([(0, 0, 0)], lat, 4)
    b = make_latent([(0, 0, 0)], neg, 4)
    assert a != b  # -0.0 and 0.0 differ as bits
