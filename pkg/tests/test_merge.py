import numpy as np
import pytest

from voxedit import (
    ChannelMismatch,
    MissingLatent,
    ResolutionMismatch,
    Threshold,
    TopK,
    apply_flip,
    diff_xor,
    label_components,
    make_latent,
    make_sparse,
    select_components,
    slat_merge,
    voxel_merge,
)
from voxedit.merge import mask_all

from oracles import bfs_components, canonical_component_order, merge_oracle, random_structure_coords


def random_structure(rng, resolution, density=None):
    density = density if density is not None else rng.uniform(0.01, 0.5)
    return make_sparse(random_structure_coords(rng, resolution, density), resolution)


# --- diff_xor -------------------------------------------------------------


def test_diff_self_is_empty():
    rng = np.random.default_rng(20)
    s = random_structure(rng, 8)
    assert diff_xor(s, s).size == 0


def test_diff_single_voxel():
    s_src = make_sparse([(1, 1, 1)], 8)
    s_tgt = make_sparse([], 8)
    assert diff_xor(s_src, s_tgt).coords.tolist() == [[1, 1, 1]]


def test_diff_resolution_mismatch():
    with pytest.raises(ResolutionMismatch):
        diff_xor(make_sparse([], 8), make_sparse([], 16))


def test_diff_matches_dense_oracle():
    rng = np.random.default_rng(21)
    for _ in range(1000):
        a = random_structure(rng, 8)
        b = random_structure(rng, 8)
        d = diff_xor(a, b)
        expected = a.to_dense() ^ b.to_dense()
        assert np.array_equal(d.structure().to_dense(), expected)


# --- label_components -------------------------------------------------------


def test_corner_adjacency_only_in_26():
    d = diff_xor(make_sparse([], 4), make_sparse([(0, 0, 0), (1, 1, 1)], 4))
    assert len(label_components(d, 6).components) == 2
    assert len(label_components(d, 18).components) == 2
    assert len(label_components(d, 26).components) == 1


def test_edge_adjacency_enters_at_18():
    d = diff_xor(make_sparse([], 4), make_sparse([(0, 0, 0), (1, 1, 0)], 4))
    assert len(label_components(d, 6).components) == 2
    assert len(label_components(d, 18).components) == 1


def test_invalid_connectivity():
    d = diff_xor(make_sparse([], 4), make_sparse([(0, 0, 0)], 4))
    with pytest.raises(ValueError):
        label_components(d, 10)


def test_labeling_matches_bfs_oracle():
    rng = np.random.default_rng(22)
    for _ in range(60):
        density = rng.uniform(0.01, 0.5)
        s = random_structure(rng, 16, density)
        d = diff_xor(make_sparse([], 16), s)
        for conn in (6, 18, 26):
            cs = label_components(d, conn)
            got = [frozenset(map(tuple, c.tolist())) for c in cs.components]
            expected = canonical_component_order(bfs_components(d.coords, 16, conn), 16)
            assert got == expected
            # within-component voxel order is canonical
            for c in cs.components:
                lin = c[:, 0].astype(np.int64) * 256 + c[:, 1] * 16 + c[:, 2]
                assert (np.diff(lin) > 0).all()


def test_component_order_size_then_min_linear_index():
    # two components of size 2; the one containing (0,0,0) must come first
    s = make_sparse([(0, 0, 0), (0, 0, 1), (5, 5, 5), (5, 5, 6), (2, 2, 2)], 8)
    d = diff_xor(make_sparse([], 8), s)
    cs = label_components(d, 6)
    assert cs.sizes == [2, 2, 1]
    assert cs.components[0][0].tolist() == [0, 0, 0]
    assert cs.components[1][0].tolist() == [5, 5, 5]


# --- select_components --------------------------------------------------------


def planted_components(sizes, resolution=16):
    """Disjoint axis-aligned boxes with >=2-cell gaps, one per size."""
    boxes = {
        150: ((0, 0, 0), (6, 5, 5)),
        60: ((9, 0, 0), (5, 4, 3)),
        40: ((0, 8, 8), (5, 2, 4)),
        12: ((10, 10, 10), (3, 2, 2)),
    }
    coords = []
    for size in sizes:
        (ox, oy, oz), (sx, sy, sz) = boxes[size]
        assert sx * sy * sz == size
        coords.extend(
            (ox + i, oy + j, oz + k) for i in range(sx) for j in range(sy) for k in range(sz)
        )
    return make_sparse(coords, resolution)


def test_threshold_selection_tau_ablation():
    s = planted_components([150, 60, 40, 12])
    d = diff_xor(make_sparse([], 16), s)
    cs = label_components(d, 26)
    assert cs.sizes == [150, 60, 40, 12]
    assert select_components(cs, Threshold(100)).selected_sizes == (150,)
    assert select_components(cs, Threshold(50)).selected_sizes == (150, 60)
    assert select_components(cs, Threshold(30)).selected_sizes == (150, 60, 40)


def test_threshold_is_strict():
    s = planted_components([150])
    d = diff_xor(make_sparse([], 16), s)
    cs = label_components(d, 26)
    assert select_components(cs, Threshold(150)).size == 0
    assert select_components(cs, Threshold(149)).size == 150


def test_topk_takes_largest():
    s = make_sparse(
        [(0, 0, z) for z in range(5)] + [(4, 4, z) for z in range(3)] + [(8, 8, z) for z in range(3)],
        16,
    )
    d = diff_xor(make_sparse([], 16), s)
    cs = label_components(d, 6)
    assert cs.sizes == [5, 3, 3]
    mask = select_components(cs, TopK(1))
    assert mask.selected_sizes == (5,)
    assert mask.coords.tolist() == [[0, 0, z] for z in range(5)]


def test_topk_tie_breaks_on_min_linear_index():
    s = make_sparse([(0, 0, z) for z in range(4)] + [(4, 4, z) for z in range(4)], 16)
    d = diff_xor(make_sparse([], 16), s)
    cs = label_components(d, 6)
    mask = select_components(cs, TopK(1))
    assert mask.coords.tolist() == [[0, 0, z] for z in range(4)]


def test_topk_overshoot_selects_all():
    s = planted_components([150, 12])
    d = diff_xor(make_sparse([], 16), s)
    cs = label_components(d, 26)
    assert select_components(cs, TopK(99)).size == 162


def test_mask_monotone_in_tau():
    rng = np.random.default_rng(23)
    for _ in range(50):
        s = random_structure(rng, 16)
        d = diff_xor(make_sparse([], 16), s)
        cs = label_components(d, 26)
        t2, t1 = sorted(rng.integers(0, 60, size=2))
        m_high = set(map(tuple, select_components(cs, Threshold(int(t1))).coords.tolist()))
        m_low = set(map(tuple, select_components(cs, Threshold(int(t2))).coords.tolist()))
        assert m_high <= m_low


# --- apply_flip ---------------------------------------------------------------


def test_flip_empty_mask_is_identity():
    rng = np.random.default_rng(24)
    s = random_structure(rng, 8)
    d = diff_xor(s, s)
    mask = select_components(label_components(d, 26), Threshold(0))
    assert apply_flip(s, mask) == s


def test_flip_full_diff_recovers_target():
    rng = np.random.default_rng(25)
    for _ in range(50):
        a = random_structure(rng, 8)
        b = random_structure(rng, 8)
        mask = select_components(label_components(diff_xor(a, b), 26), TopK(10**6))
        assert apply_flip(a, mask) == b


def test_flip_is_involution():
    rng = np.random.default_rng(26)
    for _ in range(50):
        a = random_structure(rng, 8)
        b = random_structure(rng, 8)
        cs = label_components(diff_xor(a, b), 26)
        k = int(rng.integers(0, len(cs.components) + 1))
        mask = select_components(cs, TopK(k))
        assert apply_flip(apply_flip(a, mask), mask) == a


def test_flip_matches_per_voxel_oracle():
    rng = np.random.default_rng(27)
    for _ in range(1000):
        a = random_structure(rng, 8)
        b = random_structure(rng, 8)
        cs = label_components(diff_xor(a, b), 26)
        k = int(rng.integers(0, len(cs.components) + 1))
        mask = select_components(cs, TopK(k))
        merged = apply_flip(a, mask)
        mask_grid = mask_dense(mask, 8)
        expected = merge_oracle(a.to_dense(), b.to_dense(), mask_grid)
        assert np.array_equal(merged.to_dense(), expected)


def mask_dense(mask, resolution):
    grid = np.zeros((resolution,) * 3, dtype=bool)
    if mask.size:
        grid[mask.coords[:, 0], mask.coords[:, 1], mask.coords[:, 2]] = True
    return grid


# --- voxel_merge ----------------------------------------------------------------


def test_merge_identical_inputs():
    rng = np.random.default_rng(28)
    s = random_structure(rng, 8)
    merged, mask = voxel_merge(s, s)
    assert merged == s
    assert mask.size == 0


def test_merge_planted_blob_with_specks():
    rng = np.random.default_rng(29)
    src = random_structure(rng, 16, 0.08)
    blob = [(1 + i, 1 + j, 1 + k) for i in range(6) for j in range(5) for k in range(5)]
    specks = [(12, 12, 12), (14, 1, 14), (1, 14, 1), (14, 14, 2), (8, 14, 14)]
    flip = make_sparse(blob + specks, 16)
    tgt = apply_flip(src, mask_all(flip))
    merged, mask = voxel_merge(src, tgt, connectivity=26, policy=Threshold(100))
    assert sorted(mask.selected_sizes, reverse=True) == [150]
    # blob region transferred, specks untouched
    blob_set = set(blob)
    assert set(map(tuple, mask.coords.tolist())) == blob_set
    merged_dense, src_dense, tgt_dense = merged.to_dense(), src.to_dense(), tgt.to_dense()
    for speck in specks:
        assert merged_dense[speck] == src_dense[speck]
    for c in blob:
        assert merged_dense[c] == tgt_dense[c]


def test_merge_with_huge_k_returns_target():
    rng = np.random.default_rng(30)
    a = random_structure(rng, 8)
    b = random_structure(rng, 8)
    merged, _ = voxel_merge(a, b, policy=TopK(10**9))
    assert merged == b


# --- slat_merge ------------------------------------------------------------------


def random_latent_for(structure, rng, channels=8):
    lat = rng.standard_normal((structure.voxel_sum, channels)).astype(np.float32)
    return make_latent(structure.coords, lat, structure.resolution)


def test_slat_merge_empty_mask_returns_source_bitwise():
    rng = np.random.default_rng(31)
    s = random_structure(rng, 8)
    z = random_latent_for(s, rng)
    mask = select_components(label_components(diff_xor(s, s), 26), Threshold(0))
    out = slat_merge(z, z, mask, s)
    assert out == z
    assert out.latents.tobytes() == z.latents.tobytes()


def test_slat_merge_added_voxel_takes_target_latent():
    src = make_sparse([(0, 0, 0)], 8)
    tgt = make_sparse([(0, 0, 0), (3, 3, 3)], 8)
    rng = np.random.default_rng(32)
    z_src = random_latent_for(src, rng)
    z_tgt = random_latent_for(tgt, rng)
    merged, mask = voxel_merge(src, tgt, policy=Threshold(0))
    out = slat_merge(z_src, z_tgt, mask, merged)
    assert out.coords.tolist() == [[0, 0, 0], [3, 3, 3]]
    assert out.latents[0].tobytes() == z_src.latents[0].tobytes()
    assert out.latents[1].tobytes() == z_tgt.latents[1].tobytes()


def test_slat_merge_provenance_oracle():
    rng = np.random.default_rng(33)
    for _ in range(500):
        a = random_structure(rng, 8, rng.uniform(0.02, 0.3))
        b = random_structure(rng, 8, rng.uniform(0.02, 0.3))
        z_a = random_latent_for(a, rng)
        z_b = random_latent_for(b, rng)
        cs = label_components(diff_xor(a, b), 26)
        k = int(rng.integers(0, len(cs.components) + 1))
        mask = select_components(cs, TopK(k))
        merged = apply_flip(a, mask)
        out = slat_merge(z_a, z_b, mask, merged)
        assert np.array_equal(out.coords, merged.coords)
        mask_set = set(map(tuple, mask.coords.tolist()))
        a_lin = {tuple(c): i for i, c in enumerate(z_a.coords.tolist())}
        b_lin = {tuple(c): i for i, c in enumerate(z_b.coords.tolist())}
        for i, coord in enumerate(map(tuple, out.coords.tolist())):
            if coord in mask_set:
                assert out.latents[i].tobytes() == z_b.latents[b_lin[coord]].tobytes()
            else:
                assert out.latents[i].tobytes() == z_a.latents[a_lin[coord]].tobytes()


def test_slat_merge_channel_mismatch():
    s = make_sparse([(0, 0, 0)], 8)
    rng = np.random.default_rng(34)
    z4 = make_latent(s.coords, rng.standard_normal((1, 4)).astype(np.float32), 8)
    z8 = make_latent(s.coords, rng.standard_normal((1, 8)).astype(np.float32), 8)
    mask = select_components(label_components(diff_xor(s, s), 26), Threshold(0))
    with pytest.raises(ChannelMismatch):
        slat_merge(z4, z8, mask, s)


def test_slat_merge_missing_latent():
    src = make_sparse([(0, 0, 0)], 8)
    tgt = make_sparse([(0, 0, 0), (3, 3, 3)], 8)
    rng = np.random.default_rng(35)
    z_src = random_latent_for(src, rng)
    z_tgt_incomplete = random_latent_for(src, rng)  # lacks (3,3,3)
    merged, mask = voxel_merge(src, tgt, policy=Threshold(0))
    with pytest.raises(MissingLatent) as err:
        slat_merge(z_src, z_tgt_incomplete, mask, merged)
    assert err.value.side == "target"
    assert err.value.coord == (3, 3, 3)


def test_labeling_deterministic_under_thread_pool():
    from concurrent.futures import ThreadPoolExecutor

    rng = np.random.default_rng(36)
    diffs = []
    for _ in range(40):
        s = random_structure(rng, 16)
        diffs.append(diff_xor(make_sparse([], 16), s))

    def run(d):
        return [c.tolist() for c in label_components(d, 26).components]

    serial = [run(d) for d in diffs]
    with ThreadPoolExecutor(max_workers=8) as pool:
        parallel = list(pool.map(run, diffs))
    assert serial == parallel
