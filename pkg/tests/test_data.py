"""Cube I/O, normalization, patch extraction, splitting, synthetic scenes."""

import json
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chmffn.data import (
    BiTemporalScene,
    HyperCube,
    extract_patch,
    extract_patch_array,
    load_cube,
    load_gt,
    load_scene,
    normalize_bands,
    pad_reflect,
    reflect_index,
    stratified_split,
    synth_scene,
    synth_scene_details,
    write_cube,
    write_gt,
    write_scene,
)
from chmffn.errors import DataError

# change/no-change population of the 420x140 farmland benchmark scene
FARM_SHAPE = (420, 140)
FARM_CHANGED = 18383
FARM_UNCHANGED = 40417
# floor(0.3 * class count) training pixels per class at a 30% draw
FARM_TRAIN_CHANGED = 5514
FARM_TRAIN_UNCHANGED = 12125


def _cube(seed=0, bands=3, h=5, w=4):
    rng = np.random.default_rng(seed)
    return HyperCube(rng.normal(size=(bands, h, w)).astype(np.float32))


def _farmland_like_gt(seed=0):
    gt = np.zeros(FARM_SHAPE[0] * FARM_SHAPE[1], dtype=np.uint8)
    gt[:FARM_CHANGED] = 1
    np.random.default_rng(seed).shuffle(gt)
    return gt.reshape(FARM_SHAPE)


# ---------------------------------------------------------------------------
# cube I/O


def test_cube_round_trip_is_byte_exact(tmp_path):
    cube = _cube()
    hdr = str(tmp_path / "c.json")
    write_cube(cube, hdr)
    with open(str(tmp_path / "c.bin"), "rb") as fh:
        first = fh.read()
    loaded = load_cube(hdr)
    np.testing.assert_array_equal(loaded.data, cube.data)
    write_cube(loaded, str(tmp_path / "c2.json"))
    with open(str(tmp_path / "c2.bin"), "rb") as fh:
        second = fh.read()
    assert first == second


def test_single_value_cube(tmp_path):
    hdr = str(tmp_path / "one.json")
    write_cube(HyperCube(np.zeros((1, 1, 1), dtype=np.float32)), hdr)
    loaded = load_cube(hdr)
    assert loaded.data.shape == (1, 1, 1)
    assert loaded.data[0, 0, 0] == 0.0


def test_truncated_blob_rejected(tmp_path):
    cube = _cube()
    hdr = str(tmp_path / "c.json")
    write_cube(cube, hdr)
    blob = str(tmp_path / "c.bin")
    with open(blob, "rb") as fh:
        raw = fh.read()
    with open(blob, "wb") as fh:
        fh.write(raw[:-4])
    with pytest.raises(DataError):
        load_cube(hdr)


def test_missing_header_key_rejected(tmp_path):
    hdr = tmp_path / "bad.json"
    hdr.write_text(json.dumps({"height": 2, "width": 2, "bands": 1}))
    with pytest.raises(DataError):
        load_cube(str(hdr))


@pytest.mark.parametrize(
    "patch",
    [
        {"order": "bip"},
        {"byte_order": "be"},
        {"dtype": "f64"},
        {"height": 0},
        {"bands": -1},
        {"width": "9"},
    ],
)
def test_invalid_header_fields_rejected(tmp_path, patch):
    header = {"height": 2, "width": 2, "bands": 1, "dtype": "f32", "order": "bsq", "byte_order": "le"}
    header.update(patch)
    hdr = tmp_path / "bad.json"
    hdr.write_text(json.dumps(header))
    (tmp_path / "bad.bin").write_bytes(b"\x00" * 16)
    with pytest.raises(DataError):
        load_cube(str(hdr))


def test_non_finite_cube_rejected(tmp_path):
    hdr = tmp_path / "nan.json"
    hdr.write_text(
        json.dumps({"height": 1, "width": 1, "bands": 1, "dtype": "f32", "order": "bsq", "byte_order": "le"})
    )
    (tmp_path / "nan.bin").write_bytes(np.array([np.nan], dtype="<f4").tobytes())
    with pytest.raises(DataError):
        load_cube(str(hdr))


def test_header_data_field_names_the_blob(tmp_path):
    cube = _cube(1)
    hdr = str(tmp_path / "c.json")
    blob = str(tmp_path / "else.raw")
    write_cube(cube, hdr, data_path=blob)
    header = json.loads(open(hdr).read())
    assert header["data"] == "else.raw"
    np.testing.assert_array_equal(load_cube(hdr).data, cube.data)


def test_gt_round_trip_and_validation(tmp_path):
    gt = (np.random.default_rng(2).uniform(size=(6, 7)) > 0.5).astype(np.uint8)
    hdr = str(tmp_path / "gt.json")
    write_gt(gt, hdr)
    np.testing.assert_array_equal(load_gt(hdr), gt)
    # a 2 in the raster is invalid
    with open(str(tmp_path / "gt.bin"), "r+b") as fh:
        fh.seek(0)
        fh.write(b"\x02")
    with pytest.raises(DataError):
        load_gt(hdr)


def test_scene_round_trip(tmp_path):
    scene = synth_scene(8, 9, 4, 1, 0.05, seed=3)
    paths = write_scene(scene, str(tmp_path / "scene"))
    loaded = load_scene(paths["t1"], paths["t2"], paths["gt"])
    np.testing.assert_array_equal(loaded.t1.data, scene.t1.data)
    np.testing.assert_array_equal(loaded.t2.data, scene.t2.data)
    np.testing.assert_array_equal(loaded.gt, scene.gt)


def test_scene_shape_mismatch_rejected():
    t1 = _cube(0, 2, 4, 4)
    t2 = _cube(0, 2, 4, 5)
    with pytest.raises(DataError):
        BiTemporalScene(t1, t2, np.zeros((4, 4), dtype=np.uint8))


# ---------------------------------------------------------------------------
# normalization


def test_normalize_example_band():
    cube = HyperCube(np.array([2.0, 4.0, 6.0], dtype=np.float32).reshape(1, 1, 3))
    out = normalize_bands(cube).data.reshape(-1)
    np.testing.assert_allclose(out, [0.0, 0.5, 1.0], atol=1e-7)


def test_normalize_constant_band_maps_to_zero():
    cube = HyperCube(np.full((2, 3, 3), 5.0, dtype=np.float32))
    assert np.all(normalize_bands(cube).data == 0.0)


def test_normalize_is_bitwise_idempotent():
    cube = _cube(4, bands=5, h=6, w=7)
    once = normalize_bands(cube)
    twice = normalize_bands(once)
    np.testing.assert_array_equal(once.data, twice.data)


def test_normalize_band_ranges():
    out = normalize_bands(_cube(5, bands=4)).data
    for band in out:
        assert band.min() == 0.0
        assert band.max() == 1.0


# ---------------------------------------------------------------------------
# reflection padding and patches


def test_reflect_index_mirrors_without_edge_repeat():
    # indices -2..6 against n=5 fold as 2,1,0,1,2,3,4,3,2
    idx = np.arange(-2, 7)
    np.testing.assert_array_equal(reflect_index(idx, 5), [2, 1, 0, 1, 2, 3, 4, 3, 2])


def test_pad_reflect_matches_numpy_reflect():
    arr = np.random.default_rng(6).normal(size=(2, 5, 4))
    ours = pad_reflect(arr, 2)
    ref = np.pad(arr, ((0, 0), (2, 2), (2, 2)), mode="reflect")
    np.testing.assert_array_equal(ours, ref)


def test_corner_patch_center_is_the_pixel():
    scene = synth_scene(6, 7, 3, 1, 0.0, seed=7)
    for row, col in [(0, 0), (0, 6), (5, 0), (5, 6)]:
        pair = extract_patch(scene, row, col, 5)
        np.testing.assert_array_equal(pair.p1[:, 2, 2], scene.t1.data[:, row, col])
        np.testing.assert_array_equal(pair.p2[:, 2, 2], scene.t2.data[:, row, col])
        assert pair.label == int(scene.gt[row, col])


def test_interior_patch_is_the_raw_window():
    scene = synth_scene(9, 9, 2, 0, 0.0, seed=8)
    pair = extract_patch(scene, 4, 4, 5)
    np.testing.assert_array_equal(pair.p1, scene.t1.data[:, 2:7, 2:7])


def test_patch_rejects_out_of_bounds_center():
    data = np.zeros((1, 4, 4))
    with pytest.raises(DataError):
        extract_patch_array(data, 4, 0, 3)


def test_patch_rejects_even_size():
    data = np.zeros((1, 4, 4))
    with pytest.raises(DataError):
        extract_patch_array(data, 1, 1, 4)


@given(
    row=st.integers(min_value=0, max_value=5),
    col=st.integers(min_value=0, max_value=7),
    half=st.integers(min_value=1, max_value=6),
)
def test_patch_center_property(row, col, half):
    data = np.arange(2 * 6 * 8, dtype=np.float64).reshape(2, 6, 8)
    patch = 2 * half + 1
    out = extract_patch_array(data, row, col, patch)
    assert out.shape == (2, patch, patch)
    np.testing.assert_array_equal(out[:, half, half], data[:, row, col])


# ---------------------------------------------------------------------------
# stratified splitting


def test_split_is_a_partition():
    gt = (np.random.default_rng(9).uniform(size=(20, 20)) > 0.7).astype(np.uint8)
    split = stratified_split(gt, 0.3, seed=0)
    train = {tuple(c) for c in split.train}
    test = {tuple(c) for c in split.test}
    assert train.isdisjoint(test)
    assert len(train) + len(test) == 400


def test_split_floor_counts_per_class():
    gt = np.zeros((10, 10), dtype=np.uint8)
    gt[:3] = 1  # 30 changed, 70 unchanged
    split = stratified_split(gt, 0.25, seed=1)
    labels = gt[split.train[:, 0], split.train[:, 1]]
    assert int((labels == 1).sum()) == 7   # floor(0.25 * 30)
    assert int((labels == 0).sum()) == 17  # floor(0.25 * 70)


def test_split_farmland_shaped_counts():
    gt = _farmland_like_gt()
    split = stratified_split(gt, 0.3, seed=0)
    labels = gt[split.train[:, 0], split.train[:, 1]]
    assert int((labels == 1).sum()) == FARM_TRAIN_CHANGED
    assert int((labels == 0).sum()) == FARM_TRAIN_UNCHANGED
    assert split.train.shape[0] + split.test.shape[0] == FARM_SHAPE[0] * FARM_SHAPE[1]


def test_split_same_seed_is_identical():
    gt = (np.random.default_rng(10).uniform(size=(15, 15)) > 0.6).astype(np.uint8)
    a = stratified_split(gt, 0.2, seed=5)
    b = stratified_split(gt, 0.2, seed=5)
    np.testing.assert_array_equal(a.train, b.train)
    np.testing.assert_array_equal(a.test, b.test)


def test_split_different_seed_differs():
    gt = (np.random.default_rng(11).uniform(size=(15, 15)) > 0.6).astype(np.uint8)
    a = stratified_split(gt, 0.2, seed=5)
    b = stratified_split(gt, 0.2, seed=6)
    assert not np.array_equal(a.train, b.train)


def test_split_rejects_missing_class():
    with pytest.raises(DataError):
        stratified_split(np.zeros((5, 5), dtype=np.uint8), 0.3, seed=0)


def test_split_rejects_zero_take_by_default():
    gt = np.zeros((10, 10), dtype=np.uint8)
    gt[0, 0] = 1  # one changed pixel; floor(0.3 * 1) == 0
    with pytest.raises(DataError):
        stratified_split(gt, 0.3, seed=0)
    split = stratified_split(gt, 0.3, seed=0, allow_empty_train=True)
    labels = gt[split.train[:, 0], split.train[:, 1]]
    assert int((labels == 1).sum()) == 0


def test_split_rejects_bad_ratio():
    gt = _farmland_like_gt()
    for ratio in (0.0, 1.0, -0.5):
        with pytest.raises(DataError):
            stratified_split(gt, ratio, seed=0)


@given(ratio=st.sampled_from([0.05, 0.1, 0.2, 0.3, 0.5]), seed=st.integers(min_value=0, max_value=99))
def test_split_floor_rule_property(ratio, seed):
    gt = (np.random.default_rng(seed).uniform(size=(12, 12)) > 0.5).astype(np.uint8)
    n_changed = int(gt.sum())
    n_unchanged = gt.size - n_changed
    if int(ratio * n_changed) == 0 or int(ratio * n_unchanged) == 0:
        return
    split = stratified_split(gt, ratio, seed=seed)
    labels = gt[split.train[:, 0], split.train[:, 1]]
    assert int((labels == 1).sum()) == int(ratio * n_changed)
    assert int((labels == 0).sum()) == int(ratio * n_unchanged)


# ---------------------------------------------------------------------------
# synthetic scenes


def test_synth_no_rects_no_noise_dates_identical():
    scene = synth_scene(10, 11, 5, 0, 0.0, seed=12)
    np.testing.assert_array_equal(scene.t1.data, scene.t2.data)
    assert scene.gt.sum() == 0


def test_synth_gt_equals_rect_union():
    for seed in range(8):
        scene, rects = synth_scene_details(20, 20, 8, 2, 0.01, seed=seed)
        union = np.zeros((20, 20), dtype=bool)
        for r in rects:
            union[r.row0 : r.row1, r.col0 : r.col1] = True
        assert int(scene.gt.sum()) == int(union.sum())
        np.testing.assert_array_equal(scene.gt.astype(bool), union)


def test_synth_same_seed_bit_identical():
    a = synth_scene(12, 9, 6, 3, 0.02, seed=13)
    b = synth_scene(12, 9, 6, 3, 0.02, seed=13)
    assert a.t1.data.tobytes() == b.t1.data.tobytes()
    assert a.t2.data.tobytes() == b.t2.data.tobytes()
    assert a.gt.tobytes() == b.gt.tobytes()


def test_synth_rects_clipped_to_bounds():
    for seed in range(10):
        _, rects = synth_scene_details(7, 7, 3, 4, 0.0, seed=seed)
        for r in rects:
            assert 0 <= r.row0 < r.row1 <= 7
            assert 0 <= r.col0 < r.col1 <= 7


def test_synth_changed_region_differs_unchanged_matches():
    scene = synth_scene(16, 16, 4, 1, 0.0, seed=14)
    changed = scene.gt.astype(bool)
    diff = np.abs(scene.t2.data - scene.t1.data).max(axis=0)
    assert np.all(diff[changed] > 0.0)
    np.testing.assert_array_equal(diff[~changed], 0.0)


def test_synth_rejects_bad_arguments():
    with pytest.raises(DataError):
        synth_scene(0, 5, 3, 1, 0.0, seed=0)
    with pytest.raises(DataError):
        synth_scene(5, 5, 3, -1, 0.0, seed=0)
    with pytest.raises(DataError):
        synth_scene(5, 5, 3, 1, -0.1, seed=0)
