"""Tests for volume and mask IO, resampling, normalisation and splits."""

import json

import numpy as np
import pytest

from synergyseg.errors import NonBinaryLabels, ShapeMismatch, TooFewCases, UnreadableFile
from synergyseg.models import CaseEntry, DatasetManifest, LabelMask, Partition, Volume
from synergyseg.services.volume_io import (
    load_case,
    load_manifest,
    load_mask,
    load_volume,
    make_split,
    normalize_intensity,
    resample_to_shape,
    save_case,
    save_manifest,
    save_mask,
    save_volume,
)


def test_raw3d_constant_volume(tmp_path):
    """Test a constant RAW3D file loads with every voxel intact."""
    path = tmp_path / "const.raw3d"
    save_volume(Volume(data=np.full((4, 4, 2), 7.0)), path)

    volume = load_volume(path)
    assert volume.shape == (4, 4, 2)
    assert volume.data.size == 32
    assert np.all(volume.data == 7.0)
    assert volume.spacing == (1.0, 1.0, 1.0)


def test_raw3d_round_trip_is_bit_exact(tmp_path, rng):
    """Test save_case then load_case returns identical data and metadata."""
    data = rng.normal(size=(8, 8, 5)).astype(np.float32)
    mask = (rng.random((8, 8, 5)) > 0.5).astype(np.uint8)
    volume = Volume(data=data, spacing=(0.8, 0.8, 2.5), origin=(1.0, -2.0, 3.0))
    label = LabelMask(data=mask, spacing=(0.8, 0.8, 2.5), origin=(1.0, -2.0, 3.0))

    save_case(volume, tmp_path / "v.raw3d", label, tmp_path / "m.raw3d")
    loaded, loaded_mask = load_case(tmp_path / "v.raw3d", tmp_path / "m.raw3d")

    assert np.array_equal(loaded.data, data)
    assert np.array_equal(loaded_mask.data, mask)
    assert loaded.spacing == (0.8, 0.8, 2.5)
    assert loaded.origin == (1.0, -2.0, 3.0)


def test_raw3d_axis_order(tmp_path):
    """Test x varies fastest in the RAW3D payload."""
    data = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    save_volume(Volume(data=data), tmp_path / "order.raw3d")

    flat = np.frombuffer((tmp_path / "order.raw3d").read_bytes(), dtype="<f4")
    assert flat[0] == data[0, 0, 0]
    assert flat[1] == data[1, 0, 0]
    assert flat[2] == data[0, 1, 0]

    sidecar = json.loads((tmp_path / "order.raw3d.json").read_text())
    assert sidecar["shape"] == [2, 3, 4]
    assert sidecar["kind"] == "volume"


def test_nifti_round_trip(tmp_path, rng):
    """Test NIfTI files keep data, spacing and origin."""
    data = rng.normal(size=(6, 5, 4)).astype(np.float32)
    volume = Volume(data=data, spacing=(1.5, 1.5, 3.0), origin=(10.0, 0.0, -5.0))
    save_volume(volume, tmp_path / "v.nii.gz")

    loaded = load_volume(tmp_path / "v.nii.gz")
    assert np.allclose(loaded.data, data)
    assert loaded.spacing == pytest.approx((1.5, 1.5, 3.0))
    assert loaded.origin == pytest.approx((10.0, 0.0, -5.0))


def test_mask_with_label_two_is_rejected(tmp_path):
    """Test strict label enforcement and the binarize policy."""
    path = tmp_path / "bad.raw3d"
    save_volume(Volume(data=np.array([[[0.0, 1.0], [2.0, 0.0]]])), path)

    with pytest.raises(NonBinaryLabels):
        load_mask(path)

    mask = load_mask(path, binarize=True)
    assert set(np.unique(mask.data)) == {0, 1}
    assert mask.foreground_voxels == 2


def test_misaligned_mask_raises(tmp_path):
    """Test mask and volume must share shape."""
    save_volume(Volume(data=np.zeros((4, 4, 4))), tmp_path / "v.raw3d")
    save_mask(LabelMask(data=np.zeros((4, 4, 3))), tmp_path / "m.raw3d")

    with pytest.raises(ShapeMismatch):
        load_case(tmp_path / "v.raw3d", tmp_path / "m.raw3d")


def test_unreadable_inputs(tmp_path):
    """Test missing files, truncated payloads and NaN data are rejected."""
    with pytest.raises(UnreadableFile):
        load_volume(tmp_path / "missing.raw3d")

    path = tmp_path / "short.raw3d"
    save_volume(Volume(data=np.zeros((2, 2, 2))), path)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(UnreadableFile):
        load_volume(path)

    nan_path = tmp_path / "nan.raw3d"
    nan_path.write_bytes(np.array([np.nan, 0.0], dtype="<f4").tobytes())
    (tmp_path / "nan.raw3d.json").write_text(
        json.dumps({"shape": [2, 1, 1], "spacing": [1, 1, 1], "origin": [0, 0, 0], "kind": "volume"})
    )
    with pytest.raises(UnreadableFile):
        load_volume(nan_path)

    with pytest.raises(UnreadableFile):
        load_volume(tmp_path / "volume.mha")


def test_resample_constant_volume():
    """Test trilinear resampling of a constant stays constant."""
    volume = Volume(data=np.full((16, 16, 8), 3.0))
    resampled = resample_to_shape(volume, (8, 8, 4))
    assert resampled.shape == (8, 8, 4)
    assert np.allclose(resampled.data, 3.0)


def test_resample_rescales_spacing():
    """Test the physical extent is preserved."""
    volume = Volume(data=np.zeros((16, 16, 12)), spacing=(1.0, 1.0, 1.0))
    resampled = resample_to_shape(volume, (8, 8, 8))
    assert resampled.spacing == pytest.approx((2.0, 2.0, 1.5))


def test_resample_mask_keeps_label_set(rng):
    """Test nearest-neighbour resampling never invents labels."""
    mask = LabelMask(data=(rng.random((9, 7, 5)) > 0.5).astype(np.uint8))
    resampled = resample_to_shape(mask, (13, 4, 6))
    assert resampled.shape == (13, 4, 6)
    assert set(np.unique(resampled.data)) <= {0, 1}


def test_resample_identity(rng):
    """Test resampling to the same shape returns the input data."""
    volume = Volume(data=rng.normal(size=(5, 6, 7)))
    resampled = resample_to_shape(volume, (5, 6, 7))
    assert np.allclose(resampled.data, volume.data, atol=1e-6)
    assert resampled.spacing == volume.spacing


def test_normalize_intensity():
    """Test z-score normalisation and the constant-volume policy."""
    data = np.array([1.0, 2.0, 3.0] * 4).reshape(3, 2, 2)
    normalized = normalize_intensity(Volume(data=data))
    assert sorted(np.unique(np.round(normalized.data, 4))) == pytest.approx(
        [-1.2247, 0.0, 1.2247], abs=1e-3
    )

    shifted = normalize_intensity(Volume(data=np.random.default_rng(0).normal(10, 2, (8, 8, 8))))
    assert abs(float(shifted.data.mean())) < 1e-4
    assert abs(float(shifted.data.std()) - 1.0) < 1e-4

    constant = normalize_intensity(Volume(data=np.full((3, 3, 3), 4.0)))
    assert np.all(constant.data == 0.0)


def test_make_split_sizes():
    """Test the rounded 80:10:10 sizes."""
    split = make_split([f"c{i}" for i in range(10)], seed=0)
    counts = {p: list(split.values()).count(p) for p in Partition}
    assert counts == {Partition.TRAIN: 8, Partition.VAL: 1, Partition.TEST: 1}

    large = make_split([f"c{i}" for i in range(310)], seed=0)
    counts = {p: list(large.values()).count(p) for p in Partition}
    assert counts == {Partition.TRAIN: 248, Partition.VAL: 31, Partition.TEST: 31}


def test_make_split_small_corpus_keeps_val_and_test():
    """Test three cases still yield one case per partition."""
    split = make_split(["a", "b", "c"], seed=3)
    assert sorted(split.values()) == sorted([Partition.TRAIN, Partition.VAL, Partition.TEST])


def test_make_split_is_deterministic():
    """Test identical ids and seed give identical splits, whatever the input order."""
    ids = [f"case_{i}" for i in range(20)]
    assert make_split(ids, seed=7) == make_split(list(reversed(ids)), seed=7)
    assert make_split(ids, seed=7) != make_split(ids, seed=8)


def test_make_split_too_few_cases():
    """Test fewer than three ids are rejected."""
    with pytest.raises(TooFewCases):
        make_split(["a", "b"])


def test_manifest_paths_resolve_against_manifest_dir(tmp_path):
    """Test relative case paths follow the manifest file."""
    data_dir = tmp_path / "data"
    save_case(
        Volume(data=np.ones((4, 4, 4))),
        data_dir / "a_image.raw3d",
        LabelMask(data=np.ones((4, 4, 4))),
        data_dir / "a_mask.raw3d",
    )
    manifest = DatasetManifest(
        cases=[CaseEntry(id="a", volume="a_image.raw3d", mask="a_mask.raw3d")],
        split={"a": Partition.TRAIN},
    )
    save_manifest(manifest, data_dir / "manifest.json")

    loaded = load_manifest(data_dir / "manifest.json")
    assert loaded.resolve("a_image.raw3d") == data_dir / "a_image.raw3d"
    assert loaded.ids(Partition.TRAIN) == ["a"]
    volume, mask = load_case(loaded.resolve("a_image.raw3d"), loaded.resolve("a_mask.raw3d"))
    assert mask.foreground_voxels == 64


def test_manifest_requires_complete_split():
    """Test a split missing a case is rejected."""
    with pytest.raises(ValueError):
        DatasetManifest(
            cases=[CaseEntry(id="a", volume="a.raw3d"), CaseEntry(id="b", volume="b.raw3d")],
            split={"a": Partition.TRAIN},
        )


def test_invalid_manifest_file(tmp_path):
    """Test a malformed manifest surfaces as UnreadableFile."""
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"cases": "nope"}))
    with pytest.raises(UnreadableFile):
        load_manifest(path)
