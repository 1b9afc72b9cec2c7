import math
import os

import numpy as np
import pytest
from PIL import Image
from scipy.stats import ks_2samp

from attnxlate.data import (
    ChecksumError, CheckpointError, Dataset, SyntheticSpec, disc_mask, from_uint8,
    generate_synthetic, load_dataset, load_image, load_pair, read_checkpoint, save_image,
    to_uint8, write_checkpoint, write_dataset,
)
from attnxlate.data.checkpoint import decode_checkpoint, encode_checkpoint

SMALL = SyntheticSpec(seed=3, count=24, test_count=6, image_size=32, radius_min=4, radius_max=10)


def lattice_disc_count(r: int) -> int:
    """Integer points with dx^2 + dy^2 <= r^2, counted column by column."""
    return sum(2 * math.isqrt(r * r - dx * dx) + 1 for dx in range(-r, r + 1))


# -- synthetic generator ---------------------------------------------------------

def test_same_seed_is_bit_identical():
    a1, b1 = generate_synthetic(SMALL)
    a2, b2 = generate_synthetic(SMALL)
    assert a1.images.tobytes() == a2.images.tobytes() and b1.masks.tobytes() == b2.masks.tobytes()
    a3, _ = generate_synthetic(SyntheticSpec(**{**SMALL.__dict__, "seed": 4}))
    assert a3.images.tobytes() != a1.images.tobytes()


def test_train_and_test_splits_differ():
    a, _ = generate_synthetic(SMALL, "train")
    at, _ = generate_synthetic(SMALL, "test")
    assert len(at) == SMALL.test_count and not np.array_equal(a.images[:6], at.images)


def test_mask_sizes_match_rasterised_discs():
    spec = SyntheticSpec(seed=1, count=60, test_count=0)
    allowed = {lattice_disc_count(r) for r in range(spec.radius_min, spec.radius_max + 1)}
    for ds in generate_synthetic(spec):
        counts = ds.masks.reshape(len(ds), -1).sum(axis=1).astype(int)
        full = counts[counts > 0]
        assert len(full) == 60 - round(0.1 * 60)
        assert set(full.tolist()) <= allowed


def test_disc_mask_matches_oracle():
    for r in (1, 5, 8, 20):
        assert disc_mask(64, 32, 32, r).sum() == lattice_disc_count(r)


def test_empty_fraction_one_gives_zero_masks():
    a, b = generate_synthetic(SyntheticSpec(count=5, test_count=0, empty_fraction=1.0))
    assert not a.masks.any() and not b.masks.any()
    assert len(a.empty_indices) == 5


def test_one_object_per_image_and_binary_masks():
    a, b = generate_synthetic(SMALL)
    for ds in (a, b):
        assert set(np.unique(ds.masks)) <= {0.0, 1.0}
        assert ds.images.min() >= -1 and ds.images.max() <= 1
        assert len(ds.empty_indices) == round(0.1 * len(ds))


def test_backgrounds_share_one_distribution():
    spec = SyntheticSpec(seed=5, count=200, test_count=0)
    a, b = generate_synthetic(spec)

    def bg_means(ds):
        bg = ds.masks == 0
        return np.array([ds.images[i][:, bg[i, 0]].mean() for i in range(len(ds))])

    assert ks_2samp(bg_means(a), bg_means(b)).pvalue > 0.01
    # and the foregrounds are obviously different
    def fg_std(ds):
        fg = ds.masks > 0
        return np.array([ds.images[i][:, fg[i, 0]].std() for i in range(len(ds)) if fg[i].any()])

    assert ks_2samp(fg_std(a), fg_std(b)).pvalue < 1e-6


def test_synthetic_data_is_quantised():
    a, _ = generate_synthetic(SMALL)
    np.testing.assert_array_equal(from_uint8(to_uint8(a.images)), a.images)


@pytest.mark.parametrize("kw", [dict(count=0), dict(image_size=30), dict(radius_min=0),
                                dict(radius_max=40), dict(empty_fraction=1.5), dict(stripe_period=1)])
def test_invalid_spec(kw):
    with pytest.raises(ValueError):
        generate_synthetic(SyntheticSpec(**kw))


def test_spec_json_round_trip(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(SMALL.to_json())
    assert SyntheticSpec.from_json_file(p) == SMALL
    with pytest.raises(ValueError):
        SyntheticSpec.from_dict({"bogus": 1})


# -- directory layout -----------------------------------------------------------

def test_write_and_load_dataset(tmp_path):
    write_dataset(tmp_path, SMALL)
    for d in ("trainA", "trainB", "testA", "testB", "maskA", "maskB"):
        assert (tmp_path / d).is_dir()
    a, b = generate_synthetic(SMALL)
    la, lb = load_pair(tmp_path)
    np.testing.assert_array_equal(la.images, a.images)
    np.testing.assert_array_equal(lb.masks, b.masks)
    assert la.names == sorted(la.names)
    ta = load_dataset(tmp_path, "test", "A")
    assert len(ta) == SMALL.test_count and ta.masks is not None


def test_empty_or_missing_directory(tmp_path):
    (tmp_path / "trainA").mkdir()
    with pytest.raises(ValueError):
        load_dataset(tmp_path, "train", "A")
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path, "train", "B")
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nope")


def test_inconsistent_sizes_rejected(tmp_path):
    d = tmp_path / "trainA"
    d.mkdir()
    Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(d / "a.png")
    Image.fromarray(np.zeros((8, 4, 3), np.uint8)).save(d / "b.png")
    with pytest.raises(ValueError):
        load_dataset(tmp_path)


def test_unreadable_file(tmp_path):
    d = tmp_path / "trainA"
    d.mkdir()
    (d / "x.png").write_bytes(b"not a png")
    with pytest.raises(OSError):
        load_dataset(tmp_path)


def test_dataset_rejects_non_binary_masks():
    with pytest.raises(ValueError):
        Dataset(np.zeros((1, 3, 4, 4), np.float32), np.full((1, 1, 4, 4), 0.5, np.float32))


# -- PNG mapping ----------------------------------------------------------------

def test_affine_pixel_mapping(tmp_path):
    p = tmp_path / "g.png"
    Image.fromarray(np.array([[255, 0, 128]], np.uint8)).save(p)
    x = load_image(p)
    assert x.shape == (3, 1, 3)
    np.testing.assert_array_equal(x[0, 0], np.float32([1.0, -1.0, 128 / 127.5 - 1]))
    np.testing.assert_array_equal(x[0], x[2])


def test_save_mapping_and_attention_maps(tmp_path):
    save_image(tmp_path / "c.png", np.array([[[-1.0, 1.0]]] * 3))
    assert np.asarray(Image.open(tmp_path / "c.png"))[0].tolist() == [[0, 0, 0], [255, 255, 255]]
    save_image(tmp_path / "a.png", np.array([[[0.0, 1.0]]]), "unit")
    im = Image.open(tmp_path / "a.png")
    assert im.mode == "L" and np.asarray(im).tolist() == [[0, 255]]


def test_round_trip_error_and_fixed_point(tmp_path):
    x = np.random.default_rng(0).uniform(-1, 1, (3, 5, 7))
    save_image(tmp_path / "x.png", x)
    y = load_image(tmp_path / "x.png")
    assert np.abs(y - x).max() <= 1 / 255 + 1e-6
    save_image(tmp_path / "y.png", y)
    np.testing.assert_array_equal(load_image(tmp_path / "y.png"), y)


def test_out_of_range_rejected(tmp_path):
    with pytest.raises(ValueError):
        save_image(tmp_path / "x.png", np.full((3, 2, 2), 1.5))
    with pytest.raises(ValueError):
        save_image(tmp_path / "x.png", np.full((1, 2, 2), -0.1), "unit")


# -- checkpoint container ---------------------------------------------------------

def _arrays():
    rng = np.random.default_rng(0)
    return {"net/G/layer0.weight": rng.normal(size=(4, 3, 7, 7)).astype(np.float32),
            "opt/G/m/layer0.bias": np.zeros(4, np.float32),
            "scalar": np.float32(2.5).reshape(())}


def test_checkpoint_round_trip_bytes(tmp_path):
    meta = {"epoch": 3, "config": {"tau": 0.1}}
    write_checkpoint(tmp_path / "c.atx", meta, _arrays())
    m2, a2 = read_checkpoint(tmp_path / "c.atx")
    assert m2 == meta
    for k, v in _arrays().items():
        assert a2[k].dtype == np.float32 and a2[k].tobytes() == v.tobytes() and a2[k].shape == v.shape
    assert encode_checkpoint(m2, a2) == (tmp_path / "c.atx").read_bytes()


def test_truncated_or_corrupt_checkpoint(tmp_path):
    data = encode_checkpoint({"epoch": 1}, _arrays())
    for bad in (data[:-5], data[:len(data) // 2]):
        with pytest.raises(ChecksumError):
            decode_checkpoint(bad)
    flipped = bytearray(data)
    flipped[40] ^= 1
    with pytest.raises(ChecksumError):
        decode_checkpoint(bytes(flipped))
    with pytest.raises(CheckpointError):
        decode_checkpoint(b"NOTACKPT" + data[8:])


def test_checkpoint_version_mismatch():
    import hashlib
    import struct
    data = bytearray(encode_checkpoint({}, {}))[:-32]
    data[8:12] = struct.pack("<I", 99)
    data = bytes(data) + hashlib.sha256(bytes(data)).digest()
    with pytest.raises(CheckpointError, match="version"):
        decode_checkpoint(data)


def test_checkpoint_rejects_float64():
    with pytest.raises(CheckpointError):
        encode_checkpoint({}, {"x": np.zeros(2)})


def test_atomic_write_leaves_no_temp_files(tmp_path):
    write_checkpoint(tmp_path / "c.atx", {}, _arrays())
    write_checkpoint(tmp_path / "c.atx", {"v": 2}, _arrays())
    assert os.listdir(tmp_path) == ["c.atx"]
    assert read_checkpoint(tmp_path / "c.atx")[0] == {"v": 2}
