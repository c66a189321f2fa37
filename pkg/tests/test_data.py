"""
test_data.py - 体模生成、样本文件与数据集清单
"""

import numpy as np
import pytest

from lfbnet.data import (
    PhantomSpec,
    Sample,
    generate,
    load_dataset,
    read_manifest,
    read_sample,
    split,
    stack,
    write_dataset,
    write_sample,
)
from lfbnet.data.storage import DTYPE_F64, DTYPE_U8, decode_tensor, encode_tensor
from lfbnet.evaluation import plausibility_check
from lfbnet.utils.errors import ConfigError, DataError, FormatError


def _fake_samples(n):
    return [Sample(f"s{i:03d}", np.zeros((1, 4, 4)), np.zeros((4, 4), dtype=np.uint8), {"seed": 0})
            for i in range(n)]


# ============================================================
# 体模
# ============================================================
def test_generation_is_deterministic(cardiac_spec):
    a = generate(cardiac_spec, 3)
    b = generate(cardiac_spec, 3)
    for s, t in zip(a, b):
        assert s.sample_id == t.sample_id
        np.testing.assert_array_equal(s.image, t.image)
        np.testing.assert_array_equal(s.label, t.label)
    assert a[0].image.shape == (1, 32, 32) and a[0].label.shape == (32, 32)
    assert a[0].label.dtype == np.uint8


def test_prefix_stable_across_sample_counts(cardiac_spec):
    short = generate(cardiac_spec, 2)
    longer = generate(cardiac_spec, 4)
    np.testing.assert_array_equal(short[1].image, longer[1].image)


def test_different_seeds_differ(cardiac_spec):
    other = PhantomSpec.from_dict({**cardiac_spec.to_dict(), "seed": 4})
    assert not np.array_equal(generate(cardiac_spec, 1)[0].image, generate(other, 1)[0].image)
    assert other.spec_hash() != cardiac_spec.spec_hash()


def test_spec_hash_tracks_content(cardiac_spec):
    same = PhantomSpec.from_dict(cardiac_spec.to_dict())
    assert same.spec_hash() == cardiac_spec.spec_hash()
    assert generate(cardiac_spec, 1)[0].metadata["spec_hash"] == cardiac_spec.spec_hash()


def test_cardiac_topology():
    for sample in generate(PhantomSpec(kind="cardiac", seed=11), 4):
        labels = set(np.unique(sample.label))
        assert labels == {0, 1, 2, 3}
        report = plausibility_check(sample.label, 4)
        assert report.components[2] == 1 and report.holes[2] == 1
        assert report.components[3] == 1 and report.holes[3] == 0


def test_multicomponent_has_separate_structures():
    spec = PhantomSpec(kind="multicomponent", seed=2)
    for sample in generate(spec, 3):
        assert set(np.unique(sample.label)) == {0, 1}
        assert plausibility_check(sample.label, 2).components[1] >= 2


def test_degradations_change_the_image():
    clean = PhantomSpec(kind="cardiac", seed=1, noise_sigma=0.0, blur_radius=0)
    streaky = PhantomSpec.from_dict({**clean.to_dict(), "streaks": 2})
    low = PhantomSpec.from_dict({**clean.to_dict(), "contrast": 0.5})
    base = generate(clean, 1)[0]
    levels = np.asarray(clean.levels)
    np.testing.assert_allclose(base.image[0], levels[base.label])
    assert generate(streaky, 1)[0].image.max() == pytest.approx(clean.streak_level)
    assert np.ptp(generate(low, 1)[0].image) == pytest.approx(0.5 * np.ptp(base.image))


@pytest.mark.parametrize("override", [
    {"kind": "liver"},
    {"image_size": [8, 8]},
    {"image_size": [16, 16]},
    {"contrast": 0.0},
    {"noise_sigma": -0.1},
    {"radius_range": [0.2, 0.1]},
    {"levels": [0.0, 1.0]},
])
def test_invalid_specs_rejected(override):
    spec = PhantomSpec.from_dict({**PhantomSpec().to_dict(), **override})
    with pytest.raises(ConfigError):
        generate(spec, 1)


def test_unknown_spec_key_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        PhantomSpec.from_dict({"radius": 3})


# ============================================================
# 样本文件
# ============================================================
def test_sample_file_round_trip(cardiac_spec, tmp_path):
    sample = generate(cardiac_spec, 1)[0]
    image_path, label_path = str(tmp_path / "img.lfbt"), str(tmp_path / "lbl.lfbt")
    write_sample(sample, image_path, label_path)
    again = read_sample(image_path, label_path, sample_id=sample.sample_id)
    np.testing.assert_array_equal(again.image, sample.image)
    np.testing.assert_array_equal(again.label, sample.label)
    assert again.sample_id == sample.sample_id


def test_tensor_file_rejects_corruption():
    blob = encode_tensor(np.arange(6.0).reshape(2, 3), DTYPE_F64)
    with pytest.raises(FormatError, match="magic"):
        decode_tensor(b"NOPE" + blob[4:])
    with pytest.raises(FormatError):
        decode_tensor(blob[:-1])
    with pytest.raises(FormatError, match="dtype"):
        decode_tensor(blob, expected_dtype=DTYPE_U8)


def test_mismatched_image_and_label_rejected(tmp_path):
    sample = Sample("x", np.zeros((1, 4, 4)), np.zeros((5, 5), dtype=np.uint8))
    write_sample(sample, str(tmp_path / "i.lfbt"), str(tmp_path / "l.lfbt"))
    with pytest.raises(FormatError, match="pair"):
        read_sample(str(tmp_path / "i.lfbt"), str(tmp_path / "l.lfbt"))


# ============================================================
# 划分与清单
# ============================================================
def test_split_sizes_and_disjointness():
    manifest = split(_fake_samples(100), (0.7, 0.2, 0.1), seed=0)
    assert manifest.sizes() == {"train": 70, "val": 20, "test": 10}
    paths = [e.image_path for e in manifest.entries]
    assert len(paths) == len(set(paths)) == 100


def test_split_is_deterministic():
    a = split(_fake_samples(20), (0.5, 0.5), seed=3)
    b = split(_fake_samples(20), (0.5, 0.5), seed=3)
    c = split(_fake_samples(20), (0.5, 0.5), seed=4)
    assert a.entries == b.entries
    assert a.entries != c.entries
    assert a.split_names() == ["train", "test"]


@pytest.mark.parametrize("fractions", [(1.0,), (0.5, 0.6), (0.7, -0.1, 0.4)])
def test_bad_fractions_rejected(fractions):
    with pytest.raises(ConfigError):
        split(_fake_samples(10), fractions, seed=0)


def test_empty_split_rejected():
    with pytest.raises(DataError, match="empty"):
        split(_fake_samples(3), (0.9, 0.05, 0.05), seed=0)


def test_dataset_round_trip(cardiac_spec, tmp_path):
    samples = generate(cardiac_spec, 10)
    manifest = split(samples, (0.6, 0.2, 0.2), seed=1)
    path = write_dataset(samples, manifest, str(tmp_path / "ds"), spacing_mm=1.5)
    loaded = load_dataset(str(tmp_path / "ds"))
    assert loaded.sizes() == {"train": 6, "val": 2, "test": 2}
    assert loaded.spec_hash == cardiac_spec.spec_hash()
    assert loaded.spacing_mm == 1.5
    by_id = {s.sample_id: s for s in samples}
    for s in loaded.samples("test"):
        np.testing.assert_array_equal(s.label, by_id[s.sample_id].label)
    x, y, ids = stack(loaded.samples("train"))
    assert x.shape == (6, 1, 32, 32) and y.shape == (6, 32, 32)
    assert read_manifest(path).entries == loaded.entries


def test_manifest_header_and_duplicates(tmp_path):
    bad = tmp_path / "manifest.txt"
    bad.write_text("train\ta\tb\t0\n")
    with pytest.raises(FormatError):
        read_manifest(str(bad))
    dup = tmp_path / "dup.txt"
    dup.write_text("# lfbnet-manifest 1\ntrain\ta.lfbt\tb.lfbt\t0\ntest\ta.lfbt\tb.lfbt\t0\n")
    with pytest.raises(DataError):
        read_manifest(str(dup))


def test_missing_dataset_and_split(tmp_path, cardiac_spec):
    with pytest.raises(DataError):
        load_dataset(str(tmp_path / "none"))
    samples = generate(cardiac_spec, 4)
    write_dataset(samples, split(samples, (0.5, 0.5), seed=0), str(tmp_path / "ds"))
    with pytest.raises(DataError, match="val"):
        load_dataset(str(tmp_path / "ds")).samples("val")


def test_stack_rejects_mixed_shapes():
    samples = _fake_samples(1) + [Sample("big", np.zeros((1, 8, 8)), np.zeros((8, 8), dtype=np.uint8))]
    with pytest.raises(DataError):
        stack(samples)
    with pytest.raises(DataError):
        stack([])
