"""
test_checkpoint.py - 检查点编解码与反馈环推理
"""

import struct

import numpy as np
import pytest

from lfbnet.model import evaluating, forward_pass, null_feedback
from lfbnet.tensor import Tensor, no_grad
from lfbnet.training import (
    NormStats,
    bundle_from_systems,
    compute_stats,
    decode_checkpoint,
    denormalize,
    encode_checkpoint,
    infer,
    load_checkpoint,
    normalize,
    predict,
    save_checkpoint,
    systems_from_bundle,
    time_inference,
)
from lfbnet.training.checkpoint import MAGIC
from lfbnet.utils.errors import ConfigError, FormatError


@pytest.fixture
def bundle(systems):
    S, F = systems
    return bundle_from_systems(S, F, {"seed": 0}, NormStats(0.5, 0.25), cycle=4, variant="lfb")


# ============================================================
# 编解码
# ============================================================
def test_save_load_save_is_byte_identical(bundle, tmp_path):
    path = str(tmp_path / "best.lfbc")
    save_checkpoint(bundle, path)
    again = load_checkpoint(path)
    assert encode_checkpoint(again) == encode_checkpoint(bundle)
    assert again.cycle == 4 and again.variant == "lfb"
    assert again.norm == NormStats(0.5, 0.25)
    assert list(again.tensors) == list(bundle.tensors)


def test_restored_systems_predict_identically(systems, bundle, rng):
    S, F = systems
    S2, F2 = systems_from_bundle(decode_checkpoint(encode_checkpoint(bundle)))
    x = rng.normal(size=(2, 1, 16, 16))
    a = infer(S, F, x, iterations=2)
    b = infer(S2, F2, x, iterations=2)
    np.testing.assert_array_equal(a.probs, b.probs)


def test_forward_only_bundle(systems):
    S, _ = systems
    bundle = bundle_from_systems(S, None, {}, NormStats(0.0, 1.0), variant="fs")
    assert not bundle.has_feedback
    S2, F2 = systems_from_bundle(decode_checkpoint(encode_checkpoint(bundle)))
    assert F2 is None
    assert set(S2.parameters()) == set(S.parameters())


@pytest.mark.parametrize("cut", [3, 10, 40, -1])
def test_truncated_checkpoint_rejected(bundle, cut):
    blob = encode_checkpoint(bundle)
    with pytest.raises(FormatError, match="truncated"):
        decode_checkpoint(blob[:cut])


def test_oversized_dims_rejected_without_overflow(bundle):
    blob = encode_checkpoint(bundle)
    (meta_len,) = struct.unpack("<Q", blob[8:16])
    header = blob[:16 + meta_len]
    # 2^32 · 2^32 回绕成 0 个元素时也必须报告截断
    for dims in [(2 ** 32, 2 ** 32), (2 ** 63, 2)]:
        record = struct.pack("<I", 1) + b"w" + struct.pack("<I", 2) + struct.pack("<2Q", *dims) + b"\0" * 64
        with pytest.raises(FormatError, match="truncated"):
            decode_checkpoint(header + record)


def test_bad_magic_and_trailing_bytes(bundle):
    blob = encode_checkpoint(bundle)
    with pytest.raises(FormatError, match="magic"):
        decode_checkpoint(b"XXXX" + blob[len(MAGIC):])
    with pytest.raises(FormatError, match="trailing"):
        decode_checkpoint(blob + b"\0")


def test_missing_checkpoint_file(tmp_path):
    with pytest.raises(FormatError, match="not found"):
        load_checkpoint(str(tmp_path / "nope.lfbc"))


# ============================================================
# 推理
# ============================================================
def test_zero_iterations_equals_forward_pass(systems, rng):
    S, F = systems
    x = rng.normal(size=(3, 1, 16, 16))
    with no_grad(), evaluating(S):
        expected, _ = forward_pass(S, Tensor(x), null_feedback(S, 3))
    np.testing.assert_array_equal(infer(S, F, x, 0).probs, expected.data)
    np.testing.assert_array_equal(infer(S, None, x, 0).probs, expected.data)


def test_feedback_iterations_change_prediction(systems, rng):
    S, F = systems
    x = rng.normal(size=(2, 1, 16, 16))
    assert not np.array_equal(infer(S, F, x, 0).probs, infer(S, F, x, 1).probs)


def test_infer_rejects_bad_requests(systems, rng):
    S, _ = systems
    x = rng.normal(size=(1, 1, 16, 16))
    with pytest.raises(ConfigError):
        infer(S, None, x, 1)
    with pytest.raises(ConfigError):
        infer(S, None, x, -1)
    with pytest.raises(ConfigError):
        infer(None, None, x, 0)


def test_threaded_predict_matches_single_batch(systems, rng):
    S, F = systems
    x = rng.normal(size=(5, 1, 16, 16))
    whole = infer(S, F, x, 2)
    chunked = predict(S, F, x, 2, batch_size=2, num_threads=3)
    np.testing.assert_allclose(chunked.probs, whole.probs, atol=1e-12)
    np.testing.assert_array_equal(chunked.labels, whole.labels)


def test_predict_leaves_training_modes(systems, rng):
    S, F = systems
    predict(S, F, rng.normal(size=(4, 1, 16, 16)), 1, batch_size=2, num_threads=2)
    assert all(bn.training for m in S.groups.values() for bn in m.batchnorms())


# ============================================================
# 归一化
# ============================================================
def test_normalization_round_trip(rng):
    images = rng.normal(loc=3.0, scale=2.0, size=(4, 1, 8, 8))
    stats = compute_stats(images)
    z = normalize(images, stats)
    assert abs(z.mean()) < 1e-12 and abs(z.std() - 1.0) < 1e-12
    np.testing.assert_allclose(denormalize(z, stats), images, atol=1e-12)


def test_time_inference_reports_against_bound(systems):
    S, F = systems
    report = time_inference(S, F, iterations=1, repeats=2)
    assert report.seconds > 0
    assert report.input_size == (16, 16)
    assert report.within_bound == (report.seconds <= report.bound)
    assert report.reference == 0.025
    fields = report.line().split()
    assert fields[0] == "infer_seconds"
    assert fields[fields.index("within_bound") + 1] == str(int(report.within_bound))
    with pytest.raises(ConfigError):
        time_inference(S, F, repeats=0)
