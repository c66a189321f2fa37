"""
test_trainer.py - 三步交替训练的更新范围、梯度、学习行为、早停与数据检查
"""

import hashlib

import numpy as np
import pytest

import lfbnet.training.trainer as trainer_module
from conftest import tiny_config
from gradcheck import check_gradients
from lfbnet.evaluation import one_hot, segmentation_loss
from lfbnet.model import GROUPS, build_systems, evaluating, feedback_full, group_of, null_feedback
from lfbnet.tensor import Tape, Tensor, no_grad
from lfbnet.training import NormStats, Trainer, TrainConfig, TrainingData, infer, read_history, write_history
from lfbnet.utils.errors import ConfigError, DataError, FormatError


def _group_hashes(*systems):
    """每个参数组（参数 + BatchNorm统计量）的摘要"""
    digests = {g: hashlib.sha256() for g in GROUPS}
    for system in systems:
        if system is None:
            continue
        tensors = {**{n: p.data for n, p in system.parameters().items()}, **system.buffers()}
        for name in sorted(tensors):
            digests[group_of(name)].update(name.encode())
            digests[group_of(name)].update(np.ascontiguousarray(tensors[name]).tobytes())
    return {g: d.hexdigest() for g, d in digests.items()}


def _changed(before, after):
    return {g for g in GROUPS if before[g] != after[g]}


@pytest.fixture
def trainer(data_cfg, tiny_data, fast_train):
    S, F = build_systems(data_cfg, seed=0)
    return Trainer(S, F, fast_train, tiny_data[2], variant="lfb")


# ============================================================
# 更新范围
# ============================================================
def test_step1_updates_only_forward_system(trainer, tiny_data):
    before = _group_hashes(trainer.S, trainer.F)
    loss = trainer.step1_train_forward(tiny_data[0], cycle=1)
    assert np.isfinite(loss) and loss >= 0
    assert _changed(before, _group_hashes(trainer.S, trainer.F)) == {"S_e", "S_d"}


def test_step2_updates_only_feedback_system(trainer, tiny_data):
    before = _group_hashes(trainer.S, trainer.F)
    trainer.step2_train_feedback(tiny_data[0], cycle=1)
    assert _changed(before, _group_hashes(trainer.S, trainer.F)) == {"F_e", "F_d"}


def test_step3_updates_only_forward_decoder(trainer, tiny_data):
    before = _group_hashes(trainer.S, trainer.F)
    calls = trainer.F.decoder.calls
    trainer.step3_train_decoder(tiny_data[0], cycle=1)
    assert _changed(before, _group_hashes(trainer.S, trainer.F)) == {"S_d"}
    assert trainer.F.decoder.calls == calls


def test_feedback_steps_need_feedback_system(data_cfg, tiny_data, fast_train):
    S, _ = build_systems(data_cfg, seed=0)
    trainer = Trainer(S, None, fast_train, tiny_data[2], variant="fs")
    with pytest.raises(ConfigError):
        trainer.step2_train_feedback(tiny_data[0])
    with pytest.raises(ConfigError):
        trainer.train_loop(tiny_data[0], tiny_data[1], feedback=True)


def test_empty_training_set_rejected(trainer, tiny_data):
    empty = TrainingData(tiny_data[0].x[:0], tiny_data[0].y[:0], [])
    with pytest.raises(DataError):
        trainer.step1_train_forward(empty)


# ============================================================
# 主循环
# ============================================================
def test_train_loop_history_and_best(trainer, tiny_data):
    train, val, _ = tiny_data
    state, best = trainer.train_loop(train, val)
    assert [(r.cycle, r.step) for r in state.history] == [(c, s) for c in (1, 2) for s in (1, 2, 3)]
    assert all(np.isfinite(r.train_loss) for r in state.history)
    # 每个周期只在最后一步之后验证一次
    assert all(np.isfinite(r.val_loss) == (r.step == 3) for r in state.history)
    assert state.best_history == sorted(state.best_history, reverse=True)
    assert state.best_val_loss == min(r.val_loss for r in state.history if r.step == 3)
    assert best.cycle == state.best_cycle
    assert best.has_feedback and best.variant == "lfb"


def test_validation_runs_once_per_cycle(trainer, tiny_data, monkeypatch):
    calls = []
    original = trainer.validation_loss

    def counting(data, iterations=None):
        calls.append(len(data))
        return original(data, iterations)

    monkeypatch.setattr(trainer, "validation_loss", counting)
    state, _ = trainer.train_loop(tiny_data[0], tiny_data[1])
    assert len(calls) == state.cycle == 2


def test_forward_only_loop_runs_step1(data_cfg, tiny_data, fast_train):
    S, _ = build_systems(data_cfg, seed=0)
    state, best = Trainer(S, None, fast_train, tiny_data[2], variant="fs").train_loop(
        tiny_data[0], tiny_data[1], feedback=False)
    assert [r.step for r in state.history] == [1, 1]
    assert all(np.isfinite(r.val_loss) for r in state.history)
    assert not best.has_feedback


def test_same_seed_same_losses(data_cfg, tiny_data, fast_train):
    losses = []
    for _ in range(2):
        S, F = build_systems(data_cfg, seed=0)
        trainer = Trainer(S, F, fast_train, tiny_data[2])
        losses.append([trainer.step1_train_forward(tiny_data[0], 1), trainer.step2_train_feedback(tiny_data[0], 1)])
    assert losses[0] == losses[1]


def test_overlapping_splits_rejected(trainer, tiny_data):
    train, _, _ = tiny_data
    val = TrainingData(train.x[:2], train.y[:2], train.ids[:2])
    with pytest.raises(DataError, match="overlap"):
        trainer.train_loop(train, val)


def test_early_stop_with_patience_one(data_cfg, tiny_data):
    S, _ = build_systems(data_cfg, seed=0)
    cfg = TrainConfig(batch_size=3, max_cycles=6, early_stop_patience=1, seed=0, learning_rate=0.5)
    state, _ = Trainer(S, None, cfg, tiny_data[2], variant="fs").train_loop(
        tiny_data[0], tiny_data[1], feedback=False)
    if state.stopped_early:
        assert state.since_improvement == 1
        assert state.cycle == state.best_cycle + 1
    else:
        assert state.cycle == 6


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(early_stop_patience=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(test_feedback_iterations=-1).validate()
    with pytest.raises(ConfigError, match="unknown"):
        TrainConfig.from_dict({"epochs": 3})
    cfg = TrainConfig(class_weights=[1, 2, 2, 2])
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


# ============================================================
# 推理
# ============================================================
def test_infer_never_runs_feedback_decoder(trainer, tiny_data):
    calls = trainer.F.decoder.calls
    result = infer(trainer.S, trainer.F, tiny_data[1].x, iterations=3)
    assert trainer.F.decoder.calls == calls
    assert result.probs.shape == (3, 4, 32, 32)
    assert result.labels.shape == (3, 32, 32)


def test_history_file_round_trip(trainer, tiny_data, tmp_path):
    state, _ = trainer.train_loop(tiny_data[0], tiny_data[1])
    path = str(tmp_path / "history.csv")
    write_history(state.history, path)
    again = read_history(path)
    assert [(r.cycle, r.step, r.train_loss) for r in again] == [(r.cycle, r.step, r.train_loss) for r in state.history]
    np.testing.assert_array_equal([r.val_loss for r in again], [r.val_loss for r in state.history])


def test_history_missing_columns_rejected(tmp_path):
    path = tmp_path / "history.csv"
    path.write_text("cycle,step,train_loss\n1,1,0.5\n")
    with pytest.raises(FormatError, match="val_loss"):
        read_history(str(path))


# ============================================================
# 批次划分
# ============================================================
@pytest.mark.parametrize("n, batch, sizes", [(7, 3, [3, 4]), (6, 3, [3, 3]), (1, 3, [1]), (5, 2, [2, 3])])
def test_single_sample_tail_joins_previous_batch(n, batch, sizes):
    data = TrainingData(np.zeros((n, 1, 8, 8)), np.zeros((n, 8, 8), dtype=np.int64), [f"s{i}" for i in range(n)])
    got = [len(x) for x, _ in data.batches(batch, np.random.default_rng(0))]
    assert got == sizes


def test_training_at_smallest_input_size():
    cfg = tiny_config(input_size=(8, 8))
    rng = np.random.default_rng(2)
    data = TrainingData(rng.normal(size=(3, 1, 8, 8)), rng.integers(0, 4, size=(3, 8, 8)), ["a", "b", "c"])
    S, F = build_systems(cfg, seed=0)
    trainer = Trainer(S, F, TrainConfig(batch_size=2, max_cycles=1, seed=0), NormStats(0.0, 1.0))
    for step in (trainer.step1_train_forward, trainer.step2_train_feedback, trainer.step3_train_decoder):
        assert np.isfinite(step(data, 1))


# ============================================================
# 学习行为
# ============================================================
def test_step1_lowers_training_loss(data_cfg, tiny_data):
    S, _ = build_systems(data_cfg, seed=0)
    trainer = Trainer(S, None, TrainConfig(batch_size=3, learning_rate=3e-3, seed=0), tiny_data[2], variant="fs")
    losses = [trainer.step1_train_forward(tiny_data[0], cycle) for cycle in range(1, 6)]
    assert all(np.isfinite(losses))
    assert losses[-1] < losses[0]


def _disks(n, size, seed):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:size, :size]
    labels = []
    for _ in range(n):
        cy, cx = size / 2 + rng.integers(-1, 2, size=2)
        r = rng.choice([9, 10, 11])
        labels.append(((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r).astype(np.int64))
    return np.stack(labels)


def _foreground_dice(pred, ref):
    inter = np.logical_and(pred == 1, ref == 1).sum()
    return 2.0 * inter / ((pred == 1).sum() + (ref == 1).sum())


def test_step2_reconstructs_ground_truth_input(monkeypatch):
    """ŷ 换成真实标签的 one-hot 时，F 应当学会近乎无损地重建它"""
    cfg = tiny_config(input_size=(32, 32), n_classes=2, base_channels=16, latent_channels=32)
    y = _disks(12, 32, seed=4)
    data = TrainingData(y[:, None].astype(np.float64), y, [f"d{i}" for i in range(len(y))])

    def ground_truth_pass(S, x, h_f):
        return one_hot(np.rint(x.data[:, 0]).astype(np.int64), 2, "softmax"), None

    monkeypatch.setattr(trainer_module, "forward_pass", ground_truth_pass)
    S, F = build_systems(cfg, seed=0)
    trainer = Trainer(S, F, TrainConfig(batch_size=2, learning_rate=1e-2, seed=0), NormStats(0.0, 1.0))

    dice = 0.0
    for epoch in range(1, 11):
        trainer.step2_train_feedback(data, epoch)
        with evaluating(F), no_grad():
            pred = feedback_full(F, one_hot(y, 2, "softmax")).data.argmax(axis=1)
        dice = np.mean([_foreground_dice(p, r) for p, r in zip(pred, y)])
        if dice >= 0.95:
            break
    assert dice >= 0.95


def test_step3_feedback_latent_is_nonzero(trainer, tiny_data, monkeypatch):
    seen = []
    encode = trainer.F.encode

    def recording(y_hat):
        h_f = encode(y_hat)
        seen.append(np.abs(h_f.data).max())
        return h_f

    monkeypatch.setattr(trainer.F, "encode", recording)
    trainer.step3_train_decoder(tiny_data[0], cycle=1)
    assert len(seen) == 2
    assert all(v > 0 for v in seen)


def test_step3_loss_gradient_is_exact_and_confined_to_forward_decoder(trainer, tiny_data):
    S, F = trainer.S, trainer.F
    x, y = tiny_data[0].x[:2], tiny_data[0].y[:2]
    with no_grad():
        encoding = S.encode(Tensor(x))
        with evaluating(S):
            y0 = S.decode(encoding, null_feedback(S, 2))
        h_f = F.encode(y0)
    target = one_hot(y, S.config.n_classes, S.config.head)

    def loss():
        return segmentation_loss(S.decode(encoding, h_f), target, trainer.weights)

    decoder = S.decoder.parameters()
    names = ["S_d/head/weight", "S_d/head/bias", "S_d/merge/bn2/beta", "S_d/block1/bn2/gamma"]
    check_gradients(loss, [decoder[n] for n in names], tol=1e-4)

    others = [*S.encoder.parameters().values(), *F.parameters().values()]
    for p in others:
        p.grad = None
    with Tape() as tape:
        value = loss()
    tape.backward(value)
    assert all(p.grad is None for p in others)
    assert any(p.grad is not None and np.abs(p.grad).max() > 0 for p in decoder.values())

    before = _group_hashes(S, F)
    trainer.step3_train_decoder(tiny_data[0], cycle=1)
    after = _group_hashes(S, F)
    assert all(before[g] == after[g] for g in ("S_e", "F_e", "F_d"))
    assert before["S_d"] != after["S_d"]
