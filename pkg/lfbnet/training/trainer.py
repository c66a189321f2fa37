"""
trainer.py - 三步交替训练

功能说明:
    一个训练周期（cycle）依次执行三步，每步把训练集完整过一遍:
    1. step1_train_forward  - 用 h_0 训练整个前向系统 S（S_e + S_d）
    2. step2_train_feedback - S 冻结，用 S 的预测 ŷ 训练反馈系统 F 重建 y
    3. step3_train_decoder  - S_e 和 F 冻结，只训练 S_d(h_s, F_e(ŷ))
    周期结束后在验证集上计算一次带反馈环的前向系统损失，决定是否保存最优检查点、是否早停。

    fs / fs_star 变体只执行步骤1（train_loop(feedback=False)）。

更新范围:
    步骤1 只改 S_e ∪ S_d，步骤2 只改 F_e ∪ F_d，步骤3 只改 S_d。
    冻结的组同时切到评估模式，BatchNorm滑动统计量保持不变。

数据顺序:
    每一步的打乱顺序由 default_rng([seed, cycle, step]) 决定，
    与变体无关，所以各消融变体看到的数据顺序逐字节相同。

使用例子:
    trainer = Trainer(S, F, TrainConfig(max_cycles=20, seed=0), norm, variant="lfb")
    state, best = trainer.train_loop(train_data, val_data)
    save_checkpoint(best, "runs/lfb/best.lfbc")
"""

import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .checkpoint import CheckpointBundle, bundle_from_systems
from .inference import predict
from .normalization import NormStats
from ..evaluation import ClassWeights, one_hot, segmentation_loss
from ..model import FeedbackSystem, ForwardSystem, evaluating, feedback_full, forward_pass, null_feedback, set_frozen
from ..tensor import AdamState, Tape, Tensor, adam_step, no_grad, zero_grad
from ..utils import config
from ..utils.errors import ConfigError, DataError, FormatError

logger = logging.getLogger(__name__)

HISTORY_FIELDS = ["cycle", "step", "train_loss", "val_loss"]


@dataclass
class TrainConfig:
    """训练超参数，默认值来自 utils.config"""

    learning_rate: float = config.LEARNING_RATE
    batch_size: int = config.BATCH_SIZE
    early_stop_patience: int = config.EARLY_STOP_PATIENCE
    max_cycles: int = config.MAX_CYCLES
    seed: int = 0
    test_feedback_iterations: int = config.TEST_FEEDBACK_ITERATIONS
    class_weights: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.class_weights is not None:
            self.class_weights = tuple(float(v) for v in self.class_weights)

    def validate(self) -> "TrainConfig":
        if self.early_stop_patience < 1:
            raise ConfigError(f"early_stop_patience must be >= 1, got {self.early_stop_patience}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_cycles < 1:
            raise ConfigError(f"max_cycles must be >= 1, got {self.max_cycles}")
        if self.test_feedback_iterations < 0:
            raise ConfigError(f"test_feedback_iterations must be >= 0, got {self.test_feedback_iterations}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        if d["class_weights"] is not None:
            d["class_weights"] = list(d["class_weights"])
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainingData:
    """已归一化的 (n,1,H,W) 图像、(n,H,W) 标签和样本id"""

    x: np.ndarray
    y: np.ndarray
    ids: List[str]

    def __len__(self) -> int:
        return len(self.ids)

    def batches(self, batch_size: int, rng: np.random.Generator) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        order = rng.permutation(len(self))
        starts = list(range(0, len(order), batch_size))
        # 训练模式的 BatchNorm 在 1×1 瓶颈上需要至少两个样本，单样本尾批并入前一批
        if len(starts) > 1 and len(order) - starts[-1] == 1:
            starts.pop()
        for i, start in enumerate(starts):
            stop = starts[i + 1] if i + 1 < len(starts) else len(order)
            idx = order[start:stop]
            yield self.x[idx], self.y[idx]


@dataclass
class HistoryRow:
    cycle: int
    step: int
    train_loss: float
    val_loss: float


@dataclass
class TrainState:
    """
    训练状态

    best_history 记录每次改进时的最优验证损失，单调不增。
    """

    cycle: int = 0
    best_val_loss: float = math.inf
    best_cycle: int = 0
    since_improvement: int = 0
    adam_s: AdamState = field(default_factory=AdamState)
    adam_f: AdamState = field(default_factory=AdamState)
    history: List[HistoryRow] = field(default_factory=list)
    best_history: List[float] = field(default_factory=list)
    stopped_early: bool = False


class Trainer:
    """
    训练器 - 协调 S 和 F 的交替训练

    参数:
        S: 前向系统
        F: 反馈系统；None 表示只训练前向系统（fs / fs_star）
        train_config: 训练超参数
        norm: 训练集归一化统计量（写进检查点）
        variant: 变体名，写进检查点
    """

    def __init__(self, S: ForwardSystem, F: Optional[FeedbackSystem], train_config: TrainConfig,
                 norm: NormStats, variant: str = "lfb"):
        self.S = S
        self.F = F
        self.config = train_config.validate()
        self.norm = norm
        self.variant = variant
        self.weights = ClassWeights.from_sequence(train_config.class_weights, S.config.n_classes)
        self.state = TrainState(
            adam_s=AdamState(lr=train_config.learning_rate),
            adam_f=AdamState(lr=train_config.learning_rate),
        )

    # ============================================================
    # 辅助
    # ============================================================
    def _rng(self, cycle: int, step: int) -> np.random.Generator:
        return np.random.default_rng([self.config.seed, cycle, step])

    def _target(self, y: np.ndarray) -> Tensor:
        return one_hot(y, self.S.config.n_classes, self.S.config.head)

    def _loss(self, probs: Tensor, y: np.ndarray) -> Tensor:
        return segmentation_loss(probs, self._target(y), self.weights)

    def _h0(self, x: np.ndarray) -> Tensor:
        return null_feedback(self.S, x.shape[0], x.shape[2:])

    def _require_feedback(self) -> FeedbackSystem:
        if self.F is None:
            raise ConfigError(f"variant {self.variant!r} has no feedback system")
        return self.F

    @staticmethod
    def _check_data(data: TrainingData) -> None:
        if len(data) == 0:
            raise DataError("training epoch over an empty dataset")

    # ============================================================
    # 三个训练步骤
    # ============================================================
    def step1_train_forward(self, data: TrainingData, cycle: int = 0) -> float:
        """步骤1: ŷ = S_d(S_e(x), h_0)，更新 S 的全部参数"""
        self._check_data(data)
        set_frozen(self.S, "all", False)
        if self.F is not None:
            set_frozen(self.F, "all", True)
        params = list(self.S.parameters().values())
        total, count = 0.0, 0
        for x, y in data.batches(self.config.batch_size, self._rng(cycle, 1)):
            zero_grad(params)
            with Tape() as tape:
                y_hat, _ = forward_pass(self.S, Tensor(x), self._h0(x))
                loss = self._loss(y_hat, y)
            tape.backward(loss)
            adam_step(params, self.state.adam_s)
            total += loss.item() * len(x)
            count += len(x)
        return total / count

    def step2_train_feedback(self, data: TrainingData, cycle: int = 0) -> float:
        """步骤2: S 冻结，训练 F 把 ŷ 重建成 y"""
        self._check_data(data)
        F = self._require_feedback()
        set_frozen(self.S, "all", True)
        set_frozen(F, "all", False)
        params = list(F.parameters().values())
        total, count = 0.0, 0
        for x, y in data.batches(self.config.batch_size, self._rng(cycle, 2)):
            with no_grad():
                y_hat, _ = forward_pass(self.S, Tensor(x), self._h0(x))
            zero_grad(params)
            with Tape() as tape:
                loss = self._loss(feedback_full(F, y_hat), y)
            tape.backward(loss)
            adam_step(params, self.state.adam_f)
            total += loss.item() * len(x)
            count += len(x)
        return total / count

    def step3_train_decoder(self, data: TrainingData, cycle: int = 0) -> float:
        """
        步骤3: 只训练 S_d

        每个批次:
            h_s = S_e(x)                    S_e 冻结
            ŷ   = S_d(h_s, h_0)             评估模式、无梯度
            h_f = F_e(ŷ)                    F 冻结
            loss(S_d(h_s, h_f), y)          梯度只经过第二次解码
        """
        self._check_data(data)
        F = self._require_feedback()
        set_frozen(self.S, "S_e", True)
        set_frozen(self.S, "S_d", False)
        set_frozen(F, "all", True)
        params = list(self.S.decoder.parameters().values())
        total, count = 0.0, 0
        for x, y in data.batches(self.config.batch_size, self._rng(cycle, 3)):
            with no_grad():
                encoding = self.S.encode(Tensor(x))
                with evaluating(self.S):
                    y0 = self.S.decode(encoding, self._h0(x))
                h_f = F.encode(y0)
            zero_grad(params)
            with Tape() as tape:
                loss = self._loss(self.S.decode(encoding, h_f), y)
            tape.backward(loss)
            adam_step(params, self.state.adam_s)
            total += loss.item() * len(x)
            count += len(x)
        return total / count

    # ============================================================
    # 验证与主循环
    # ============================================================
    def validation_loss(self, data: TrainingData, iterations: Optional[int] = None) -> float:
        """前向系统输出端的验证损失；有反馈系统时使用带反馈环的预测"""
        if iterations is None:
            iterations = self.config.test_feedback_iterations if self.F is not None else 0
        result = predict(self.S, self.F, data.x, iterations, batch_size=self.config.batch_size)
        with no_grad():
            return self._loss(Tensor(result.probs), data.y).item()

    def snapshot(self) -> CheckpointBundle:
        return bundle_from_systems(self.S, self.F, self.config.to_dict(), self.norm,
                                   cycle=self.state.cycle, variant=self.variant)

    def train_loop(self, train: TrainingData, val: TrainingData,
                   feedback: bool = True) -> Tuple[TrainState, CheckpointBundle]:
        """
        重复训练周期直到早停或达到最大周期数

        返回:
            (TrainState, 验证损失最低时的检查点)

        异常:
            DataError: 训练集/验证集为空或有重叠
        """
        self._check_data(train)
        if len(val) == 0:
            raise DataError("validation set is empty")
        overlap = set(train.ids) & set(val.ids)
        if overlap:
            raise DataError(f"train and validation splits overlap on {len(overlap)} samples, e.g. {sorted(overlap)[0]}")
        if feedback:
            self._require_feedback()

        steps = [self.step1_train_forward]
        if feedback:
            steps += [self.step2_train_feedback, self.step3_train_decoder]

        logger.info("=" * 60)
        logger.info(f"🚀 training {self.variant}: {len(train)} train / {len(val)} val samples, "
                    f"{len(steps)} step(s) per cycle, up to {self.config.max_cycles} cycles")
        logger.info("=" * 60)

        best: Optional[CheckpointBundle] = None
        state = self.state
        for cycle in range(1, self.config.max_cycles + 1):
            state.cycle = cycle
            for number, step in enumerate(steps, start=1):
                train_loss = step(train, cycle)
                state.history.append(HistoryRow(cycle, number, train_loss, math.nan))
                logger.debug(f"cycle {cycle} step {number}: train {train_loss:.5f}")
            # 每个周期只在最后一步之后验证一次
            val_loss = self.validation_loss(val)
            state.history[-1].val_loss = val_loss

            if val_loss < state.best_val_loss:
                state.best_val_loss = val_loss
                state.best_cycle = cycle
                state.since_improvement = 0
                state.best_history.append(val_loss)
                best = self.snapshot()
                logger.info(f"✅ cycle {cycle}: val loss {val_loss:.5f} (new best)")
            else:
                state.since_improvement += 1
                logger.info(f"cycle {cycle}: val loss {val_loss:.5f} "
                            f"(best {state.best_val_loss:.5f} @ {state.best_cycle})")
                if state.since_improvement >= self.config.early_stop_patience:
                    state.stopped_early = True
                    logger.warning(f"⚠️ early stop after {cycle} cycles: "
                                   f"no improvement for {state.since_improvement} cycles")
                    break

        if best is None:
            # 验证损失一直是 NaN 时仍然返回最后的权重
            best = self.snapshot()
        logger.info(f"✅ training finished: best val loss {state.best_val_loss:.5f} at cycle {state.best_cycle}")
        return state, best


# ============================================================
# 损失历史文件
# ============================================================
def write_history(rows: Sequence[HistoryRow], path: str) -> None:
    """每步一行；只有周期最后一步带验证损失，其余为空"""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    frame = pd.DataFrame([asdict(r) for r in rows], columns=HISTORY_FIELDS)
    frame.to_csv(path, index=False)


def read_history(path: str) -> List[HistoryRow]:
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = set(HISTORY_FIELDS) - set(frame.columns)
    if missing:
        raise FormatError(f"{path}: missing history columns {sorted(missing)}")
    return [
        HistoryRow(int(rec["cycle"]), int(rec["step"]), float(rec["train_loss"]), float(rec["val_loss"]))
        for rec in frame.to_dict("records")
    ]
