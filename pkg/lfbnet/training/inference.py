"""
inference.py - 带反馈环的推理

推理过程（全部在评估模式、无记录带下执行）:
    h_s = S_e(x)
    ŷ⁰  = S_d(h_s, h_0)
    ŷᵗ  = S_d(h_s, F_e(ŷᵗ⁻¹))    t = 1..iterations

    - 反馈解码器 F_d 永远不会被执行（测试阶段丢弃）
    - iterations=0 等价于单独的前向系统（FS）
    - 评估模式下BatchNorm与批无关，所以分块/多线程不影响结果
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from ..evaluation import labels_from_probs
from ..model import FeedbackSystem, ForwardSystem, evaluating, null_feedback
from ..tensor import Tensor, no_grad
from ..utils import config
from ..utils.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class InferenceResult:
    """probs: (n, c, H, W) 概率；labels: (n, H, W) 类别索引"""

    probs: np.ndarray
    labels: np.ndarray
    iterations: int


def _loop(S: ForwardSystem, F: Optional[FeedbackSystem], x: Tensor, iterations: int) -> Tensor:
    encoding = S.encode(x)
    y_hat = S.decode(encoding, null_feedback(S, x.shape[0], x.shape[2:]))
    for _ in range(iterations):
        y_hat = S.decode(encoding, F.encode(y_hat))
    return y_hat


def infer(S: Optional[ForwardSystem], F: Optional[FeedbackSystem], x, iterations: int) -> InferenceResult:
    """
    对一批图像做反馈环推理

    参数:
        x: (n, in_channels, H, W) 已归一化的图像（ndarray 或 Tensor）
        iterations: 反馈迭代次数 ≥ 0

    异常:
        ConfigError: 没有载入前向系统、iterations为负，或需要反馈却没有反馈系统
    """
    if S is None:
        raise ConfigError("no trained forward system loaded")
    if iterations < 0:
        raise ConfigError(f"feedback iterations must be >= 0, got {iterations}")
    if iterations > 0 and F is None:
        raise ConfigError(f"{iterations} feedback iterations requested but the model has no feedback system")
    x = x if isinstance(x, Tensor) else Tensor(x)
    with no_grad(), evaluating(S, F):
        probs = _loop(S, F, x, iterations).data
    return InferenceResult(probs, labels_from_probs(probs), iterations)


def predict(S: Optional[ForwardSystem], F: Optional[FeedbackSystem], x: np.ndarray, iterations: int,
            batch_size: int = config.BATCH_SIZE, num_threads: int = config.NUM_THREADS) -> InferenceResult:
    """
    对整个数据集分块推理

    说明:
        权重在推理期间不变，num_threads > 1 时各块并行计算。
    """
    chunks = [x[i:i + batch_size] for i in range(0, len(x), max(1, batch_size))]
    # 模式切换放在线程外，线程内的 evaluating() 只会看到评估模式
    with evaluating(S, F):
        if num_threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=num_threads) as pool:
                results: List[InferenceResult] = list(pool.map(lambda c: infer(S, F, c, iterations), chunks))
        else:
            results = [infer(S, F, c, iterations) for c in chunks]
    return InferenceResult(
        probs=np.concatenate([r.probs for r in results]),
        labels=np.concatenate([r.labels for r in results]),
        iterations=iterations,
    )


# ============================================================
# 推理耗时
# ============================================================
@dataclass
class TimingReport:
    """单张图像推理的耗时；seconds 取多次重复中的最小值"""

    input_size: Tuple[int, int]
    iterations: int
    seconds: float
    repeats: int
    bound: float = config.INFERENCE_TIME_BOUND
    reference: float = config.INFERENCE_REFERENCE_SECONDS

    @property
    def within_bound(self) -> bool:
        return self.seconds <= self.bound

    def line(self) -> str:
        return (f"infer_seconds {self.seconds:.6f} size {self.input_size[0]}x{self.input_size[1]} "
                f"iterations {self.iterations} bound {self.bound} within_bound {int(self.within_bound)} "
                f"reference {self.reference}")


def time_inference(S: ForwardSystem, F: Optional[FeedbackSystem], iterations: int = 1,
                   repeats: int = 3, seed: int = 0) -> TimingReport:
    """
    在调用线程上测量一张 (1, in_channels, H, W) 图像的反馈环推理耗时

    先预热一次，再取 repeats 次中的最短时间。
    """
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    h, w = S.config.input_size
    x = np.random.default_rng(seed).normal(size=(1, S.config.in_channels, h, w))
    infer(S, F, x, iterations)
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        infer(S, F, x, iterations)
        times.append(time.perf_counter() - start)
    report = TimingReport((h, w), iterations, min(times), repeats)
    marker = "✅" if report.within_bound else "⚠️"
    logger.info(f"{marker} inference {h}x{w}, {iterations} iteration(s): {report.seconds:.4f}s "
                f"(bound {report.bound}s, reference {report.reference}s)")
    return report
