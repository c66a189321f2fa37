"""
systems.py - 前向系统 S 与反馈系统 F

功能说明:
    这个模块构建上下文反馈环的两个网络:
    1. 前向系统 S（U-Net风格，带跳跃连接和SE模块）
       - 编码器 S_e: 3个 [卷积块 + 2×2最大池化] 阶段 + 瓶颈块 → 潜空间 h_s
       - 解码器 S_d: 合并块 M(h_s, h_f) → 3个 [2×2上卷积 + 跳跃拼接 + 卷积块] → 1×1卷积 + 输出头
    2. 反馈系统 F（全卷积网络，带可学习的反卷积，无跳跃连接，无SE）
       - 编码器 F_e: 把预测概率图 ŷ 编码成 h_f（与 h_s 维度完全相同）
       - 解码器 F_d: 刻意做窄，只在训练步骤2中使用，测试阶段丢弃

反馈环:
    h_s = S_e(x)
    ŷ⁰  = S_d(h_s, h_0)                 # h_0: "无反馈"单位元
    ŷᵗ  = S_d(h_s, F_e(ŷᵗ⁻¹))

参数分组:
    参数名前缀把两个系统划分成互不相交的四组 "S_e" "S_d" "F_e" "F_d"，
    set_frozen() 按组冻结/解冻，并同步切换该组BatchNorm的训练/评估模式。

默认通道安排（base=32, C=256）:
    S_e: 32 → 64 → 128，瓶颈 256
    S_d: 合并块输出 2C=512，上卷积阶段 128 → 64 → 32
    F_e: 16 → 32 → 64，瓶颈 256
    F_d: 256 → 128，上卷积阶段 64 → 32 → 16
    训练阶段约 8.3M 参数，测试阶段（去掉 F_d）约 7.7M

使用例子:
    cfg = ModelConfig(input_size=(64, 64), n_classes=4, head="softmax")
    S, F = build_systems(cfg, seed=0)
    y_hat, enc = forward_pass(S, x, null_feedback(S, x.shape[0]))
    h_f = feedback_encode(F, y_hat)
"""

import logging
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

from .layers import ConvBlock, ConvBlockSpec, Conv2d, Module, TransposedConv2d
from ..tensor import Parameter, Tensor, ops
from ..utils import config
from ..utils.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

# 网络深度：3次下采样，d = 8
DEPTH_LEVELS = 3
DOWNSAMPLE = 2 ** DEPTH_LEVELS

MERGE_STRATEGIES = ("concat", "add", "multiply")
HEADS = ("sigmoid", "softmax")
GROUPS = ("S_e", "S_d", "F_e", "F_d")


@dataclass
class ModelConfig:
    """
    模型配置

    约束:
        - H、W 必须能被 8 整除，潜空间尺寸为 (H/8, W/8)
        - head=sigmoid ⇒ n_classes=1；head=softmax ⇒ n_classes≥2
        - 使用SE时，base_channels 和 latent_channels 要能被压缩比整除
    """

    input_size: Tuple[int, int] = (64, 64)
    in_channels: int = 1
    n_classes: int = 4
    base_channels: int = 32
    depth_levels: int = DEPTH_LEVELS
    latent_channels: int = 256
    head: str = "softmax"
    merge: str = "concat"
    use_se: bool = True
    conv_repeats: int = 2
    se_reduction: int = config.SE_REDUCTION

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)

    def validate(self) -> "ModelConfig":
        h, w = self.input_size
        if h % DOWNSAMPLE or w % DOWNSAMPLE or h <= 0 or w <= 0:
            raise ConfigError(f"input size {h}x{w} must be positive and divisible by {DOWNSAMPLE}")
        if self.depth_levels != DEPTH_LEVELS:
            raise ConfigError(f"depth_levels is fixed to {DEPTH_LEVELS} (downsampling factor {DOWNSAMPLE})")
        if self.head not in HEADS:
            raise ConfigError(f"unknown head {self.head!r}, expected one of {HEADS}")
        if self.head == "sigmoid" and self.n_classes != 1:
            raise ConfigError("sigmoid head requires n_classes = 1")
        if self.head == "softmax" and self.n_classes < 2:
            raise ConfigError("softmax head requires n_classes >= 2")
        if self.merge not in MERGE_STRATEGIES:
            raise ConfigError(f"unknown merge strategy {self.merge!r}, expected one of {MERGE_STRATEGIES}")
        if self.in_channels < 1 or self.base_channels < 2 or self.latent_channels < 2:
            raise ConfigError("in_channels, base_channels and latent_channels must be positive")
        if self.base_channels % 2:
            raise ConfigError(f"base_channels must be even, got {self.base_channels}")
        if self.use_se and (self.base_channels % self.se_reduction or self.latent_channels % self.se_reduction):
            raise ConfigError(
                f"with SE blocks, base_channels ({self.base_channels}) and latent_channels "
                f"({self.latent_channels}) must be divisible by {self.se_reduction}"
            )
        return self

    @property
    def latent_size(self) -> Tuple[int, int]:
        return self.input_size[0] // DOWNSAMPLE, self.input_size[1] // DOWNSAMPLE

    @property
    def label_classes(self) -> int:
        """标签图里的类别数（含背景）；sigmoid头是二分类"""
        return 2 if self.head == "sigmoid" else self.n_classes

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ModelConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**known)


@dataclass
class EncoderOutput:
    """S_e 的输出：潜空间 h_s 和各阶段保留的跳跃特征（从高分辨率到低分辨率）"""

    latent: Tensor
    skips: Tuple[Tensor, ...] = field(default_factory=tuple)


def _head(logits: Tensor, head: str) -> Tensor:
    return ops.sigmoid(logits) if head == "sigmoid" else ops.softmax_channels(logits)


def merge(h_s: Tensor, h_f: Tensor, strategy: str) -> Tensor:
    """
    合并块 M：把两个潜空间合并

    concat → 2C通道；add / multiply → C通道
    """
    if strategy not in MERGE_STRATEGIES:
        raise ConfigError(f"unknown merge strategy {strategy!r}, expected one of {MERGE_STRATEGIES}")
    if h_s.shape != h_f.shape:
        raise ShapeError(f"merge: h_s {h_s.shape} and h_f {h_f.shape} must have equal shapes")
    if strategy == "concat":
        return ops.concat_channels(h_s, h_f)
    if strategy == "add":
        return ops.add(h_s, h_f)
    return ops.mul(h_s, h_f)


# ============================================================
# 前向系统
# ============================================================
class ForwardEncoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__("S_e")
        widths = [cfg.base_channels * 2 ** i for i in range(cfg.depth_levels)]
        self.stages: List[ConvBlock] = []
        width = cfg.in_channels
        for i, out in enumerate(widths):
            spec = ConvBlockSpec(width, out, cfg.conv_repeats, cfg.use_se)
            self.stages.append(ConvBlock(f"S_e/stage{i + 1}", spec, rng, cfg.se_reduction))
            width = out
        self.add_modules(self.stages)
        self.bottleneck = ConvBlock(
            "S_e/bottleneck", ConvBlockSpec(width, cfg.latent_channels, cfg.conv_repeats, cfg.use_se),
            rng, cfg.se_reduction,
        )

    def __call__(self, x: Tensor) -> EncoderOutput:
        skips = []
        h = x
        for stage in self.stages:
            h = stage(h)
            skips.append(h)
            h = ops.maxpool2d(h)
        return EncoderOutput(latent=self.bottleneck(h), skips=tuple(skips))


class ForwardDecoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__("S_d")
        self.merge_strategy = cfg.merge
        self.head = cfg.head
        c = cfg.latent_channels
        merged_width = 2 * c if cfg.merge == "concat" else c
        # 合并块的输入宽度随合并策略变化，输出固定为 2C
        self.merge_block = ConvBlock(
            "S_d/merge", ConvBlockSpec(merged_width, 2 * c, cfg.conv_repeats, cfg.use_se), rng, cfg.se_reduction
        )
        widths = [cfg.base_channels * 2 ** i for i in reversed(range(cfg.depth_levels))]
        self.ups: List[TransposedConv2d] = []
        self.blocks: List[ConvBlock] = []
        width = 2 * c
        for i, out in enumerate(widths):
            level = cfg.depth_levels - i
            up = TransposedConv2d(f"S_d/up{level}", width, out, rng)
            block = ConvBlock(
                f"S_d/block{level}", ConvBlockSpec(2 * out, out, cfg.conv_repeats, cfg.use_se), rng, cfg.se_reduction
            )
            self.add_modules([up, block])
            self.ups.append(up)
            self.blocks.append(block)
            width = out
        self.classifier = Conv2d("S_d/head", width, cfg.n_classes, rng, kernel_size=1, padding=0)

    def __call__(self, encoding: EncoderOutput, h_f: Tensor) -> Tensor:
        h = self.merge_block(merge(encoding.latent, h_f, self.merge_strategy))
        for up, block, skip in zip(self.ups, self.blocks, reversed(encoding.skips)):
            h = block(ops.concat_channels(up(h), skip))
        return _head(self.classifier(h), self.head)


class ForwardSystem:
    """
    前向系统 S = S_d ∘ S_e

    说明:
        编码器和解码器是两个独立的模块（参数组 "S_e" / "S_d"），
        因此可以联合训练（步骤1），也可以只训练解码器（步骤3）。
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.config = cfg
        self.encoder = ForwardEncoder(cfg, rng)
        self.decoder = ForwardDecoder(cfg, rng)
        self.groups: Dict[str, Module] = {"S_e": self.encoder, "S_d": self.decoder}

    def parameters(self) -> Dict[str, Parameter]:
        return {**self.encoder.parameters(), **self.decoder.parameters()}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {**self.encoder.buffers(), **self.decoder.buffers()}

    def latent_shape(self, batch: int, size: Optional[Tuple[int, int]] = None) -> Tuple[int, int, int, int]:
        h, w = size or self.config.input_size
        return batch, self.config.latent_channels, h // DOWNSAMPLE, w // DOWNSAMPLE

    def encode(self, x: Tensor) -> EncoderOutput:
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(f"forward system expects (n, {self.config.in_channels}, H, W) input, got {x.shape}")
        if x.shape[2] % DOWNSAMPLE or x.shape[3] % DOWNSAMPLE:
            raise ShapeError(f"input spatial dims {x.shape[2:]} must be divisible by {DOWNSAMPLE}")
        return self.encoder(x)

    def decode(self, encoding: EncoderOutput, h_f: Tensor) -> Tensor:
        if h_f.shape != encoding.latent.shape:
            raise ShapeError(f"feedback latent {h_f.shape} does not match h_s {encoding.latent.shape}")
        return self.decoder(encoding, h_f)


# ============================================================
# 反馈系统
# ============================================================
class FeedbackEncoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__("F_e")
        base = cfg.base_channels // 2
        widths = [base * 2 ** i for i in range(cfg.depth_levels)]
        self.stages: List[ConvBlock] = []
        width = cfg.n_classes
        for i, out in enumerate(widths):
            self.stages.append(ConvBlock(f"F_e/stage{i + 1}", ConvBlockSpec(width, out, cfg.conv_repeats, False), rng))
            width = out
        self.add_modules(self.stages)
        self.bottleneck = ConvBlock(
            "F_e/bottleneck", ConvBlockSpec(width, cfg.latent_channels, cfg.conv_repeats, False), rng
        )

    def __call__(self, y_hat: Tensor) -> Tensor:
        h = y_hat
        for stage in self.stages:
            h = ops.maxpool2d(stage(h))
        return self.bottleneck(h)


class FeedbackDecoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__("F_d")
        self.head = cfg.head
        c = cfg.latent_channels
        base = cfg.base_channels // 2
        self.latent_block = ConvBlock("F_d/latent", ConvBlockSpec(c, c // 2, cfg.conv_repeats, False), rng)
        widths = [base * 2 ** i for i in reversed(range(cfg.depth_levels))]
        self.ups: List[TransposedConv2d] = []
        self.blocks: List[ConvBlock] = []
        width = c // 2
        for i, out in enumerate(widths):
            level = cfg.depth_levels - i
            up = TransposedConv2d(f"F_d/up{level}", width, out, rng)
            block = ConvBlock(f"F_d/block{level}", ConvBlockSpec(out, out, cfg.conv_repeats, False), rng)
            self.add_modules([up, block])
            self.ups.append(up)
            self.blocks.append(block)
            width = out
        self.classifier = Conv2d("F_d/head", width, cfg.n_classes, rng, kernel_size=1, padding=0)
        self.calls = 0

    def __call__(self, h_f: Tensor) -> Tensor:
        self.calls += 1
        h = self.latent_block(h_f)
        for up, block in zip(self.ups, self.blocks):
            h = block(up(h))
        return _head(self.classifier(h), self.head)


class FeedbackSystem:
    """
    反馈系统 F = F_d ∘ F_e

    说明:
        F_d.calls 记录解码器被执行的次数，推理阶段应当始终为0。
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.config = cfg
        self.encoder = FeedbackEncoder(cfg, rng)
        self.decoder = FeedbackDecoder(cfg, rng)
        self.groups: Dict[str, Module] = {"F_e": self.encoder, "F_d": self.decoder}

    def parameters(self) -> Dict[str, Parameter]:
        return {**self.encoder.parameters(), **self.decoder.parameters()}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {**self.encoder.buffers(), **self.decoder.buffers()}

    def _check_prediction(self, y_hat: Tensor) -> None:
        if y_hat.ndim != 4 or y_hat.shape[1] != self.config.n_classes:
            raise ShapeError(f"feedback system expects (n, {self.config.n_classes}, H, W) input, got {y_hat.shape}")
        if y_hat.shape[2] % DOWNSAMPLE or y_hat.shape[3] % DOWNSAMPLE:
            raise ShapeError(f"prediction spatial dims {y_hat.shape[2:]} must be divisible by {DOWNSAMPLE}")

    def encode(self, y_hat: Tensor) -> Tensor:
        self._check_prediction(y_hat)
        return self.encoder(y_hat)

    def decode(self, h_f: Tensor) -> Tensor:
        return self.decoder(h_f)


# ============================================================
# 构建与前向接口
# ============================================================
def build_systems(cfg: ModelConfig, seed: int) -> Tuple[ForwardSystem, FeedbackSystem]:
    """
    按配置构建 S 和 F

    说明:
        用同一个种子的生成器依次初始化 S 和 F，两次调用得到逐位相同的权重。
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    S = ForwardSystem(cfg, rng)
    F = FeedbackSystem(cfg, rng)
    logger.info(
        f"🧱 built systems: S={parameter_count(S):,} params, F={parameter_count(F):,} params "
        f"(merge={cfg.merge}, head={cfg.head}, se={cfg.use_se})"
    )
    return S, F


def null_feedback(S: ForwardSystem, batch: int, size: Optional[Tuple[int, int]] = None) -> Tensor:
    """
    "无反馈"潜空间 h_0

    concat / add 用全零；multiply 用全一（否则会把 h_s 乘没）。
    """
    shape = S.latent_shape(batch, size)
    fill = 1.0 if S.config.merge == "multiply" else 0.0
    return Tensor(np.full(shape, fill, dtype=np.float64))


def forward_pass(S: ForwardSystem, x: Tensor, h_f: Tensor) -> Tuple[Tensor, EncoderOutput]:
    """
    ŷ = S_d(S_e(x), h_f)

    返回:
        (ŷ, encoding)，encoding.latent 就是 h_s，可复用而不必重算编码器
    """
    encoding = S.encode(x)
    return S.decode(encoding, h_f), encoding


def feedback_encode(F: FeedbackSystem, y_hat: Tensor) -> Tensor:
    """h_f = F_e(ŷ)"""
    return F.encode(y_hat)


def feedback_full(F: FeedbackSystem, y_hat: Tensor) -> Tensor:
    """ŷ̂ = F_d(F_e(ŷ))，只在训练步骤2中使用"""
    return F.decode(F.encode(y_hat))


def set_frozen(system, group: str, frozen: bool) -> None:
    """
    冻结/解冻一个参数组

    参数:
        system: ForwardSystem 或 FeedbackSystem
        group: "S_e" | "S_d" | "F_e" | "F_d" | "all"
        frozen: True = 冻结（优化器跳过，BatchNorm切到评估模式）

    异常:
        ConfigError: 该系统没有这个参数组
    """
    if group == "all":
        modules = list(system.groups.values())
    elif group in system.groups:
        modules = [system.groups[group]]
    else:
        raise ConfigError(f"unknown parameter group {group!r} for {type(system).__name__}; "
                          f"expected one of {sorted(system.groups)} or 'all'")
    for module in modules:
        for p in module.parameters().values():
            p.frozen = frozen
        for bn in module.batchnorms():
            bn.training = not frozen


@contextmanager
def evaluating(*systems) -> Iterator[None]:
    """临时把所有BatchNorm切到评估模式，退出时恢复原模式"""
    saved = []
    for system in systems:
        if system is None:
            continue
        for module in system.groups.values():
            for bn in module.batchnorms():
                saved.append((bn, bn.training))
                bn.training = False
    try:
        yield
    finally:
        for bn, mode in saved:
            bn.training = mode


def group_of(name: str) -> str:
    return name.split("/", 1)[0]


def parameter_count(system) -> int:
    return int(sum(p.size for p in system.parameters().values()))


def reference_unet_parameter_count(in_channels: int = 1, n_classes: int = 4, base: int = 64, depth: int = 4) -> int:
    """经典U-Net（64起步、4次下采样、无BatchNorm）的参数量，用作对照"""
    def conv(ci, co, k=3):
        return ci * co * k * k + co

    total = 0
    width = in_channels
    widths = [base * 2 ** i for i in range(depth + 1)]
    for out in widths:
        total += conv(width, out) + conv(out, out)
        width = out
    for out in reversed(widths[:-1]):
        total += width * out * 4 + out
        total += conv(2 * out, out) + conv(out, out)
        width = out
    return total + conv(width, n_classes, k=1)


def parameter_budget(cfg: ModelConfig) -> Dict[str, int]:
    """
    参数预算报告

    返回:
        {"train": S+F, "test": S+F_e, "feedback_decoder": F_d, "reference_unet": U-Net}
    """
    S, F = build_systems(cfg, seed=0)
    train = parameter_count(S) + parameter_count(F)
    f_d = F.decoder.parameter_count()
    return {
        "train": train,
        "test": train - f_d,
        "feedback_decoder": f_d,
        "reference_unet": reference_unet_parameter_count(cfg.in_channels, cfg.n_classes),
    }
