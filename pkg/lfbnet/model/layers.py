"""
layers.py - 网络层模块

功能说明:
    在 tensor.ops 之上封装带参数的网络层。每个层都是一个 Module:
    - 按注册顺序持有参数（Parameter）和子模块
    - 参数名是完整路径，例如 "S_e/stage1/conv1/weight"
    - BatchNorm层额外持有滑动统计量，检查点会一起保存

提供的层:
    - Conv2d: 卷积（默认3×3，补零1）
    - TransposedConv2d: 2×2上卷积，步长2
    - BatchNorm2d: 批归一化，training标志决定用批统计量还是滑动统计量
    - SEBlock: 挤压-激励通道注意力
    - ConvBlock: [3×3卷积 → ELU → BatchNorm] × repeats，可选一个SE模块

初始化:
    He-uniform（fan-in模式）: U(−√(6/fan_in), √(6/fan_in))，偏置为0，
    BatchNorm的gamma为1、beta为0。随机数生成器由调用方按构造顺序传入，
    同一个种子得到逐位相同的初始权重。
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterator, List, Tuple

import numpy as np

from ..tensor import Parameter, Tensor, ops
from ..tensor.ops import BatchNormState
from ..utils import config
from ..utils.errors import ConfigError

logger = logging.getLogger(__name__)


def he_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """
    网络模块基类

    说明:
        - 给属性赋值为 Parameter 或 Module 时自动登记（保持赋值顺序）
        - 列表形式的子模块用 add_modules() 登记
    """

    def __init__(self, name: str):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", [])
        self.name = name

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
        elif isinstance(value, Module):
            self._children.append(value)
        object.__setattr__(self, key, value)

    def add_modules(self, modules: List["Module"]) -> List["Module"]:
        self._children.extend(modules)
        return modules

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self._children:
            yield from child.modules()

    def parameters(self) -> Dict[str, Parameter]:
        """按构造顺序返回 {完整参数名: Parameter}"""
        out: Dict[str, Parameter] = {}
        for module in self.modules():
            for p in module._params.values():
                out[p.name] = p
        return out

    def batchnorms(self) -> List["BatchNorm2d"]:
        return [m for m in self.modules() if isinstance(m, BatchNorm2d)]

    def buffers(self) -> Dict[str, np.ndarray]:
        """BatchNorm滑动统计量 {名字: 数组}"""
        out: Dict[str, np.ndarray] = {}
        for bn in self.batchnorms():
            out[f"{bn.name}/running_mean"] = bn.state.running_mean
            out[f"{bn.name}/running_var"] = bn.state.running_var
        return out

    def load_buffer(self, name: str, value: np.ndarray) -> None:
        for bn in self.batchnorms():
            if name == f"{bn.name}/running_mean":
                bn.state.running_mean = np.array(value, dtype=np.float64)
                return
            if name == f"{bn.name}/running_var":
                bn.state.running_var = np.array(value, dtype=np.float64)
                return
        raise KeyError(name)

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))


class Conv2d(Module):
    def __init__(self, name: str, in_channels: int, out_channels: int, rng: np.random.Generator,
                 kernel_size: int = 3, padding: int = 1):
        super().__init__(name)
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(he_uniform(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in),
                                name=f"{name}/weight")
        self.bias = Parameter(np.zeros(out_channels), name=f"{name}/bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=1, padding=self.padding)


class TransposedConv2d(Module):
    def __init__(self, name: str, in_channels: int, out_channels: int, rng: np.random.Generator,
                 kernel_size: int = 2, stride: int = 2):
        super().__init__(name)
        self.stride = stride
        # 每个输出像素只接收 in_channels · (k/stride)² 个输入
        fan_in = max(1, in_channels * kernel_size * kernel_size // (stride * stride))
        self.weight = Parameter(he_uniform(rng, (in_channels, out_channels, kernel_size, kernel_size), fan_in),
                                name=f"{name}/weight")
        self.bias = Parameter(np.zeros(out_channels), name=f"{name}/bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.transposed_conv2d(x, self.weight, self.bias, stride=self.stride)


class BatchNorm2d(Module):
    def __init__(self, name: str, channels: int):
        super().__init__(name)
        self.gamma = Parameter(np.ones(channels), name=f"{name}/gamma")
        self.beta = Parameter(np.zeros(channels), name=f"{name}/beta")
        self.state = BatchNormState.fresh(channels)
        self.training = True

    def __call__(self, x: Tensor) -> Tensor:
        return ops.batchnorm2d(x, self.gamma, self.beta, self.state, self.training)


class SEBlock(Module):
    def __init__(self, name: str, channels: int, rng: np.random.Generator, reduction: int = config.SE_REDUCTION):
        super().__init__(name)
        if reduction < 1 or channels % reduction:
            raise ConfigError(f"SE block {name}: {channels} channels not divisible by reduction {reduction}")
        hidden = channels // reduction
        self.reduction = reduction
        self.w1 = Parameter(he_uniform(rng, (hidden, channels), channels), name=f"{name}/w1")
        self.w2 = Parameter(he_uniform(rng, (channels, hidden), hidden), name=f"{name}/w2")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.se_block(x, self.w1, self.w2, self.reduction)


@dataclass(frozen=True)
class ConvBlockSpec:
    """卷积构建块的规格：每次重复是 conv3×3 → ELU → BatchNorm，最后可选一个SE"""

    in_channels: int
    out_channels: int
    conv_repeats: int = 2
    use_se: bool = True


class ConvBlock(Module):
    def __init__(self, name: str, spec: ConvBlockSpec, rng: np.random.Generator,
                 se_reduction: int = config.SE_REDUCTION):
        super().__init__(name)
        if spec.conv_repeats < 1:
            raise ConfigError(f"conv block {name}: conv_repeats must be >= 1")
        self.spec = spec
        self.convs: List[Conv2d] = []
        self.norms: List[BatchNorm2d] = []
        width = spec.in_channels
        for i in range(spec.conv_repeats):
            conv = Conv2d(f"{name}/conv{i + 1}", width, spec.out_channels, rng)
            norm = BatchNorm2d(f"{name}/bn{i + 1}", spec.out_channels)
            self.add_modules([conv, norm])
            self.convs.append(conv)
            self.norms.append(norm)
            width = spec.out_channels
        self.se = SEBlock(f"{name}/se", spec.out_channels, rng, se_reduction) if spec.use_se else None

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for conv, norm in zip(self.convs, self.norms):
            h = norm(ops.elu(conv(h)))
        if self.se is not None:
            h = self.se(h)
        return h
