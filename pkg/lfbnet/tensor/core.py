"""
core.py - 张量与反向模式自动微分

功能说明:
    这个模块定义了整个数值基座的三个核心类型:
    1. Tensor    - 64位浮点的稠密数组（网络中的特征图、概率图、潜空间）
    2. Parameter - 可训练的张量，带梯度累加器和冻结标志
    3. Tape      - 计算记录带，按执行顺序记录可微操作，反向时逆序回放

记录规则:
    - 只有在 `with Tape() as tape:` 块内、且至少一个输入需要梯度时，操作才会被记录
    - 块外的前向计算不记录任何东西（相当于"无梯度"评估）
    - 当前活动的记录带是线程局部的：单个训练步骤在一个线程上构建并消费自己的记录带，
      其他线程可以同时对固定权重做只读前向计算

数据流:
    前向: ops.conv2d(...) → Tape.record(输出, 输入, 反向函数)
         ↓
    反向: Tape.backward(loss) → 逆序调用反向函数 → 叶子张量/参数的 .grad 累加

使用例子:
    w = Parameter(np.array(2.0), name="w")
    x = Tensor(np.array(3.0))
    with Tape() as tape:
        loss = ops.mul(w, x)
    tape.backward(loss)
    print(w.grad)  # 3.0
"""

import logging
import threading
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..utils.errors import ShapeError

logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

# 线程局部的活动记录带
_local = threading.local()


class Tensor:
    """
    稠密张量 - 包装一个float64的numpy数组

    属性:
        data: numpy数组（网络内部统一为 (n, c, h, w)，全连接/偏置可以是1维或2维）
        grad: 反向传播后累加的梯度（叶子张量才有意义），初始为None
        requires_grad: 是否需要对它求梯度
        is_leaf: 不是由被记录的操作产生的张量
    """

    __slots__ = ("data", "grad", "requires_grad", "is_leaf", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.is_leaf = True
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __add__(self, other):
        from . import ops
        return ops.add(self, _as_tensor(other, self))

    def __radd__(self, other):
        return self.__add__(other)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """
    可训练参数

    说明:
        - requires_grad 恒为 True：冻结只在优化器层面生效，记录带照常给冻结参数算梯度
        - name 是全局唯一的路径，例如 "S_e/stage1/conv1/weight"
        - frozen=True 时任何 adam_step 都不会修改它的值
    """

    __slots__ = ("frozen",)

    def __init__(self, data, name: str, frozen: bool = False):
        super().__init__(data, requires_grad=True, name=name)
        self.frozen = frozen

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, frozen={self.frozen})"


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.broadcast_to(np.asarray(value, dtype=np.float64), like.shape).copy())


class _Record:
    __slots__ = ("output", "inputs", "backward_fn")

    def __init__(self, output: Tensor, inputs: Tuple[Tensor, ...], backward_fn: BackwardFn):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """
    计算记录带 - 反向模式自动微分的核心

    职责:
        1. 在 with 块内成为当前线程的活动记录带
        2. 按执行顺序保存每个可微操作（输出、输入、反向函数）
        3. backward() 时严格逆序回放，把梯度累加到叶子张量上

    梯度语义:
        - 同一个参数被多次使用时，梯度是所有使用处贡献之和
        - 不清零就再次backward，梯度会继续累加（显式清零语义）
    """

    def __init__(self):
        self.records: List[_Record] = []
        self._previous: Optional["Tape"] = None

    def __enter__(self) -> "Tape":
        self._previous = getattr(_local, "tape", None)
        _local.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _local.tape = self._previous
        self._previous = None

    def __len__(self) -> int:
        return len(self.records)

    def record(self, output: Tensor, inputs: Tuple[Tensor, ...], backward_fn: BackwardFn) -> None:
        output.requires_grad = True
        output.is_leaf = False
        self.records.append(_Record(output, inputs, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """
        从标量损失反向传播

        参数:
            loss: 必须是只有一个元素的张量，且由本记录带上的操作产生

        异常:
            ShapeError: loss不是标量
            ValueError: 记录带为空
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if not self.records:
            raise ValueError("backward() called on an empty tape")

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records):
            upstream = grads.pop(id(rec.output), None)
            if upstream is None:
                continue
            input_grads = rec.backward_fn(upstream)
            for tensor, g in zip(rec.inputs, input_grads):
                if g is None or not tensor.requires_grad:
                    continue
                if tensor.is_leaf:
                    if tensor.grad is None:
                        tensor.grad = np.zeros_like(tensor.data)
                    tensor.grad += g
                else:
                    key = id(tensor)
                    if key in grads:
                        grads[key] = grads[key] + g
                    else:
                        grads[key] = g
        logger.debug(f"backward replayed {len(self.records)} records")


def active_tape() -> Optional[Tape]:
    """当前线程的活动记录带，没有则为None"""
    return getattr(_local, "tape", None)


@contextmanager
def no_grad() -> Iterator[None]:
    """暂时停用当前线程的记录带，块内的操作一律不记录"""
    previous = getattr(_local, "tape", None)
    _local.tape = None
    try:
        yield
    finally:
        _local.tape = previous


def make_output(data: np.ndarray, inputs: Tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    """
    包装操作结果并在需要时登记到活动记录带

    只有存在活动记录带且任一输入需要梯度时才记录，否则返回普通张量。
    """
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(out, inputs, backward_fn)
    return out


def zero_grad(params) -> None:
    """把一组参数的梯度清零"""
    for p in params:
        p.zero_grad()
