"""
ops.py - 可微张量操作

功能说明:
    这个模块实现网络用到的全部可微操作，每个操作都:
    1. 用numpy计算前向结果
    2. 定义一个闭包形式的反向函数（上游梯度 → 各输入的梯度）
    3. 通过 make_output() 在活动记录带上登记

支持的操作:
    - conv2d / transposed_conv2d: 3×3卷积、2×2上卷积（共用 im2col/col2im 内核）
    - maxpool2d: 2×2最大池化，步长2
    - batchnorm2d: 训练模式用批统计量，评估模式用滑动统计量
    - elu / sigmoid / softmax_channels: 激活与输出头
    - dense / global_avg_pool / scale_channels / se_block: 挤压-激励通道注意力
    - concat_channels / add / mul / scale / sum_all / mean_all: 合并与归约

张量布局:
    4维张量一律是 (batch n, channels c, height h, width w)，行主序。
    卷积核为 (c_out, c_in, kh, kw)；上卷积核为 (c_in, c_out, kh, kw)。

使用例子:
    with Tape() as tape:
        y = ops.elu(ops.conv2d(x, w, b, stride=1, padding=1))
        loss = ops.sum_all(y)
    tape.backward(loss)
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .core import Tensor, make_output
from ..utils import config
from ..utils.errors import ShapeError

logger = logging.getLogger(__name__)


# ============================================================
# im2col / col2im 内核
# ============================================================
def _patch_matrix(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """
    (n, c, H, W) → (n, c·kh·kw, oh·ow) 的补丁矩阵

    行顺序与卷积核 (c, kh, kw) 的展平顺序一致，列是行主序的输出位置，
    所以卷积就是一次 (c_out, K) @ (K, P) 的矩阵乘，结果直接是 NCHW 布局。
    """
    n, c = x.shape[:2]
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = windows.shape[2:4]
    # 最内层是输出宽度方向，拷贝时按行连续读取输入
    return windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, oh * ow)


def _col2im(cols: np.ndarray, out_shape, stride: int) -> np.ndarray:
    """_patch_matrix 的伴随：把 (n, c, kh, kw, oh, ow) 的补丁按位置累加回 (n, c, H, W)"""
    _, _, kh, kw, oh, ow = cols.shape
    out = np.zeros(out_shape, dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, :, i, j]
    return out


def _batched_outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Σ_n a[n] @ b[n]ᵀ：(n, p, P) 与 (n, q, P) → (p, q)"""
    return np.matmul(a, b.transpose(0, 2, 1)).sum(axis=0)


def _require_4d(x: Tensor, op: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{op}: expected a 4-axis tensor (n, c, h, w), got shape {x.shape}")


# ============================================================
# 卷积
# ============================================================
def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """
    二维卷积（互相关）

    参数:
        x: (n, c_in, h, w)
        weight: (c_out, c_in, kh, kw)
        bias: (c_out,) 或 None
        stride: 步长 ≥ 1
        padding: 四周补零 ≥ 0

    返回:
        (n, c_out, oh, ow)，oh = floor((h + 2·padding − kh)/stride) + 1

    异常:
        ShapeError: 通道数不符、卷积核大于输入、步长/补零非法
    """
    _require_4d(x, "conv2d")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: stride must be >= 1 and padding >= 0, got stride={stride}, padding={padding}")
    c_out, c_in, kh, kw = weight.shape
    n, c, h, w = x.shape
    if c != c_in:
        raise ShapeError(f"conv2d: input has {c} channels but kernel {weight.shape} expects {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match c_out={c_out}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    w2 = weight.data.reshape(c_out, -1)
    out = np.matmul(w2, _patch_matrix(xp, kh, kw, stride)).reshape(n, c_out, oh, ow)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g: np.ndarray):
        # 补丁矩阵不随记录带保存，反向时重新展开
        g2 = g.reshape(n, c_out, oh * ow)
        gw = _batched_outer(g2, _patch_matrix(xp, kh, kw, stride)).reshape(weight.shape)
        dcols = np.matmul(w2.T, g2).reshape(n, c_in, kh, kw, oh, ow)
        dxp = _col2im(dcols, xp.shape, stride)
        dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return dx, gw, gb

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return make_output(out, inputs, backward)


def transposed_conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 2) -> Tensor:
    """
    转置卷积（上卷积 / 可学习反卷积）

    参数:
        x: (n, c_in, h, w)
        weight: (c_in, c_out, kh, kw)
        bias: (c_out,) 或 None
        stride: 步长 ≥ 1

    返回:
        (n, c_out, (h−1)·stride + kh, (w−1)·stride + kw)
        kh = kw = stride = 2 时空间尺寸正好翻倍

    说明:
        前向等价于 conv2d 对输入的反向（同一个卷积核），两者互为伴随算子。
    """
    _require_4d(x, "transposed_conv2d")
    if stride < 1:
        raise ShapeError(f"transposed_conv2d: stride must be >= 1, got {stride}")
    c_in, c_out, kh, kw = weight.shape
    n, c, h, w = x.shape
    if c != c_in:
        raise ShapeError(f"transposed_conv2d: input has {c} channels but kernel {weight.shape} expects {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"transposed_conv2d: bias shape {bias.shape} does not match c_out={c_out}")

    out_shape = (n, c_out, (h - 1) * stride + kh, (w - 1) * stride + kw)
    w2 = weight.data.reshape(c_in, -1)
    x2 = x.data.reshape(n, c_in, h * w)
    cols = np.matmul(w2.T, x2).reshape(n, c_out, kh, kw, h, w)
    out = _col2im(cols, out_shape, stride)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g: np.ndarray):
        gcols = _patch_matrix(g, kh, kw, stride)
        dx = np.matmul(w2, gcols).reshape(n, c_in, h, w)
        gw = _batched_outer(x2, gcols).reshape(weight.shape)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return dx, gw, gb

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return make_output(out, inputs, backward)


# ============================================================
# 池化
# ============================================================
def maxpool2d(x: Tensor) -> Tensor:
    """
    2×2最大池化，步长2

    平局时取窗口内行主序的第一个元素，反向梯度只流向该元素。
    """
    _require_4d(x, "maxpool2d")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2d: spatial dims must be even, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    win = x.data.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    idx = win.argmax(axis=-1)[..., None]
    out = np.take_along_axis(win, idx, axis=-1)[..., 0]

    def backward(g: np.ndarray):
        gwin = np.zeros((n, c, h2, w2, 4), dtype=np.float64)
        np.put_along_axis(gwin, idx, g[..., None], axis=-1)
        return (gwin.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    return make_output(out, (x,), backward)


# ============================================================
# 批归一化
# ============================================================
@dataclass
class BatchNormState:
    """BatchNorm的滑动统计量（不参与梯度，但会写入检查点）"""

    running_mean: np.ndarray
    running_var: np.ndarray

    @classmethod
    def fresh(cls, channels: int) -> "BatchNormState":
        return cls(np.zeros(channels, dtype=np.float64), np.ones(channels, dtype=np.float64))


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool,
                eps: float = config.BN_EPS, momentum: float = config.BN_MOMENTUM) -> Tensor:
    """
    按通道的批归一化

    训练模式:
        用当前批的均值/方差归一化，并更新滑动统计量
        running = momentum · running + (1 − momentum) · batch
    评估模式:
        用滑动统计量归一化，不修改状态（纯函数）
    """
    _require_4d(x, "batchnorm2d")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm2d: gamma/beta shapes {gamma.shape}/{beta.shape} do not match {c} channels")

    if training:
        count = n * h * w
        if count < 2:
            raise ShapeError(f"batchnorm2d: train mode needs batch*h*w >= 2 per channel, got {count}")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        state.running_mean = momentum * state.running_mean + (1.0 - momentum) * mean
        state.running_var = momentum * state.running_var + (1.0 - momentum) * var
    else:
        mean = state.running_mean
        var = state.running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g: np.ndarray):
        gg = np.sum(g * xhat, axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        dxhat = g * gamma.data[None, :, None, None]
        if training:
            m = n * h * w
            dx = (inv_std[None, :, None, None] / m) * (
                m * dxhat
                - dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
                - xhat * np.sum(dxhat * xhat, axis=(0, 2, 3))[None, :, None, None]
            )
        else:
            dx = dxhat * inv_std[None, :, None, None]
        return dx, gg, gb

    return make_output(out, (x, gamma, beta), backward)


# ============================================================
# 激活函数
# ============================================================
def elu(x: Tensor) -> Tensor:
    """ELU，α = 1: x>0 时为x，否则 exp(x)−1"""
    pos = x.data > 0
    out = np.where(pos, x.data, np.expm1(np.minimum(x.data, 0.0)))

    def backward(g: np.ndarray):
        return (g * np.where(pos, 1.0, out + 1.0),)

    return make_output(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)

    def backward(g: np.ndarray):
        return (g * out * (1.0 - out),)

    return make_output(out, (x,), backward)


def softmax_channels(x: Tensor) -> Tensor:
    """沿通道轴的softmax，先减去最大值保证数值稳定"""
    _require_4d(x, "softmax_channels")
    if x.shape[1] < 2:
        raise ShapeError(f"softmax_channels: needs at least 2 channels, got {x.shape[1]}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g: np.ndarray):
        return (out * (g - np.sum(g * out, axis=1, keepdims=True)),)

    return make_output(out, (x,), backward)


# ============================================================
# 挤压-激励
# ============================================================
def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """全连接: (n, in) × (out, in)ᵀ → (n, out)"""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"dense: cannot apply weight {weight.shape} to input {x.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data[None, :]

    def backward(g: np.ndarray):
        gb = g.sum(axis=0) if bias is not None else None
        return g @ weight.data, g.T @ x.data, gb

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return make_output(out, inputs, backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """(n, c, h, w) → (n, c)"""
    _require_4d(x, "global_avg_pool")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g: np.ndarray):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return make_output(out, (x,), backward)


def scale_channels(x: Tensor, gate: Tensor) -> Tensor:
    """按通道缩放: x[n, c, :, :] · gate[n, c]"""
    _require_4d(x, "scale_channels")
    if gate.shape != x.shape[:2]:
        raise ShapeError(f"scale_channels: gate {gate.shape} does not match {x.shape[:2]}")
    out = x.data * gate.data[:, :, None, None]

    def backward(g: np.ndarray):
        return g * gate.data[:, :, None, None], np.sum(g * x.data, axis=(2, 3))

    return make_output(out, (x, gate), backward)


def se_block(x: Tensor, w1: Tensor, w2: Tensor, reduction: int = config.SE_REDUCTION) -> Tensor:
    """
    挤压-激励模块

    流程:
        全局平均池化 → 全连接 c→c/r → ELU → 全连接 c/r→c → sigmoid → 按通道缩放输入

    参数:
        w1: (c/r, c)
        w2: (c, c/r)
        reduction: 压缩比 r，c 必须能被 r 整除
    """
    _require_4d(x, "se_block")
    c = x.shape[1]
    if reduction < 1 or c % reduction:
        raise ShapeError(f"se_block: {c} channels not divisible by reduction ratio {reduction}")
    hidden = c // reduction
    if w1.shape != (hidden, c) or w2.shape != (c, hidden):
        raise ShapeError(f"se_block: expected weights ({hidden}, {c}) and ({c}, {hidden}), got {w1.shape} and {w2.shape}")
    squeezed = global_avg_pool(x)
    gate = sigmoid(dense(elu(dense(squeezed, w1)), w2))
    return scale_channels(x, gate)


# ============================================================
# 合并与逐元素运算
# ============================================================
def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """沿通道拼接，a 的通道在前"""
    _require_4d(a, "concat_channels")
    _require_4d(b, "concat_channels")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise ShapeError(f"concat_channels: cannot concatenate {a.shape} with {b.shape}")
    split = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def backward(g: np.ndarray):
        return g[:, :split], g[:, split:]

    return make_output(out, (a, b), backward)


def _require_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same(a, b, "add")

    def backward(g: np.ndarray):
        return g, g

    return make_output(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same(a, b, "mul")

    def backward(g: np.ndarray):
        return g * b.data, g * a.data

    return make_output(a.data * b.data, (a, b), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    def backward(g: np.ndarray):
        return (g * factor,)

    return make_output(a.data * factor, (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g: np.ndarray):
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_output(np.array(a.data.sum()), (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    count = a.data.size

    def backward(g: np.ndarray):
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return make_output(np.array(a.data.mean()), (a,), backward)
