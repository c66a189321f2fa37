"""
gradcheck.py - 有限差分梯度检查
"""

from typing import Callable, Sequence

import numpy as np

from lfbnet.tensor import Tape, Tensor

EPS = 1e-4


def numeric_grad(fn: Callable[[], Tensor], tensor: Tensor, eps: float = EPS) -> np.ndarray:
    """中心差分: (f(x+ε) − f(x−ε)) / 2ε，逐元素"""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        plus = fn().item()
        flat[i] = old - eps
        minus = fn().item()
        flat[i] = old
        grad.reshape(-1)[i] = (plus - minus) / (2 * eps)
    return grad


def tape_grads(fn: Callable[[], Tensor], tensors: Sequence[Tensor]):
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)) + np.max(np.abs(b))))


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor], tol: float = 1e-5) -> None:
    """fn 必须是确定性的标量函数；tensors 要求 requires_grad=True"""
    analytic = tape_grads(fn, tensors)
    for t, g in zip(tensors, analytic):
        numeric = numeric_grad(fn, t)
        err = relative_error(g, numeric)
        assert err < tol, f"gradient mismatch for {t!r}: relative error {err:.3e}"
