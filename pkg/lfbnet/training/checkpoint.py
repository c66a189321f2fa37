"""
checkpoint.py - 检查点读写

功能说明:
    把前向系统和反馈系统的全部参数（以及BatchNorm滑动统计量）、模型配置、训练配置、
    归一化统计量和周期号一起存成一个二进制文件，两个系统"同时"保存。

文件格式（小端）:
    magic    4字节 b"LFBC"
    version  u32
    meta_len u64，随后 meta_len 字节的UTF-8 JSON元数据（键排序、紧凑格式）
    记录 × N:
        name_len u32, name（UTF-8）
        rank     u32, dims rank × u64
        payload  prod(dims) 个 float64

    save → load → save 逐字节一致；记录顺序就是参数构造顺序。

使用例子:
    bundle = bundle_from_systems(S, F, train_config, stats, cycle=12, variant="lfb")
    save_checkpoint(bundle, "runs/lfb/best.lfbc")
    S, F = systems_from_bundle(load_checkpoint("runs/lfb/best.lfbc"))
"""

import json
import logging
import math
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

from .normalization import NormStats
from ..model import FeedbackSystem, ForwardSystem, ModelConfig, build_systems, group_of
from ..utils import config
from ..utils.errors import FormatError

logger = logging.getLogger(__name__)

MAGIC = b"LFBC"


@dataclass
class CheckpointBundle:
    """两个系统的权重 + 重建它们所需的全部配置"""

    model_config: ModelConfig
    train_config: Dict[str, Any]
    norm: NormStats
    cycle: int = 0
    variant: str = "lfb"
    tensors: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    version: int = config.CHECKPOINT_VERSION

    @property
    def has_feedback(self) -> bool:
        return any(group_of(name).startswith("F_") for name in self.tensors)

    def metadata(self) -> Dict[str, Any]:
        return {
            "version": self.version,
            "model": self.model_config.to_dict(),
            "train": self.train_config,
            "norm": {"mean": self.norm.mean, "std": self.norm.std},
            "cycle": self.cycle,
            "variant": self.variant,
            "records": len(self.tensors),
        }


def _snapshot(system) -> "OrderedDict[str, np.ndarray]":
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, p in system.parameters().items():
        out[name] = np.array(p.data, dtype=np.float64, copy=True)
    for name, value in system.buffers().items():
        out[name] = np.array(value, dtype=np.float64, copy=True)
    return out


def bundle_from_systems(S: ForwardSystem, F: Optional[FeedbackSystem], train_config: Dict[str, Any],
                        norm: NormStats, cycle: int = 0, variant: str = "lfb") -> CheckpointBundle:
    """拍下当前权重的快照；F 为 None 时（fs / fs_star）不含反馈系统"""
    tensors = _snapshot(S)
    if F is not None:
        tensors.update(_snapshot(F))
    return CheckpointBundle(S.config, dict(train_config), norm, cycle, variant, tensors)


def load_into(system, tensors: Dict[str, np.ndarray]) -> None:
    """
    把快照写回一个已构建的系统

    异常:
        FormatError: 缺少某个参数，或形状不一致
    """
    for name, p in system.parameters().items():
        if name not in tensors:
            raise FormatError(f"checkpoint has no tensor {name!r}")
        value = tensors[name]
        if value.shape != p.shape:
            raise FormatError(f"tensor {name!r}: checkpoint shape {value.shape} vs model {p.shape}")
        p.data = np.array(value, dtype=np.float64, copy=True)
        p.grad = None
    for name in system.buffers():
        if name not in tensors:
            raise FormatError(f"checkpoint has no buffer {name!r}")
        system.groups[group_of(name)].load_buffer(name, tensors[name])


def systems_from_bundle(bundle: CheckpointBundle) -> Tuple[ForwardSystem, Optional[FeedbackSystem]]:
    """按检查点里的模型配置重建 S（和 F），并载入权重"""
    S, F = build_systems(bundle.model_config, seed=0)
    load_into(S, bundle.tensors)
    if not bundle.has_feedback:
        return S, None
    load_into(F, bundle.tensors)
    return S, F


# ============================================================
# 编解码
# ============================================================
def encode_checkpoint(bundle: CheckpointBundle) -> bytes:
    meta = json.dumps(bundle.metadata(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", bundle.version), struct.pack("<Q", len(meta)), meta]
    for name, value in bundle.tensors.items():
        raw_name = name.encode("utf-8")
        value = np.ascontiguousarray(value, dtype="<f8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<I", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}Q", *value.shape))
        parts.append(value.tobytes(order="C"))
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes, source: str):
        self.blob = blob
        self.offset = 0
        self.source = source

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.blob):
            raise FormatError(f"{self.source}: truncated while reading {what} "
                              f"(need {n} bytes at offset {self.offset}, file has {len(self.blob)})")
        chunk = self.blob[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(blob: bytes, source: str = "<bytes>") -> CheckpointBundle:
    """
    解析检查点

    异常:
        FormatError: 魔数、版本、长度或元数据不符
    """
    reader = _Reader(blob, source)
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = reader.unpack("<I", "version")
    if version != config.CHECKPOINT_VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version} "
                          f"(this build reads version {config.CHECKPOINT_VERSION})")
    (meta_len,) = reader.unpack("<Q", "metadata length")
    try:
        meta = json.loads(reader.take(meta_len, "metadata").decode("utf-8"))
        model_cfg = ModelConfig.from_dict(meta["model"])
        norm = NormStats(float(meta["norm"]["mean"]), float(meta["norm"]["std"]))
        count = int(meta["records"])
    except (ValueError, KeyError, TypeError) as e:
        raise FormatError(f"{source}: corrupt metadata: {e}") from e

    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        (name_len,) = reader.unpack("<I", "record name length")
        name = reader.take(name_len, "record name").decode("utf-8", errors="replace")
        (rank,) = reader.unpack("<I", f"rank of {name}")
        dims = reader.unpack(f"<{rank}Q", f"dims of {name}")
        size = math.prod(int(d) for d in dims)
        remaining = len(blob) - reader.offset
        if 8 * size > remaining:
            raise FormatError(f"{source}: truncated payload of {name}: dims {tuple(dims)} need {8 * size} bytes, "
                              f"{remaining} left")
        payload = reader.take(8 * size, f"payload of {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
    if reader.offset != len(blob):
        raise FormatError(f"{source}: {len(blob) - reader.offset} trailing bytes after {count} records")

    return CheckpointBundle(
        model_config=model_cfg,
        train_config=meta.get("train", {}),
        norm=norm,
        cycle=int(meta.get("cycle", 0)),
        variant=str(meta.get("variant", "lfb")),
        tensors=tensors,
        version=version,
    )


def save_checkpoint(bundle: CheckpointBundle, path: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    blob = encode_checkpoint(bundle)
    with open(path, "wb") as fh:
        fh.write(blob)
    logger.info(f"📦 checkpoint saved: {path} ({len(bundle.tensors)} tensors, cycle {bundle.cycle})")


def load_checkpoint(path: str) -> CheckpointBundle:
    if not os.path.exists(path):
        raise FormatError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        bundle = decode_checkpoint(fh.read(), source=path)
    logger.info(f"📦 checkpoint loaded: {path} (variant {bundle.variant}, cycle {bundle.cycle})")
    return bundle
