"""
storage.py - 原始张量文件读写

文件格式（全部小端，与主机字节序无关）:
    magic   4字节  b"LFBT"
    version u32
    dtype   u8     0 = float64 图像，1 = uint8 标签
    rank    u32
    dims    rank × u64
    payload prod(dims) 个元素

一个样本对应两个文件（图像、标签），由数据集清单配对。
"""

import logging
import os
import struct
from typing import Optional

import numpy as np

from .phantoms import Sample
from ..utils import config
from ..utils.errors import FormatError

logger = logging.getLogger(__name__)

MAGIC = b"LFBT"
DTYPE_F64 = 0
DTYPE_U8 = 1
_NUMPY_DTYPES = {DTYPE_F64: np.dtype("<f8"), DTYPE_U8: np.dtype("<u1")}
_HEADER = struct.Struct("<4sIBI")


def encode_tensor(array: np.ndarray, dtype_code: int) -> bytes:
    if dtype_code not in _NUMPY_DTYPES:
        raise FormatError(f"unknown dtype code {dtype_code}")
    array = np.ascontiguousarray(array, dtype=_NUMPY_DTYPES[dtype_code])
    header = _HEADER.pack(MAGIC, config.SAMPLE_FILE_VERSION, dtype_code, array.ndim)
    dims = struct.pack(f"<{array.ndim}Q", *array.shape)
    return header + dims + array.tobytes(order="C")


def decode_tensor(blob: bytes, expected_dtype: Optional[int] = None, source: str = "<bytes>") -> np.ndarray:
    """
    解码一个张量文件的内容

    异常:
        FormatError: 魔数、版本、数据类型或长度不符
    """
    if len(blob) < _HEADER.size:
        raise FormatError(f"{source}: truncated header ({len(blob)} bytes)")
    magic, version, dtype_code, rank = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != config.SAMPLE_FILE_VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    if dtype_code not in _NUMPY_DTYPES:
        raise FormatError(f"{source}: unknown dtype code {dtype_code}")
    if expected_dtype is not None and dtype_code != expected_dtype:
        raise FormatError(f"{source}: dtype code {dtype_code}, expected {expected_dtype}")
    offset = _HEADER.size
    if len(blob) < offset + 8 * rank:
        raise FormatError(f"{source}: truncated dims (rank {rank})")
    dims = struct.unpack_from(f"<{rank}Q", blob, offset)
    offset += 8 * rank
    dtype = _NUMPY_DTYPES[dtype_code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(blob) - offset != expected:
        raise FormatError(f"{source}: payload is {len(blob) - offset} bytes, dims {dims} need {expected}")
    return np.frombuffer(blob, dtype=dtype, offset=offset).reshape(dims).astype(dtype.newbyteorder("="))


def write_tensor(path: str, array: np.ndarray, dtype_code: int) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(encode_tensor(array, dtype_code))


def read_tensor(path: str, expected_dtype: Optional[int] = None) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read(), expected_dtype, source=path)


def write_sample(sample: Sample, image_path: str, label_path: str) -> None:
    """图像写成float64文件，标签写成uint8文件"""
    write_tensor(image_path, sample.image, DTYPE_F64)
    write_tensor(label_path, sample.label, DTYPE_U8)


def read_sample(image_path: str, label_path: str, sample_id: Optional[str] = None,
                metadata: Optional[dict] = None) -> Sample:
    """
    读取一个样本

    异常:
        FormatError: 文件损坏、数据类型不符，或图像和标签的空间尺寸不一致
    """
    image = read_tensor(image_path, DTYPE_F64)
    label = read_tensor(label_path, DTYPE_U8)
    if image.ndim != 3 or label.ndim != 2 or image.shape[1:] != label.shape:
        raise FormatError(f"image {image.shape} and label {label.shape} do not pair up "
                          f"({image_path}, {label_path})")
    if sample_id is None:
        sample_id = os.path.splitext(os.path.basename(image_path))[0]
    return Sample(sample_id, image, label, dict(metadata or {}))
