"""
manifest.py - 数据集清单与划分

清单文件（按行的文本，路径相对清单所在目录）:
    # lfbnet-manifest 1
    # spec_hash 3f2a9c0d11e4b7a2
    # spacing_mm 1.0
    # stats - -
    train<TAB>images/cardiac-7-00000.lfbt<TAB>labels/cardiac-7-00000.lfbt<TAB>7
    ...

    每条记录: 划分标签、图像路径、标签路径、种子
    stats 行是全局统计量的占位（均值 标准差，"-" 表示未计算）；
    训练时始终用训练划分重新计算统计量。

使用例子:
    manifest = split(samples, (0.7, 0.2, 0.1), seed=0)
    path = write_dataset(samples, manifest, "data/cardiac")
    train = load_dataset(path).samples("train")
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .phantoms import Sample
from .storage import read_sample, write_sample
from ..utils.errors import ConfigError, DataError, FormatError

logger = logging.getLogger(__name__)

HEADER = "# lfbnet-manifest 1"
MANIFEST_NAME = "manifest.txt"
SPLIT_TAGS = {2: ("train", "test"), 3: ("train", "val", "test")}


@dataclass
class ManifestEntry:
    split: str
    image_path: str
    label_path: str
    seed: int

    @property
    def sample_id(self) -> str:
        return os.path.splitext(os.path.basename(self.image_path))[0]


@dataclass
class DatasetManifest:
    """数据集描述：样本文件路径 + 划分标签 + 规格哈希"""

    entries: List[ManifestEntry] = field(default_factory=list)
    spec_hash: str = "-"
    spacing_mm: float = 1.0
    stats: Optional[Tuple[float, float]] = None
    root: str = "."

    def split_names(self) -> List[str]:
        seen: List[str] = []
        for e in self.entries:
            if e.split not in seen:
                seen.append(e.split)
        return seen

    def entries_for(self, split: str) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def sizes(self) -> Dict[str, int]:
        return {name: len(self.entries_for(name)) for name in self.split_names()}

    def check_disjoint(self) -> None:
        owner: Dict[str, str] = {}
        for e in self.entries:
            if e.image_path in owner:
                raise DataError(f"sample {e.image_path} appears more than once ({owner[e.image_path]}, {e.split})")
            owner[e.image_path] = e.split

    def samples(self, split: str) -> List[Sample]:
        """读取一个划分的全部样本"""
        entries = self.entries_for(split)
        if not entries:
            raise DataError(f"split {split!r} is empty or missing (available: {self.split_names()})")
        out = []
        for e in entries:
            out.append(read_sample(
                os.path.join(self.root, e.image_path),
                os.path.join(self.root, e.label_path),
                sample_id=e.sample_id,
                metadata={"seed": e.seed, "spec_hash": self.spec_hash, "split": e.split},
            ))
        return out


def split(samples: Sequence[Sample], fractions: Sequence[float], seed: int) -> DatasetManifest:
    """
    确定性的随机划分

    参数:
        fractions: 2个（train, test）或3个（train, val, test）比例，和为1
        seed: 打乱顺序的种子

    说明:
        前面各划分的大小取 round(f·n)，余数归最后一个划分。

    异常:
        ConfigError: 比例个数不对、为负或和不为1
        DataError: 某个划分为空
    """
    fractions = [float(f) for f in fractions]
    if len(fractions) not in SPLIT_TAGS:
        raise ConfigError(f"expected 2 or 3 split fractions, got {len(fractions)}")
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be non-negative and sum to 1, got {fractions}")
    n = len(samples)
    sizes = [int(round(f * n)) for f in fractions[:-1]]
    sizes.append(n - sum(sizes))
    tags = SPLIT_TAGS[len(fractions)]
    if any(s <= 0 for s in sizes):
        raise DataError(f"split {dict(zip(tags, sizes))} of {n} samples leaves an empty split")

    order = np.random.default_rng(seed).permutation(n)
    manifest = DatasetManifest(
        spec_hash=str(samples[0].metadata.get("spec_hash", "-")),
    )
    start = 0
    for tag, size in zip(tags, sizes):
        for index in sorted(order[start:start + size]):
            sample = samples[index]
            manifest.entries.append(ManifestEntry(
                split=tag,
                image_path=f"images/{sample.sample_id}.lfbt",
                label_path=f"labels/{sample.sample_id}.lfbt",
                seed=int(sample.metadata.get("seed", seed)),
            ))
        start += size
    manifest.check_disjoint()
    return manifest


def write_manifest(manifest: DatasetManifest, path: str) -> None:
    mean, std = manifest.stats if manifest.stats else ("-", "-")
    lines = [
        HEADER,
        f"# spec_hash {manifest.spec_hash}",
        f"# spacing_mm {manifest.spacing_mm!r}",
        f"# stats {mean} {std}",
    ]
    lines += [f"{e.split}\t{e.image_path}\t{e.label_path}\t{e.seed}" for e in manifest.entries]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path: str) -> DatasetManifest:
    """
    读取清单文件

    异常:
        FormatError: 文件头或记录格式不对
        DataError: 同一个样本出现在多个划分里
    """
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines or lines[0] != HEADER:
        raise FormatError(f"{path}: not an lfbnet manifest (missing {HEADER!r} header)")
    manifest = DatasetManifest(root=os.path.dirname(os.path.abspath(path)))
    for number, line in enumerate(lines[1:], start=2):
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(" ")
            if key == "spec_hash":
                manifest.spec_hash = value
            elif key == "spacing_mm":
                manifest.spacing_mm = float(value)
            elif key == "stats" and "-" not in value.split():
                mean, std = value.split()
                manifest.stats = (float(mean), float(std))
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise FormatError(f"{path}:{number}: expected 4 tab-separated fields, got {len(parts)}")
        tag, image_path, label_path, seed = parts
        manifest.entries.append(ManifestEntry(tag, image_path, label_path, int(seed)))
    manifest.check_disjoint()
    return manifest


def write_dataset(samples: Sequence[Sample], manifest: DatasetManifest, out_dir: str,
                  spacing_mm: float = 1.0) -> str:
    """写出全部样本文件和清单，返回清单路径"""
    by_id = {s.sample_id: s for s in samples}
    manifest.root = out_dir
    manifest.spacing_mm = spacing_mm
    os.makedirs(out_dir, exist_ok=True)
    for e in manifest.entries:
        write_sample(by_id[e.sample_id], os.path.join(out_dir, e.image_path), os.path.join(out_dir, e.label_path))
    path = os.path.join(out_dir, MANIFEST_NAME)
    write_manifest(manifest, path)
    logger.info(f"💾 dataset written: {path} {manifest.sizes()}")
    return path


def load_dataset(path: str) -> DatasetManifest:
    """清单路径或数据集目录都可以"""
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    if not os.path.exists(path):
        raise DataError(f"dataset manifest not found: {path}")
    return read_manifest(path)


def stack(samples: Sequence[Sample]) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """
    把样本堆成批

    返回:
        (x (n,1,H,W) float64, y (n,H,W) uint8, 样本id列表)
    """
    if not samples:
        raise DataError("cannot stack an empty sample list")
    shapes = {s.image.shape for s in samples}
    if len(shapes) != 1:
        raise DataError(f"samples have mixed image shapes: {sorted(shapes)}")
    x = np.stack([s.image for s in samples]).astype(np.float64)
    y = np.stack([s.label for s in samples]).astype(np.uint8)
    return x, y, [s.sample_id for s in samples]
