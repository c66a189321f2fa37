"""
experiment.py - 实验文档与变体

实验文档是YAML（safe_load），所有字段都可省略:

    variant: lfb                 # fs | fs_star | lfb | lfb_train_only
    output_dir: runs/lfb
    model:
      merge: concat
      base_channels: 32
    train:
      max_cycles: 20
      seed: 0
    data:
      manifest: data/cardiac     # 清单文件或数据集目录（相对实验文档）
      # 或者直接给体模规格，在内存中生成
      phantom: {kind: cardiac, image_size: [64, 64], seed: 7}
      n: 100
      split: [0.7, 0.2, 0.1]

变体约定:
    fs             - 带SE，只做步骤1
    fs_star        - 不带SE，只做步骤1
    lfb            - 完整三步训练，测试时用反馈环
    lfb_train_only - 完整三步训练，测试（和模型选择）时不用反馈（iterations=0）

model 里没写 input_size / n_classes 时，按数据自动确定。
"""

import copy
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from ..data import PhantomSpec, Sample, generate, load_dataset, split, stack
from ..model import ModelConfig
from ..training import NormStats, TrainConfig, TrainingData, normalize
from ..utils import config
from ..utils.errors import ConfigError, DataError, UsageError

logger = logging.getLogger(__name__)

VARIANTS = ("fs", "fs_star", "lfb", "lfb_train_only")
FEEDBACK_VARIANTS = ("lfb", "lfb_train_only")


@dataclass
class DataSection:
    manifest: Optional[str] = None
    phantom: Optional[PhantomSpec] = None
    n: int = 100
    split: Tuple[float, ...] = (0.7, 0.2, 0.1)


@dataclass
class ExperimentConfig:
    variant: str = "lfb"
    output_dir: str = config.OUTPUT_DIR
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataSection = field(default_factory=DataSection)
    # model 段里显式给出的键；没给的按数据推断
    explicit_model_keys: Tuple[str, ...] = ()

    @property
    def feedback(self) -> bool:
        return self.variant in FEEDBACK_VARIANTS

    @property
    def eval_iterations(self) -> int:
        return self.train.test_feedback_iterations if self.variant == "lfb" else 0

    def with_variant(self, variant: str, merge: Optional[str] = None, seed: Optional[int] = None) -> "ExperimentConfig":
        """同一份实验文档派生出一个变体"""
        check_variant(variant)
        exp = copy.deepcopy(self)
        exp.variant = variant
        exp.model.use_se = variant != "fs_star"
        if merge is not None:
            exp.model.merge = merge
        if seed is not None:
            exp.train.seed = seed
        if variant == "lfb_train_only":
            exp.train.test_feedback_iterations = 0
        return exp


def check_variant(variant: str) -> None:
    if variant not in VARIANTS:
        raise UsageError(f"unknown variant {variant!r}, expected one of {VARIANTS}")


def _section(doc: Dict[str, Any], key: str) -> Dict[str, Any]:
    value = doc.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"experiment section {key!r} must be a mapping")
    return dict(value)


def experiment_from_dict(doc: Dict[str, Any], base_dir: str = ".") -> ExperimentConfig:
    unknown = set(doc) - {"variant", "output_dir", "model", "train", "data"}
    if unknown:
        raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
    model_doc = _section(doc, "model")
    data_doc = _section(doc, "data")
    unknown = set(data_doc) - {"manifest", "phantom", "n", "split"}
    if unknown:
        raise ConfigError(f"unknown data keys: {sorted(unknown)}")

    data = DataSection(
        manifest=os.path.join(base_dir, data_doc["manifest"]) if data_doc.get("manifest") else None,
        phantom=PhantomSpec.from_dict(data_doc["phantom"]) if data_doc.get("phantom") is not None else None,
        n=int(data_doc.get("n", 100)),
        split=tuple(float(f) for f in data_doc.get("split", (0.7, 0.2, 0.1))),
    )
    output_dir = doc.get("output_dir") or config.OUTPUT_DIR
    exp = ExperimentConfig(
        output_dir=os.path.join(base_dir, output_dir) if not os.path.isabs(output_dir) else output_dir,
        model=ModelConfig.from_dict(model_doc),
        train=TrainConfig.from_dict(_section(doc, "train")),
        data=data,
        explicit_model_keys=tuple(sorted(model_doc)),
    )
    return exp.with_variant(str(doc.get("variant", "lfb")))


@contextmanager
def config_errors(source: str) -> Iterator[None]:
    """YAML语法错误和字段类型/取值错误统一报告为 ConfigError"""
    try:
        yield
    except ConfigError:
        raise
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: malformed YAML ({exc})") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: bad field value ({exc})") from exc


def load_experiment(path: str) -> ExperimentConfig:
    """读取YAML实验文档"""
    if not os.path.exists(path):
        raise ConfigError(f"experiment config not found: {path}")
    with config_errors(path):
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: experiment document must be a mapping")
        exp = experiment_from_dict(doc, base_dir=os.path.dirname(os.path.abspath(path)))
        exp.train.validate()
        if exp.data.phantom is not None:
            exp.data.phantom.validate()
    return exp


def load_phantom_spec(path: Optional[str]) -> PhantomSpec:
    if path is None:
        return PhantomSpec()
    with config_errors(path):
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: phantom spec must be a mapping")
        return PhantomSpec.from_dict(doc).validate()


# ============================================================
# 数据准备
# ============================================================
@dataclass
class ExperimentData:
    splits: Dict[str, List[Sample]]
    spacing_mm: float
    spec_hash: str


def load_experiment_data(exp: ExperimentConfig) -> ExperimentData:
    """
    按实验文档得到各划分的样本

    异常:
        DataError: 没有数据来源，或缺少 train / val 划分
    """
    if exp.data.manifest:
        manifest = load_dataset(exp.data.manifest)
        splits = {name: manifest.samples(name) for name in manifest.split_names()}
        data = ExperimentData(splits, manifest.spacing_mm, manifest.spec_hash)
    elif exp.data.phantom is not None:
        samples = generate(exp.data.phantom, exp.data.n)
        manifest = split(samples, exp.data.split, exp.data.phantom.seed)
        by_id = {s.sample_id: s for s in samples}
        splits = {name: [by_id[e.sample_id] for e in manifest.entries_for(name)] for name in manifest.split_names()}
        data = ExperimentData(splits, exp.data.phantom.spacing_mm, manifest.spec_hash)
    else:
        raise DataError("experiment has no data source (set data.manifest or data.phantom)")
    for required in ("train", "val"):
        if not data.splits.get(required):
            raise DataError(f"dataset has no {required!r} split")
    return data


def resolve_model(exp: ExperimentConfig, samples: Sequence[Sample]) -> ModelConfig:
    """补全 input_size / n_classes，并检查与数据是否一致"""
    model = copy.deepcopy(exp.model)
    image_size = tuple(samples[0].label.shape)
    label_max = int(max(s.label.max() for s in samples))
    if "input_size" not in exp.explicit_model_keys:
        model.input_size = image_size
    if "n_classes" not in exp.explicit_model_keys and model.head == "softmax":
        model.n_classes = max(2, label_max + 1)
    with config_errors("model section"):
        model.validate()
    if tuple(model.input_size) != image_size:
        raise ConfigError(f"model input size {tuple(model.input_size)} does not match data {image_size}")
    if label_max >= model.label_classes:
        raise ConfigError(f"labels reach class {label_max} but the model has {model.label_classes} label classes")
    return model


def training_data(samples: Sequence[Sample], norm: NormStats) -> TrainingData:
    x, y, ids = stack(samples)
    return TrainingData(normalize(x, norm), y, ids)


def raw_images(samples: Sequence[Sample]) -> np.ndarray:
    return stack(samples)[0]


def parse_list(text: str, cast=str) -> List:
    """解析逗号分隔的命令行参数"""
    items = [t.strip() for t in text.split(",") if t.strip()]
    try:
        return [cast(t) for t in items]
    except ValueError as e:
        raise UsageError(f"cannot parse {text!r}: {e}") from e
