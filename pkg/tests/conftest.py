"""
conftest.py - 共享测试夹具

小模型（16×16 输入，base 8，潜空间 16 通道）让整套测试几秒内跑完。
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from lfbnet.data import PhantomSpec, generate  # noqa: E402
from lfbnet.model import ModelConfig, build_systems  # noqa: E402
from lfbnet.training import TrainConfig, TrainingData, compute_stats, normalize  # noqa: E402


def tiny_config(**overrides) -> ModelConfig:
    params = dict(input_size=(16, 16), n_classes=4, base_channels=8, latent_channels=16, se_reduction=8)
    params.update(overrides)
    return ModelConfig(**params)


@pytest.fixture
def tiny_cfg() -> ModelConfig:
    return tiny_config()


@pytest.fixture
def systems(tiny_cfg):
    return build_systems(tiny_cfg, seed=0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def cardiac_spec() -> PhantomSpec:
    return PhantomSpec(kind="cardiac", image_size=(32, 32), seed=3, noise_sigma=0.02)


@pytest.fixture
def data_cfg() -> ModelConfig:
    """与 32×32 体模数据配套的小模型"""
    return tiny_config(input_size=(32, 32))


@pytest.fixture
def tiny_data(cardiac_spec):
    """(train, val, norm)：6 个训练样本、3 个验证样本"""
    samples = generate(cardiac_spec, 9)
    x = np.stack([s.image for s in samples])
    y = np.stack([s.label for s in samples])
    ids = [s.sample_id for s in samples]
    norm = compute_stats(x[:6])
    xn = normalize(x, norm)
    return TrainingData(xn[:6], y[:6], ids[:6]), TrainingData(xn[6:], y[6:], ids[6:]), norm


@pytest.fixture
def fast_train() -> TrainConfig:
    return TrainConfig(batch_size=3, max_cycles=2, early_stop_patience=5, seed=0)


# ============================================================
# 慢速验收测试（LFB_RUN_SLOW=1 时才运行）
# ============================================================
def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale training runs, enabled with LFB_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if os.getenv("LFB_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set LFB_RUN_SLOW=1 to run desk-scale training checks")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
