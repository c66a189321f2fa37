"""
test_acceptance.py - 桌面规模的学习行为（慢速，LFB_RUN_SLOW=1 时运行）

    LFB_RUN_SLOW=1 pytest tests/test_acceptance.py -s

在 64×64 合成体模上真正训练各个变体，检查:
    - lfb 变体能学会心脏体模（验证集前景 Dice ≥ 0.90）
    - 低对比度数据上 lfb 的 Dice / HD / 合理性不差于 fs 和 fs_star
    - 同一周期上 lfb 的验证损失不高于只训练步骤1的基线
    - 默认配置 256×256 单张推理的耗时报告
"""

import numpy as np
import pytest

from lfbnet.commands.evaluate import evaluate_samples, model_predictor
from lfbnet.commands.experiment import experiment_from_dict, load_experiment_data
from lfbnet.commands.train import train_experiment
from lfbnet.model import ModelConfig, build_systems
from lfbnet.training import systems_from_bundle, time_inference

pytestmark = pytest.mark.slow

DESK_MODEL = {"base_channels": 16, "latent_channels": 64, "se_reduction": 8}
LOW_CONTRAST = {"kind": "cardiac", "image_size": [64, 64], "seed": 1, "contrast": 0.3, "noise_sigma": 0.15}
SEEDS = (0, 1, 2)
VARIANTS = ("fs", "fs_star", "lfb")


def _experiment(root, phantom, n, train):
    doc = {
        "variant": "lfb",
        "output_dir": str(root / "runs"),
        "model": DESK_MODEL,
        "train": train,
        "data": {"phantom": phantom, "n": n, "split": [0.7, 0.2, 0.1]},
    }
    return experiment_from_dict(doc, base_dir=str(root))


def _train_and_evaluate(exp, data, out_dir, split):
    outcome = train_experiment(exp, out_dir, data)
    S, F = systems_from_bundle(outcome.bundle)
    report = evaluate_samples(data.splits[split], outcome.bundle, model_predictor(S, F, exp.eval_iterations),
                              data.spacing_mm)
    return outcome, report


def _validation_curve(outcome):
    return {r.cycle: r.val_loss for r in outcome.state.history if np.isfinite(r.val_loss)}


def test_lfb_learns_cardiac_phantoms(tmp_path):
    exp = _experiment(tmp_path, {"kind": "cardiac", "image_size": [64, 64], "seed": 0}, 200,
                      {"max_cycles": 30, "batch_size": 10, "seed": 0})
    data = load_experiment_data(exp)
    assert len(data.splits["train"]) == 140
    outcome, report = _train_and_evaluate(exp, data, str(tmp_path / "lfb"), "val")
    assert outcome.state.cycle <= 30
    assert report.foreground_mean("dice") >= 0.90


@pytest.fixture(scope="module")
def ablation(tmp_path_factory):
    """每个种子训练 fs / fs_star / lfb，同一份低对比度数据"""
    root = tmp_path_factory.mktemp("ablation")
    base = _experiment(root, LOW_CONTRAST, 120, {"max_cycles": 15, "batch_size": 10})
    data = load_experiment_data(base)
    runs = {}
    for seed in SEEDS:
        for variant in VARIANTS:
            exp = base.with_variant(variant, seed=seed)
            runs[variant, seed] = _train_and_evaluate(exp, data, str(root / variant / f"seed{seed}"), "test")
    return runs


def test_feedback_variant_ranks_first_on_low_contrast(ablation):
    wins = 0
    for seed in SEEDS:
        dice = {v: ablation[v, seed][1].foreground_mean("dice") for v in VARIANTS}
        hd = {v: ablation[v, seed][1].foreground_mean("hd") for v in VARIANTS}
        if dice["lfb"] >= max(dice["fs"], dice["fs_star"]) and hd["lfb"] <= min(hd["fs"], hd["fs_star"]):
            wins += 1
    assert wins >= 2

    violations = {v: sum(ablation[v, s][1].violations() for s in SEEDS) for v in ("fs", "lfb")}
    assert violations["lfb"] < violations["fs"]


def test_feedback_variant_converges_lower(ablation):
    wins = 0
    for seed in SEEDS:
        lfb = _validation_curve(ablation["lfb", seed][0])
        fs = _validation_curve(ablation["fs", seed][0])
        final = max(set(lfb) & set(fs))
        if lfb[final] <= fs[final]:
            wins += 1
    assert wins >= 2


def test_default_inference_timing_is_reported():
    S, F = build_systems(ModelConfig(input_size=(256, 256)), seed=0)
    report = time_inference(S, F, iterations=1, repeats=1)
    print(report.line())
    assert np.isfinite(report.seconds) and report.seconds > 0
    assert report.within_bound == (report.seconds <= report.bound)
