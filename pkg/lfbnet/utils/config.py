"""
config.py - 配置模块

功能说明:
    这个模块集中管理lfbnet的所有配置参数。
    包括日志、线程、训练超参数、网络结构常数以及评估阈值等配置。

配置方式:
    1. 优先级：环境变量 > 默认值
    2. 所有配置都可以通过环境变量覆盖
    3. 默认值在代码中定义，适合桌面规模的实验
    4. 实验文档（YAML）里的字段会再覆盖这里的默认值

配置分类:
    - SYSTEM: 系统级配置（调试、日志级别、线程数、输出目录）
    - TRAINING: 训练超参数（学习率、批大小、早停耐心值等）
    - NETWORK: 网络结构常数（SE压缩比、BatchNorm参数）
    - LOSS: 损失函数常数（Dice平滑项、概率截断）
    - EVALUATION: 评估阈值（显著性水平、Dice/HD阈值）

环境变量参考:
    LFB_LOG_LEVEL: 日志级别（默认 INFO）
    LFB_DEBUG: 调试模式（默认 False）
    LFB_NUM_THREADS: 评估时并行线程数（默认 1）
    LFB_OUTPUT_DIR: 输出目录（默认 当前工作目录）
    LFB_LEARNING_RATE: Adam学习率（默认 1e-3）
    LFB_BATCH_SIZE: 批大小（默认 10）
    LFB_EARLY_STOP: 早停耐心值，单位为训练周期（默认 100）
    LFB_MAX_CYCLES: 最大训练周期数（默认 200）
    LFB_TEST_ITERATIONS: 测试时反馈迭代次数（默认 1）
    LFB_SE_REDUCTION: SE模块压缩比（默认 8）
    LFB_SIGNIFICANCE: Wilcoxon显著性水平（默认 0.05）
    LFB_INFER_BOUND: bench 子命令的单图推理耗时上限（默认 0.25 秒）

使用例子:
    # Python代码中使用配置
    from lfbnet.utils import config

    print(config.LEARNING_RATE)  # 输出: 0.001
    print(config.NUM_THREADS)    # 输出: 1

    # 命令行设置环境变量
    export LFB_NUM_THREADS=4
    export LFB_LOG_LEVEL=DEBUG
    python -m lfbnet eval --checkpoint best.lfbc --data manifest.txt
"""

import os

# ============================================================
# 系统级配置
# ============================================================
# 调试模式开关
# True = 启用详细的调试输出
DEBUG = os.getenv("LFB_DEBUG", "False").lower() == "true"

# 日志级别
# 支持的级别: DEBUG, INFO, WARNING, ERROR, CRITICAL
LOG_LEVEL = os.getenv("LFB_LOG_LEVEL", "INFO")

# 评估阶段按样本并行的线程数
# 训练始终是单线程顺序执行（每次只有一条计算记录带）
NUM_THREADS = max(1, int(os.getenv("LFB_NUM_THREADS", "1")))

# 输出目录（检查点、报告、损失曲线）
OUTPUT_DIR = os.getenv("LFB_OUTPUT_DIR", os.getcwd())

# ============================================================
# 训练超参数
# ============================================================
# Adam优化器学习率
LEARNING_RATE = float(os.getenv("LFB_LEARNING_RATE", "1e-3"))

# Adam的一阶/二阶矩衰减率和数值稳定项
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# 批大小
BATCH_SIZE = int(os.getenv("LFB_BATCH_SIZE", "10"))

# 早停：验证损失连续多少个周期没有改进就停止
EARLY_STOP_PATIENCE = int(os.getenv("LFB_EARLY_STOP", "100"))

# 最大训练周期数（一个周期 = 步骤1 + 步骤2 + 步骤3 各一轮）
MAX_CYCLES = int(os.getenv("LFB_MAX_CYCLES", "200"))

# 测试（以及模型选择）时的反馈迭代次数
TEST_FEEDBACK_ITERATIONS = int(os.getenv("LFB_TEST_ITERATIONS", "1"))

# ============================================================
# 网络结构常数
# ============================================================
# 前向系统SE模块的通道压缩比
SE_REDUCTION = int(os.getenv("LFB_SE_REDUCTION", "8"))

# BatchNorm的数值稳定项和滑动平均动量
# running = momentum * running + (1 - momentum) * batch
BN_EPS = 1e-5
BN_MOMENTUM = 0.9

# ============================================================
# 损失函数常数
# ============================================================
# Dice损失分子分母的平滑项
DICE_SMOOTH = 1e-6

# 交叉熵中概率的截断下限，上限为 1 - PROB_CLAMP
PROB_CLAMP = 1e-12

# ============================================================
# 评估配置
# ============================================================
# p值小于该水平认为差异显著
SIGNIFICANCE_LEVEL = float(os.getenv("LFB_SIGNIFICANCE", "0.05"))

# 最差情况分析的默认阈值（Dice低于 / HD高于）
DICE_THRESHOLD = 0.88
HD_THRESHOLD_MM = 6.5

# 单张图像推理耗时的上限（秒，单线程）和作为对照的参考耗时
INFERENCE_TIME_BOUND = float(os.getenv("LFB_INFER_BOUND", "0.25"))
INFERENCE_REFERENCE_SECONDS = 0.025

# 精确Wilcoxon检验的最大样本数，超过后使用正态近似
WILCOXON_EXACT_MAX_N = 12

# 文件格式版本
CHECKPOINT_VERSION = 1
SAMPLE_FILE_VERSION = 1
