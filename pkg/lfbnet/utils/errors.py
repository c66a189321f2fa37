"""
errors.py - 异常定义

所有子模块"拒绝"非法输入时抛出的异常都在这里定义。
它们同时继承内置的ValueError（除UsageError外），调用方可以按需粗粒度捕获。
"""


class LFBError(Exception):
    """lfbnet所有异常的基类"""


class ShapeError(LFBError, ValueError):
    """张量维度不匹配"""


class ConfigError(LFBError, ValueError):
    """配置非法（模型、训练、体模或实验文档）"""


class FormatError(LFBError, ValueError):
    """文件格式错误：魔数、版本、长度或数据类型不符"""


class DataError(LFBError, ValueError):
    """数据集问题：空数据、划分重叠、常数图像等"""


class UsageError(LFBError):
    """命令行用法错误，退出码为2"""
