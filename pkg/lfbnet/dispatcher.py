"""
dispatcher.py - 子命令分发器

功能说明:
    把解析好的命令行参数路由到对应子命令的 run(args)，并把异常映射成退出码:
    - 0  成功
    - 2  用法错误（UsageError）
    - 1  运行失败（其他 LFBError、文件读写错误）

主要数据流:
    argparse.Namespace → Dispatcher.dispatch() → handlers[args.command](args)
         ↓
    退出码

核心特性:
    - 支持自定义处理器注册（register_handler），测试里可以替换子命令
    - 未知的异常照常抛出，不被吞掉
"""

import logging
from argparse import Namespace
from typing import Callable, Dict, Optional

from .commands import COMMANDS
from .utils.errors import LFBError, UsageError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

Handler = Callable[[Namespace], int]


class Dispatcher:
    """
    子命令分发器

    例子:
        dispatcher = Dispatcher()
        code = dispatcher.dispatch(parser.parse_args(["eval", "--checkpoint", "best.lfbc", "--data", "data"]))
    """

    def __init__(self):
        self.handlers: Dict[str, Handler] = {name: module.run for name, module in COMMANDS.items()}

    def register_handler(self, command: str, handler: Handler) -> None:
        self.handlers[command] = handler
        logger.debug(f"Registered handler for: {command}")

    def dispatch(self, args: Namespace) -> int:
        command = getattr(args, "command", None)
        handler = self.handlers.get(command)
        if handler is None:
            logger.error(f"❌ unknown command: {command}")
            return EXIT_USAGE

        try:
            code = handler(args)
            return EXIT_OK if code is None else int(code)
        except UsageError as e:
            logger.error(f"❌ {command}: {e}")
            return EXIT_USAGE
        except (LFBError, OSError) as e:
            logger.error(f"❌ {command} failed: {e}")
            logger.debug("traceback", exc_info=True)
            return EXIT_FAILURE


_dispatcher: Optional[Dispatcher] = None


def get_dispatcher() -> Dispatcher:
    """获取或创建全局分发器实例"""
    global _dispatcher
    if _dispatcher is None:
        _dispatcher = Dispatcher()
    return _dispatcher
