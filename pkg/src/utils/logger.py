import logging
import sys
from typing import Optional, Any

_config: Optional[Any] = None
_console_level: int = logging.INFO
_handlers: list[logging.Handler] = []

def _get_config() -> Any:
    global _config
    if _config is None:
        from utils.config import config
        _config = config
    return _config

class ColoredFormatter(logging.Formatter):

    COLORS: dict[str, str] = {
        'DEBUG': '\033[36m',
        'INFO': '\033[32m',
        'WARNING': '\033[33m',
        'ERROR': '\033[31m',
        'CRITICAL': '\033[35m',
        'RESET': '\033[0m',
    }

    SYMBOLS: dict[str, str] = {
        'DEBUG': '·',
        'INFO': '✓',
        'WARNING': '⚠',
        'ERROR': '✗',
        'CRITICAL': '‼',
    }

    def __init__(self, fmt: str, datefmt: str, use_color: bool = True) -> None:
        super().__init__(fmt=fmt, datefmt=datefmt)
        self.use_color = use_color

    def format(self, record: logging.LogRecord) -> str:
        symbol: str = self.SYMBOLS.get(record.levelname, '')
        color: str = self.COLORS.get(record.levelname, self.COLORS['RESET']) if self.use_color else ''
        reset: str = self.COLORS['RESET'] if self.use_color else ''

        original_msg: Any = record.msg
        record.msg = f"{color}{symbol} {original_msg}{reset}"
        try:
            return super().format(record)
        finally:
            record.msg = original_msg

def _build_handlers() -> list[logging.Handler]:
    config: Any = _get_config()
    handlers: list[logging.Handler] = []

    # stdout is reserved for CLI payloads (JSON / CSV)
    console_handler: logging.StreamHandler[Any] = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(_console_level)
    console_handler.setFormatter(ColoredFormatter(
        fmt='%(asctime)s - %(name)s - %(message)s',
        datefmt='%H:%M:%S',
        use_color=sys.stderr.isatty(),
    ))
    handlers.append(console_handler)

    if config.LOG_FILE:
        try:
            full_log_path = config.get_project_root() / config.LOG_FILE
            full_log_path.parent.mkdir(parents=True, exist_ok=True)
            file_handler: logging.FileHandler = logging.FileHandler(full_log_path, mode='a')
            file_handler.setLevel(logging.DEBUG)
            file_handler.setFormatter(logging.Formatter(config.LOG_FORMAT))
            handlers.append(file_handler)
        except OSError as e:
            console_handler.handle(logging.makeLogRecord({
                "msg": f"Could not set up file logging: {e}",
                "levelname": "WARNING",
                "levelno": logging.WARNING,
            }))

    return handlers

def setup_logger(name: str, level: Optional[str] = None) -> logging.Logger:
    global _handlers
    config: Any = _get_config()

    log_level: str = level or config.LOG_LEVEL
    logger: logging.Logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, log_level.upper(), logging.INFO))
    logger.propagate = False

    if logger.handlers:
        return logger

    if not _handlers:
        _handlers = _build_handlers()
    for handler in _handlers:
        logger.addHandler(handler)

    return logger

def set_console_level(level: str) -> None:
    global _console_level
    _console_level = getattr(logging, level.upper(), logging.INFO)
    for handler in _handlers:
        if isinstance(handler, logging.StreamHandler) and not isinstance(handler, logging.FileHandler):
            handler.setLevel(_console_level)

def get_logger(name: str) -> logging.Logger:
    return setup_logger(name)
