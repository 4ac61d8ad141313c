"""Настройка логгеров действий CLI и процесса обучения."""

from __future__ import annotations

import logging
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional

from partmask_hub.infra.settings import settings

_LOGGER: Optional[logging.Logger] = None
_TRAIN_LOGGER: Optional[logging.Logger] = None
LOGGER_NAME = "partmask.actions"
TRAIN_LOGGER_NAME = "partmask.train"
MAX_BYTES = 1_000_000
BACKUP_COUNT = 3
DEFAULT_LEVEL = logging.INFO


def _ensure_log_path(path: Path) -> Path:
    path = path.resolve()
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _rotating_handler(path: Path, fmt: str) -> RotatingFileHandler:
    handler = RotatingFileHandler(
        _ensure_log_path(path),
        maxBytes=MAX_BYTES,
        backupCount=BACKUP_COUNT,
        encoding="utf-8",
    )
    handler.setFormatter(logging.Formatter(fmt))
    return handler


def get_action_logger() -> logging.Logger:
    """Вернуть настроенный логгер действий, создавая его один раз."""
    global _LOGGER
    if _LOGGER is not None:
        return _LOGGER

    logger = logging.getLogger(LOGGER_NAME)
    if not logger.handlers:
        logger.setLevel(DEFAULT_LEVEL)
        logger.addHandler(
            _rotating_handler(Path(settings.get("LOG_PATH")), "%(message)s"),
        )
    logger.propagate = False
    _LOGGER = logger
    return logger


def get_train_logger() -> logging.Logger:
    """Логгер обучения, оценки и проверок (с ротацией)."""
    global _TRAIN_LOGGER
    if _TRAIN_LOGGER is not None:
        return _TRAIN_LOGGER

    logger = logging.getLogger(TRAIN_LOGGER_NAME)
    if not logger.handlers:
        logger.setLevel(DEFAULT_LEVEL)
        logger.addHandler(
            _rotating_handler(
                Path(settings.get("TRAIN_LOG_PATH")),
                "%(asctime)s %(levelname)s %(name)s %(message)s",
            ),
        )
        logger.propagate = False
    _TRAIN_LOGGER = logger
    return logger


def train_child_logger(name: str) -> logging.Logger:
    """Дочерний логгер partmask.train.<name> без собственных обработчиков.

    Файл журнала открывается только при вызове get_train_logger().
    """
    return logging.getLogger(f"{TRAIN_LOGGER_NAME}.{name}")
