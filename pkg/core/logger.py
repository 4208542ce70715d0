"""
Enhanced Logging System
=======================
Provides colored console output and structured file logging

Features:
- Color-coded log levels
- Rotating file handlers
- JSON structured logging
- Metrics tracking for pipeline stages (timings, training MAP, losses)
"""

import logging
import logging.handlers
import json
from pathlib import Path
from datetime import datetime, timezone
from typing import Dict, Optional, Union
import sys


class ColoredFormatter(logging.Formatter):
    """Custom formatter with colored output for console"""

    COLORS = {
        'DEBUG': '\033[36m',      # Cyan
        'INFO': '\033[32m',       # Green
        'WARNING': '\033[33m',    # Yellow
        'ERROR': '\033[31m',      # Red
        'CRITICAL': '\033[35m',   # Magenta
    }
    RESET = '\033[0m'

    def __init__(self, fmt=None, datefmt=None, use_color: bool = True):
        super().__init__(fmt, datefmt)
        self.use_color = use_color

    def format(self, record):
        if not self.use_color or record.levelname not in self.COLORS:
            return super().format(record)
        # copy so the file handlers never see escape codes
        colored = logging.makeLogRecord(record.__dict__)
        colored.levelname = f"{self.COLORS[record.levelname]}{record.levelname}{self.RESET}"
        return super().format(colored)


class JSONFormatter(logging.Formatter):
    """JSON formatter for structured logging"""

    def format(self, record):
        log_data = {
            'timestamp': datetime.now(timezone.utc).isoformat(),
            'level': record.levelname,
            'logger': record.name,
            'module': record.module,
            'function': record.funcName,
            'line': record.lineno,
            'message': record.getMessage(),
        }

        if hasattr(record, 'metrics'):
            log_data['metrics'] = record.metrics

        return json.dumps(log_data, sort_keys=True)


def setup_logger(name: str, log_dir: Optional[Path] = None,
                 level: Union[int, str] = logging.INFO) -> logging.Logger:
    """
    Setup logger with both console and file handlers

    Module loggers (``erank.retrieval.*`` or plain ``retrieval.*``) reach these
    handlers through propagation, so only the root pipeline logger is configured.

    Args:
        name: Logger name
        log_dir: Directory for log files
        level: Logging level (int or name such as "INFO")

    Returns:
        Configured logger instance
    """
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO

    logger = logging.getLogger(name)
    logger.setLevel(level)
    logger.propagate = False

    # Remove existing handlers
    logger.handlers.clear()

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(level)
    console_handler.setFormatter(ColoredFormatter(
        '%(asctime)s | %(levelname)s | %(name)s | %(message)s',
        datefmt='%H:%M:%S',
        use_color=sys.stdout.isatty(),
    ))
    logger.addHandler(console_handler)

    if log_dir:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        stamp = datetime.now().strftime('%Y%m%d')

        file_handler = logging.handlers.RotatingFileHandler(
            log_dir / f"{name}_{stamp}.log",
            maxBytes=10*1024*1024,  # 10MB
            backupCount=5
        )
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(
            '%(asctime)s | %(levelname)-8s | %(name)-28s | %(funcName)-24s | %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        ))
        logger.addHandler(file_handler)

        json_handler = logging.handlers.RotatingFileHandler(
            log_dir / f"{name}_{stamp}.json",
            maxBytes=10*1024*1024,
            backupCount=5
        )
        json_handler.setLevel(logging.INFO)
        json_handler.setFormatter(JSONFormatter())
        logger.addHandler(json_handler)

    return logger


def attach_module_loggers(root: logging.Logger, packages=('retrieval', 'core')):
    """Route the package loggers into the handlers configured on ``root``"""
    for package in packages:
        module_logger = logging.getLogger(package)
        module_logger.setLevel(root.level)
        module_logger.propagate = False
        module_logger.handlers = list(root.handlers)


class MetricsLogger:
    """Logger for named pipeline measurements"""

    def __init__(self, logger: logging.Logger):
        self.logger = logger
        self.metrics: Dict[str, Dict] = {}

    def record_metric(self, name: str, value: float, unit: str = ""):
        """Record a metric and emit it as a structured record"""
        self.metrics[name] = {
            'value': value,
            'unit': unit,
            'timestamp': datetime.now(timezone.utc).isoformat(),
        }
        self.logger.info(f"Metric: {name} = {value} {unit}".rstrip(),
                         extra={'metrics': {name: self.metrics[name]}})

    def get_metrics(self):
        """Get all recorded metrics"""
        return self.metrics

    def clear_metrics(self):
        """Clear all metrics"""
        self.metrics.clear()
