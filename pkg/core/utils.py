"""
Utility Functions
=================
Common utility functions used across the system

Features:
- File system helpers (directories, atomic text writes)
- Time and date utilities
- System information and worker-count defaults
- Bounded parallel map with ordered results
"""

import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from pathlib import Path
from typing import Callable, Iterable, List, Optional, TypeVar
import logging

import psutil


logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


def get_system_info() -> dict:
    """Get system information"""
    return {
        'os': platform.system(),
        'os_version': platform.version(),
        'architecture': platform.machine(),
        'python_version': platform.python_version(),
        'cpu_count': psutil.cpu_count(),
        'memory_total_gb': round(psutil.virtual_memory().total / (1024**3), 2),
        'memory_available_gb': round(psutil.virtual_memory().available / (1024**3), 2),
    }


def default_thread_count() -> int:
    """Available cores, falling back to 1"""
    return psutil.cpu_count(logical=True) or 1


def format_timestamp(dt: Optional[datetime] = None) -> str:
    """Format datetime as string"""
    if dt is None:
        dt = datetime.now()
    return dt.strftime("%Y-%m-%d %H:%M:%S")


def ensure_directory(path: Path) -> Path:
    """Ensure directory exists, create if not"""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_text_atomic(path: Path, text: str) -> Path:
    """Write text via a temp file + rename so readers never see partial artifacts"""
    path = Path(path)
    ensure_directory(path.parent)
    tmp = path.with_name(path.name + '.tmp')
    with open(tmp, 'w', encoding='utf-8', newline='\n') as f:
        f.write(text)
    os.replace(tmp, path)
    return path


def parallel_map(func: Callable[[T], R], items: Iterable[T], workers: int = 1) -> List[R]:
    """Map with a bounded thread pool; results keep the input order"""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


class Timer:
    """Simple context manager for timing operations"""

    def __init__(self, name: str = "Operation", log: logging.Logger = None):
        self.name = name
        self.log = log or logger
        self.start_time = None
        self.elapsed = None

    def __enter__(self):
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, *args):
        self.elapsed = time.perf_counter() - self.start_time
        self.log.info(f"{self.name} took {self.elapsed:.3f} seconds")
