#!/usr/bin/env python3
"""
统一日志模块：控制台 + 按日期分文件

    from logger import log_info, log_warning, log_error

日志目录取环境变量 CASCADE_IDS_LOG_DIR（默认 logs），每次写入时读取。
最近的日志行同时保存在内存中，供失败通知附带。
"""
import os
import threading
from collections import deque
from datetime import datetime
from pathlib import Path
from typing import List

DEFAULT_LOG_DIR = "logs"
LOG_DIR_ENV = "CASCADE_IDS_LOG_DIR"
RECENT_LIMIT = 200

_lock = threading.Lock()
_recent: deque = deque(maxlen=RECENT_LIMIT)


def _log_file() -> Path:
    log_dir = os.environ.get(LOG_DIR_ENV, DEFAULT_LOG_DIR)
    return Path(log_dir) / f"{datetime.now().strftime('%Y%m%d')}.log"


def log(message: str, level: str = "INF") -> None:
    """
    写一行日志

    Args:
        message: 日志消息
        level: INF / WAR / ERR / DBG
    """
    line = f"{datetime.now().strftime('%Y-%m-%d %H:%M:%S.%f')[:-3]} [{level}] {message}"
    with _lock:
        print(line, flush=True)
        _recent.append(line)
        path = _log_file()
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "a", encoding="utf-8") as f:
                f.write(line + "\n")
        except OSError as e:
            print(f"[ERR] 无法写入日志文件 {path}: {e}", flush=True)


def log_info(message: str) -> None:
    log(message, "INF")


def log_success(message: str) -> None:
    log(message, "INF")


def log_warning(message: str) -> None:
    log(message, "WAR")


def log_error(message: str) -> None:
    log(message, "ERR")


def log_debug(message: str) -> None:
    """仅当 DEBUG=true 时输出"""
    if os.environ.get("DEBUG", "false").lower() == "true":
        log(message, "DBG")


def recent_lines(n: int = 15) -> List[str]:
    """最近 n 行日志（本进程内）"""
    with _lock:
        return list(_recent)[-n:] if n > 0 else []


def log_reset() -> None:
    """清空当天日志文件和内存缓存"""
    with _lock:
        _recent.clear()
        path = _log_file()
        try:
            if path.exists():
                path.write_text("", encoding="utf-8")
        except OSError as e:
            print(f"[ERR] 无法清空日志文件 {path}: {e}", flush=True)


def log_path() -> str:
    return str(_log_file())


def log_size() -> int:
    try:
        return _log_file().stat().st_size
    except OSError:
        return 0
