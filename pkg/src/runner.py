#!/usr/bin/env python3
"""
命令执行包装：记录起止时间与耗时，按配置推送结果
"""
from datetime import datetime
from typing import Callable, Dict, Optional

from logger import log_error, log_info, log_warning, recent_lines
from notify import notify

LOG_LINES = 15


def format_duration(seconds: float) -> str:
    """耗时格式化为 x时y分z秒"""
    total = int(max(0.0, seconds))
    hours, rest = divmod(total, 3600)
    minutes, secs = divmod(rest, 60)
    if hours:
        return f"{hours}时{minutes}分{secs}秒"
    if minutes:
        return f"{minutes}分{secs}秒"
    return f"{secs}秒"


def run_step(name: str, func: Callable[[], int], notify_config: Optional[Dict] = None,
             log_lines: int = LOG_LINES, output_dir: str = "") -> int:
    """
    执行一个流水线命令

    Args:
        name: 命令名称（synth / impute / split / train / eval / report）
        func: 无参函数，返回退出码
        notify_config: config.yml 的 notify 部分
        log_lines: 失败通知附带的日志行数
        output_dir: 写入通知正文的输出目录

    Returns:
        int: 退出码；func 抛出异常时为 1
    """
    start = datetime.now()
    log_info(f"命令: {name}")
    log_info(f"开始时间: {start:%Y-%m-%d %H:%M:%S}")

    try:
        code = int(func())
    except Exception as e:
        log_error(f"{name} 异常: {type(e).__name__}: {e}")
        code = 1

    end = datetime.now()
    duration = format_duration((end - start).total_seconds())
    log_info(f"结束时间: {end:%Y-%m-%d %H:%M:%S} 总耗时: {duration}")

    content = f"退出码 {code}，耗时 {duration}"
    if output_dir:
        content += f"，输出目录 {output_dir}"
    if code != 0:
        log_warning(f"命令 {name} 失败（退出码 {code}）")
        notify(f"{name} 执行失败", content, notify_config, failure=True,
               log_content="\n".join(recent_lines(log_lines)))
    elif notify_config and notify_config.get("on_success"):
        notify(f"{name} 执行成功", content, notify_config, failure=False)
    return code
