#!/usr/bin/env python3
"""
流水线命令的结果推送 - WEBHOOK / NTFY

配置取自 config.yml 的 notify 部分:
notify:
  on_failure: true
  on_success: false
  webhook: {url, method, content_type, headers}
  ntfy: {url, topic, priority, token | username + password, headers}

推送失败只记日志，不影响命令的退出码。
"""
import base64
import json
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Tuple

import requests

from logger import log_error, log_info, log_success, log_warning

TIMEOUT = 15
DEFAULT_PRIORITY = 3


def _parse_headers(headers_str: str) -> Dict[str, str]:
    """每行 key: value，# 开头为注释；同名头用逗号合并"""
    parsed: Dict[str, str] = {}
    for line in (headers_str or "").splitlines():
        line = line.strip()
        if not line or line.startswith("#") or ":" not in line:
            continue
        key, _, val = line.partition(":")
        key, val = key.strip(), val.strip()
        if key:
            parsed[key] = f"{parsed[key]}, {val}" if key in parsed else val
    return parsed


def _auth_header(section: Dict) -> Optional[str]:
    if section.get("token"):
        return f"Bearer {section['token']}"
    username, password = section.get("username"), section.get("password")
    if username and password:
        return "Basic " + base64.b64encode(f"{username}:{password}".encode("utf-8")).decode("ascii")
    return None


def _render_body(content_type: str, title: str, content: str, log_content: str) -> bytes:
    """按 content_type 组织 webhook 请求体"""
    if content_type == "application/json":
        payload = {"title": title, "content": content}
        if log_content:
            payload["log"] = log_content
        return json.dumps(payload, ensure_ascii=False).encode("utf-8")
    if content_type == "text/markdown":
        text = f"**{title}** {content}"
        if log_content:
            text += f"\n\n```\n{log_content}\n```"
        return text.encode("utf-8")
    text = f"{title} {content}"
    if log_content:
        text += f"\n\n{log_content}"
    return text.encode("utf-8")


def _post(channel: str, send: Callable[[], requests.Response]) -> bool:
    try:
        response = send()
    except Exception as e:
        log_error(f"{channel} 推送异常: {e}")
        return False
    if response.status_code == 200:
        log_success(f"{channel} 推送成功")
        return True
    log_error(f"{channel} 推送失败: {response.status_code} {response.text}")
    return False


def webhook_notify(title: str, content: str, section: Dict, log_content: str = "") -> bool:
    """WEBHOOK 推送"""
    url = section.get("url", "")
    if not url:
        log_warning("WEBHOOK 未配置 URL")
        return False
    content_type = section.get("content_type", "application/json")
    headers = _parse_headers(section.get("headers", ""))
    headers["Content-Type"] = content_type
    body = _render_body(content_type, title, content, log_content)
    return _post("WEBHOOK", lambda: requests.request(method=section.get("method", "POST"), url=url,
                                                     headers=headers, data=body, timeout=TIMEOUT))


def ntfy_notify(title: str, content: str, section: Dict, log_content: str = "") -> bool:
    """
    NTFY 推送，JSON 格式

    参考: https://docs.ntfy.sh/publish/#publish-as-json
    """
    url, topic = section.get("url", ""), section.get("topic", "")
    if not url or not topic:
        log_warning("NTFY 未配置 URL 或 Topic")
        return False
    priority = str(section.get("priority", DEFAULT_PRIORITY))
    payload = {
        "topic": topic,
        "title": title,
        "message": f"{content}\n\n{log_content}" if log_content else content,
        "priority": int(priority) if priority.isdigit() else DEFAULT_PRIORITY,
    }
    headers = {"Content-Type": "application/json", **_parse_headers(section.get("headers", ""))}
    auth = _auth_header(section)
    if auth:
        headers["Authorization"] = auth
    data = json.dumps(payload, ensure_ascii=False).encode("utf-8")
    return _post("NTFY", lambda: requests.post(url, data=data, headers=headers, timeout=TIMEOUT))


def _channels(config: Dict) -> List[Tuple[Callable[..., bool], Dict]]:
    channels = []
    webhook = config.get("webhook") or {}
    if webhook.get("url"):
        channels.append((webhook_notify, webhook))
    ntfy = config.get("ntfy") or {}
    if ntfy.get("url") and ntfy.get("topic"):
        channels.append((ntfy_notify, ntfy))
    return channels


def notify(title: str, content: str, config: Optional[Dict] = None, failure: bool = True,
           force: bool = False, log_content: str = "") -> int:
    """
    向所有已配置的通道推送一条命令结果，从不抛出异常

    Args:
        title: 标题，如 "train 执行失败"
        content: 正文
        config: config.yml 中的 notify 部分
        failure: True 时受 on_failure 控制，否则受 on_success 控制
        force: 忽略 on_failure/on_success
        log_content: 附带的日志尾部

    Returns:
        int: 尝试推送的通道数
    """
    config = config or {}
    if not content:
        log_warning(f"推送内容为空，跳过: {title}")
        return 0
    switch, default = ("on_failure", True) if failure else ("on_success", False)
    if not force and not config.get(switch, default):
        log_info(f"{switch}=false，跳过通知: {title}")
        return 0

    channels = _channels(config)
    if not channels:
        log_info("未配置通知通道，跳过通知")
        return 0
    with ThreadPoolExecutor(max_workers=len(channels)) as pool:
        futures = [pool.submit(send, title, content, section, log_content) for send, section in channels]
        for f in futures:
            f.result()
    return len(channels)
