import json

import pytest

import notify as notify_module
from logger import log_info, log_path, log_reset, log_size, recent_lines
from notify import _auth_header, _parse_headers, _render_body, notify
from runner import format_duration, run_step


@pytest.mark.parametrize("seconds, text", [
    (0, "0秒"),
    (59.9, "59秒"),
    (61, "1分1秒"),
    (3600, "1时0分0秒"),
    (3725, "1时2分5秒"),
    (-3, "0秒"),
])
def test_format_duration(seconds, text):
    assert format_duration(seconds) == text


def test_run_step_returns_exit_code():
    assert run_step("ok", lambda: 0) == 0
    assert run_step("fail", lambda: 1) == 1


def test_run_step_catches_exceptions():
    def boom():
        raise RuntimeError("坏了")

    assert run_step("boom", boom) == 1
    assert any("RuntimeError: 坏了" in line for line in recent_lines(5))


def test_failure_notification_carries_log(monkeypatch):
    sent = []
    monkeypatch.setattr("runner.notify", lambda title, content, config, failure, log_content="": sent.append(
        (title, content, failure, log_content)) or 1)
    run_step("train", lambda: 1, {"on_failure": True}, output_dir="out")
    title, content, failure, log_content = sent[0]
    assert title == "train 执行失败"
    assert content.startswith("退出码 1，耗时 ")
    assert content.endswith("输出目录 out")
    assert failure is True
    assert "命令: train" in log_content


def test_success_notification_only_when_enabled(monkeypatch):
    sent = []
    monkeypatch.setattr("runner.notify", lambda title, *args, **kwargs: sent.append(title) or 1)
    run_step("eval", lambda: 0, {"on_success": False})
    assert sent == []
    run_step("eval", lambda: 0, {"on_success": True})
    assert sent == ["eval 执行成功"]


# ============ 日志 ============

def test_log_file_location(isolated_env):
    log_reset()
    log_info("写入一行")
    assert log_path().startswith(str(isolated_env / "logs"))
    assert log_size() > 0
    assert recent_lines(1)[0].endswith("[INF] 写入一行")


# ============ 通知 ============

class _Response:
    def __init__(self, status_code=200, text="ok"):
        self.status_code = status_code
        self.text = text


def test_parse_headers():
    headers = _parse_headers("# comment\nAuthorization: Bearer x\nX-A: 1\nX-A: 2\nbroken\n")
    assert headers == {"Authorization": "Bearer x", "X-A": "1, 2"}


def test_auth_header():
    assert _auth_header({"token": "t"}) == "Bearer t"
    assert _auth_header({"username": "u", "password": "p"}) == "Basic dTpw"
    assert _auth_header({}) is None


def test_notify_without_channels():
    assert notify("标题", "内容", {}) == 0
    assert notify("标题", "", {"webhook": {"url": "http://example.invalid"}}) == 0


def test_notify_respects_switches(monkeypatch):
    monkeypatch.setattr(notify_module.requests, "request", lambda **kwargs: pytest.fail("不应发送"))
    config = {"on_failure": False, "webhook": {"url": "http://example.invalid"}}
    assert notify("标题", "内容", config, failure=True) == 0
    assert notify("标题", "内容", config, failure=False) == 0


def test_webhook_json_body(monkeypatch):
    calls = []

    def fake_request(**kwargs):
        calls.append(kwargs)
        return _Response()

    monkeypatch.setattr(notify_module.requests, "request", fake_request)
    config = {"webhook": {"url": "http://example.invalid/hook", "headers": "X-Token: abc"}}
    assert notify("失败", "详情", config, log_content="last lines") == 1
    body = json.loads(calls[0]["data"].decode("utf-8"))
    assert body == {"title": "失败", "content": "详情", "log": "last lines"}
    assert calls[0]["headers"]["X-Token"] == "abc"
    assert calls[0]["headers"]["Content-Type"] == "application/json"


def test_ntfy_body(monkeypatch):
    calls = []

    def fake_post(url, data, headers, timeout):
        calls.append((url, json.loads(data.decode("utf-8")), headers))
        return _Response()

    monkeypatch.setattr(notify_module.requests, "post", fake_post)
    config = {"ntfy": {"url": "http://example.invalid", "topic": "ids", "priority": "5", "token": "t"}}
    assert notify("失败", "详情", config, force=True) == 1
    url, body, headers = calls[0]
    assert body["topic"] == "ids"
    assert body["priority"] == 5
    assert headers["Authorization"] == "Bearer t"


def test_webhook_errors_do_not_raise(monkeypatch):
    def broken(**kwargs):
        raise ConnectionError("down")

    monkeypatch.setattr(notify_module.requests, "request", broken)
    assert notify_module.webhook_notify("t", "c", {"url": "http://example.invalid"}) is False
    monkeypatch.setattr(notify_module.requests, "request", lambda **kwargs: _Response(500, "err"))
    assert notify_module.webhook_notify("t", "c", {"url": "http://example.invalid"}) is False


def test_render_body_variants():
    assert _render_body("text/markdown", "失败", "详情", "tail") == "**失败** 详情\n\n```\ntail\n```".encode("utf-8")
    assert _render_body("text/plain", "失败", "详情", "") == "失败 详情".encode("utf-8")
    assert json.loads(_render_body("application/json", "失败", "详情", "")) == {"title": "失败", "content": "详情"}
