from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import pytest

from fracfem.config import normalize_log_format, resolve_output_dir, settings, split_csv
from fracfem.logging_setup import JsonFormatter, _ContextFilter, run_id_var


def test_output_dir_precedence(monkeypatch):
    monkeypatch.delenv("FRACFEM_OUT", raising=False)
    assert resolve_output_dir() == Path("out")
    assert resolve_output_dir(plan_value="runs") == Path("runs")
    monkeypatch.setenv("FRACFEM_OUT", "/tmp/env-out")
    assert resolve_output_dir(plan_value="runs") == Path("/tmp/env-out")
    assert resolve_output_dir("cli-out", "runs") == Path("cli-out")


def test_blank_env_is_ignored(monkeypatch):
    monkeypatch.setenv("FRACFEM_OUT", "   ")
    assert resolve_output_dir(plan_value="runs") == Path("runs")


@pytest.mark.parametrize("raw,expected", [("console", "console"), ("TEXT", "console"), ("json", "json"), ("", "json")])
def test_normalize_log_format(raw, expected):
    assert normalize_log_format(raw) == expected


def test_split_csv():
    assert split_csv(" a, b ,,c ") == ["a", "b", "c"]
    assert split_csv("") == []


def test_default_settings_are_sane():
    assert settings.jobs >= 1
    assert 0.0 < settings.ml_rel_tol <= 1e-10
    assert settings.laplace_nodes >= 4
    assert settings.max_modes_2d <= settings.max_modes_1d


def _record(msg: str, **extra) -> logging.LogRecord:
    rec = logging.LogRecord("fracfem.test", logging.INFO, __file__, 1, msg, None, None)
    for k, v in extra.items():
        setattr(rec, k, v)
    return rec


def test_json_formatter_includes_structured_fields():
    rec = _record("combination done", scheme="lumped", alpha=0.5, h=0.125, unrelated="x")
    payload = json.loads(JsonFormatter().format(rec))
    assert payload["message"] == "combination done"
    assert payload["severity"] == "INFO"
    assert payload["scheme"] == "lumped"
    assert payload["alpha"] == 0.5
    assert "unrelated" not in payload


def test_context_filter_attaches_run_id():
    token = run_id_var.set("abc123")
    try:
        rec = _record("hello")
        assert _ContextFilter().filter(rec)
        assert json.loads(JsonFormatter().format(rec))["run_id"] == "abc123"
    finally:
        run_id_var.reset(token)
    rec = _record("later")
    _ContextFilter().filter(rec)
    assert "run_id" not in json.loads(JsonFormatter().format(rec))


def test_json_formatter_includes_exception():
    try:
        raise RuntimeError("boom")
    except RuntimeError:
        rec = logging.LogRecord("fracfem.test", logging.ERROR, __file__, 1, "failed", None, sys.exc_info())
    payload = json.loads(JsonFormatter().format(rec))
    assert "RuntimeError: boom" in payload["exception"]
