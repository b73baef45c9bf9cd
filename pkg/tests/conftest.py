"""Shared fixtures: a started runtime and fresh settings."""

import pytest

from resil.runtime import Runtime, RuntimeConfig, activate, deactivate
from resil.settings import load_settings


def pytest_collection_modifyitems(config, items):
    if load_settings().run_slow:
        return
    skip_slow = pytest.mark.skip(reason="timing-bound; set RESIL_RUN_SLOW=1 to run")
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


def start_runtime(workers=4, policy='work_stealing'):
    runtime = Runtime(RuntimeConfig(workers, policy)).start()
    activate(runtime)
    return runtime


def stop_runtime(runtime):
    deactivate(runtime)
    runtime.stop()


@pytest.fixture
def runtime():
    rt = start_runtime()
    yield rt
    stop_runtime(rt)


@pytest.fixture
def single_worker():
    rt = start_runtime(workers=1)
    yield rt
    stop_runtime(rt)


@pytest.fixture
def fresh_settings(monkeypatch):
    """Settings re-read from a clean environment; restored afterwards."""
    for name in ('RESIL_SEED', 'RESIL_WORKERS', 'RESIL_LOG_LEVEL'):
        monkeypatch.delenv(name, raising=False)
    yield lambda: load_settings(reload=True)
    monkeypatch.undo()
    load_settings(reload=True)
