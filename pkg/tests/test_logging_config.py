"""Tests for core.logging_config — handlers for the CLI, runs and workers."""

import logging

import pytest

from core.logging_config import add_run_log, init_worker, remove_run_log, resolve_level, setup_logging


@pytest.fixture
def restore_root():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield root
    for h in root.handlers:
        if h not in handlers:
            h.close()
    root.handlers[:] = handlers
    root.setLevel(level)


class TestResolveLevel:

    def test_names(self):
        assert resolve_level("debug") == logging.DEBUG
        assert resolve_level("WARNING") == logging.WARNING

    def test_unknown_falls_back_to_info(self):
        assert resolve_level("chatty") == logging.INFO


class TestSetupLogging:

    def test_console_and_rotating_file(self, tmp_path, restore_root):
        root = setup_logging("DEBUG", log_dir=str(tmp_path))
        assert root.level == logging.DEBUG
        assert len(root.handlers) == 2
        logging.getLogger("STRATA.Test").info("hello")
        for h in root.handlers:
            h.flush()
        assert "STRATA.Test" in (tmp_path / "strata.log").read_text()
        assert logging.getLogger("asyncio").level == logging.WARNING

    def test_unwritable_dir_keeps_console(self, tmp_path, restore_root):
        blocker = tmp_path / "file"
        blocker.write_text("")
        root = setup_logging("INFO", log_dir=str(blocker / "logs"))
        assert len(root.handlers) == 1


class TestRunLog:

    def test_mirrors_until_removed(self, tmp_path, restore_root):
        restore_root.setLevel(logging.INFO)
        handler = add_run_log(str(tmp_path / "run"))
        logging.getLogger("STRATA.Runner").info("cell done")
        remove_run_log(handler)
        logging.getLogger("STRATA.Runner").info("after")
        text = (tmp_path / "run" / "run.log").read_text()
        assert "cell done" in text
        assert "after" not in text
        assert handler not in restore_root.handlers


def test_worker_init_replaces_handlers(restore_root):
    restore_root.addHandler(logging.NullHandler())
    init_worker(logging.WARNING)
    assert restore_root.level == logging.WARNING
    assert len(restore_root.handlers) == 1
    assert isinstance(restore_root.handlers[0], logging.StreamHandler)
