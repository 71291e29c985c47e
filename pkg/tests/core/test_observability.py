import json

import pytest
from structlog.testing import capture_logs

from app.core.observability import configure_logging, get_logger, log_error


def test_json_lines_on_stderr(capsys):
    """Each event is one JSON object with level, timestamp and logger name."""
    configure_logging("info")
    get_logger("paxraft.test").info("sim.start", seed=7)
    line = capsys.readouterr().err.strip().splitlines()[-1]
    record = json.loads(line)
    assert record["event"] == "sim.start"
    assert record["seed"] == 7
    assert record["level"] == "info"
    assert record["logger_name"] == "paxraft.test"
    assert "timestamp" in record


def test_level_filtering(capsys):
    configure_logging("warning")
    logger = get_logger("paxraft.test")
    logger.info("hidden")
    logger.warning("shown")
    err = capsys.readouterr().err
    assert "hidden" not in err
    assert "shown" in err


def test_unknown_level():
    with pytest.raises(ValueError, match="Unknown log level"):
        configure_logging("chatty")


def test_log_error_context():
    configure_logging("debug")
    with capture_logs() as logs:
        log_error(get_logger("paxraft.test"), ValueError("bad seed"), {"command": "run"})
    assert logs[-1]["event"] == "error"
    assert logs[-1]["error_type"] == "ValueError"
    assert logs[-1]["error"] == "bad seed"
    assert logs[-1]["context"] == {"command": "run"}


def test_logger_created_before_configuration_follows_it(capsys):
    """Module-level loggers pick up a level chosen after import."""
    logger = get_logger("paxraft.early")
    configure_logging("error")
    logger.warning("muted")
    configure_logging("debug")
    logger.debug("heard", step=2)
    err = capsys.readouterr().err
    assert "muted" not in err
    record = json.loads(err.strip().splitlines()[-1])
    assert record["event"] == "heard"
    assert record["logger_name"] == "paxraft.early"
