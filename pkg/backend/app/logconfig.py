# app/logconfig.py
import logging
import sys

import structlog

from app.settings import settings


def _stderr_logger(*args):
    # sys.stderr is looked up on every call
    return structlog.PrintLogger(file=sys.stderr)


def configure_logging(level: str | None = None, json: bool | None = None) -> None:
    """
    Configure structlog for the process. Logs go to stderr; stdout is left
    for reports.
    """
    level_name = (level or settings.LOG_LEVEL).upper()
    as_json = settings.LOG_JSON if json is None else json
    numeric = logging.getLevelName(level_name)
    if not isinstance(numeric, int):
        numeric = logging.INFO

    renderer = structlog.processors.JSONRenderer() if as_json else structlog.dev.ConsoleRenderer(colors=False)
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.format_exc_info,
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(numeric),
        logger_factory=_stderr_logger,
        cache_logger_on_first_use=False,
    )
