import logging
import os
import traceback
from logging import handlers
from typing import Optional

import asyncclick as click

formatter = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")
logger_name = "memlqr"
default_log_level = logging.INFO
log_roll_size = 1048576 * 100
log_backupCount = 10


def log_directory() -> str:
    """
    Resolve the directory log files are written to.

    ``MEMLQR_LOG_DIR`` takes precedence over the default ``~/.memlqr/logs``.

    :return: Absolute path of the log directory.
    :rtype: str
    """
    override = os.environ.get("MEMLQR_LOG_DIR")
    if override:
        return os.path.abspath(os.path.expanduser(override))
    return os.path.abspath(os.path.join(os.path.expanduser("~/.memlqr"), "logs"))


def setup_logger(
    log_name: Optional[str] = logger_name,
    log_filename: Optional[str] = f"{logger_name}.log",
    log_level: Optional[int] = default_log_level,
) -> logging.Logger:
    """
    Set up the main logger with rotating file handler.

    :param log_name: The name of the logger, defaults to 'memlqr'.
    :type log_name: Optional[str]
    :param log_filename: The log file name, defaults to ``{log_name}.log``.
    :type log_filename: Optional[str]
    :param log_level: The logging level, defaults to logging.INFO.
    :type log_level: Optional[int]
    :return: The configured logger.
    :rtype: logging.Logger
    """
    log_path = log_directory()
    if not os.path.isdir(log_path):
        os.makedirs(log_path, exist_ok=True)
    log_file = os.path.join(log_path, log_filename)
    handler = handlers.RotatingFileHandler(
        log_file, maxBytes=log_roll_size, backupCount=log_backupCount
    )
    handler.setFormatter(formatter)
    logger = logging.getLogger(log_name)
    if logger.hasHandlers():
        logger.handlers.clear()
    logger.addHandler(handler)
    logger.setLevel(log_level)
    return logger


def setup_child_logger(
    name_of_child: str,
    name_of_logger: Optional[str] = logger_name,
    debug: Optional[bool] = False,
) -> logging.Logger:
    """
    Setup a child logger for a solver unit or manager.

    :param name_of_child: The name of the child logger.
    :type name_of_child: str
    :param name_of_logger: The name of the parent logger, defaults to 'memlqr'
    :type name_of_logger: str
    :param debug: Force the child logger to DEBUG; otherwise it follows the parent level.
    :type debug: Optional[bool]
    :return: The configured child logger.
    :rtype: logging.Logger
    """
    child_logger = logging.getLogger(name_of_logger).getChild(name_of_child)
    child_logger.setLevel(logging.DEBUG if debug else logging.NOTSET)
    return child_logger


def set_debug(enabled: bool):
    """Switch every ``memlqr`` logger that follows the parent level to DEBUG or back to INFO."""
    logging.getLogger(logger_name).setLevel(logging.DEBUG if enabled else default_log_level)


logthis = setup_logger(logger_name, f"{logger_name}.log")


def handle_traceback(exception: Exception):
    """
    Write tracebacks to logs instead of to console for readability purposes.

    :param exception: The exception instance to log.
    :type exception: Exception
    """
    full_traceback = traceback.format_exc()
    logthis.error(f"Exception occurred: {str(exception)}\nTraceback:\n{full_traceback}")


class LogMe:
    """
    Child logger that also echoes to the console while debug logging is enabled.

    :param class_name: The name of the class or module the logger is set up for.
    :type class_name: str
    :param debug: Force DEBUG for this logger regardless of ``--debug``.
    :type debug: Optional[bool]
    """

    # level -> console label, colour, bold
    styles = {
        logging.DEBUG: ("DEBUG", "magenta", False),
        logging.INFO: ("INFO", "blue", False),
        logging.WARNING: ("WARNING", "yellow", True),
        logging.ERROR: ("ERROR", "red", True),
    }

    def __init__(self, class_name: str, debug: Optional[bool] = False):
        self.logger = setup_child_logger(class_name, logger_name, debug)

    def is_debug_enabled(self) -> bool:
        """
        Check if debug logging is enabled.

        :return: True if debug logging is enabled, False otherwise.
        :rtype: bool
        """
        return self.logger.isEnabledFor(logging.DEBUG)

    def _emit(self, level: int, msg: str):
        self.logger.log(level, msg)
        if self.is_debug_enabled():
            label, colour, bold = self.styles[level]
            prefix = "" if level == logging.DEBUG else "\r"
            click.echo(click.style(f"{prefix}{label}: {msg.strip()}", fg=colour, bold=bold))

    def debug(self, msg: str):
        self._emit(logging.DEBUG, msg)

    def info(self, msg: str):
        self._emit(logging.INFO, msg)

    def warning(self, msg: str):
        self._emit(logging.WARNING, msg)

    def error(self, msg: str):
        self._emit(logging.ERROR, msg)
