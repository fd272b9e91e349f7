import logging
import logging.config
import sys
import threading
from datetime import datetime

from colorama import Fore, Style, init
from tqdm import tqdm

from config import LOG_FILE, LOG_LEVEL

init(autoreset=True)

SUCCESS_LEVEL_NUM = 25
logging.addLevelName(SUCCESS_LEVEL_NUM, "SUCCESS")


def success(self, message, *args, **kws):
    if self.isEnabledFor(SUCCESS_LEVEL_NUM):
        self._log(SUCCESS_LEVEL_NUM, message, args, **kws)


logging.Logger.success = success


class CustomFormatter(logging.Formatter):
    """Colored console lines; records from sweep worker threads carry the thread name."""

    LEVEL_COLORS = {
        logging.DEBUG: Fore.CYAN,
        logging.INFO: Fore.BLUE,
        logging.WARNING: Fore.YELLOW,
        logging.ERROR: Fore.RED,
        logging.CRITICAL: Fore.RED + Style.BRIGHT,
        SUCCESS_LEVEL_NUM: Fore.GREEN,
    }

    def formatMessage(self, record):
        timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        color = self.LEVEL_COLORS.get(record.levelno, "")
        worker = ""
        if record.threadName != threading.main_thread().name:
            worker = f" {Style.DIM}({record.threadName}){Style.RESET_ALL}"

        # Format: [2024-04-09 10:00:00] [SUCCESS] (ThreadPoolExecutor-0_1) - Message
        return (
            f"{Style.DIM}[{timestamp}]{Style.RESET_ALL} {color}[{record.levelname:7}]{Style.RESET_ALL}"
            f"{worker} - {record.message}"
        )


class TqdmHandler(logging.StreamHandler):
    """Writes above any active progress bar instead of through it."""

    def emit(self, record):
        try:
            tqdm.write(self.format(record), file=self.stream)
            self.flush()
        except Exception:
            self.handleError(record)


# Console goes to stderr: stdout carries command output (JSON, tables)
LOGGING_CONFIG = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "custom": {
            "()": CustomFormatter,
        },
        "standard": {
            "format": "[%(asctime)s] [%(levelname)s] [%(threadName)s] - %(message)s",
            "datefmt": "%Y-%m-%d %H:%M:%S",
        },
    },
    "handlers": {
        "console": {
            "()": TqdmHandler,
            "formatter": "custom",
            "stream": sys.stderr,
        },
    },
    "loggers": {
        "ttss": {
            "handlers": ["console"],
            "level": LOG_LEVEL,
            "propagate": False,
        },
    },
}

if LOG_FILE:
    LOGGING_CONFIG["handlers"]["file"] = {
        "class": "logging.FileHandler",
        "formatter": "standard",
        "filename": LOG_FILE,
        "encoding": "utf-8",
    }
    LOGGING_CONFIG["loggers"]["ttss"]["handlers"].append("file")


def setup_logger():
    logging.config.dictConfig(LOGGING_CONFIG)
    return logging.getLogger("ttss")


def set_level(level: str) -> None:
    """Override TTSS_LOG_LEVEL for the rest of the process."""
    logger.setLevel(getattr(logging, level.upper()))


logger = setup_logger()
