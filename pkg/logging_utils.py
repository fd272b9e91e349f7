import json

from utils.logger import logger


def log_action(action: str, details: dict | str = None, source: str = None):
    """
    Logs an experiment action (fit, classify, sweep, ...) to the centralized logger.
    """
    try:
        details_str = ""
        if isinstance(details, dict):
            details_str = json.dumps(details, default=str)
        elif details:
            details_str = str(details)

        log_msg = action
        if source:
            log_msg += f" | SOURCE: {source}"
        if details_str:
            log_msg += f" | Details: {details_str}"

        logger.success(f"Action: {log_msg}")

    except Exception as e:
        logger.error(f"Failed to write action log: {e}")
