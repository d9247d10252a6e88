import logging
import sys

# Third-party loggers that are chatty at INFO
_NOISY_LOGGERS = ("sentry_sdk", "urllib3")


def setup_logging(level=logging.INFO):
    """
    Configures the root logger to output to stdout with a standard format.
    Accepts a numeric level or a level name such as "DEBUG".
    """
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO

    logging.basicConfig(
        level=level,
        stream=sys.stdout,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        force=True,  # Overwrite any existing configuration
    )
    for name in _NOISY_LOGGERS:
        logging.getLogger(name).setLevel(max(level, logging.WARNING))
