import logging
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional, Union
import sys

# Custom filter to allow only INFO and WARNING level logs
class InfoFilter(logging.Filter):
    def filter(self, record):
        return record.levelno in (logging.INFO, logging.WARNING)

_TAG = "_eplace3d_handler"


def setup_logging(log_dir: Optional[Union[str, Path]] = "logs", level: Union[int, str] = logging.INFO):
    """Configures logging to file and console; calling it again replaces the earlier handlers."""
    # Get the root logger
    logger = logging.getLogger()
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO
    logger.setLevel(level)

    for handler in list(logger.handlers):
        if getattr(handler, _TAG, False):
            logger.removeHandler(handler)
            handler.close()

    # Create a formatter
    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    handlers = []
    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)

        # --- Info Log Handler (place.log) ---
        # INFO and WARNING only: stage summaries and iteration lines
        info_handler = RotatingFileHandler(
            log_dir / 'place.log',
            maxBytes=5*1024*1024,  # 5 MB
            backupCount=5
        )
        info_handler.setLevel(level)
        info_handler.setFormatter(formatter)
        info_handler.addFilter(InfoFilter())
        handlers.append(info_handler)

        # --- Error Log Handler (error.log) ---
        error_handler = RotatingFileHandler(
            log_dir / 'error.log',
            maxBytes=5*1024*1024, # 5 MB
            backupCount=5
        )
        error_handler.setLevel(logging.ERROR)
        error_handler.setFormatter(formatter)
        handlers.append(error_handler)

    # --- Console Log Handler (stdout) ---
    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    handlers.append(console_handler)

    for handler in handlers:
        setattr(handler, _TAG, True)
        logger.addHandler(handler)
    return logger
