import logging
import os
from logging.handlers import RotatingFileHandler
from typing import Optional

from colorama import init, Fore, Style
from tqdm import tqdm

# Initialize colorama for cross-platform color support
init()

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_MAX_BYTES = 5 * 1024 * 1024
LOG_BACKUP_COUNT = 5


class ColoredFormatter(logging.Formatter):
    """Custom formatter adding colors to logs based on severity level."""

    COLORS = {
        'DEBUG': Fore.CYAN,
        'INFO': Fore.GREEN,
        'WARNING': Fore.YELLOW,
        'ERROR': Fore.RED,
        'CRITICAL': Fore.RED + Style.BRIGHT
    }

    def format(self, record):
        plain = record.levelname
        record.levelname = f"{self.COLORS.get(plain, '')}{plain}{Style.RESET_ALL}"
        try:
            return super().format(record)
        finally:
            record.levelname = plain


class TqdmConsoleHandler(logging.StreamHandler):
    """Console handler that prints through tqdm so active progress bars are not torn."""

    def emit(self, record):
        try:
            tqdm.write(self.format(record))
        except Exception:
            self.handleError(record)


def setup_logging(level=logging.INFO, log_file_path: Optional[str] = None):
    """
    Configure the root logger: colored console output, plus a rotating plain
    text file once the run's log file is known.

    Args:
        level: Minimum log level to display (DEBUG with --verbose)
        log_file_path: [admin] log_file; None logs to the console only
    """
    root_logger = logging.getLogger()
    root_logger.setLevel(level)

    # Remove any existing handlers to avoid duplicates
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)
        if isinstance(handler, RotatingFileHandler):
            handler.close()

    console_handler = TqdmConsoleHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(ColoredFormatter(LOG_FORMAT))
    root_logger.addHandler(console_handler)

    if log_file_path is None:
        return
    os.makedirs(os.path.dirname(os.path.abspath(log_file_path)), exist_ok=True)
    # Per-step DEBUG detail only reaches the file with --verbose
    file_handler = RotatingFileHandler(log_file_path, maxBytes=LOG_MAX_BYTES, backupCount=LOG_BACKUP_COUNT,
                                       encoding='utf-8')
    file_handler.setLevel(min(level, logging.INFO))
    file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root_logger.addHandler(file_handler)
