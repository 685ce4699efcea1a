"""
Logging utilities for LLaCA.

Console logging that coexists with the tqdm progress bars of the trainer.
"""

import logging

from tqdm import tqdm

LOG_FORMAT = '%(asctime)s [%(levelname)s] %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


class TqdmLoggingHandler(logging.StreamHandler):
    """Writes records through tqdm.write so active progress bars are redrawn below them."""

    def emit(self, record):
        try:
            tqdm.write(self.format(record), file=self.stream)
            self.flush()
        except Exception:
            self.handleError(record)


def resolve_level(config):
    """DEBUG beats SHOW_STATUS; without status output only errors are shown."""
    if config.get("DEBUG", False):
        return logging.DEBUG
    return logging.INFO if config.get("SHOW_STATUS", True) else logging.ERROR


def configure_logging(config=None):
    """
    Configure logging based on configuration settings.

    Args:
        config: Configuration dictionary with SHOW_STATUS and DEBUG
    """
    from llaca.config.settings import DEFAULT_CONFIG

    if config is None:
        config = DEFAULT_CONFIG

    # Reset handlers to avoid duplications
    for handler in logging.root.handlers[:]:
        logging.root.removeHandler(handler)

    handler = TqdmLoggingHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))

    logging.root.setLevel(resolve_level(config))
    logging.root.addHandler(handler)

    # numpy floating-point warnings go through the logging system
    logging.captureWarnings(True)
