import logging
import os

from dotenv import load_dotenv

load_dotenv(override=True)

LOG_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | %(message)s"

_configured = False


def get_logger(name: str) -> logging.Logger:
    """Module logger; the first call configures the root handler from DUALGFL_LOG_LEVEL."""
    global _configured
    if not _configured:
        level = os.environ.get("DUALGFL_LOG_LEVEL", "INFO").upper()
        logging.basicConfig(level=getattr(logging, level, logging.INFO),
                            format=LOG_FORMAT, datefmt="%H:%M:%S")
        _configured = True
    return logging.getLogger(name)
