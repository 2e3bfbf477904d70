import sys
from pathlib import Path
from typing import Optional, Union

from loguru import logger

LOG_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} - {name} - {level} - {message}"


def configure_logging(level: str = "INFO", log_file: Optional[Union[str, Path]] = None) -> None:
    """Replace loguru's default sink with a stderr sink and an optional file sink."""
    logger.remove()
    logger.add(sys.stderr, level=level.upper(), format=LOG_FORMAT)
    if log_file is not None:
        add_file_sink(log_file, level)


def add_file_sink(log_file: Union[str, Path], level: str = "DEBUG") -> int:
    """Attach a file sink and return its handler id for later removal."""
    Path(log_file).parent.mkdir(parents=True, exist_ok=True)
    return logger.add(str(log_file), level=level.upper(), format=LOG_FORMAT, encoding="utf-8")
