import json
import math
import logging
from typing import Any

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - [%(levelname)s] - %(name)s - %(message)s'


def configure_logging(verbose: bool = False) -> None:
    """
    Configures root logging once for the CLI and the corpus workers.
    Logs go to stderr so stdout stays clean for JSON reports.
    """
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)


def finite_or_none(value: float) -> Any:
    """JSON has no NaN/Infinity; non-finite residuals are reported as null."""
    value = float(value)
    return value if math.isfinite(value) else None


def dump_json(payload: Any) -> str:
    """Byte-deterministic serialization for reports."""
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=False)
