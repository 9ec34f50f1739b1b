# Shared helpers: environment, artifact writes, worker pools.

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, List, TypeVar

import pandas as pd
from dotenv import find_dotenv, load_dotenv

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

DEFAULT_OUTPUT_DIR = "artifacts"


def load_env():
    _ = load_dotenv(find_dotenv(usecwd=True))


def get_worker_count() -> int:
    load_env()
    raw = os.getenv("REEB_WORKERS", "1")
    try:
        workers = int(raw)
    except ValueError:
        logger.warning("Ignoring non-integer REEB_WORKERS=%s, using 1 worker", raw)
        return 1
    return max(1, workers)


def get_output_dir(configured: str | None = None) -> Path:
    """Output directory: env override first, then config, then the default."""
    load_env()
    return Path(os.getenv("REEB_OUTPUT_DIR") or configured or DEFAULT_OUTPUT_DIR)


def config_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _atomic_write_text(path: Path, content: str) -> None:
    # Atomic write: if the temp write fails, the existing file stays untouched.
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_name(f"{path.name}.tmp")
    with open(tmp_path, "w", encoding="utf-8", newline="") as f:
        f.write(content)
    os.replace(tmp_path, path)


def save_json_artifact(payload: Any, path: str | Path) -> Path:
    path = Path(path)
    try:
        _atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True, default=_json_default))
    except OSError as e:
        logger.error("Error saving JSON artifact %s: %s", path, e)
        raise
    logger.info("Saved JSON artifact to %s", path)
    return path


def save_csv_artifact(frame: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    try:
        _atomic_write_text(path, frame.to_csv(index=False, float_format="%.17g"))
    except OSError as e:
        logger.error("Error saving CSV artifact %s: %s", path, e)
        raise
    logger.info("Saved CSV artifact to %s", path)
    return path


def save_text_artifact(content: str, path: str | Path) -> Path:
    path = Path(path)
    _atomic_write_text(path, content)
    logger.info("Saved text artifact to %s", path)
    return path


def load_json_artifact(path: str | Path) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _json_default(value: Any) -> Any:
    # numpy scalars and arrays
    if hasattr(value, "tolist"):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: int | None = None) -> List[R]:
    """Order-preserving map over a process pool; serial when one worker is configured."""
    items = list(items)
    workers = get_worker_count() if workers is None else max(1, int(workers))
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))
