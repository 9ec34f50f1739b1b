import json
import logging
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List

from .utils import _atomic_write_text, config_hash

logger = logging.getLogger(__name__)

LEDGER_VERSION = "1.0"

# Config sections each stage's outputs depend on.
STAGE_SECTIONS = {
    "graph": ("model",),
    "correctors": ("model",),
    "coefficients": ("model", "coefficients"),
    "fastslow": ("model", "run"),
    "graph_diffusion": ("model", "coefficients", "run", "graph"),
    "verification": ("model", "coefficients", "run", "graph", "pde", "verify"),
}


def get_ledger_filename(output_dir: Path) -> Path:
    return Path(output_dir) / "cache_ledger.json"


def _iso_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def stage_key(config: Dict[str, Any], stage: str, **options: Any) -> str:
    sections = STAGE_SECTIONS[stage]
    return config_hash({"stage": stage, "options": options, **{name: config.get(name) for name in sections}})


def stage_dir(output_dir: Path, stage: str, key: str) -> Path:
    return Path(output_dir) / stage / key[:16]


def _build_empty_ledger(now_iso: str) -> Dict[str, Any]:
    return {
        "metadata": {"created_at": now_iso, "last_updated": now_iso, "version": LEDGER_VERSION},
        "stages": {name: [] for name in STAGE_SECTIONS},
    }


def _ensure_ledger_shape(payload: Dict[str, Any], now_iso: str) -> Dict[str, Any]:
    if not isinstance(payload, dict):
        return _build_empty_ledger(now_iso)
    if not isinstance(payload.get("metadata"), dict):
        payload["metadata"] = {}
    payload["metadata"].setdefault("created_at", now_iso)
    payload["metadata"].setdefault("version", LEDGER_VERSION)
    if not isinstance(payload.get("stages"), dict):
        payload["stages"] = {}
    for name in STAGE_SECTIONS:
        if not isinstance(payload["stages"].get(name), list):
            payload["stages"][name] = []
    return payload


def load_ledger(output_dir: Path) -> Dict[str, Any]:
    path = get_ledger_filename(output_dir)
    now_iso = _iso_now()
    if not path.exists():
        return _build_empty_ledger(now_iso)
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        logger.warning("Starting a fresh cache ledger, %s is unreadable: %s", path, e)
        return _build_empty_ledger(now_iso)
    return _ensure_ledger_shape(payload, now_iso)


def save_ledger(ledger: Dict[str, Any], output_dir: Path) -> Path:
    path = get_ledger_filename(output_dir)
    ledger["metadata"]["last_updated"] = _iso_now()
    _atomic_write_text(path, json.dumps(ledger, indent=2, sort_keys=True))
    return path


def _upsert_by_key(entries: List[Dict[str, Any]], candidate: Dict[str, Any]) -> None:
    for idx, entry in enumerate(entries):
        if entry.get("key") == candidate["key"]:
            entries[idx] = candidate
            break
    else:
        entries.append(candidate)
    entries.sort(key=lambda item: item.get("completed_at", ""))


def record_stage(
    ledger: Dict[str, Any], stage: str, key: str, artifacts: List[str], elapsed: float, extra: Dict | None = None
) -> Dict[str, Any]:
    candidate = {
        "key": key,
        "artifacts": sorted(artifacts),
        "elapsed_seconds": round(float(elapsed), 3),
        "completed_at": _iso_now(),
    }
    if extra:
        candidate.update(extra)
    _upsert_by_key(ledger["stages"][stage], candidate)
    return candidate


def lookup(ledger: Dict[str, Any], stage: str, key: str, output_dir: Path) -> Dict[str, Any] | None:
    """The ledger entry for (stage, key) if every artifact it lists still exists."""
    for entry in ledger["stages"].get(stage, []):
        if entry.get("key") != key:
            continue
        missing = [a for a in entry.get("artifacts", []) if not os.path.exists(Path(output_dir) / a)]
        if missing:
            logger.info("Cache entry for %s is stale, missing %s", stage, missing)
            return None
        return entry
    return None
