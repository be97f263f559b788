"""Result files: CSV tables, sorted JSON documents and the run-metadata sidecar.

Everything except `run_metadata.json` is a pure function of config and seed, so reruns
produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
import logging
import platform
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any, Iterable, Sequence

from pydantic import BaseModel

logger = logging.getLogger(__name__)

METADATA_FILE = "run_metadata.json"


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    logger.debug("--- [IO] wrote %s", path)
    return path


def read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_json(path: Path, payload: BaseModel | dict | list) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    logger.debug("--- [IO] wrote %s", path)
    return path


def _version(package: str) -> str | None:
    try:
        return metadata.version(package)
    except metadata.PackageNotFoundError:
        return None


def write_run_metadata(out_dir: Path, command: str, started: datetime, threads: int, **extra: Any) -> Path:
    """Timestamps, versions and thread count; the only output allowed to differ between reruns."""
    payload = {
        "command": command,
        "started": started.isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
        "threads": threads,
        "python": platform.python_version(),
        "versions": {pkg: _version(pkg) for pkg in ("spin-qst", "numpy", "scipy", "langgraph", "pydantic")},
        **extra,
    }
    return write_json(Path(out_dir) / METADATA_FILE, payload)
