"""
Run-level settings and JSON config loading.

Precedence: explicit CLI flag > JSON config file > environment (.env via python-dotenv)
> model default. Environment keys:

    SPIN_QST_LOG_LEVEL   logging level name (INFO)
    SPIN_QST_THREADS     worker count for trial graphs (1)
    SPIN_QST_OUTPUT_DIR  where results go when --out is not given (results)
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, TypeVar

from dotenv import load_dotenv
from pydantic import BaseModel, Field

from spin_qst.errors import ConfigError

M = TypeVar("M", bound=BaseModel)


class RuntimeSettings(BaseModel):
    log_level: str = Field("INFO", description="Root logger level")
    threads: int = Field(1, ge=1, description="Concurrent trial workers")
    output_dir: Path = Field(Path("results"), description="Default output directory")


def load_settings() -> RuntimeSettings:
    load_dotenv()
    values = {
        "log_level": os.getenv("SPIN_QST_LOG_LEVEL"),
        "threads": os.getenv("SPIN_QST_THREADS"),
        "output_dir": os.getenv("SPIN_QST_OUTPUT_DIR"),
    }
    return RuntimeSettings.model_validate({k: v for k, v in values.items() if v})


def load_config(model: type[M], path: Path | None = None, overrides: dict[str, Any] | None = None) -> M:
    """Validate a JSON file (unknown keys rejected by the model) with flag overrides on top."""
    data: dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return model.model_validate(data)
