"""Bundled fixture data: reference metric tables, a small contract corpus,
and general-text records for mixing experiments."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path


def fixture_path(name: str) -> Path:
    """Filesystem path of a bundled fixture (file or directory)."""
    path = Path(str(resources.files("scforge.fixtures"))) / name
    if not path.exists():
        raise FileNotFoundError(f"no bundled fixture named {name!r}")
    return path


def load_table(name: str) -> dict:
    return json.loads(fixture_path(name).read_text(encoding="utf-8"))
