"""Append-only record log with per-line checksums and snapshot support.

Every state change is one JSON line carrying a checksum of its payload.
A torn or corrupt tail (crash mid-append) fails the checksum and replay
stops there, so only acknowledged writes are ever rebuilt into state.
Snapshots are written to a temp file and atomically renamed into place.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Iterator, Optional

logger = logging.getLogger(__name__)


def _checksum(payload: str) -> str:
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


class RecordLog:
    """Single-writer durable log; reads replay from snapshot offset onward."""

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.data_dir / "events.log"
        self.snapshot_path = self.data_dir / "snapshot.json"
        self._fh = open(self.log_path, "a", encoding="utf-8")

    def append(self, record: dict) -> None:
        """Write one record and force it to disk before returning."""
        payload = json.dumps(record, sort_keys=True, ensure_ascii=False)
        line = json.dumps({"payload": payload, "checksum": _checksum(payload)}) + "\n"
        self._fh.write(line)
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def replay(self, from_offset: int = 0) -> Iterator[dict]:
        """Yield records in order, stopping at the first corrupt line."""
        if not self.log_path.exists():
            return
        with open(self.log_path, "rb") as fh:
            fh.seek(from_offset)
            for raw in fh:
                try:
                    envelope = json.loads(raw.decode("utf-8"))
                    payload = envelope["payload"]
                    if _checksum(payload) != envelope["checksum"]:
                        raise ValueError("checksum mismatch")
                    record = json.loads(payload)
                except (ValueError, KeyError, UnicodeDecodeError):
                    logger.warning("ignoring corrupt log tail in %s", self.log_path)
                    return
                yield record

    def offset(self) -> int:
        self._fh.flush()
        return os.path.getsize(self.log_path)

    def write_snapshot(self, state: dict) -> None:
        snapshot = {"offset": self.offset(), "state": state}
        tmp = self.snapshot_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(snapshot, ensure_ascii=False), encoding="utf-8")
        os.replace(tmp, self.snapshot_path)

    def read_snapshot(self) -> Optional[dict]:
        if not self.snapshot_path.exists():
            return None
        try:
            return json.loads(self.snapshot_path.read_text(encoding="utf-8"))
        except ValueError:
            logger.warning("ignoring unreadable snapshot %s", self.snapshot_path)
            return None

    def close(self) -> None:
        self._fh.close()
