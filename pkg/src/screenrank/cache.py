"""Content-addressed judgment cache.

Judgments are keyed by a digest of everything that determines them: model
name, the exact chat messages, the scale, the prompting variant, and the
retry policy.  Records are appended to a line-delimited JSON file, so a
crashed run loses at most the in-flight judgment and reruns are free.
"""

from __future__ import annotations

import hashlib
import json
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

CACHE_FILENAME = "judgments.jsonl"


def cache_key(
    model_name: str,
    messages: list[dict[str, str]],
    scale_tag: str,
    variant_tag: str,
    attempt_policy: dict[str, Any],
) -> str:
    payload = json.dumps(
        {
            "model": model_name,
            "messages": messages,
            "scale": scale_tag,
            "variant": variant_tag,
            "attempt_policy": attempt_policy,
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class JudgmentCache:
    """Append-only store of judgment payloads, safe for concurrent writers."""

    def __init__(self, directory: Path | str):
        self.path = Path(directory) / CACHE_FILENAME
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._records: dict[str, dict] = {}
        self.hits = 0
        self.misses = 0
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                record = json.loads(line)
                # later records win, so corrections can be appended
                self._records[record["key"]] = record["judgment"]

    def __len__(self) -> int:
        return len(self._records)

    def get(self, key: str) -> dict | None:
        with self._lock:
            payload = self._records.get(key)
            if payload is None:
                self.misses += 1
            else:
                self.hits += 1
            return payload

    def put(self, key: str, judgment_payload: dict) -> None:
        record = {
            "key": key,
            "created_at": datetime.now(timezone.utc).isoformat(),
            "judgment": judgment_payload,
        }
        line = json.dumps(record, ensure_ascii=False, sort_keys=True)
        with self._lock:
            self._records[key] = judgment_payload
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(line + "\n")

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0
