"""Service configuration from environment variables.

RERANK_MODEL selects the scorer: the string ``tiny`` picks the dependency-
free lexical scorer used for contract tests; anything else is treated as a
sequence-to-sequence relevance model name loaded via ``transformers``
(requires the ``model`` extra).  The documented production default is the
3B-parameter monoT5-class cross-encoder below.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

TINY_MODEL = "tiny"
DEFAULT_SEQ2SEQ_MODEL = "castorini/monot5-3b-msmarco-10k"


@dataclass(frozen=True)
class Settings:
    model: str = TINY_MODEL
    device: str = "cpu"
    max_tokens: int = 512
    max_batch: int = 4096
    micro_batch: int = 32

    @classmethod
    def from_env(cls) -> "Settings":
        return cls(
            model=os.environ.get("RERANK_MODEL", TINY_MODEL),
            device=os.environ.get("RERANK_DEVICE", "cpu"),
            max_tokens=int(os.environ.get("RERANK_MAX_TOKENS", "512")),
            max_batch=int(os.environ.get("RERANK_MAX_BATCH", "4096")),
            micro_batch=int(os.environ.get("RERANK_MICRO_BATCH", "32")),
        )
