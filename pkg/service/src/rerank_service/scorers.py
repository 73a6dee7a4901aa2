"""Relevance scorers behind the service endpoint.

Both scorers share the same contract: ``score_pairs(query, texts)`` returns
one finite relevance log-odds per document plus the number of pairs whose
document was truncated to fit the token limit.  Truncation always trims the
document tail, never the query: the query carries the information need.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

_WORD_RE = re.compile(r"[^\W_]+", re.UNICODE)


def _words(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


@dataclass
class TinyOverlapScorer:
    """Deterministic lexical scorer for contract tests and local development.

    Whole lowercased words stand in for wordpieces.  The score is the
    log-odds of a smoothed query-overlap rate over the (truncated)
    document, so a document repeating the query verbatim scores high and
    positive while unrelated text scores negative.  No model weights, no
    randomness, order-independent.
    """

    max_tokens: int = 512
    model_id: str = "tiny-overlap"

    def score_pairs(self, query: str, texts: list[str]) -> tuple[list[float], int]:
        query_tokens = _words(query)
        query_set = set(query_tokens)
        budget = max(0, self.max_tokens - len(query_tokens) - 1)
        scores: list[float] = []
        truncated = 0
        for text in texts:
            doc_tokens = _words(text)
            if len(doc_tokens) > budget:
                doc_tokens = doc_tokens[:budget]
                truncated += 1
            matches = sum(1 for token in doc_tokens if token in query_set)
            p = (matches + 0.5) / (len(doc_tokens) + 1)
            scores.append(math.log(p / (1 - p)))
        return scores, truncated


class SeqToSeqRelevanceScorer:
    """Sequence-to-sequence cross-encoder scored by its yes/no token logits.

    Each pair is rendered as ``Query: {q} Document: {d} Relevant:`` and the
    score is the log-odds between the affirmative and negative answer
    tokens at the first decoding step.  Only the document portion is
    truncated when the pair exceeds the token limit.
    """

    PROMPT_PREFIX = "Query: {query} Document: "
    PROMPT_SUFFIX = " Relevant:"

    def __init__(self, model_name: str, device: str = "cpu", max_tokens: int = 512):
        try:
            import torch
            from transformers import AutoModelForSeq2SeqLM, AutoTokenizer
        except ImportError as exc:
            raise RuntimeError(
                "sequence-to-sequence scoring needs the 'model' extra "
                "(pip install 'rerank-service[model]')"
            ) from exc
        self._torch = torch
        self.model_id = model_name
        self.max_tokens = max_tokens
        self.device = device
        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModelForSeq2SeqLM.from_pretrained(model_name).to(device).eval()
        self._true_id = self.tokenizer("true", add_special_tokens=False).input_ids[0]
        self._false_id = self.tokenizer("false", add_special_tokens=False).input_ids[0]

    def _encode_pair(self, query: str, document: str) -> tuple[list[int], bool]:
        prefix_ids = self.tokenizer(
            self.PROMPT_PREFIX.format(query=query), add_special_tokens=False
        ).input_ids
        suffix_ids = self.tokenizer(self.PROMPT_SUFFIX, add_special_tokens=False).input_ids
        doc_ids = self.tokenizer(document, add_special_tokens=False).input_ids
        budget = self.max_tokens - len(prefix_ids) - len(suffix_ids) - 1  # room for eos
        truncated = len(doc_ids) > budget
        if truncated:
            doc_ids = doc_ids[: max(0, budget)]
        ids = prefix_ids + doc_ids + suffix_ids + [self.tokenizer.eos_token_id]
        return ids[: self.max_tokens], truncated

    def score_pairs(self, query: str, texts: list[str]) -> tuple[list[float], int]:
        torch = self._torch
        encoded = [self._encode_pair(query, text) for text in texts]
        truncated = sum(1 for _, was_truncated in encoded if was_truncated)
        pad_id = self.tokenizer.pad_token_id
        width = max(len(ids) for ids, _ in encoded)
        input_ids = torch.full((len(encoded), width), pad_id, dtype=torch.long)
        attention = torch.zeros((len(encoded), width), dtype=torch.long)
        for row, (ids, _) in enumerate(encoded):
            input_ids[row, : len(ids)] = torch.tensor(ids, dtype=torch.long)
            attention[row, : len(ids)] = 1
        decoder_input = torch.full(
            (len(encoded), 1), self.model.config.decoder_start_token_id, dtype=torch.long
        )
        with torch.no_grad():
            logits = self.model(
                input_ids=input_ids.to(self.device),
                attention_mask=attention.to(self.device),
                decoder_input_ids=decoder_input.to(self.device),
            ).logits[:, 0, :]
        log_probs = torch.log_softmax(logits, dim=-1)
        scores = (log_probs[:, self._true_id] - log_probs[:, self._false_id]).tolist()
        return [float(s) for s in scores], truncated


def build_scorer(model: str, device: str, max_tokens: int):
    if not model:
        raise ValueError("no model configured; set RERANK_MODEL")
    if model == "tiny":
        return TinyOverlapScorer(max_tokens=max_tokens)
    return SeqToSeqRelevanceScorer(model_name=model, device=device, max_tokens=max_tokens)
