"""Graded relevance judgments from a chat-completion service.

Judgment policy: the first generation runs at temperature 0 for
reproducibility; if no score can be extracted, up to three further
attempts run at temperature 0.5, each as a fresh conversation that does
not show the model its faulty output.  A paper whose attempts are all
unparseable is marked for fallback and later receives the mean of the
successfully parsed scores of its review (:func:`resolve_fallbacks`).

Self-consistency repeats the whole procedure n times (later runs start at
temperature 0.5 for diversity) and averages, so scores downstream are
rationals, not just integers.

Transport problems (network, timeouts, 5xx) are retried with exponential
backoff separately from the parse-retry budget above, which only concerns
model behavior.
"""

from __future__ import annotations

import os
import re
import time
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Sequence

import requests

from .cache import cache_key
from .prompting import MessagePair, PromptVariant, RelevanceScale

INITIAL_TEMPERATURE = 0.0
RETRY_TEMPERATURE = 0.5
MAX_ATTEMPTS = 4  # 1 initial + up to 3 parse retries


class TransportError(RuntimeError):
    """The endpoint could not be reached or answered unusably."""


@dataclass(frozen=True)
class LlmEndpointConfig:
    """Where and how to reach the chat-completion service."""

    base_url: str
    model_name: str
    api_key_env: str = "SCREENRANK_LLM_API_KEY"
    max_tokens: int = 1024
    request_timeout: float = 120.0
    max_parallel: int = 4
    transport_retries: int = 3
    backoff_base: float = 0.5
    backoff_cap: float = 8.0

    def __post_init__(self) -> None:
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        if self.request_timeout <= 0:
            raise ValueError("request_timeout must be positive")


@dataclass(frozen=True)
class ScaleParse:
    """Outcome of extracting a score from one model response."""

    value: int | None = None
    failure: str | None = None  # no_match | out_of_range | multiple_conflicting

    @property
    def ok(self) -> bool:
        return self.value is not None


@dataclass(frozen=True)
class Judgment:
    """Graded relevance outcome for one paper, with its attempt trace.

    ``component_scores`` holds one entry per self-consistency run (a single
    entry for plain variants); ``None`` marks a run that exhausted its parse
    retries and waits for the review-level fallback value.
    """

    paper_id: str
    score: Fraction | None
    raw_responses: tuple[str, ...]
    attempts: int
    used_fallback: bool
    temperature_trace: tuple[float, ...]
    component_scores: tuple[Fraction | None, ...]
    fallback_value: Fraction | None = None

    def __post_init__(self) -> None:
        if (self.score is None) != self.used_fallback:
            raise ValueError("score must be present exactly when no fallback is used")
        if not 1 <= self.attempts <= MAX_ATTEMPTS:
            raise ValueError(f"attempts must be within 1..{MAX_ATTEMPTS}")

    def with_paper_id(self, paper_id: str) -> "Judgment":
        """Rebind a cached judgment to the paper currently being ranked."""
        if paper_id == self.paper_id:
            return self
        return replace(self, paper_id=paper_id)

    @property
    def effective_score(self) -> Fraction:
        """Final first-stage score; requires resolution if a fallback is pending."""
        if not self.used_fallback:
            assert self.score is not None
            return self.score
        if self.fallback_value is None:
            raise ValueError(f"paper {self.paper_id!r}: fallback value not yet resolved")
        resolved = [c if c is not None else self.fallback_value for c in self.component_scores]
        return sum(resolved, Fraction(0)) / len(resolved)

    def to_payload(self) -> dict:
        return {
            "paper_id": self.paper_id,
            "score": _frac_str(self.score),
            "raw_responses": list(self.raw_responses),
            "attempts": self.attempts,
            "used_fallback": self.used_fallback,
            "temperature_trace": list(self.temperature_trace),
            "component_scores": [_frac_str(c) for c in self.component_scores],
            "fallback_value": _frac_str(self.fallback_value),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "Judgment":
        return cls(
            paper_id=payload["paper_id"],
            score=_frac_parse(payload["score"]),
            raw_responses=tuple(payload["raw_responses"]),
            attempts=payload["attempts"],
            used_fallback=payload["used_fallback"],
            temperature_trace=tuple(payload["temperature_trace"]),
            component_scores=tuple(_frac_parse(c) for c in payload["component_scores"]),
            fallback_value=_frac_parse(payload["fallback_value"]),
        )


def _frac_str(value: Fraction | None) -> str | None:
    if value is None:
        return None
    return str(value)  # "7" or "7/2"


def _frac_parse(text: str | None) -> Fraction | None:
    return None if text is None else Fraction(text)


# The answer marker, case-insensitive, tolerating markdown around the word,
# the colon, and the number itself.
_DECISION_RE = re.compile(
    r"decision[\s*_`~]*:\s*[*_`~\"'\[\(]*\s*([+-]?\d+)",
    re.IGNORECASE,
)
_TRAILING_RANGE_RE = re.compile(r"^\s*[-–—]\s*\d+")


def parse_score(response: str, scale: RelevanceScale) -> ScaleParse:
    """Extract the integer after the last ``Decision:`` marker and range-check it.

    A range echo like ``Decision: 0 - 19`` is rejected as conflicting rather
    than silently read as its first endpoint.
    """
    matches = list(_DECISION_RE.finditer(response))
    if not matches:
        return ScaleParse(failure="no_match")
    last = matches[-1]
    if _TRAILING_RANGE_RE.match(response[last.end():]):
        return ScaleParse(failure="multiple_conflicting")
    value = int(last.group(1))
    if not scale.contains(value):
        return ScaleParse(failure="out_of_range")
    return ScaleParse(value=value)


class ChatCompletionClient:
    """Minimal JSON chat-completion client with transport-level retries."""

    RETRYABLE_STATUS = frozenset({408, 429, 500, 502, 503, 504})

    def __init__(self, config: LlmEndpointConfig, session: requests.Session | None = None):
        self.config = config
        self.session = session or requests.Session()

    def complete(self, messages: list[dict[str, str]], temperature: float) -> str:
        """One chat completion; returns the assistant message text."""
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        payload = {
            "model": self.config.model_name,
            "messages": messages,
            "temperature": temperature,
            "max_tokens": self.config.max_tokens,
        }
        headers = {}
        api_key = os.environ.get(self.config.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        delay = self.config.backoff_base
        last_error = "no attempt made"
        for attempt in range(self.config.transport_retries + 1):
            try:
                response = self.session.post(
                    url, json=payload, headers=headers, timeout=self.config.request_timeout
                )
            except requests.RequestException as exc:
                last_error = f"request failed: {exc}"
            else:
                if response.status_code == 200:
                    try:
                        body = response.json()
                        return body["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        last_error = f"malformed completion body: {exc}"
                elif response.status_code in self.RETRYABLE_STATUS:
                    last_error = f"HTTP {response.status_code}"
                else:
                    raise TransportError(
                        f"endpoint {url} rejected request: HTTP {response.status_code} "
                        f"{response.text[:200]}"
                    )
            if attempt < self.config.transport_retries:
                time.sleep(delay)
                delay = min(delay * 2, self.config.backoff_cap)
        raise TransportError(f"endpoint {url} unusable after retries: {last_error}")


def judge_paper(
    paper_id: str,
    messages: MessagePair,
    scale: RelevanceScale,
    client: ChatCompletionClient,
    initial_temperature: float = INITIAL_TEMPERATURE,
) -> Judgment:
    """One judgment run: parse retries at 0.5 after the initial temperature."""
    chat = messages.to_chat()
    raw: list[str] = []
    trace: list[float] = []
    for attempt in range(1, MAX_ATTEMPTS + 1):
        temperature = initial_temperature if attempt == 1 else RETRY_TEMPERATURE
        trace.append(temperature)
        response = client.complete(chat, temperature)
        raw.append(response)
        parsed = parse_score(response, scale)
        if parsed.ok:
            score = Fraction(parsed.value)
            return Judgment(
                paper_id=paper_id,
                score=score,
                raw_responses=tuple(raw),
                attempts=attempt,
                used_fallback=False,
                temperature_trace=tuple(trace),
                component_scores=(score,),
            )
    return Judgment(
        paper_id=paper_id,
        score=None,
        raw_responses=tuple(raw),
        attempts=MAX_ATTEMPTS,
        used_fallback=True,
        temperature_trace=tuple(trace),
        component_scores=(None,),
    )


def self_consistent_judge(
    paper_id: str,
    messages: MessagePair,
    scale: RelevanceScale,
    client: ChatCompletionClient,
    n: int,
) -> Judgment:
    """Average n independent judgment runs; later runs start at 0.5."""
    if n < 2:
        raise ValueError("self-consistency needs n >= 2 runs")
    runs = [
        judge_paper(
            paper_id,
            messages,
            scale,
            client,
            initial_temperature=INITIAL_TEMPERATURE if i == 0 else RETRY_TEMPERATURE,
        )
        for i in range(n)
    ]
    components = tuple(run.score for run in runs)
    parsed = [c for c in components if c is not None]
    pending_fallback = len(parsed) < n
    score = None if pending_fallback else sum(parsed, Fraction(0)) / n
    return Judgment(
        paper_id=paper_id,
        score=score,
        raw_responses=tuple(r for run in runs for r in run.raw_responses),
        attempts=max(run.attempts for run in runs),
        used_fallback=pending_fallback,
        temperature_trace=tuple(t for run in runs for t in run.temperature_trace),
        component_scores=components,
    )


def judge_with_variant(
    paper_id: str,
    messages: MessagePair,
    scale: RelevanceScale,
    client: ChatCompletionClient,
    variant: PromptVariant,
) -> Judgment:
    if variant.self_consistent:
        assert variant.n is not None
        return self_consistent_judge(paper_id, messages, scale, client, variant.n)
    return judge_paper(paper_id, messages, scale, client)


def resolve_fallbacks(judgments: Sequence[Judgment], scale: RelevanceScale) -> list[Judgment]:
    """Fill fallback values with the review's mean parsed score.

    The mean pools every successfully parsed generation of the review (each
    self-consistency run counts once).  If nothing parsed anywhere, the
    scale midpoint is used.  Parsed scores are never altered.
    """
    parsed: list[Fraction] = []
    for judgment in judgments:
        parsed.extend(c for c in judgment.component_scores if c is not None)
    if parsed:
        fallback = sum(parsed, Fraction(0)) / len(parsed)
    else:
        fallback = Fraction(scale.upper, 2)
    return [
        replace(j, fallback_value=fallback) if j.used_fallback else j
        for j in judgments
    ]


def judgment_cache_key(
    config: LlmEndpointConfig,
    messages: MessagePair,
    scale: RelevanceScale,
    variant: PromptVariant,
) -> str:
    return cache_key(
        model_name=config.model_name,
        messages=messages.to_chat(),
        scale_tag=str(scale),
        variant_tag=variant.cache_tag(),
        attempt_policy={
            "max_attempts": MAX_ATTEMPTS,
            "initial_temperature": INITIAL_TEMPERATURE,
            "retry_temperature": RETRY_TEMPERATURE,
        },
    )
