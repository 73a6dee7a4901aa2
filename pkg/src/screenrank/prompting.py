"""Chat message construction for graded relevance judgments.

The default assets under ``templates/`` hold the canonical zero-shot
system/user wording with named placeholders; pass a directory of files
with the same names to override any of them.  Step-by-step and few-shot
additions are house conventions layered on the same body:

* the step-by-step instruction is appended after the criteria and before
  the answer-format line, so the user text always *ends* with the format
  instruction;
* few-shot exemplar turns precede the query turn, positive first, and
  their assistant replies are the bare format line (``Decision: <score>``).

Research questions are joined with ``"; "`` into their slot; criteria
lists render as ``- `` bullet lines inside theirs.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import PaperRecord, SlrSpec

VARIANT_KINDS = (
    "zero_shot",
    "cot",
    "cot_self_consistency",
    "two_shot",
    "two_shot_cot",
    "two_shot_cot_self_consistency",
)


class PromptError(ValueError):
    """A message pair could not be built from the given inputs."""


class NoExemplarAvailableError(PromptError):
    """No paper qualifies as a few-shot exemplar for this review."""


@dataclass(frozen=True)
class RelevanceScale:
    """Integer judgment scale from 0 to ``upper`` inclusive."""

    upper: int
    lower: int = 0

    def __post_init__(self) -> None:
        if self.lower != 0:
            raise PromptError("scale lower bound is fixed at 0")
        if self.upper < 1:
            raise PromptError("scale upper bound must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "RelevanceScale":
        """Parse ``"0-19"`` style notation."""
        lower, sep, upper = text.partition("-")
        if not sep or lower.strip() != "0" or not upper.strip().isdigit():
            raise PromptError(f"cannot parse scale {text!r}; expected e.g. '0-19'")
        return cls(upper=int(upper))

    def __str__(self) -> str:
        return f"{self.lower}-{self.upper}"

    def contains(self, value: int) -> bool:
        return self.lower <= value <= self.upper


@dataclass(frozen=True)
class PromptVariant:
    """Prompting technique selector; ``n`` is the self-consistency run count."""

    kind: str
    n: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in VARIANT_KINDS:
            raise PromptError(f"unknown prompt variant {self.kind!r}")
        if self.self_consistent:
            if self.n is None or self.n < 2:
                raise PromptError(f"variant {self.kind!r} needs n >= 2 runs")
        elif self.n is not None:
            raise PromptError(f"variant {self.kind!r} does not take a run count")

    @property
    def self_consistent(self) -> bool:
        return self.kind.endswith("self_consistency")

    @property
    def uses_cot(self) -> bool:
        return "cot" in self.kind

    @property
    def uses_exemplars(self) -> bool:
        return self.kind.startswith("two_shot")

    def exemplar_source(self) -> "PromptVariant":
        """The single-run variant whose judgments seed exemplar selection."""
        if not self.uses_exemplars:
            raise PromptError(f"variant {self.kind!r} does not use exemplars")
        return PromptVariant("cot") if self.uses_cot else PromptVariant("zero_shot")

    def without_exemplars(self) -> "PromptVariant":
        """Same technique minus the exemplar turns (used when none qualify)."""
        if not self.uses_exemplars:
            return self
        kind = self.kind.removeprefix("two_shot_") if self.kind != "two_shot" else "zero_shot"
        return PromptVariant(kind, n=self.n)

    def cache_tag(self) -> str:
        return self.kind if self.n is None else f"{self.kind}:{self.n}"


@dataclass(frozen=True)
class FewShotExemplar:
    """A pool paper reused as an in-context example at a scale endpoint."""

    paper: PaperRecord
    assigned_score: int
    gold_label: int

    def __post_init__(self) -> None:
        valid = (self.gold_label == 1 and self.assigned_score > 0) or (
            self.gold_label == 0 and self.assigned_score == 0
        )
        if not valid:
            raise PromptError(
                "exemplar score must sit at the endpoint matching its gold label"
            )


@dataclass(frozen=True)
class MessagePair:
    """System/user texts plus optional exemplar turns, positive first."""

    system: str
    user: str
    exemplars: tuple[tuple[str, str], ...] = ()

    def to_chat(self) -> list[dict[str, str]]:
        """Wire-format message list for a chat-completion request."""
        messages = [{"role": "system", "content": self.system}]
        for user_text, assistant_text in self.exemplars:
            messages.append({"role": "user", "content": user_text})
            messages.append({"role": "assistant", "content": assistant_text})
        messages.append({"role": "user", "content": self.user})
        return messages


@dataclass(frozen=True)
class PromptTemplates:
    system: str
    user_task: str
    answer_format: str
    cot_instruction: str

    _ASSETS = ("system", "user_task", "answer_format", "cot_instruction")

    @classmethod
    def default(cls) -> "PromptTemplates":
        package = resources.files(__package__) / "templates"
        return cls(**{
            name: (package / f"{name}.txt").read_text(encoding="utf-8").removesuffix("\n")
            for name in cls._ASSETS
        })

    @classmethod
    def from_dir(cls, path: Path | str) -> "PromptTemplates":
        """Override any asset by dropping a same-named .txt file in ``path``."""
        base = Path(path)
        defaults = cls.default()
        values = {}
        for name in cls._ASSETS:
            candidate = base / f"{name}.txt"
            if candidate.exists():
                values[name] = candidate.read_text(encoding="utf-8").removesuffix("\n")
            else:
                values[name] = getattr(defaults, name)
        return cls(**values)


def _bullets(items: Sequence[str]) -> str:
    return "\n".join(f"- {item}" for item in items)


def render_user_text(
    templates: PromptTemplates,
    slr: SlrSpec,
    paper: PaperRecord,
    scale: RelevanceScale,
    with_cot: bool,
) -> str:
    if not paper.title.strip():
        raise PromptError(f"paper {paper.paper_id!r} has an empty title")
    body = templates.user_task.format(
        relevance_lower_value=scale.lower,
        relevance_upper_value=scale.upper,
        title_paper=paper.title,
        abstract=paper.abstract,
        inclusion_criteria=_bullets(slr.inclusion_criteria),
        exclusion_criteria=_bullets(slr.exclusion_criteria),
    )
    format_line = templates.answer_format.format(
        relevance_lower_value=scale.lower,
        relevance_upper_value=scale.upper,
    )
    parts = [body]
    if with_cot:
        parts.append(templates.cot_instruction)
    parts.append(format_line)
    return "\n".join(parts)


def exemplar_reply(score: int) -> str:
    return f"Decision: {score}"


def build_messages(
    slr: SlrSpec,
    paper: PaperRecord,
    scale: RelevanceScale,
    variant: PromptVariant,
    exemplars: tuple[FewShotExemplar, FewShotExemplar] | None = None,
    templates: PromptTemplates | None = None,
) -> MessagePair:
    """Render the full message pair for one (review, paper) judgment.

    ``exemplars`` must be the (positive, negative) pair for two-shot
    variants and absent otherwise.
    """
    templates = templates or PromptTemplates.default()
    if variant.uses_exemplars and exemplars is None:
        raise PromptError(f"variant {variant.kind!r} requires a (positive, negative) exemplar pair")
    if not variant.uses_exemplars and exemplars is not None:
        raise PromptError(f"variant {variant.kind!r} does not take exemplars")
    if not slr.title.strip():
        raise PromptError(f"SLR {slr.slr_id!r} has an empty title")

    system = templates.system.format(
        title=slr.title,
        research_questions="; ".join(slr.research_questions),
    )
    user = render_user_text(templates, slr, paper, scale, with_cot=variant.uses_cot)

    exemplar_turns: tuple[tuple[str, str], ...] = ()
    if exemplars is not None:
        positive, negative = exemplars
        if positive.gold_label != 1 or negative.gold_label != 0:
            raise PromptError("exemplars must be passed as (positive, negative)")
        if positive.assigned_score != scale.upper:
            raise PromptError("positive exemplar score must equal the scale upper bound")
        exemplar_turns = tuple(
            (
                render_user_text(templates, slr, ex.paper, scale, with_cot=variant.uses_cot),
                exemplar_reply(ex.assigned_score),
            )
            for ex in (positive, negative)
        )
    return MessagePair(system=system, user=user, exemplars=exemplar_turns)


def select_few_shot(
    judgments: Iterable,
    pool: Sequence[PaperRecord],
    scale: RelevanceScale,
    seed: int,
) -> tuple[FewShotExemplar, FewShotExemplar, list[PaperRecord]]:
    """Pick one positive and one negative exemplar from prior judgments.

    ``judgments`` are single-run outcomes for this pool (objects with
    ``paper_id``, ``score`` and ``used_fallback`` attributes).  The positive
    exemplar is drawn uniformly from gold-relevant papers the model scored
    at the top of the scale, the negative one from gold-irrelevant papers
    scored 0; both come out of the returned reduced pool.
    """
    by_id = {p.paper_id: p for p in pool}
    positives: list[PaperRecord] = []
    negatives: list[PaperRecord] = []
    for judgment in judgments:
        paper = by_id.get(judgment.paper_id)
        if paper is None or judgment.used_fallback:
            continue
        if paper.label == 1 and judgment.score == scale.upper:
            positives.append(paper)
        elif paper.label == 0 and judgment.score == scale.lower:
            negatives.append(paper)
    if not positives:
        raise NoExemplarAvailableError(
            f"no exemplar available: no gold-relevant paper scored {scale.upper}"
        )
    if not negatives:
        raise NoExemplarAvailableError(
            f"no exemplar available: no gold-irrelevant paper scored {scale.lower}"
        )
    rng = random.Random(seed)
    pos_paper = rng.choice(sorted(positives, key=lambda p: p.paper_id))
    neg_paper = rng.choice(sorted(negatives, key=lambda p: p.paper_id))
    reduced = [p for p in pool if p.paper_id not in (pos_paper.paper_id, neg_paper.paper_id)]
    return (
        FewShotExemplar(paper=pos_paper, assigned_score=scale.upper, gold_label=1),
        FewShotExemplar(paper=neg_paper, assigned_score=scale.lower, gold_label=0),
        reduced,
    )
