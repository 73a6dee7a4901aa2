"""Two-stage ranking runs over a dataset.

Per review: every pool paper receives a first-stage graded score from the
judge (through the cache when possible), fallbacks are resolved at the
review level, and papers sharing a first-stage score are ordered by the
second-stage scorer, which is invoked once over the whole pool.  The
global order sorts by (first-stage score desc, rerank score desc,
paper_id asc), so ties across both scores still yield a total, stable
order; the tie-break rule is echoed in the run manifest.

Run files hold one line per paper, ``slr_id paper_id rank llm_score
rerank_score fingerprint``, with the first-stage score rendered as an
exact rational (e.g. ``13/3``) so grouping survives a round trip.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .cache import JudgmentCache
from .corpus import Dataset, SlrEntry, load_dataset
from .judge import (
    ChatCompletionClient,
    Judgment,
    LlmEndpointConfig,
    TransportError,
    judge_with_variant,
    judgment_cache_key,
    resolve_fallbacks,
)
from .metrics import (
    LabeledRanking,
    MetricReport,
    PoolMetrics,
    aggregate,
    evaluate_ranking,
)
from .prompting import (
    MessagePair,
    NoExemplarAvailableError,
    PromptTemplates,
    PromptVariant,
    RelevanceScale,
    build_messages,
    select_few_shot,
)
from .rerankers import (
    DEFAULT_B,
    DEFAULT_K1,
    RemoteRerankConfig,
    RerankQuery,
    RerankScoreSet,
    bm25_scores,
    build_query,
    derive_seed,
    pool_documents,
    random_scores,
    remote_scores,
)

TIE_BREAK_RULE = "llm_score desc, rerank_score desc, paper_id asc"

SCORER_KINDS = ("bm25", "remote", "random")
RUN_MODES = ("two_stage", "scorer_only")


class PipelineError(RuntimeError):
    """A run could not be completed."""


class ValidationError(ValueError):
    """Inputs failed validation before any work started."""


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a run; see ``fingerprint`` for the echo."""

    dataset: str
    data_root: Path
    out_dir: Path
    scale: RelevanceScale = RelevanceScale(upper=19)
    variant: PromptVariant = PromptVariant("zero_shot")
    query_mode: str = "title_only"
    scorer: str = "bm25"
    mode: str = "two_stage"
    llm: LlmEndpointConfig | None = None
    rerank: RemoteRerankConfig | None = None
    cache_dir: Path | None = None
    slr_filter: tuple[str, ...] = ()
    seed: int = 0
    max_parallel: int = 1
    skip_on_transport_error: bool = False
    bm25_k1: float = DEFAULT_K1
    bm25_b: float = DEFAULT_B
    templates: PromptTemplates | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.scorer not in SCORER_KINDS:
            raise ValidationError(f"unknown scorer {self.scorer!r}")
        if self.mode not in RUN_MODES:
            raise ValidationError(f"unknown run mode {self.mode!r}")
        if self.query_mode not in ("title_only", "title_plus_rq"):
            raise ValidationError(f"unknown query mode {self.query_mode!r}")
        if self.scorer == "remote" and self.rerank is None:
            raise ValidationError("remote scorer requires a rerank endpoint config")

    def scorer_descriptor(self) -> str:
        if self.scorer == "bm25":
            return f"bm25(k1={self.bm25_k1},b={self.bm25_b})"
        if self.scorer == "remote":
            return self.rerank.scorer_id if self.rerank else "remote"
        return f"random(seed={self.seed})"

    def fingerprint_payload(self) -> dict:
        return {
            "dataset": self.dataset,
            "mode": self.mode,
            "scale": str(self.scale),
            "variant": self.variant.cache_tag(),
            "query_mode": self.query_mode,
            "scorer": self.scorer_descriptor(),
            "model": self.llm.model_name if self.llm else None,
            "seed": self.seed,
            "slr_filter": sorted(self.slr_filter),
        }

    @property
    def fingerprint(self) -> str:
        canonical = json.dumps(self.fingerprint_payload(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class RankedEntry:
    paper_id: str
    llm_score: Fraction
    rerank_score: float
    rank: int
    provenance: Judgment | None


@dataclass(frozen=True)
class RankedList:
    slr_id: str
    entries: tuple[RankedEntry, ...]
    fingerprint: str
    removed_exemplars: tuple[str, ...] = ()
    few_shot_skipped: bool = False

    def paper_ids(self) -> list[str]:
        return [e.paper_id for e in self.entries]


def order_two_stage(
    llm_scores: Mapping[str, Fraction],
    rerank_scores: Mapping[str, float],
) -> list[str]:
    """Global order: first-stage score, then rerank score, then paper id."""
    if set(llm_scores) != set(rerank_scores):
        raise PipelineError("first- and second-stage scores cover different papers")
    return sorted(
        llm_scores,
        key=lambda pid: (-llm_scores[pid], -rerank_scores[pid], pid),
    )


def group_sizes(llm_scores: Mapping[str, Fraction]) -> dict[Fraction, int]:
    sizes: dict[Fraction, int] = {}
    for score in llm_scores.values():
        sizes[score] = sizes.get(score, 0) + 1
    return sizes


class _Judge:
    """Cache-aware judging of one pool, bounded by ``max_parallel``."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.cache = JudgmentCache(config.cache_dir) if config.cache_dir else None
        self._client: ChatCompletionClient | None = None

    @property
    def live_possible(self) -> bool:
        return self.config.llm is not None

    def _get_client(self) -> ChatCompletionClient:
        if self.config.llm is None:
            raise PipelineError(
                "judgment missing from cache and no LLM endpoint is configured"
            )
        if self._client is None:
            self._client = ChatCompletionClient(self.config.llm)
        return self._client

    def judge_one(
        self, paper_id: str, messages: MessagePair, variant: PromptVariant
    ) -> Judgment:
        key = None
        if self.cache is not None and self.config.llm is not None:
            key = judgment_cache_key(self.config.llm, messages, self.config.scale, variant)
        if key is not None:
            payload = self.cache.get(key)
            if payload is not None:
                return Judgment.from_payload(payload).with_paper_id(paper_id)
        try:
            judgment = judge_with_variant(
                paper_id, messages, self.config.scale, self._get_client(), variant
            )
        except TransportError as exc:
            raise TransportError(f"paper {paper_id!r}: {exc}") from exc
        if key is not None:
            self.cache.put(key, judgment.to_payload())
        return judgment

    def judge_pool(
        self,
        entry: SlrEntry,
        papers: Sequence,
        variant: PromptVariant,
        exemplars=None,
    ) -> list[Judgment]:
        jobs = []
        for paper in papers:
            messages = build_messages(
                entry.spec,
                paper,
                self.config.scale,
                variant,
                exemplars=exemplars,
                templates=self.config.templates,
            )
            jobs.append((paper.paper_id, messages))
        if self.config.max_parallel > 1:
            with ThreadPoolExecutor(max_workers=self.config.max_parallel) as pool:
                futures = [
                    pool.submit(self.judge_one, paper_id, messages, variant)
                    for paper_id, messages in jobs
                ]
                results = [f.result() for f in futures]
        else:
            results = [self.judge_one(pid, msgs, variant) for pid, msgs in jobs]
        return results  # pool file order


def _scorer_callable(
    config: RunConfig, slr_id: str
) -> Callable[[RerankQuery, list], RerankScoreSet]:
    if config.scorer == "bm25":
        return lambda query, docs: bm25_scores(query, docs, config.bm25_k1, config.bm25_b)
    if config.scorer == "remote":
        assert config.rerank is not None
        return lambda query, docs: remote_scores(query, docs, config.rerank)
    slr_seed = derive_seed(config.seed, slr_id)
    return lambda query, docs: random_scores(docs, slr_seed)


def rank_slr(entry: SlrEntry, config: RunConfig, judge: _Judge | None = None) -> RankedList:
    """Produce the fully ordered list for one review."""
    judge = judge or _Judge(config)
    slr_id = entry.spec.slr_id
    papers = list(entry.papers)
    removed: tuple[str, ...] = ()
    few_shot_skipped = False
    judgments: list[Judgment]

    if config.mode == "scorer_only":
        llm_scores = {p.paper_id: Fraction(0) for p in papers}
        provenance: dict[str, Judgment] = {}
    else:
        variant = config.variant
        exemplars = None
        if variant.uses_exemplars:
            source = variant.exemplar_source()
            pre_pass = judge.judge_pool(entry, papers, source)
            try:
                positive, negative, papers = select_few_shot(
                    pre_pass, papers, config.scale, seed=derive_seed(config.seed, slr_id)
                )
                exemplars = (positive, negative)
                removed = (positive.paper.paper_id, negative.paper.paper_id)
            except NoExemplarAvailableError:
                variant = variant.without_exemplars()
                few_shot_skipped = True
        judgments = judge.judge_pool(entry, papers, variant, exemplars=exemplars)
        judgments = resolve_fallbacks(judgments, config.scale)
        llm_scores = {j.paper_id: j.effective_score for j in judgments}
        provenance = {j.paper_id: j for j in judgments}

    documents = pool_documents(papers)
    if documents:
        query = _rerank_query(entry, config)
        score_set = _scorer_callable(config, slr_id)(query, documents)
        rerank_scores = score_set.scores
    else:
        rerank_scores = {}

    ordering = order_two_stage(llm_scores, rerank_scores)
    entries = tuple(
        RankedEntry(
            paper_id=pid,
            llm_score=llm_scores[pid],
            rerank_score=rerank_scores[pid],
            rank=rank,
            provenance=provenance.get(pid),
        )
        for rank, pid in enumerate(ordering, start=1)
    )
    return RankedList(
        slr_id=slr_id,
        entries=entries,
        fingerprint=config.fingerprint,
        removed_exemplars=removed,
        few_shot_skipped=few_shot_skipped,
    )


def _rerank_query(entry: SlrEntry, config: RunConfig) -> RerankQuery:
    if config.scorer == "random":
        # random scoring ignores the query text; title always exists
        return build_query(entry.spec, "title_only")
    return build_query(entry.spec, config.query_mode)


@dataclass
class RunResult:
    ranked: list[RankedList]
    manifest: dict
    failures: dict[str, str]
    out_dir: Path


def _select_entries(dataset: Dataset, config: RunConfig) -> list[SlrEntry]:
    if not config.slr_filter:
        return list(dataset.entries)
    unknown = set(config.slr_filter) - set(dataset.slr_ids())
    if unknown:
        raise ValidationError(f"unknown slr ids in filter: {sorted(unknown)}")
    return [e for e in dataset.entries if e.spec.slr_id in config.slr_filter]


def _preflight(entries: Sequence[SlrEntry], config: RunConfig) -> None:
    if config.query_mode == "title_plus_rq":
        missing = [e.spec.slr_id for e in entries if not e.spec.research_questions]
        if missing:
            raise ValidationError(
                f"query mode title_plus_rq needs research questions; missing for {missing}"
            )
    if config.mode == "two_stage" and config.llm is None:
        raise ValidationError(
            "two-stage runs need an LLM endpoint config (its model name keys "
            "the judgment cache); with a warm cache no live calls are made"
        )


def run_dataset(config: RunConfig) -> RunResult:
    """Rank every selected review and write run files plus a manifest."""
    started = time.time()
    dataset = load_dataset(config.data_root, config.dataset)
    entries = _select_entries(dataset, config)
    _preflight(entries, config)

    judge = _Judge(config)
    ranked: list[RankedList] = []
    failures: dict[str, str] = {}
    for entry in entries:
        try:
            ranked.append(rank_slr(entry, config, judge))
        except (TransportError, PipelineError) as exc:
            if not config.skip_on_transport_error:
                raise PipelineError(f"SLR {entry.spec.slr_id!r} failed: {exc}") from exc
            failures[entry.spec.slr_id] = str(exc)

    out_dir = Path(config.out_dir)
    runs_dir = out_dir / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)
    for ranking in ranked:
        write_run_file(runs_dir / f"{ranking.slr_id}.run", ranking)

    fallback_counts = {
        r.slr_id: sum(
            1 for e in r.entries if e.provenance is not None and e.provenance.used_fallback
        )
        for r in ranked
    }
    manifest = {
        "config": _jsonable_config(config),
        "fingerprint": config.fingerprint,
        "tie_break": TIE_BREAK_RULE,
        "ranked_slrs": [r.slr_id for r in ranked],
        "failures": failures,
        "fallback_counts": fallback_counts,
        "total_fallbacks": sum(fallback_counts.values()),
        "removed_exemplars": {
            r.slr_id: list(r.removed_exemplars) for r in ranked if r.removed_exemplars
        },
        "few_shot_skipped": [r.slr_id for r in ranked if r.few_shot_skipped],
        "cache": {
            "hits": judge.cache.hits if judge.cache else 0,
            "misses": judge.cache.misses if judge.cache else 0,
            "hit_rate": judge.cache.hit_rate if judge.cache else 0.0,
        },
        "wall_time_s": round(time.time() - started, 3),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return RunResult(ranked=ranked, manifest=manifest, failures=failures, out_dir=out_dir)


def _jsonable_config(config: RunConfig) -> dict:
    payload = config.fingerprint_payload()
    payload.update(
        {
            "data_root": str(config.data_root),
            "out_dir": str(config.out_dir),
            "cache_dir": str(config.cache_dir) if config.cache_dir else None,
            "max_parallel": config.max_parallel,
            "skip_on_transport_error": config.skip_on_transport_error,
            "llm": None
            if config.llm is None
            else {
                "base_url": config.llm.base_url,
                "model_name": config.llm.model_name,
                "api_key_env": config.llm.api_key_env,
                "max_tokens": config.llm.max_tokens,
            },
            "rerank_endpoint": None if config.rerank is None else config.rerank.base_url,
        }
    )
    return payload


def write_run_file(path: Path, ranking: RankedList) -> None:
    lines = [
        " ".join(
            [
                ranking.slr_id,
                entry.paper_id,
                str(entry.rank),
                str(entry.llm_score),
                repr(entry.rerank_score),
                ranking.fingerprint,
            ]
        )
        for entry in ranking.entries
    ]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_run_file(path: Path) -> list[dict]:
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValidationError(f"{path}:{lineno}: run line must have 6 fields")
        slr_id, paper_id, rank, llm_score, rerank_score, fingerprint = parts
        rows.append(
            {
                "slr_id": slr_id,
                "paper_id": paper_id,
                "rank": int(rank),
                "llm_score": Fraction(llm_score),
                "rerank_score": float(rerank_score),
                "fingerprint": fingerprint,
            }
        )
    return rows


def evaluate_runs(
    dataset: Dataset,
    run_dir: Path | str,
    averaging: str = "macro",
) -> MetricReport:
    """Score every run file in ``run_dir`` against the dataset's labels.

    Every ranked paper must exist in its pool, and the ranking must cover
    the whole pool except exemplars recorded in the manifest next to the
    run files.  Pools without relevant papers are excluded from
    aggregation and listed in the report.
    """
    run_dir = Path(run_dir)
    runs_dir = run_dir / "runs" if (run_dir / "runs").is_dir() else run_dir
    run_files = sorted(runs_dir.glob("*.run"))
    if not run_files:
        raise ValidationError(f"no run files found under {runs_dir}")

    removed_by_slr: dict[str, list[str]] = {}
    manifest_path = run_dir / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        removed_by_slr = manifest.get("removed_exemplars", {})

    per_slr: dict[str, PoolMetrics] = {}
    excluded: list[str] = []
    for run_file in run_files:
        rows = read_run_file(run_file)
        if not rows:
            continue
        slr_id = rows[0]["slr_id"]
        try:
            entry = dataset.get(slr_id)
        except KeyError:
            raise ValidationError(f"{run_file}: unknown slr_id {slr_id!r}") from None
        labels = entry.labels_by_id()
        ranked_ids = [row["paper_id"] for row in rows]
        unknown = [pid for pid in ranked_ids if pid not in labels]
        if unknown:
            raise ValidationError(f"{run_file}: unknown paper ids {unknown[:5]}")
        expected = set(labels) - set(removed_by_slr.get(slr_id, []))
        missing = expected - set(ranked_ids)
        if missing:
            raise ValidationError(
                f"{run_file}: ranking incomplete; missing {sorted(missing)[:5]}"
            )
        ordered = sorted(rows, key=lambda row: row["rank"])
        label_sequence = tuple(labels[row["paper_id"]] for row in ordered)
        if sum(label_sequence) == 0:
            excluded.append(slr_id)
            continue
        per_slr[slr_id] = evaluate_ranking(LabeledRanking(label_sequence))
    if not per_slr:
        raise ValidationError("no evaluable runs: every pool lacks relevant papers")
    return aggregate(per_slr, mode=averaging, excluded=excluded)


@dataclass(frozen=True)
class ScaleSweepStat:
    """Per-scale grouping statistics over the ranked reviews."""

    scale: str
    mean_distinct_scores: float
    mean_group_size: float


def grouping_statistics(ranked: Sequence[RankedList]) -> tuple[float, float]:
    """(mean distinct first-stage scores, mean group size) over reviews."""
    if not ranked:
        raise PipelineError("no ranked lists to summarize")
    distinct_counts = []
    group_size_means = []
    for ranking in ranked:
        scores = [entry.llm_score for entry in ranking.entries]
        if not scores:
            continue
        distinct = len(set(scores))
        distinct_counts.append(distinct)
        group_size_means.append(len(scores) / distinct)
    if not distinct_counts:
        raise PipelineError("ranked lists are all empty")
    return (
        sum(distinct_counts) / len(distinct_counts),
        sum(group_size_means) / len(group_size_means),
    )


def ablation_sweep(
    config: RunConfig, scales: Sequence[RelevanceScale]
) -> tuple[list[RunResult], list[ScaleSweepStat]]:
    """One full run per scale, each in its own subdirectory of ``out_dir``."""
    if not scales:
        raise ValidationError("scale sweep needs at least one scale")
    results: list[RunResult] = []
    stats: list[ScaleSweepStat] = []
    for scale in scales:
        scale_config = replace(
            config, scale=scale, out_dir=Path(config.out_dir) / f"scale_{scale}"
        )
        result = run_dataset(scale_config)
        distinct, group_size = grouping_statistics(result.ranked)
        results.append(result)
        stats.append(
            ScaleSweepStat(
                scale=str(scale),
                mean_distinct_scores=distinct,
                mean_group_size=group_size,
            )
        )
    return results, stats
