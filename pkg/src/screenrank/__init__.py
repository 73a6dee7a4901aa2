"""Two-stage ranking engine and evaluation harness for abstract screening.

First stage: an instruction-following language model assigns each candidate
paper a graded relevance score against the review's criteria and research
questions.  Second stage: a scorer (BM25, a remote cross-encoder service,
or a seeded random baseline) orders the papers that share a first-stage
score, yielding a fully ordered list.  The metrics module evaluates such
rankings with average precision, recall at k% screened, and work saved
over sampling (plus its normalized form, the true-negative rate).
"""

from .corpus import (
    CorpusError,
    Dataset,
    PaperRecord,
    SlrEntry,
    SlrSpec,
    inclusion_rate,
    load_dataset,
    read_qrels,
    save_dataset,
)
from .judge import (
    ChatCompletionClient,
    Judgment,
    LlmEndpointConfig,
    TransportError,
    judge_paper,
    parse_score,
    resolve_fallbacks,
    self_consistent_judge,
)
from .metrics import (
    LabeledRanking,
    MetricReport,
    aggregate,
    average_precision,
    confusion_at_recall,
    evaluate_ranking,
    normalized_wss_at_recall,
    recall_at_percent,
    tnr_at_recall,
    wss_at_recall,
)
from .pipeline import (
    RankedEntry,
    RankedList,
    RunConfig,
    ablation_sweep,
    evaluate_runs,
    rank_slr,
    run_dataset,
)
from .prompting import (
    FewShotExemplar,
    MessagePair,
    PromptTemplates,
    PromptVariant,
    RelevanceScale,
    build_messages,
    select_few_shot,
)
from .rerankers import (
    RemoteRerankConfig,
    RerankDocument,
    RerankQuery,
    RerankScoreSet,
    bm25_scores,
    build_query,
    random_scores,
    remote_scores,
)

__version__ = "0.1.0"

__all__ = [
    "CorpusError",
    "Dataset",
    "PaperRecord",
    "SlrEntry",
    "SlrSpec",
    "inclusion_rate",
    "load_dataset",
    "read_qrels",
    "save_dataset",
    "ChatCompletionClient",
    "Judgment",
    "LlmEndpointConfig",
    "TransportError",
    "judge_paper",
    "parse_score",
    "resolve_fallbacks",
    "self_consistent_judge",
    "LabeledRanking",
    "MetricReport",
    "aggregate",
    "average_precision",
    "confusion_at_recall",
    "evaluate_ranking",
    "normalized_wss_at_recall",
    "recall_at_percent",
    "tnr_at_recall",
    "wss_at_recall",
    "RankedEntry",
    "RankedList",
    "RunConfig",
    "ablation_sweep",
    "evaluate_runs",
    "rank_slr",
    "run_dataset",
    "FewShotExemplar",
    "MessagePair",
    "PromptTemplates",
    "PromptVariant",
    "RelevanceScale",
    "build_messages",
    "select_few_shot",
    "RemoteRerankConfig",
    "RerankDocument",
    "RerankQuery",
    "RerankScoreSet",
    "bm25_scores",
    "build_query",
    "random_scores",
    "remote_scores",
]
