"""Evaluation measures for screening prioritisation.

Given a ranked pool with binary relevance labels, this module computes
average precision, recall after screening the top k% of the pool, work
saved over sampling at a recall target (WSS@r%), and its min-max
normalized form, which equals the true-negative rate at the cutoff that
reaches the target (TNR@r%).

All arithmetic is exact rational (`fractions.Fraction`); values are
rendered to decimals only when a report is serialized.  This keeps
aggregates independent of summation order.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

#: Recall cutoffs (percent of pool screened) reported by default.
RECALL_PERCENTS = (1, 5, 10, 20, 50)

#: Recall targets for WSS / TNR, as exact fractions.
RECALL_TARGETS = (Fraction(95, 100), Fraction(100, 100))

Rational = Fraction | int


class MetricError(ValueError):
    """A metric was requested for an input it is undefined on."""


class NoRelevantPapersError(MetricError):
    """The ranking contains no relevant papers; per-pool metrics are undefined."""


@dataclass(frozen=True)
class LabeledRanking:
    """A ranked candidate pool reduced to its binary labels, rank 1 first."""

    labels: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.labels) < 1:
            raise MetricError("ranking must contain at least one paper")
        if any(y not in (0, 1) for y in self.labels):
            raise MetricError("labels must be 0 or 1")

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def relevant_count(self) -> int:
        return sum(self.labels)

    def require_relevant(self) -> None:
        if self.relevant_count == 0:
            raise NoRelevantPapersError("no relevant papers in ranking")


@dataclass(frozen=True)
class CutoffConfusion:
    """Confusion counts after screening the top ``n`` of the ranking."""

    n: int
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self) -> None:
        if min(self.n, self.tp, self.fp, self.fn, self.tn) < 0:
            raise MetricError("confusion counts must be non-negative")
        if self.tp + self.fp != self.n:
            raise MetricError("tp + fp must equal the screened prefix length")


def screening_depth(pool_size: int, percent: Rational) -> int:
    """Number of papers screened at a ``percent`` cutoff: ceil(percent/100 * N).

    The ceiling convention ("screen at least k%") is isolated here so a
    different rounding rule only needs one change.
    """
    if not 0 < percent <= 100:
        raise MetricError(f"percent cutoff must be in (0, 100], got {percent}")
    return math.ceil(Fraction(percent) * pool_size / 100)


def required_relevant(relevant_count: int, target: Rational) -> int:
    """Relevant papers needed to reach recall ``target``: ceil(target * P)."""
    if not 0 < target <= 1:
        raise MetricError(f"recall target must be in (0, 1], got {target}")
    return math.ceil(Fraction(target) * relevant_count)


def average_precision(ranking: LabeledRanking) -> Fraction:
    """AP = (1/P) * sum over relevant ranks i of (relevant in top i) / i."""
    ranking.require_relevant()
    hits = 0
    total = Fraction(0)
    for rank, label in enumerate(ranking.labels, start=1):
        if label:
            hits += 1
            total += Fraction(hits, rank)
    return total / ranking.relevant_count


def recall_at_percent(ranking: LabeledRanking, percent: Rational) -> Fraction:
    """Fraction of relevant papers found in the top ceil(percent% * N)."""
    ranking.require_relevant()
    n = screening_depth(ranking.size, percent)
    return Fraction(sum(ranking.labels[:n]), ranking.relevant_count)


def confusion_at_recall(ranking: LabeledRanking, target: Rational) -> CutoffConfusion:
    """Confusion counts at the smallest prefix reaching recall ``target``."""
    ranking.require_relevant()
    needed = required_relevant(ranking.relevant_count, target)
    seen = 0
    n = ranking.size
    for rank, label in enumerate(ranking.labels, start=1):
        seen += label
        if seen >= needed:
            n = rank
            break
    tp = sum(ranking.labels[:n])
    fp = n - tp
    fn = ranking.relevant_count - tp
    tn = ranking.size - n - fn
    return CutoffConfusion(n=n, tp=tp, fp=fp, fn=fn, tn=tn)


def wss_at_recall(ranking: LabeledRanking, target: Rational) -> Fraction:
    """Work saved over sampling: (TN + FN) / N - (1 - target)."""
    c = confusion_at_recall(ranking, target)
    return Fraction(c.tn + c.fn, ranking.size) - (1 - Fraction(target))


def tnr_at_recall(ranking: LabeledRanking, target: Rational) -> Fraction:
    """True-negative rate TN / (TN + FP) at the recall-target cutoff.

    When the pool has no irrelevant papers the rate is vacuously 1; callers
    can detect the degenerate case via ``is_degenerate``.
    """
    c = confusion_at_recall(ranking, target)
    if c.tn + c.fp == 0:
        return Fraction(1)
    return Fraction(c.tn, c.tn + c.fp)


def is_degenerate(ranking: LabeledRanking) -> bool:
    """True when the pool has no irrelevant papers (TNR is vacuous)."""
    return ranking.relevant_count == ranking.size


def normalized_wss_at_recall(ranking: LabeledRanking, target: Rational) -> Fraction:
    """Min-max normalized WSS: (WSS - WSS_worst) / (WSS_best - WSS_worst).

    Computed from the best and worst achievable cutoff positions for this
    pool at this target; an independent path to the same quantity as
    :func:`tnr_at_recall`, kept separate so the identity can be checked.
    """
    ranking.require_relevant()
    size = ranking.size
    relevant = ranking.relevant_count
    needed = required_relevant(relevant, target)
    actual = wss_at_recall(ranking, target)
    # WSS depends on the cutoff only through n: WSS = target - n/N.
    best = Fraction(target) - Fraction(needed, size)
    worst = Fraction(target) - Fraction(size - relevant + needed, size)
    if best == worst:
        return Fraction(1)
    return (actual - worst) / (best - worst)


def _recall_counts(ranking: LabeledRanking, percent: Rational) -> tuple[int, int]:
    """(TP, TP + FN) at a percent cutoff, for pooled (micro) recall."""
    n = screening_depth(ranking.size, percent)
    return sum(ranking.labels[:n]), ranking.relevant_count


@dataclass(frozen=True)
class PoolMetrics:
    """All reported measures for one ranked pool."""

    pool_size: int
    relevant_count: int
    ap: Fraction
    recall: dict[int, Fraction]
    wss: dict[Fraction, Fraction]
    tnr: dict[Fraction, Fraction]
    degenerate_tnr: bool
    recall_counts: dict[int, tuple[int, int]] = field(repr=False)

    def as_row(self) -> dict[str, Fraction]:
        row: dict[str, Fraction] = {"MAP": self.ap}
        for target in sorted(self.tnr):
            row[f"TNR@{_pct(target)}%"] = self.tnr[target]
        for k in sorted(self.recall):
            row[f"R@{k}%"] = self.recall[k]
        for target in sorted(self.wss):
            row[f"WSS@{_pct(target)}%"] = self.wss[target]
        return row


def _pct(target: Fraction) -> str:
    value = Fraction(target) * 100
    return str(int(value)) if value.denominator == 1 else str(float(value))


def evaluate_ranking(
    ranking: LabeledRanking,
    recall_percents: Sequence[int] = RECALL_PERCENTS,
    recall_targets: Sequence[Rational] = RECALL_TARGETS,
) -> PoolMetrics:
    """Compute every reported measure for one ranked pool (P >= 1)."""
    ranking.require_relevant()
    return PoolMetrics(
        pool_size=ranking.size,
        relevant_count=ranking.relevant_count,
        ap=average_precision(ranking),
        recall={k: recall_at_percent(ranking, k) for k in recall_percents},
        wss={Fraction(t): wss_at_recall(ranking, t) for t in recall_targets},
        tnr={Fraction(t): tnr_at_recall(ranking, t) for t in recall_targets},
        degenerate_tnr=is_degenerate(ranking),
        recall_counts={k: _recall_counts(ranking, k) for k in recall_percents},
    )


@dataclass
class MetricReport:
    """Per-pool rows plus aggregate rows.

    ``per_slr`` maps slr_id to its :class:`PoolMetrics`; pools without
    relevant papers are excluded from aggregation and listed separately.
    The macro row is the unweighted mean of per-pool values; the optional
    micro row replaces the recall columns with pooled-count ratios.
    """

    per_slr: dict[str, PoolMetrics]
    excluded: list[str] = field(default_factory=list)
    averaging: str = "macro"

    def __post_init__(self) -> None:
        if self.averaging not in ("macro", "micro"):
            raise MetricError(f"unknown averaging mode {self.averaging!r}")

    @property
    def macro(self) -> dict[str, Fraction]:
        ids = sorted(self.per_slr)
        if not ids:
            raise MetricError("no pools with relevant papers to aggregate")
        rows = [self.per_slr[i].as_row() for i in ids]
        return {
            column: sum((row[column] for row in rows), Fraction(0)) / len(rows)
            for column in rows[0]
        }

    @property
    def micro_recall(self) -> dict[int, Fraction]:
        """Pooled recall per percent cutoff: sum(TP) / sum(TP + FN)."""
        ids = sorted(self.per_slr)
        if not ids:
            raise MetricError("no pools with relevant papers to aggregate")
        percents = sorted(self.per_slr[ids[0]].recall_counts)
        out: dict[int, Fraction] = {}
        for k in percents:
            tp = sum(self.per_slr[i].recall_counts[k][0] for i in ids)
            pos = sum(self.per_slr[i].recall_counts[k][1] for i in ids)
            out[k] = Fraction(tp, pos)
        return out

    def rows(self) -> list[tuple[str, dict[str, Fraction]]]:
        """(label, row) pairs: one per pool in slr_id order, then aggregates."""
        out = [(slr_id, self.per_slr[slr_id].as_row()) for slr_id in sorted(self.per_slr)]
        out.append(("macro_avg", self.macro))
        if self.averaging == "micro":
            micro_row = dict(self.macro)
            for k, value in self.micro_recall.items():
                micro_row[f"R@{k}%"] = value
            out.append(("micro_avg", micro_row))
        return out

    def to_json(self) -> str:
        payload = {
            "averaging": self.averaging,
            "excluded_no_relevant": sorted(self.excluded),
            "rows": [
                {"id": label, **{col: _render(v) for col, v in row.items()}}
                for label, row in self.rows()
            ],
            "degenerate_tnr": sorted(
                slr_id for slr_id, m in self.per_slr.items() if m.degenerate_tnr
            ),
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        rows = self.rows()
        columns = list(rows[0][1])
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["id", *columns])
        for label, row in rows:
            writer.writerow([label, *(_render(row[c]) for c in columns)])
        return buf.getvalue()


def _render(value: Fraction) -> float:
    return float(value)


def aggregate(
    per_slr: Mapping[str, PoolMetrics],
    mode: str = "macro",
    excluded: Iterable[str] = (),
) -> MetricReport:
    """Bundle per-pool metrics into a report with the requested averaging."""
    if not per_slr:
        raise MetricError("aggregate requires at least one evaluated pool")
    return MetricReport(per_slr=dict(per_slr), excluded=list(excluded), averaging=mode)
