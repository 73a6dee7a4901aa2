"""Review specifications, candidate pools, and gold labels.

On-disk layout: a dataset is a directory holding two files per review,

    <slr_id>.spec.yaml     named fields: slr_id, title, research_questions,
                           inclusion_criteria, exclusion_criteria
    <slr_id>.papers.jsonl  one JSON object per line: paper_id, title,
                           abstract, label

YAML keeps the review descriptions human-diffable; the line-delimited
papers file stays append-friendly for pools of 10k+ records.  All text is
normalized to Unicode NFC on load so downstream content hashes are stable.
A loaded :class:`Dataset` is immutable and safe to share across threads.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Mapping

import yaml

SPEC_SUFFIX = ".spec.yaml"
PAPERS_SUFFIX = ".papers.jsonl"


class CorpusError(ValueError):
    """A dataset file failed validation.  Carries file and line context."""

    def __init__(self, message: str, path: Path | str | None = None, line: int | None = None):
        self.path = str(path) if path is not None else None
        self.line = line
        where = ""
        if self.path is not None:
            where = f" [{self.path}" + (f":{line}]" if line is not None else "]")
        super().__init__(message + where)


def _norm(text: str) -> str:
    return unicodedata.normalize("NFC", text)


@dataclass(frozen=True)
class SlrSpec:
    """One review's information need."""

    slr_id: str
    title: str
    research_questions: tuple[str, ...] = ()
    inclusion_criteria: tuple[str, ...] = ()
    exclusion_criteria: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.slr_id:
            raise CorpusError("slr_id must be non-empty")
        if not self.title.strip():
            raise CorpusError(f"SLR {self.slr_id!r}: title must be non-empty")
        for name in ("research_questions", "inclusion_criteria", "exclusion_criteria"):
            items = getattr(self, name)
            if any(not item.strip() for item in items):
                raise CorpusError(f"SLR {self.slr_id!r}: {name} contains an empty entry")


@dataclass(frozen=True)
class PaperRecord:
    """One candidate paper with its gold screening label."""

    paper_id: str
    title: str
    abstract: str
    label: int

    def __post_init__(self) -> None:
        if not self.paper_id:
            raise CorpusError("paper_id must be non-empty")
        if self.label not in (0, 1):
            raise CorpusError(f"paper {self.paper_id!r}: label must be 0 or 1")


@dataclass(frozen=True)
class SlrEntry:
    """A review spec together with its candidate pool, in file order."""

    spec: SlrSpec
    papers: tuple[PaperRecord, ...]

    @property
    def no_relevant(self) -> bool:
        """True when the pool holds no relevant paper; excluded from aggregation."""
        return all(p.label == 0 for p in self.papers)

    def labels_by_id(self) -> dict[str, int]:
        return {p.paper_id: p.label for p in self.papers}


@dataclass(frozen=True)
class Dataset:
    """A named collection of reviews, iterated lexicographically by slr_id."""

    name: str
    entries: tuple[SlrEntry, ...]

    def __post_init__(self) -> None:
        ids = [e.spec.slr_id for e in self.entries]
        if sorted(ids) != ids:
            raise CorpusError(f"dataset {self.name!r}: entries must be sorted by slr_id")
        if len(set(ids)) != len(ids):
            raise CorpusError(f"dataset {self.name!r}: duplicate slr_id")

    def __iter__(self) -> Iterator[SlrEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def slr_ids(self) -> list[str]:
        return [e.spec.slr_id for e in self.entries]

    def get(self, slr_id: str) -> SlrEntry:
        for entry in self.entries:
            if entry.spec.slr_id == slr_id:
                return entry
        raise KeyError(slr_id)


def inclusion_rate(entry: SlrEntry) -> Fraction:
    """Relevant papers over pool size."""
    if not entry.papers:
        raise CorpusError(f"SLR {entry.spec.slr_id!r}: pool is empty")
    relevant = sum(p.label for p in entry.papers)
    return Fraction(relevant, len(entry.papers))


def _require_str(obj: Mapping, key: str, path: Path, line: int | None = None) -> str:
    value = obj.get(key)
    if not isinstance(value, str):
        raise CorpusError(f"field {key!r} missing or not a string", path, line)
    return _norm(value)


def _require_str_list(obj: Mapping, key: str, path: Path) -> tuple[str, ...]:
    value = obj.get(key)
    if value is None:
        return ()
    if not isinstance(value, list) or any(not isinstance(v, str) for v in value):
        raise CorpusError(f"field {key!r} must be a list of strings", path)
    return tuple(_norm(v) for v in value)


def load_spec_file(path: Path) -> SlrSpec:
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CorpusError("spec file missing", path) from None
    except yaml.YAMLError as exc:
        line = getattr(getattr(exc, "problem_mark", None), "line", None)
        raise CorpusError(f"malformed YAML: {exc}", path, None if line is None else line + 1) from None
    if not isinstance(raw, dict):
        raise CorpusError("spec file must contain a mapping", path)
    try:
        return SlrSpec(
            slr_id=_require_str(raw, "slr_id", path),
            title=_require_str(raw, "title", path),
            research_questions=_require_str_list(raw, "research_questions", path),
            inclusion_criteria=_require_str_list(raw, "inclusion_criteria", path),
            exclusion_criteria=_require_str_list(raw, "exclusion_criteria", path),
        )
    except CorpusError as exc:
        if exc.path is None:
            raise CorpusError(str(exc), path) from None
        raise


def load_papers_file(path: Path) -> tuple[PaperRecord, ...]:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise CorpusError("papers file missing", path) from None
    papers: list[PaperRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"malformed JSON record: {exc.msg}", path, lineno) from None
        if not isinstance(raw, dict):
            raise CorpusError("paper record must be a JSON object", path, lineno)
        paper_id = _require_str(raw, "paper_id", path, lineno)
        title = _require_str(raw, "title", path, lineno)
        raw_abstract = raw.get("abstract")
        if raw_abstract is not None and not isinstance(raw_abstract, str):
            raise CorpusError("field 'abstract' must be a string when present", path, lineno)
        abstract = _norm(raw_abstract or "")
        label = raw.get("label")
        if label not in (0, 1):
            raise CorpusError(f"paper {paper_id!r}: label must be 0 or 1", path, lineno)
        if paper_id in seen:
            raise CorpusError(f"duplicate paper_id {paper_id!r}", path, lineno)
        seen.add(paper_id)
        papers.append(PaperRecord(paper_id=paper_id, title=title, abstract=abstract, label=label))
    return tuple(papers)


def load_dataset(root: Path | str, name: str) -> Dataset:
    """Load and validate one dataset directory.

    Raises :class:`CorpusError` on the first problem found; a dataset is
    never returned partially loaded.
    """
    base = Path(root) / name
    if not base.is_dir():
        raise CorpusError(f"dataset directory not found: {base}")
    spec_ids = {p.name[: -len(SPEC_SUFFIX)] for p in base.glob(f"*{SPEC_SUFFIX}")}
    pool_ids = {p.name[: -len(PAPERS_SUFFIX)] for p in base.glob(f"*{PAPERS_SUFFIX}")}
    for orphan in sorted(pool_ids - spec_ids):
        raise CorpusError(f"pool {orphan!r} has no spec file", base / f"{orphan}{PAPERS_SUFFIX}")
    for orphan in sorted(spec_ids - pool_ids):
        raise CorpusError(f"spec {orphan!r} has no papers file", base / f"{orphan}{SPEC_SUFFIX}")
    if not spec_ids:
        raise CorpusError(f"dataset {name!r} contains no reviews", base)

    entries: list[SlrEntry] = []
    for slr_id in sorted(spec_ids):
        spec_path = base / f"{slr_id}{SPEC_SUFFIX}"
        spec = load_spec_file(spec_path)
        if spec.slr_id != slr_id:
            raise CorpusError(
                f"slr_id field {spec.slr_id!r} does not match filename {slr_id!r}", spec_path
            )
        papers = load_papers_file(base / f"{slr_id}{PAPERS_SUFFIX}")
        entries.append(SlrEntry(spec=spec, papers=papers))
    return Dataset(name=name, entries=tuple(entries))


def save_dataset(dataset: Dataset, root: Path | str) -> Path:
    """Write a dataset in the layout understood by :func:`load_dataset`."""
    base = Path(root) / dataset.name
    base.mkdir(parents=True, exist_ok=True)
    for entry in dataset.entries:
        spec = entry.spec
        spec_payload = {
            "slr_id": spec.slr_id,
            "title": spec.title,
            "research_questions": list(spec.research_questions),
            "inclusion_criteria": list(spec.inclusion_criteria),
            "exclusion_criteria": list(spec.exclusion_criteria),
        }
        (base / f"{spec.slr_id}{SPEC_SUFFIX}").write_text(
            yaml.safe_dump(spec_payload, sort_keys=False, allow_unicode=True),
            encoding="utf-8",
        )
        lines = [
            json.dumps(
                {
                    "paper_id": p.paper_id,
                    "title": p.title,
                    "abstract": p.abstract,
                    "label": p.label,
                },
                ensure_ascii=False,
            )
            for p in entry.papers
        ]
        (base / f"{spec.slr_id}{PAPERS_SUFFIX}").write_text(
            "\n".join(lines) + ("\n" if lines else ""), encoding="utf-8"
        )
    return base


def read_qrels(path: Path | str) -> dict[str, dict[str, int]]:
    """Parse TREC-style qrels lines ``topic 0 doc rel`` into nested dicts."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise CorpusError("qrels file missing", path) from None
    qrels: dict[str, dict[str, int]] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise CorpusError("qrels line must have 4 fields", path, lineno)
        topic, _iteration, doc, rel = parts
        try:
            rel_value = int(rel)
        except ValueError:
            raise CorpusError(f"relevance {rel!r} is not an integer", path, lineno) from None
        if doc in qrels.setdefault(topic, {}):
            raise CorpusError(f"duplicate qrels entry for {topic}/{doc}", path, lineno)
        qrels[topic][doc] = rel_value
    return qrels


def merge_qrels_labels(
    slr_id: str,
    papers: tuple[PaperRecord, ...],
    qrels: Mapping[str, Mapping[str, int]],
) -> tuple[PaperRecord, ...]:
    """Replace labels of a pool with the qrels judgments for its topic.

    Relevance > 0 maps to label 1.  Every paper must be judged in the qrels;
    unjudged papers are an error rather than silently assumed irrelevant.
    """
    topic = qrels.get(slr_id)
    if topic is None:
        raise CorpusError(f"qrels contain no topic {slr_id!r}")
    merged = []
    for paper in papers:
        if paper.paper_id not in topic:
            raise CorpusError(f"paper {paper.paper_id!r} not judged in qrels topic {slr_id!r}")
        merged.append(
            PaperRecord(
                paper_id=paper.paper_id,
                title=paper.title,
                abstract=paper.abstract,
                label=1 if topic[paper.paper_id] > 0 else 0,
            )
        )
    return tuple(merged)


def convert_release_layout(source: Path | str, root: Path | str, name: str) -> Dataset:
    """Convert an upstream benchmark release into this dataset layout.

    Placeholder entry point: the upstream distribution format for criteria
    and research questions is not fixed, so this converter only documents
    the target layout.  Build spec/papers files with :func:`save_dataset`
    (or the qrels adapter) instead.
    """
    raise NotImplementedError(
        "no upstream release layout is wired in; assemble SlrSpec/PaperRecord "
        "objects and call save_dataset, or start from read_qrels"
    )
