"""Shared fixtures: synthetic datasets and acceptance-summary reporting."""

from __future__ import annotations

import pytest

from screenrank.corpus import Dataset, PaperRecord, SlrEntry, SlrSpec


def make_spec(slr_id: str = "slr_alpha", with_rqs: bool = True) -> SlrSpec:
    return SlrSpec(
        slr_id=slr_id,
        title=f"Effects of widget therapy ({slr_id})",
        research_questions=(
            ("Does widget therapy reduce gadget fatigue?", "Is the effect dose-dependent?")
            if with_rqs
            else ()
        ),
        inclusion_criteria=("randomized controlled trial", "adult participants"),
        exclusion_criteria=("animal studies", "case reports"),
    )


def make_pool(slr_id: str, size: int, relevant: int, seed: int = 0) -> tuple[PaperRecord, ...]:
    """Deterministic pool: first `relevant` papers labeled 1, texts vary by index."""
    papers = []
    for i in range(size):
        papers.append(
            PaperRecord(
                paper_id=f"{slr_id}_p{i:03d}",
                title=f"Trial {i} of widget therapy variant {(i + seed) % 7}",
                abstract=(
                    f"We study widget therapy in cohort {i}. "
                    f"Outcomes include gadget fatigue and sprocket load."
                    if i % 5 != 4
                    else ""
                ),
                label=1 if i < relevant else 0,
            )
        )
    return tuple(papers)


def make_dataset(name: str = "toy") -> Dataset:
    entries = [
        SlrEntry(spec=make_spec("slr_alpha"), papers=make_pool("slr_alpha", 12, 3)),
        SlrEntry(spec=make_spec("slr_beta"), papers=make_pool("slr_beta", 8, 2, seed=3)),
    ]
    return Dataset(name=name, entries=tuple(entries))


@pytest.fixture
def toy_dataset() -> Dataset:
    return make_dataset()


@pytest.fixture
def toy_dataset_dir(tmp_path, toy_dataset):
    from screenrank.corpus import save_dataset

    save_dataset(toy_dataset, tmp_path)
    return tmp_path


# ---------------------------------------------------------------------------
# Acceptance summary: tests register one line per criterion; printed at the
# end of the run so the outcome of each criterion is visible in the log.
# ---------------------------------------------------------------------------

ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


def record_acceptance(number: int, description: str, passed: bool = True) -> None:
    ACCEPTANCE_RESULTS[number] = (description, "PASS" if passed else "FAIL")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        description, outcome = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {outcome} — {description}")
