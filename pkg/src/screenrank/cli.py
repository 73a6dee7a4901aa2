"""Command-line entry point.

Subcommands: rank, baseline, evaluate, sweep-scales, report,
validate-dataset.  Exit codes: 0 success, 1 validation/usage error,
2 runtime failure, 3 partial run (some reviews skipped and recorded).

Configuration precedence is CLI flag > config file (--config, YAML or
JSON) > environment variable; the effective configuration is echoed into
every run manifest.  API keys are only ever named by environment variable
(--llm-api-key-env), never passed as values.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import yaml

from .corpus import CorpusError, inclusion_rate, load_dataset
from .judge import LlmEndpointConfig, TransportError
from .metrics import MetricReport
from .pipeline import (
    PipelineError,
    RunConfig,
    ValidationError,
    ablation_sweep,
    evaluate_runs,
    grouping_statistics,
    read_run_file,
    run_dataset,
)
from .prompting import PromptError, PromptTemplates, PromptVariant, RelevanceScale
from .rerankers import RemoteRerankConfig, RerankError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3

VARIANT_NAMES = {
    "zero-shot": "zero_shot",
    "cot": "cot",
    "cot-sc": "cot_self_consistency",
    "two-shot": "two_shot",
    "two-shot-cot": "two_shot_cot",
    "two-shot-cot-sc": "two_shot_cot_self_consistency",
}

QUERY_MODES = {"T": "title_only", "T+R": "title_plus_rq"}

ENV_PREFIX = "SCREENRANK_"


class CliUsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # map argparse usage errors onto exit code 1
        raise CliUsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="screenrank", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: _Parser) -> None:
        p.add_argument("--config", type=Path, help="YAML/JSON config file")
        p.add_argument("--data-root", type=Path)
        p.add_argument("--dataset")
        p.add_argument("--slr", action="append", default=None,
                       help="restrict to one SLR id (repeatable)")
        p.add_argument("--out", type=Path)
        p.add_argument("--seed", type=int)

    def ranking_flags(p: _Parser) -> None:
        p.add_argument("--scale", help="relevance scale, e.g. 0-19")
        p.add_argument("--variant", choices=sorted(VARIANT_NAMES))
        p.add_argument("--sc-n", type=int, help="self-consistency run count")
        p.add_argument("--reranker", choices=["bm25", "remote", "random"])
        p.add_argument("--query-mode", choices=["T", "T+R"])
        p.add_argument("--concurrency", type=int)
        p.add_argument("--cache-dir", type=Path)
        p.add_argument("--llm-url")
        p.add_argument("--llm-model")
        p.add_argument("--llm-api-key-env")
        p.add_argument("--llm-max-tokens", type=int)
        p.add_argument("--llm-timeout", type=float)
        p.add_argument("--rerank-url")
        p.add_argument("--template-dir", type=Path)
        p.add_argument("--skip-on-transport-error", action="store_true", default=None)

    p_rank = sub.add_parser("rank", help="two-stage ranking run")
    common(p_rank)
    ranking_flags(p_rank)

    p_baseline = sub.add_parser("baseline", help="rank by the chosen scorer alone")
    common(p_baseline)
    ranking_flags(p_baseline)

    p_eval = sub.add_parser("evaluate", help="score run files against gold labels")
    common(p_eval)
    p_eval.add_argument("--run-dir", type=Path, required=True)
    p_eval.add_argument("--averaging", choices=["macro", "micro"], default="macro")

    p_sweep = sub.add_parser("sweep-scales", help="full run + report per scale")
    common(p_sweep)
    ranking_flags(p_sweep)
    p_sweep.add_argument("--scales", help="comma-separated list, e.g. 0-1,0-4,0-19")
    p_sweep.add_argument("--averaging", choices=["macro", "micro"], default="macro")

    p_report = sub.add_parser("report", help="emit plot-data CSV files")
    p_report.add_argument(
        "--kind", choices=["map-distribution", "scale-curves", "group-stats"], required=True
    )
    p_report.add_argument("--report-json", type=Path, help="for map-distribution")
    p_report.add_argument("--sweep-dir", type=Path, help="for scale-curves/group-stats")
    p_report.add_argument("--out", type=Path, required=True)

    p_validate = sub.add_parser("validate-dataset", help="load and validate a dataset")
    common(p_validate)

    return parser


def _load_config_file(path: Path | None) -> dict:
    if path is None:
        return {}
    if not path.exists():
        raise CliUsageError(f"config file not found: {path}")
    data = yaml.safe_load(path.read_text(encoding="utf-8"))
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise CliUsageError("config file must contain a mapping")
    return data


def _setting(args, file_config: dict, name: str, env: str | None = None, default=None):
    """CLI flag > config file > environment > default."""
    value = getattr(args, name.replace("-", "_"), None)
    if value is not None:
        return value
    if name in file_config:
        return file_config[name]
    if env is not None:
        env_value = os.environ.get(ENV_PREFIX + env)
        if env_value is not None:
            return env_value
    return default


def _build_run_config(args, mode: str) -> RunConfig:
    file_config = _load_config_file(args.config)

    dataset = _setting(args, file_config, "dataset")
    if not dataset:
        raise CliUsageError("--dataset is required")
    data_root = _setting(args, file_config, "data_root", env="DATA_ROOT", default="data")
    out_dir = _setting(args, file_config, "out", default="out")

    scale = RelevanceScale.parse(str(_setting(args, file_config, "scale", default="0-19")))
    variant_name = _setting(args, file_config, "variant", default="zero-shot")
    if variant_name not in VARIANT_NAMES:
        raise CliUsageError(f"unknown variant {variant_name!r}")
    kind = VARIANT_NAMES[variant_name]
    sc_n = _setting(args, file_config, "sc_n", default=3)
    variant = PromptVariant(kind, n=int(sc_n) if kind.endswith("self_consistency") else None)

    query_mode_flag = _setting(args, file_config, "query_mode", default="T")
    if query_mode_flag not in QUERY_MODES:
        raise CliUsageError(f"unknown query mode {query_mode_flag!r}")

    scorer = _setting(args, file_config, "reranker", default="bm25")

    llm_url = _setting(args, file_config, "llm_url", env="LLM_URL")
    llm_model = _setting(args, file_config, "llm_model", env="LLM_MODEL")
    llm = None
    if llm_url and llm_model:
        llm = LlmEndpointConfig(
            base_url=str(llm_url),
            model_name=str(llm_model),
            api_key_env=str(
                _setting(args, file_config, "llm_api_key_env", default="SCREENRANK_LLM_API_KEY")
            ),
            max_tokens=int(_setting(args, file_config, "llm_max_tokens", default=1024)),
            request_timeout=float(_setting(args, file_config, "llm_timeout", default=120.0)),
            max_parallel=int(_setting(args, file_config, "concurrency", default=1)),
        )
    elif llm_url or llm_model:
        raise CliUsageError("--llm-url and --llm-model must be given together")

    rerank_url = _setting(args, file_config, "rerank_url", env="RERANK_URL")
    rerank = RemoteRerankConfig(base_url=str(rerank_url)) if rerank_url else None

    cache_dir = _setting(args, file_config, "cache_dir", env="CACHE_DIR")
    template_dir = _setting(args, file_config, "template_dir")
    slr_filter = tuple(args.slr) if args.slr else tuple(file_config.get("slr", ()))

    return RunConfig(
        dataset=str(dataset),
        data_root=Path(data_root),
        out_dir=Path(out_dir),
        scale=scale,
        variant=variant,
        query_mode=QUERY_MODES[query_mode_flag],
        scorer=str(scorer),
        mode=mode,
        llm=llm,
        rerank=rerank,
        cache_dir=Path(cache_dir) if cache_dir else None,
        slr_filter=slr_filter,
        seed=int(_setting(args, file_config, "seed", default=0)),
        max_parallel=int(_setting(args, file_config, "concurrency", default=1)),
        skip_on_transport_error=bool(
            _setting(args, file_config, "skip_on_transport_error", default=False)
        ),
        templates=PromptTemplates.from_dir(template_dir) if template_dir else None,
    )


def _write_report(report: MetricReport, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")


def _print_aggregate(report: MetricReport) -> None:
    for label, row in report.rows():
        if label.endswith("_avg"):
            cells = "  ".join(f"{col}={float(v):.4f}" for col, v in row.items())
            print(f"{label}: {cells}")


def cmd_rank(args, mode: str = "two_stage") -> int:
    config = _build_run_config(args, mode=mode)
    result = run_dataset(config)
    print(f"ranked {len(result.ranked)} SLR(s) -> {result.out_dir / 'runs'}")
    print(f"manifest: {result.out_dir / 'manifest.json'} (fingerprint {config.fingerprint})")
    if result.failures:
        for slr_id, reason in result.failures.items():
            print(f"skipped {slr_id}: {reason}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_baseline(args) -> int:
    return cmd_rank(args, mode="scorer_only")


def cmd_evaluate(args) -> int:
    file_config = _load_config_file(args.config)
    dataset_name = _setting(args, file_config, "dataset")
    if not dataset_name:
        raise CliUsageError("--dataset is required")
    data_root = _setting(args, file_config, "data_root", env="DATA_ROOT", default="data")
    dataset = load_dataset(Path(data_root), str(dataset_name))
    report = evaluate_runs(dataset, args.run_dir, averaging=args.averaging)
    out_dir = Path(_setting(args, file_config, "out", default=args.run_dir))
    _write_report(report, out_dir)
    _print_aggregate(report)
    if report.excluded:
        print(f"excluded (no relevant papers): {', '.join(report.excluded)}")
    print(f"report written to {out_dir / 'report.csv'} and report.json")
    return EXIT_OK


def _parse_scales(text: str | None) -> list[RelevanceScale]:
    if not text:
        raise CliUsageError("--scales is required (e.g. --scales 0-1,0-4,0-19)")
    scales: list[RelevanceScale] = []
    for token in text.split(","):
        scale = RelevanceScale.parse(token.strip())
        if scale in scales:
            print(f"warning: duplicate scale {scale} ignored", file=sys.stderr)
            continue
        scales.append(scale)
    return scales


def cmd_sweep(args) -> int:
    config = _build_run_config(args, mode="two_stage")
    scales = _parse_scales(args.scales)
    dataset = load_dataset(config.data_root, config.dataset)
    results, stats = ablation_sweep(config, scales)

    out_dir = Path(config.out_dir)
    rows = []
    for scale, result in zip(scales, results):
        report = evaluate_runs(dataset, result.out_dir, averaging=args.averaging)
        _write_report(report, result.out_dir)
        rows.append((str(scale), report.macro))
    _write_scale_curves(out_dir / "scale_curves.csv", rows)
    with (out_dir / "group_stats.csv").open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["scale", "mean_distinct_scores", "mean_group_size"])
        for stat in stats:
            writer.writerow([stat.scale, stat.mean_distinct_scores, stat.mean_group_size])
    print(f"swept {len(scales)} scale(s); curves in {out_dir / 'scale_curves.csv'}, "
          f"group statistics in {out_dir / 'group_stats.csv'}")
    if any(result.failures for result in results):
        return EXIT_PARTIAL
    return EXIT_OK


def _write_scale_curves(path: Path, rows: list[tuple[str, dict]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(rows[0][1]) if rows else []
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["scale", *columns])
        for scale, row in rows:
            writer.writerow([scale, *(float(row[c]) for c in columns)])


def cmd_report(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.kind == "map-distribution":
        if not args.report_json:
            raise CliUsageError("--report-json is required for map-distribution")
        payload = json.loads(args.report_json.read_text(encoding="utf-8"))
        target = out_dir / "map_distribution.csv"
        with target.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["slr_id", "MAP"])
            for row in payload["rows"]:
                if not row["id"].endswith("_avg"):
                    writer.writerow([row["id"], row["MAP"]])
        print(f"wrote {target}")
        return EXIT_OK

    if not args.sweep_dir:
        raise CliUsageError(f"--sweep-dir is required for {args.kind}")
    scale_dirs = sorted(
        (p for p in args.sweep_dir.glob("scale_*") if p.is_dir()),
        key=lambda p: int(p.name.split("-")[-1]),
    )
    if not scale_dirs:
        raise CliUsageError(f"no scale_* run directories under {args.sweep_dir}")

    if args.kind == "scale-curves":
        rows = []
        for scale_dir in scale_dirs:
            report_path = scale_dir / "report.json"
            if not report_path.exists():
                raise CliUsageError(f"missing {report_path}; run evaluate or sweep-scales first")
            payload = json.loads(report_path.read_text(encoding="utf-8"))
            macro = next(r for r in payload["rows"] if r["id"] == "macro_avg")
            rows.append((scale_dir.name.removeprefix("scale_"),
                         {k: v for k, v in macro.items() if k != "id"}))
        _write_scale_curves(out_dir / "scale_curves.csv", rows)
        print(f"wrote {out_dir / 'scale_curves.csv'}")
        return EXIT_OK

    # group-stats: recompute the grouping statistics from the run files
    target = out_dir / "group_stats.csv"
    with target.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["scale", "mean_distinct_scores", "mean_group_size"])
        for scale_dir in scale_dirs:
            distinct_counts: list[int] = []
            size_means: list[float] = []
            for run_file in sorted((scale_dir / "runs").glob("*.run")):
                rows = read_run_file(run_file)
                scores = [row["llm_score"] for row in rows]
                if not scores:
                    continue
                distinct_counts.append(len(set(scores)))
                size_means.append(len(scores) / len(set(scores)))
            if distinct_counts:
                writer.writerow(
                    [
                        scale_dir.name.removeprefix("scale_"),
                        sum(distinct_counts) / len(distinct_counts),
                        sum(size_means) / len(size_means),
                    ]
                )
    print(f"wrote {target}")
    return EXIT_OK


def cmd_validate(args) -> int:
    file_config = _load_config_file(args.config)
    dataset_name = _setting(args, file_config, "dataset")
    if not dataset_name:
        raise CliUsageError("--dataset is required")
    data_root = _setting(args, file_config, "data_root", env="DATA_ROOT", default="data")
    dataset = load_dataset(Path(data_root), str(dataset_name))
    print(f"dataset {dataset.name!r}: {len(dataset)} SLR(s), "
          f"{sum(len(e.papers) for e in dataset)} papers")
    for entry in dataset:
        rate = float(inclusion_rate(entry)) if entry.papers else float("nan")
        flag = "  [no relevant papers]" if entry.no_relevant else ""
        print(f"  {entry.spec.slr_id}: {len(entry.papers)} papers, "
              f"inclusion rate {rate:.4f}{flag}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "rank": cmd_rank,
            "baseline": cmd_baseline,
            "evaluate": cmd_evaluate,
            "sweep-scales": cmd_sweep,
            "report": cmd_report,
            "validate-dataset": cmd_validate,
        }[args.command]
        return handler(args)
    except CliUsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValidationError, CorpusError, PromptError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (PipelineError, TransportError, RerankError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
