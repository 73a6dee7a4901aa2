"""CLI subcommand and exit-code tests."""

from __future__ import annotations

import csv
import json

import pytest

from screenrank.cli import main
from screenrank.corpus import Dataset, SlrEntry, save_dataset

from conftest import make_dataset, make_pool, make_spec
from mock_servers import ScriptedLlmServer, label_oracle_responder

SCALE_UPPER = 19


@pytest.fixture
def env(tmp_path):
    dataset = make_dataset("toy")
    save_dataset(dataset, tmp_path / "data")
    return dataset, tmp_path


def rank_args(tmp_path, server, extra=()):
    return [
        "rank",
        "--data-root", str(tmp_path / "data"),
        "--dataset", "toy",
        "--out", str(tmp_path / "out"),
        "--cache-dir", str(tmp_path / "cache"),
        "--scale", "0-19",
        "--variant", "zero-shot",
        "--reranker", "bm25",
        "--query-mode", "T",
        "--llm-url", server.base_url,
        "--llm-model", "mock-model",
        *extra,
    ]


class TestValidateDataset:
    def test_valid(self, env, capsys):
        dataset, tmp_path = env
        code = main(["validate-dataset", "--data-root", str(tmp_path / "data"),
                     "--dataset", "toy"])
        assert code == 0
        out = capsys.readouterr().out
        assert "2 SLR(s)" in out
        assert "slr_alpha" in out and "inclusion rate 0.25" in out

    def test_missing_directory(self, env, capsys):
        dataset, tmp_path = env
        code = main(["validate-dataset", "--data-root", str(tmp_path / "data"),
                     "--dataset", "ghost"])
        assert code == 1
        assert "validation error" in capsys.readouterr().err

    def test_missing_dataset_flag(self, env, capsys):
        code = main(["validate-dataset"])
        assert code == 1
        assert "--dataset is required" in capsys.readouterr().err


class TestRank:
    def test_happy_path(self, env, capsys):
        dataset, tmp_path = env
        responder = label_oracle_responder(
            {p.title: p.label for e in dataset for p in e.papers}, SCALE_UPPER
        )
        with ScriptedLlmServer(responder) as server:
            code = main(rank_args(tmp_path, server))
        assert code == 0
        assert (tmp_path / "out" / "runs" / "slr_alpha.run").exists()
        assert (tmp_path / "out" / "runs" / "slr_beta.run").exists()
        assert (tmp_path / "out" / "manifest.json").exists()
        assert "ranked 2 SLR(s)" in capsys.readouterr().out

    def test_missing_dataset_flag(self, env, capsys):
        code = main(["rank"])
        assert code == 1

    def test_unreachable_endpoint_without_cache(self, env, capsys):
        dataset, tmp_path = env
        code = main([
            "rank",
            "--data-root", str(tmp_path / "data"),
            "--dataset", "toy",
            "--out", str(tmp_path / "out"),
            "--llm-url", "http://127.0.0.1:1",
            "--llm-model", "mock-model",
        ])
        assert code == 2
        assert "runtime failure" in capsys.readouterr().err

    def test_skip_flag_yields_partial_exit(self, env, capsys):
        dataset, tmp_path = env
        responder = label_oracle_responder(
            {p.title: p.label for e in dataset for p in e.papers}, SCALE_UPPER
        )
        with ScriptedLlmServer(responder) as server:
            code = main(rank_args(tmp_path, server, extra=["--slr", "slr_alpha"]))
            assert code == 0
        code = main([
            "rank",
            "--data-root", str(tmp_path / "data"),
            "--dataset", "toy",
            "--out", str(tmp_path / "out2"),
            "--cache-dir", str(tmp_path / "cache"),
            "--llm-url", "http://127.0.0.1:1",
            "--llm-model", "mock-model",
            "--skip-on-transport-error",
        ])
        assert code == 3
        assert (tmp_path / "out2" / "runs" / "slr_alpha.run").exists()
        assert not (tmp_path / "out2" / "runs" / "slr_beta.run").exists()

    def test_config_file_and_flag_precedence(self, env, capsys, monkeypatch):
        dataset, tmp_path = env
        config_file = tmp_path / "run.yaml"
        config_file.write_text(
            "dataset: ghost\n"
            f"data_root: {tmp_path / 'data'}\n"
        )
        monkeypatch.setenv("SCREENRANK_DATA_ROOT", str(tmp_path / "never"))
        # flag beats file value "ghost"; file beats env for data_root
        code = main([
            "validate-dataset", "--config", str(config_file), "--dataset", "toy",
        ])
        assert code == 0


class TestBaseline:
    def test_bm25_baseline(self, env):
        dataset, tmp_path = env
        code = main([
            "baseline",
            "--data-root", str(tmp_path / "data"),
            "--dataset", "toy",
            "--out", str(tmp_path / "out"),
            "--reranker", "bm25",
            "--query-mode", "T+R",
        ])
        assert code == 0
        lines = (tmp_path / "out" / "runs" / "slr_alpha.run").read_text().splitlines()
        assert all(line.split()[3] == "0" for line in lines)  # no first-stage scores

    def test_random_baseline_deterministic(self, env):
        dataset, tmp_path = env
        for out in ("out_a", "out_b"):
            code = main([
                "baseline",
                "--data-root", str(tmp_path / "data"),
                "--dataset", "toy",
                "--out", str(tmp_path / out),
                "--reranker", "random",
                "--seed", "7",
            ])
            assert code == 0
        a = (tmp_path / "out_a" / "runs" / "slr_alpha.run").read_bytes()
        b = (tmp_path / "out_b" / "runs" / "slr_alpha.run").read_bytes()
        assert a == b

    def test_bm25_on_empty_abstract_pool(self, tmp_path):
        papers = tuple(
            p.__class__(paper_id=p.paper_id, title=p.title, abstract="", label=p.label)
            for p in make_pool("slr_bare", 6, 2)
        )
        entry = SlrEntry(spec=make_spec("slr_bare"), papers=papers)
        save_dataset(Dataset(name="bare", entries=(entry,)), tmp_path / "data")
        code = main([
            "baseline",
            "--data-root", str(tmp_path / "data"),
            "--dataset", "bare",
            "--out", str(tmp_path / "out"),
            "--reranker", "bm25",
        ])
        assert code == 0
        assert len((tmp_path / "out" / "runs" / "slr_bare.run").read_text().splitlines()) == 6


class TestEvaluate:
    def prepare_run(self, env):
        dataset, tmp_path = env
        responder = label_oracle_responder(
            {p.title: p.label for e in dataset for p in e.papers}, SCALE_UPPER
        )
        with ScriptedLlmServer(responder) as server:
            assert main(rank_args(tmp_path, server)) == 0
        return dataset, tmp_path

    def test_perfect_run(self, env, capsys):
        dataset, tmp_path = self.prepare_run(env)
        code = main([
            "evaluate",
            "--data-root", str(tmp_path / "data"),
            "--dataset", "toy",
            "--run-dir", str(tmp_path / "out"),
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "macro_avg" in out and "MAP=1.0000" in out and "TNR@95%=1.0000" in out
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["averaging"] == "macro"

    def test_micro_averaging_adds_row(self, env):
        dataset, tmp_path = self.prepare_run(env)
        code = main([
            "evaluate",
            "--data-root", str(tmp_path / "data"),
            "--dataset", "toy",
            "--run-dir", str(tmp_path / "out"),
            "--averaging", "micro",
            "--out", str(tmp_path / "eval"),
        ])
        assert code == 0
        rows = json.loads((tmp_path / "eval" / "report.json").read_text())["rows"]
        assert {r["id"] for r in rows} >= {"macro_avg", "micro_avg"}


class TestSweepAndReport:
    def run_sweep(self, env):
        dataset, tmp_path = env
        responder = label_oracle_responder(
            {p.title: p.label for e in dataset for p in e.papers}, 1
        )
        with ScriptedLlmServer(responder) as server:
            code = main([
                "sweep-scales",
                "--data-root", str(tmp_path / "data"),
                "--dataset", "toy",
                "--out", str(tmp_path / "sweep"),
                "--cache-dir", str(tmp_path / "cache"),
                "--scales", "0-1,0-19",
                "--llm-url", server.base_url,
                "--llm-model", "mock-model",
            ])
        assert code == 0
        return dataset, tmp_path

    def test_sweep_outputs(self, env):
        dataset, tmp_path = self.run_sweep(env)
        curves = list(csv.reader((tmp_path / "sweep" / "scale_curves.csv").open()))
        assert curves[0][0] == "scale"
        assert [row[0] for row in curves[1:]] == ["0-1", "0-19"]
        stats = list(csv.reader((tmp_path / "sweep" / "group_stats.csv").open()))
        assert stats[0] == ["scale", "mean_distinct_scores", "mean_group_size"]
        assert len(stats) == 3
        assert (tmp_path / "sweep" / "scale_0-1" / "report.json").exists()

    def test_empty_scales_usage_error(self, env, capsys):
        dataset, tmp_path = env
        code = main([
            "sweep-scales",
            "--data-root", str(tmp_path / "data"),
            "--dataset", "toy",
            "--scales", "",
        ])
        assert code == 1

    def test_duplicate_scales_deduplicated(self, env, capsys):
        dataset, tmp_path = self.run_sweep(env)
        responder = label_oracle_responder(
            {p.title: p.label for e in dataset for p in e.papers}, 1
        )
        with ScriptedLlmServer(responder) as server:
            code = main([
                "sweep-scales",
                "--data-root", str(tmp_path / "data"),
                "--dataset", "toy",
                "--out", str(tmp_path / "sweep2"),
                "--cache-dir", str(tmp_path / "cache"),
                "--scales", "0-1,0-1",
                "--llm-url", server.base_url,
                "--llm-model", "mock-model",
            ])
        assert code == 0
        assert "duplicate scale" in capsys.readouterr().err

    def test_report_kinds(self, env, capsys):
        dataset, tmp_path = self.run_sweep(env)
        assert main([
            "report", "--kind", "map-distribution",
            "--report-json", str(tmp_path / "sweep" / "scale_0-19" / "report.json"),
            "--out", str(tmp_path / "plots"),
        ]) == 0
        rows = list(csv.reader((tmp_path / "plots" / "map_distribution.csv").open()))
        assert rows[0] == ["slr_id", "MAP"]
        assert {r[0] for r in rows[1:]} == {"slr_alpha", "slr_beta"}

        assert main([
            "report", "--kind", "scale-curves",
            "--sweep-dir", str(tmp_path / "sweep"),
            "--out", str(tmp_path / "plots"),
        ]) == 0
        assert (tmp_path / "plots" / "scale_curves.csv").exists()

        assert main([
            "report", "--kind", "group-stats",
            "--sweep-dir", str(tmp_path / "sweep"),
            "--out", str(tmp_path / "plots"),
        ]) == 0
        stats = list(csv.reader((tmp_path / "plots" / "group_stats.csv").open()))
        assert len(stats) == 3

    def test_report_requires_inputs(self, env, capsys):
        code = main(["report", "--kind", "scale-curves", "--out", "x"])
        assert code == 1
