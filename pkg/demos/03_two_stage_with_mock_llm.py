#!/usr/bin/env python3
"""Full two-stage run against a scripted local chat-completion endpoint.

The scripted "model" reads the paper title out of the prompt and answers
with a graded score, including one paper that needs parse retries and one
that never answers in the expected format (exercising the fallback).  The
run is then repeated to show the judgment cache short-circuiting all
network calls.

Run: python3 demos/03_two_stage_with_mock_llm.py [workdir]
"""

import json
import re
import sys
import tempfile
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from screenrank import LlmEndpointConfig, RunConfig, evaluate_runs, load_dataset, run_dataset
from screenrank.prompting import PromptVariant, RelevanceScale

sys.path.insert(0, str(Path(__file__).parent))
from importlib import import_module

synthetic_dataset = import_module("02_dataset_and_baselines").synthetic_dataset

# graded answers per paper: relevant papers high, irrelevant low but varied
SCRIPT = {
    "p01": ["Decision: 19"],
    "p02": ["Decision: 2"],
    "p03": ["I'd say... hmm", "Decision: 17"],          # one parse retry
    "p04": ["Decision: 1"],
    "p05": ["Decision: 2"],
    "p06": ["Decision: 19"],
    "p07": ["no score, sorry"] * 4,                      # falls back to the review mean
}


class ScriptedHandler(BaseHTTPRequestHandler):
    calls: dict[str, int] = {}
    served = 0

    def log_message(self, *args):
        pass

    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        payload = json.loads(self.rfile.read(length))
        user_text = payload["messages"][-1]["content"]
        title = re.search(r"Title: '([^']*)'", user_text).group(1)
        paper_id = next(pid for pid, t in TITLES.items() if t == title)
        index = ScriptedHandler.calls.get(paper_id, 0)
        ScriptedHandler.calls[paper_id] = index + 1
        ScriptedHandler.served += 1
        responses = SCRIPT[paper_id]
        text = responses[min(index, len(responses) - 1)]
        body = json.dumps(
            {"choices": [{"message": {"role": "assistant", "content": text}}]}
        ).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


def main() -> None:
    workdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="screenrank_demo_"))
    dataset = synthetic_dataset()
    global TITLES
    TITLES = {p.paper_id: p.title for p in dataset.entries[0].papers}

    from screenrank import save_dataset

    save_dataset(dataset, workdir / "data")
    server = ThreadingHTTPServer(("127.0.0.1", 0), ScriptedHandler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    host, port = server.server_address
    print(f"scripted endpoint at http://{host}:{port}\n")

    config = RunConfig(
        dataset="demo",
        data_root=workdir / "data",
        out_dir=workdir / "two_stage",
        scale=RelevanceScale(upper=19),
        variant=PromptVariant("zero_shot"),
        scorer="bm25",
        query_mode="title_only",
        llm=LlmEndpointConfig(
            base_url=f"http://{host}:{port}", model_name="scripted-model",
            request_timeout=10.0, backoff_base=0.05,
        ),
        cache_dir=workdir / "cache",
    )
    result = run_dataset(config)
    ranking = result.ranked[0]

    print("final order (first-stage score groups, BM25 order inside each):")
    labels = dataset.entries[0].labels_by_id()
    for entry in ranking.entries:
        mark = "*" if labels[entry.paper_id] else " "
        fallback = "  <- fallback" if entry.provenance.used_fallback else ""
        print(f"  rank {entry.rank}: {entry.paper_id} {mark} "
              f"llm={entry.llm_score!s:<6} bm25={entry.rerank_score:.3f}{fallback}")

    report = evaluate_runs(load_dataset(workdir / "data", "demo"), workdir / "two_stage")
    print(f"\nMAP={float(report.macro['MAP']):.3f}  "
          f"TNR@95%={float(report.macro['TNR@95%']):.3f}")
    print(f"live calls so far: {ScriptedHandler.served}")

    rerun = run_dataset(
        RunConfig(**{**config.__dict__, "out_dir": workdir / "two_stage_rerun"})
    )
    print(f"after cached rerun:  {ScriptedHandler.served} (unchanged), "
          f"cache hit rate {rerun.manifest['cache']['hit_rate']:.2f}")
    server.shutdown()


if __name__ == "__main__":
    main()
