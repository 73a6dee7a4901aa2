#!/usr/bin/env python3
"""Sweep relevance-scale sizes with a scripted endpoint and emit the
grouping statistics: how many distinct scores the model actually uses and
how many papers land in one tie group on average.

Run: python3 demos/04_scale_sweep.py [workdir]
"""

import json
import re
import sys
import tempfile
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from screenrank import LlmEndpointConfig, RunConfig, save_dataset
from screenrank.pipeline import ablation_sweep
from screenrank.prompting import PromptVariant, RelevanceScale

sys.path.insert(0, str(Path(__file__).parent))
from importlib import import_module

synthetic_dataset = import_module("02_dataset_and_baselines").synthetic_dataset


def make_handler(titles: dict[str, str]):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def do_POST(self):
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length))
            user_text = payload["messages"][-1]["content"]
            upper = int(re.search(r"ranging from '0' to '(\d+)'", user_text).group(1))
            title = re.search(r"Title: '([^']*)'", user_text).group(1)
            index = next(i for i, t in enumerate(titles.values()) if t == title)
            # mimic coarse model behavior: only a handful of distinct levels
            level = index % 3  # 0, 1, 2
            score = 0 if level == 0 else (upper if level == 2 else upper // 2)
            body = json.dumps(
                {"choices": [{"message": {"role": "assistant", "content": f"Decision: {score}"}}]}
            ).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

    return Handler


def main() -> None:
    workdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="screenrank_demo_"))
    dataset = synthetic_dataset()
    save_dataset(dataset, workdir / "data")
    titles = {p.paper_id: p.title for p in dataset.entries[0].papers}

    server = ThreadingHTTPServer(("127.0.0.1", 0), make_handler(titles))
    threading.Thread(target=server.serve_forever, daemon=True).start()
    host, port = server.server_address

    config = RunConfig(
        dataset="demo",
        data_root=workdir / "data",
        out_dir=workdir / "sweep",
        variant=PromptVariant("zero_shot"),
        scorer="bm25",
        llm=LlmEndpointConfig(
            base_url=f"http://{host}:{port}", model_name="scripted-model",
            request_timeout=10.0, backoff_base=0.05,
        ),
        cache_dir=workdir / "cache",
    )
    scales = [RelevanceScale(upper=u) for u in (1, 4, 19)]
    results, stats = ablation_sweep(config, scales)
    server.shutdown()

    print("scale   distinct scores used   mean tie-group size")
    for stat in stats:
        print(f"{stat.scale:>5}   {stat.mean_distinct_scores:>19.2f}   {stat.mean_group_size:>19.2f}")
    print("\nOn the binary scale the endpoint can only answer 0 or 1, so the")
    print("mid level collapses into the top one and groups stay large; wider")
    print("scales spread the same papers over more distinct scores, leaving")
    print("less work for the second-stage scorer.")
    print(f"per-scale run files under {workdir}/sweep/")


if __name__ == "__main__":
    main()
