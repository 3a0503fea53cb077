"""Re-record the golden wire transcript against the live service.

Keeps the transcript's request parameters, replays them through the client
package's remote wrappers against a real in-process server built from the
committed checkpoints, and rewrites the recorded responses (and the derived
similarity value) with what the service actually returned. The stored
request bodies are captured off the wire, so they are exactly what the
client sends.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

SERVER_ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(SERVER_ROOT / "src"))

from cotserve import BodyRecorder, ServerConfig, build_app, load_all, serve_in_thread  # noqa: E402

from selcot.backends import (  # noqa: E402
    RemoteBackendConfig,
    RemoteClassifier,
    RemoteClient,
    RemoteEmbedder,
    RemoteGenerator,
)
from selcot.metrics import similarity  # noqa: E402

TRANSCRIPT = SERVER_ROOT.parent / "tests" / "data" / "golden_transcript.json"


def main() -> None:
    transcript = json.loads(TRANSCRIPT.read_text())
    by_path = {entry["path"]: entry for entry in transcript["entries"]}

    cfg = ServerConfig(
        generator=str(SERVER_ROOT / "checkpoints" / "generator.npz"),
        classifier=str(SERVER_ROOT / "checkpoints" / "classifier.npz"),
        embedder=str(SERVER_ROOT / "checkpoints" / "embedder.npz"),
    )
    recorder = BodyRecorder(build_app(cfg, load_all(cfg)))
    running = serve_in_thread(recorder)
    try:
        client = RemoteClient(RemoteBackendConfig(base_url=running.base_url))

        gen = by_path["/generate"]
        text = RemoteGenerator(client).generate(
            gen["request"]["prompt"],
            max_new_tokens=gen["request"]["max_new_tokens"],
            seed=gen["request"]["seed"],
        )
        gen["response"] = {"text": text}

        cls = by_path["/classify"]
        label, score = RemoteClassifier(client).classify(cls["request"]["text"])
        cls["response"] = {"label": label, "score": score}

        emb = by_path["/embed"]
        embedder = RemoteEmbedder(client)
        vectors = embedder.embed(emb["request"]["texts"])
        emb["response"] = {"vectors": vectors}
        emb["expected_similarity"] = similarity(
            emb["request"]["texts"][0], emb["request"]["texts"][1], embedder=embedder
        )

        # The stored requests become exactly what went over the wire.
        sent = {
            path: json.loads(body)
            for method, path, body in recorder.received
            if method == "POST"
        }
        for path, entry in by_path.items():
            entry["request"] = sent[path]
    finally:
        running.stop()

    TRANSCRIPT.write_text(json.dumps(transcript, indent=2) + "\n")
    print(f"re-recorded {len(transcript['entries'])} entries -> {TRANSCRIPT}")
    for entry in transcript["entries"]:
        print(f"  {entry['path']}: {json.dumps(entry['response'])[:100]}")


if __name__ == "__main__":
    main()
