"""Generate the committed checkpoint files.

Deterministic: running this script always reproduces the same three
checkpoints. The generator's weight seed is chosen by a fixed search so
greedy decoding yields a reasonably long output on a probe prompt instead
of stopping immediately — random recurrent nets frequently hit the stop
token on the first step, which would make the checkpoint useless for
exercising the protocol.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from cotserve.models import CHARSET, GeneratorModel  # noqa: E402

DIM = 16
VOCAB = 1024
OUT_DIR = Path(__file__).resolve().parents[1] / "checkpoints"
PROBE = "Words: poison, dame, cornell"


def generator_arrays(seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    rows = len(CHARSET) + 1
    return {
        "kind": np.array("generator"),
        "emb": rng.normal(0, 0.8, (rows, DIM)).astype(np.float32),
        "rec": rng.normal(0, 0.5, (DIM, DIM)).astype(np.float32),
        "out": rng.normal(0, 1.0, (rows, DIM)).astype(np.float32),
        "out_b": rng.normal(0, 0.3, rows).astype(np.float32),
    }


def pick_generator_seed() -> int:
    for seed in range(200):
        arrays = generator_arrays(seed)
        model = GeneratorModel(
            emb=arrays["emb"], rec=arrays["rec"], out=arrays["out"], out_b=arrays["out_b"]
        )
        text = model.generate(PROBE, 64)
        # Want something that keeps talking and uses a few distinct characters.
        if len(text) >= 32 and len(set(text)) >= 6:
            return seed
    raise SystemExit("no suitable generator seed in search range")


def main() -> None:
    OUT_DIR.mkdir(exist_ok=True)

    seed = pick_generator_seed()
    gen = generator_arrays(seed)
    np.savez(OUT_DIR / "generator.npz", **gen)
    model = GeneratorModel(emb=gen["emb"], rec=gen["rec"], out=gen["out"], out_b=gen["out_b"])
    print(f"generator: weight seed {seed}, probe -> {model.generate(PROBE, 48)!r}")

    rng = np.random.default_rng(1001)
    np.savez(
        OUT_DIR / "classifier.npz",
        kind=np.array("classifier"),
        emb=rng.normal(0, 1.0, (VOCAB, DIM)).astype(np.float32),
        w=rng.normal(0, 1.0, DIM).astype(np.float32),
        b=np.float32(0.05),
    )

    rng = np.random.default_rng(2002)
    np.savez(
        OUT_DIR / "embedder.npz",
        kind=np.array("embedder"),
        emb=(rng.normal(0, 1.0, (VOCAB, DIM)) / np.sqrt(DIM)).astype(np.float32),
    )
    print(f"wrote 3 checkpoints to {OUT_DIR}")


if __name__ == "__main__":
    main()
