"""The served models and their checkpoint format.

Three roles back the three inference endpoints:

- ``GeneratorModel`` — a character-level recurrent net decoded greedily, so
  output depends only on the prompt and the weights (the request seed is
  accepted for protocol compatibility; greedy decoding never consults it).
- ``ClassifierModel`` — hashed bag-of-words encoder with a linear + sigmoid
  head; the score is the positive-class probability.
- ``EmbedderModel`` — hashed bag-of-words mean-pooled embedding.

Weights live in ``.npz`` checkpoints (see ``tools/make_checkpoints.py``
for the generation script). The shipped checkpoints are deterministic
random initializations sized for fast inference; the loading path treats
them exactly like trained weights.
"""

from __future__ import annotations

import math
import re
import threading
import zipfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, ROLES, ServerConfig


class CheckpointError(RuntimeError):
    """A model checkpoint is missing, unreadable, or malformed."""


# Output alphabet of the generator: index 0 is the stop token, index i+1
# emits CHARSET[i]. Input characters outside the set share row 0.
CHARSET = "abcdefghijklmnopqrstuvwxyz0123456789 .,'-:?"

_WORD = re.compile(r"[a-z0-9]+")

_ROLE_KINDS = {"generate": "generator", "classify": "classifier", "embed": "embedder"}


def _tokens(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def _hash_ids(tokens: list[str], vocab_size: int) -> list[int]:
    return [zlib.crc32(token.encode("utf-8")) % vocab_size for token in tokens]


def _pooled(emb: np.ndarray, text: str) -> np.ndarray:
    ids = _hash_ids(_tokens(text), emb.shape[0])
    if not ids:
        return np.zeros(emb.shape[1], dtype=emb.dtype)
    return emb[ids].mean(axis=0)


@dataclass(frozen=True)
class GeneratorModel:
    emb: np.ndarray    # (len(CHARSET)+1, dim) input/output character embeddings
    rec: np.ndarray    # (dim, dim) recurrence
    out: np.ndarray    # (len(CHARSET)+1, dim) output projection
    out_b: np.ndarray  # (len(CHARSET)+1,)

    def _step(self, char_id: int, state: np.ndarray) -> np.ndarray:
        return np.tanh(self.emb[char_id] + self.rec @ state)

    def generate(self, prompt: str, max_new_tokens: int) -> str:
        state = np.zeros(self.rec.shape[0], dtype=self.rec.dtype)
        for ch in prompt.lower():
            state = self._step(CHARSET.find(ch) + 1, state)
        written: list[str] = []
        for _ in range(max_new_tokens):
            logits = self.out @ state + self.out_b
            char_id = int(np.argmax(logits))
            if char_id == 0:
                break
            written.append(CHARSET[char_id - 1])
            state = self._step(char_id, state)
        return "".join(written)


@dataclass(frozen=True)
class ClassifierModel:
    emb: np.ndarray  # (vocab, dim)
    w: np.ndarray    # (dim,)
    b: float

    def classify(self, text: str) -> tuple[int, float]:
        z = float(self.w @ _pooled(self.emb, text)) + self.b
        z = max(-60.0, min(60.0, z))
        score = 1.0 / (1.0 + math.exp(-z))
        return (1 if score >= 0.5 else 0), score


@dataclass(frozen=True)
class EmbedderModel:
    emb: np.ndarray  # (vocab, dim)

    def embed(self, texts: list[str]) -> list[list[float]]:
        return [[float(x) for x in _pooled(self.emb, text)] for text in texts]


@dataclass
class ModelHandle:
    """A loaded model plus the lock serializing access to it."""

    role: str
    model: GeneratorModel | ClassifierModel | EmbedderModel
    path: str
    lock: threading.Lock = field(default_factory=threading.Lock)


def _checked(arrays: dict, name: str, ndim: int, role: str, path) -> np.ndarray:
    if name not in arrays:
        raise CheckpointError(f"{role} checkpoint {path}: missing array '{name}'")
    array = np.asarray(arrays[name])
    if array.ndim != ndim:
        raise CheckpointError(
            f"{role} checkpoint {path}: array '{name}' has {array.ndim} dims, expected {ndim}"
        )
    return array.astype(np.float32)


def load_finetuned(role: str, path: str | Path) -> ModelHandle:
    """Load a checkpoint for a role. Missing or corrupt files raise
    CheckpointError naming the role so startup failures are attributable."""
    if role not in ROLES:
        raise ConfigError(f"unknown role {role!r}, expected one of {ROLES}")
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {key: archive[key] for key in archive.files}
    except FileNotFoundError:
        raise CheckpointError(f"{role} checkpoint {path}: file not found") from None
    except (OSError, ValueError, KeyError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"{role} checkpoint {path}: unreadable ({exc})") from None

    kind = str(arrays.get("kind", np.array("")).item() if "kind" in arrays else "")
    expected = _ROLE_KINDS[role]
    if kind != expected:
        raise CheckpointError(
            f"{role} checkpoint {path}: kind {kind!r} does not match expected {expected!r}"
        )

    if role == "generate":
        emb = _checked(arrays, "emb", 2, role, path)
        rec = _checked(arrays, "rec", 2, role, path)
        out = _checked(arrays, "out", 2, role, path)
        out_b = _checked(arrays, "out_b", 1, role, path)
        rows = len(CHARSET) + 1
        if emb.shape[0] != rows or out.shape != emb.shape or out_b.shape[0] != rows:
            raise CheckpointError(
                f"{role} checkpoint {path}: character tables must have {rows} rows"
            )
        dim = emb.shape[1]
        if rec.shape != (dim, dim):
            raise CheckpointError(
                f"{role} checkpoint {path}: recurrence must be ({dim}, {dim}), got {rec.shape}"
            )
        model: GeneratorModel | ClassifierModel | EmbedderModel = GeneratorModel(
            emb=emb, rec=rec, out=out, out_b=out_b
        )
    elif role == "classify":
        emb = _checked(arrays, "emb", 2, role, path)
        w = _checked(arrays, "w", 1, role, path)
        if w.shape[0] != emb.shape[1]:
            raise CheckpointError(
                f"{role} checkpoint {path}: head width {w.shape[0]} does not match "
                f"embedding dim {emb.shape[1]}"
            )
        bias = _checked(arrays, "b", 0, role, path)
        model = ClassifierModel(emb=emb, w=w, b=float(bias))
    else:
        emb = _checked(arrays, "emb", 2, role, path)
        model = EmbedderModel(emb=emb)
    return ModelHandle(role=role, model=model, path=str(path))


def load_all(cfg: ServerConfig) -> dict[str, ModelHandle]:
    """Load every configured role; any failure aborts startup."""
    return {
        role: load_finetuned(role, cfg.path_for(role)) for role in cfg.configured_roles
    }
