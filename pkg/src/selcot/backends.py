"""Backend interfaces and implementations.

Three uniform interfaces — text generation, sequence classification, and
sentence embedding — with two families of implementations: deterministic
simulated last-letter backends whose mistakes follow an explicit error
model, and a remote client speaking the JSON-over-HTTP wire protocol.
"""

from __future__ import annotations

import hashlib
import random
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from string import ascii_lowercase

import requests

from .config import DEFAULT_MAX_NEW_TOKENS, ORDINALS, SEPARATOR
from .core import (
    ChainSource,
    CompoundOrder,
    ConfigError,
    ReasoningChain,
    SelcotError,
    answer_sentence,
)
from .datasets import (
    LastLetterGroup,
    lastletter_gold_answer,
    parse_lastletter_chain,
    parse_words_from_question,
)


class TransportError(SelcotError):
    """The remote backend could not be reached or timed out (after retries)."""


class RemoteSchemaError(TransportError):
    """A remote response did not conform to the wire schema."""


class RemoteModelError(SelcotError):
    """The server reported a model-side failure (distinct from transport)."""

    def __init__(self, message: str, kind: str = "unknown"):
        super().__init__(message)
        self.kind = kind


@dataclass(frozen=True)
class BackendCapability:
    """Advertised size limits; None means unbounded."""

    max_input_chars: int | None = None
    max_output_chars: int | None = None


class GenerationBackend(ABC):
    """Text in, text out. Simulated implementations are deterministic
    given (prompt, seed)."""

    capability: BackendCapability = BackendCapability()

    @abstractmethod
    def generate(
        self,
        prompt: str,
        max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS,
        seed: int | None = None,
    ) -> str:
        raise NotImplementedError


class ClassifierBackend(ABC):
    """Binary sequence classifier: returns (label, positive-class score)."""

    @abstractmethod
    def classify(self, text: str) -> tuple[int, float]:
        raise NotImplementedError


class EmbeddingBackend(ABC):
    """Sentence embedder: one vector per input text, equal dimensions."""

    @abstractmethod
    def embed(self, texts: list[str]) -> list[list[float]]:
        raise NotImplementedError


# --------------------------------------------------------------------------
# Seed discipline
#
# Every episode derives its randomness from (run seed, record id, role), so
# different strategies draw identical random streams for the roles they
# share. That is what makes strategies comparable episode-for-episode.

ROLE_REASON = "reason"
ROLE_ANSWER_DIRECT = "answer-direct"
ROLE_ANSWER_EXTRACT = "answer-extract"
ROLE_FILTER = "filter"
ROLE_COMPOUND = "compound"
ROLE_FILTER_NOISE = "filter-noise"


def derive_seed(run_seed: int, *parts: str) -> int:
    """Stable 64-bit seed from a run seed and any number of string parts."""
    payload = ":".join((str(run_seed), *parts)).encode()
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "big")


@dataclass(frozen=True)
class EpisodeSeeds:
    """Per-episode seed derivation, keyed by role name."""

    run_seed: int
    record_id: str

    def role(self, name: str) -> int:
        return derive_seed(self.run_seed, self.record_id, name)

    def rng(self, name: str) -> random.Random:
        return random.Random(self.role(name))

    def uniform(self, name: str) -> float:
        return self.rng(name).random()


# --------------------------------------------------------------------------
# Simulated last-letter backends


@dataclass(frozen=True)
class ErrorModel:
    """Per-step failure probabilities for the simulated reasoner.

    p_word_sub: a step's word is replaced by a morphological variant.
    p_letter_err: a step reports a wrong final letter.
    p_omit: a step's sentence is dropped entirely.
    p_trunc: output is cut off before the answer (compound RA mode only).
    """

    p_word_sub: float = 0.0
    p_letter_err: float = 0.0
    p_omit: float = 0.0
    p_trunc: float = 0.0

    def __post_init__(self):
        for name in ("p_word_sub", "p_letter_err", "p_omit", "p_trunc"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name}={value} outside [0, 1]")


_SUFFIXES = ("ing", "s", "ed", "er")


def word_variants(word: str, exclude: frozenset[str] = frozenset()) -> list[str]:
    """Morphological variants of a word, built by appending or stripping one
    of a fixed suffix set. Variants equal to the original or to any excluded
    word (the rest of the group) are dropped."""
    out: list[str] = []
    for suffix in _SUFFIXES:
        if word.endswith(suffix) and len(word) > len(suffix):
            out.append(word[: -len(suffix)])
        out.append(word + suffix)
    return [v for v in dict.fromkeys(out) if v != word and v not in exclude]


def _chain_sentences(
    group: LastLetterGroup, em: ErrorModel, rng: random.Random
) -> tuple[list[str], bool]:
    """Build chain sentences for a group, applying per-step injectors in
    fixed order: word substitution, then letter error, then omission."""
    sentences: list[str] = []
    corrupted = False
    for i, word in enumerate(group.words):
        shown = word
        if rng.random() < em.p_word_sub:
            variants = word_variants(word, exclude=frozenset(group.words) - {word})
            if variants:
                shown = rng.choice(variants)
                corrupted = True
        letter = shown[-1]
        if rng.random() < em.p_letter_err:
            letter = rng.choice([c for c in ascii_lowercase if c != letter])
            corrupted = True
        if rng.random() < em.p_omit:
            corrupted = True
            continue
        sentences.append(f"The last letter of the {ORDINALS[i]} word '{shown}' is '{letter}'.")
    return sentences, corrupted


def simulated_reasoner_generate(group: LastLetterGroup, em: ErrorModel, seed: int) -> ReasoningChain:
    """Generate a chain for a group, starting from the gold template and
    applying the error model's injectors step by step."""
    sentences, corrupted = _chain_sentences(group, em, random.Random(seed))
    source = ChainSource.INJECTED_ERROR if corrupted else ChainSource.GENERATED
    return ReasoningChain(text=" ".join(sentences), source=source)


def simulated_direct_answerer(group: LastLetterGroup, q_acc: float, seed: int) -> str:
    """Answer from the question alone: the gold answer sentence with
    probability q_acc, otherwise the gold answer with exactly one character
    substituted."""
    if not 0.0 <= q_acc <= 1.0:
        raise ConfigError(f"q_acc={q_acc} outside [0, 1]")
    rng = random.Random(seed)
    gold = lastletter_gold_answer(group.words)
    if rng.random() < q_acc:
        return answer_sentence(gold)
    pos = rng.randrange(len(gold))
    wrong = rng.choice([c for c in ascii_lowercase if c != gold[pos]])
    return answer_sentence(gold[:pos] + wrong + gold[pos + 1:])


def _group_from_prompt(prompt: str) -> LastLetterGroup:
    first_line = prompt.splitlines()[0] if prompt else ""
    return LastLetterGroup(words=parse_words_from_question(first_line))


class SimulatedReasoner(GenerationBackend):
    """Q -> R generator for last-letter prompts with injected step errors."""

    def __init__(self, error_model: ErrorModel):
        self.error_model = error_model

    def generate(self, prompt, max_new_tokens=DEFAULT_MAX_NEW_TOKENS, seed=None):
        group = _group_from_prompt(prompt)
        return simulated_reasoner_generate(group, self.error_model, 0 if seed is None else seed).text


class SimulatedAnswerer(GenerationBackend):
    """Answerer for last-letter prompts.

    Prompts containing the question/chain separator are answered by faithful
    extraction of the chain's reported letters; bare questions are answered
    directly with accuracy q_acc. An unreadable chain yields empty output
    (a missing answer downstream).
    """

    def __init__(self, q_acc: float):
        if not 0.0 <= q_acc <= 1.0:
            raise ConfigError(f"q_acc={q_acc} outside [0, 1]")
        self.q_acc = q_acc

    def generate(self, prompt, max_new_tokens=DEFAULT_MAX_NEW_TOKENS, seed=None):
        if SEPARATOR in prompt:
            parse = parse_lastletter_chain(prompt.split(SEPARATOR, 1)[1])
            if not parse.letters:
                return ""
            return answer_sentence("".join(parse.letters))
        group = _group_from_prompt(prompt)
        return simulated_direct_answerer(group, self.q_acc, 0 if seed is None else seed)


class SimulatedCompound(GenerationBackend):
    """Single-pass generator producing chain and answer together, in RA or
    AR order. In RA order the output may be truncated before the answer
    with probability p_trunc; in AR order the answer comes first and
    survives truncation."""

    def __init__(self, error_model: ErrorModel, order: CompoundOrder = CompoundOrder.RA):
        self.error_model = error_model
        self.order = CompoundOrder(order)

    def generate(self, prompt, max_new_tokens=DEFAULT_MAX_NEW_TOKENS, seed=None):
        group = _group_from_prompt(prompt)
        rng = random.Random(0 if seed is None else seed)
        sentences, _ = _chain_sentences(group, self.error_model, rng)
        letters = parse_lastletter_chain(" ".join(sentences)).letters
        answer = answer_sentence("".join(letters)) if letters else None
        if self.order is CompoundOrder.RA:
            if rng.random() < self.error_model.p_trunc and sentences:
                keep = rng.randint(1, len(sentences))
                return " ".join(sentences[:keep])
            return " ".join(sentences + ([answer] if answer else []))
        return " ".join(([answer] if answer else []) + sentences)


# --------------------------------------------------------------------------
# Remote client


@dataclass(frozen=True)
class RemoteBackendConfig:
    """How to reach a model server."""

    base_url: str
    timeout: float = 10.0
    retries: int = 2
    auth_token: str | None = None
    max_inflight: int = 8

    def __post_init__(self):
        if not self.base_url:
            raise ConfigError("remote backend needs a base URL")
        if self.timeout <= 0:
            raise ConfigError(f"timeout must be positive, got {self.timeout}")
        if self.retries < 0:
            raise ConfigError(f"retries must be >= 0, got {self.retries}")
        if self.max_inflight < 1:
            raise ConfigError(f"max_inflight must be >= 1, got {self.max_inflight}")


class RemoteClient:
    """HTTP client for the wire protocol. Retries connection-level failures
    with backoff; server-reported errors and schema violations are raised
    immediately as distinct types. Responses are returned verbatim — the
    client never fabricates or rewrites content."""

    def __init__(self, cfg: RemoteBackendConfig):
        self.cfg = cfg
        self._session = requests.Session()
        if cfg.auth_token:
            self._session.headers["Authorization"] = f"Bearer {cfg.auth_token}"
        self._gate = threading.Semaphore(cfg.max_inflight)

    def _request(self, method: str, path: str, payload: dict | None = None) -> dict:
        url = self.cfg.base_url.rstrip("/") + path
        last_exc: Exception | None = None
        for attempt in range(self.cfg.retries + 1):
            try:
                with self._gate:
                    response = self._session.request(
                        method, url, json=payload, timeout=self.cfg.timeout
                    )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_exc = exc
                if attempt < self.cfg.retries:
                    time.sleep(min(0.1 * 2**attempt, 2.0))
                continue
            return self._interpret(response, path)
        raise TransportError(
            f"{method} {url} failed after {self.cfg.retries + 1} attempts: {last_exc}"
        )

    @staticmethod
    def _interpret(response: requests.Response, path: str) -> dict:
        if 200 <= response.status_code < 300:
            try:
                body = response.json()
            except ValueError as exc:
                raise RemoteSchemaError(f"{path}: 2xx response is not JSON") from exc
            if not isinstance(body, dict):
                raise RemoteSchemaError(f"{path}: 2xx response is not a JSON object")
            return body
        try:
            error = response.json()["error"]
            kind, message = error["kind"], error["message"]
        except Exception as exc:
            raise RemoteSchemaError(
                f"{path}: HTTP {response.status_code} without a well-formed error body"
            ) from exc
        raise RemoteModelError(f"{path}: HTTP {response.status_code} [{kind}] {message}", kind=kind)

    def post(self, path: str, payload: dict) -> dict:
        return self._request("POST", path, payload)

    def health(self) -> list[str]:
        body = self._request("GET", "/healthz")
        roles = body.get("roles")
        if not isinstance(roles, list) or not all(isinstance(r, str) for r in roles):
            raise RemoteSchemaError("/healthz: expected {'roles': [str, ...]}")
        return roles


class RemoteGenerator(GenerationBackend):
    def __init__(self, client: RemoteClient):
        self.client = client

    def generate(self, prompt, max_new_tokens=DEFAULT_MAX_NEW_TOKENS, seed=None):
        body = self.client.post(
            "/generate",
            {"prompt": prompt, "max_new_tokens": max_new_tokens, "seed": seed},
        )
        text = body.get("text")
        if not isinstance(text, str):
            raise RemoteSchemaError("/generate: missing or non-string 'text'")
        return text


class RemoteClassifier(ClassifierBackend):
    def __init__(self, client: RemoteClient):
        self.client = client

    def classify(self, text):
        body = self.client.post("/classify", {"text": text})
        label, score = body.get("label"), body.get("score")
        if isinstance(label, bool) or label not in (0, 1):
            raise RemoteSchemaError(f"/classify: label must be 0 or 1, got {label!r}")
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            raise RemoteSchemaError(f"/classify: score must be a number, got {score!r}")
        if not 0.0 <= score <= 1.0:
            raise RemoteSchemaError(f"/classify: score {score} outside [0, 1]")
        return int(label), float(score)


class RemoteEmbedder(EmbeddingBackend):
    def __init__(self, client: RemoteClient):
        self.client = client

    def embed(self, texts):
        body = self.client.post("/embed", {"texts": list(texts)})
        vectors = body.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise RemoteSchemaError(
                f"/embed: expected {len(texts)} vectors, got "
                f"{len(vectors) if isinstance(vectors, list) else type(vectors).__name__}"
            )
        cleaned: list[list[float]] = []
        for vector in vectors:
            if not isinstance(vector, list) or not vector or any(
                isinstance(x, bool) or not isinstance(x, (int, float)) for x in vector
            ):
                raise RemoteSchemaError("/embed: each vector must be a non-empty list of numbers")
            cleaned.append([float(x) for x in vector])
        if len({len(v) for v in cleaned}) > 1:
            raise RemoteSchemaError("/embed: vectors have unequal dimensions")
        return cleaned


def remote_generate(
    cfg: RemoteBackendConfig,
    prompt: str,
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS,
    seed: int | None = None,
) -> str:
    return RemoteGenerator(RemoteClient(cfg)).generate(prompt, max_new_tokens, seed)


def remote_classify(cfg: RemoteBackendConfig, text: str) -> tuple[int, float]:
    return RemoteClassifier(RemoteClient(cfg)).classify(text)


def remote_embed(cfg: RemoteBackendConfig, texts: list[str]) -> list[list[float]]:
    return RemoteEmbedder(RemoteClient(cfg)).embed(texts)
