"""Chain-of-thought filters.

A filter looks at a (question, chain) pair and decides whether the chain is
trustworthy enough to extract an answer from. This module provides the
rule-based last-letter filter, evaluation-only oracle and random filters,
the verifier-dataset builder with class balancing, and a trainable linear
verifier over hashed n-gram features for use when no remote classifier is
available.
"""

from __future__ import annotations

import random
import zlib
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.special import expit

from .backends import (
    ClassifierBackend,
    EpisodeSeeds,
    ROLE_FILTER,
    ROLE_FILTER_NOISE,
)
from .config import VERIFIER_HASH_BITS, VERIFIER_NGRAM_RANGE, VERIFIER_THRESHOLD
from .core import (
    ConfigError,
    DataError,
    Episode,
    FilterKind,
    LabeledPair,
    PairOrigin,
    QaRecord,
    ReasoningChain,
    Verdict,
    concat_qr,
    normalize_answer,
    tokenize,
)
from .datasets import LastLetterGroup, parse_lastletter_chain, parse_words_from_question


def rule_filter_lastletter(group: LastLetterGroup, chain: ReasoningChain) -> Verdict:
    """Valid iff every word of the group appears single-quoted in the chain.

    Matching is on the exact quoted token after lowercasing the chain, so a
    morphological variant of a word (or an omitted step) fails the check
    while a wrong reported letter passes — the filter sees words, not
    letters.
    """
    text = chain.text.lower()
    valid = all(f"'{word}'" in text for word in group.words)
    return Verdict(valid=valid, score=1.0 if valid else 0.0, filter_kind=FilterKind.RULE)


def oracle_filter(chain: ReasoningChain, gold_answer: str) -> Verdict:
    """Valid iff extracting an answer from this chain would be correct.

    Evaluation-only: it reads the gold answer, which no deployable filter
    can do.
    """
    extracted = "".join(parse_lastletter_chain(chain.text).letters)
    valid = bool(extracted) and normalize_answer(extracted) == normalize_answer(gold_answer)
    return Verdict(valid=valid, score=1.0 if valid else 0.0, filter_kind=FilterKind.ORACLE)


def random_filter(p: float, seed: int) -> Verdict:
    """Valid with probability p, independent of the chain."""
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"random filter probability {p} outside [0, 1]")
    valid = random.Random(seed).random() < p
    return Verdict(valid=valid, score=1.0 if valid else 0.0, filter_kind=FilterKind.RANDOM)


class CotFilter(ABC):
    """Uniform filter interface used by the self-reasoner runner."""

    @abstractmethod
    def verdict(self, record: QaRecord, chain: ReasoningChain, seeds: EpisodeSeeds) -> Verdict:
        raise NotImplementedError


class RuleFilter(CotFilter):
    def verdict(self, record, chain, seeds):
        group = LastLetterGroup(words=parse_words_from_question(record.question))
        return rule_filter_lastletter(group, chain)


class OracleFilter(CotFilter):
    def verdict(self, record, chain, seeds):
        return oracle_filter(chain, record.gold_answer)


class RandomFilter(CotFilter):
    def __init__(self, p: float = 0.5):
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"random filter probability {p} outside [0, 1]")
        self.p = p

    def verdict(self, record, chain, seeds):
        return random_filter(self.p, seeds.role(ROLE_FILTER))


class AlwaysPassFilter(CotFilter):
    def verdict(self, record, chain, seeds):
        return Verdict(valid=True, score=1.0, filter_kind=FilterKind.ALWAYS_PASS)


class NoisyOracleFilter(CotFilter):
    """Oracle verdict flipped with probability 1 - agreement.

    The flip draw is compared against the agreement level rather than
    redrawn per level, so raising agreement can only remove flips — sweeps
    over filter quality are monotone per record.
    """

    def __init__(self, agreement: float):
        if not 0.0 <= agreement <= 1.0:
            raise ConfigError(f"filter agreement {agreement} outside [0, 1]")
        self.agreement = agreement

    def verdict(self, record, chain, seeds):
        base = oracle_filter(chain, record.gold_answer)
        flip = seeds.uniform(ROLE_FILTER_NOISE) >= self.agreement
        valid = base.valid != flip
        return Verdict(valid=valid, score=1.0 if valid else 0.0, filter_kind=FilterKind.ORACLE)


class LearnedFilter(CotFilter):
    def __init__(self, verifier: "LinearVerifier"):
        self.verifier = verifier

    def verdict(self, record, chain, seeds):
        return verifier_predict(self.verifier, concat_qr(record, chain))


class RemoteClassifyFilter(CotFilter):
    """Filter backed by a remote classifier; the decision threshold is
    applied client-side to the returned positive-class score."""

    def __init__(self, backend: ClassifierBackend, threshold: float = VERIFIER_THRESHOLD):
        if not 0.0 < threshold < 1.0:
            raise ConfigError(f"threshold {threshold} outside (0, 1)")
        self.backend = backend
        self.threshold = threshold

    def verdict(self, record, chain, seeds):
        _, score = self.backend.classify(concat_qr(record, chain))
        return Verdict(valid=score >= self.threshold, score=score, filter_kind=FilterKind.LEARNED)


# --------------------------------------------------------------------------
# Verifier training data


@dataclass(frozen=True)
class VerifierTrainConfig:
    epochs: int = 10
    learning_rate: float = 1.0
    l2: float = 0.0
    seed: int = 0
    target_class_balance: tuple[float, float] = (0.4, 0.6)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.l2 < 0:
            raise ConfigError(f"l2 must be >= 0, got {self.l2}")
        lo, hi = self.target_class_balance
        if not (0.0 < lo < hi < 1.0):
            raise ConfigError(
                f"target_class_balance must satisfy 0 < lo < hi < 1, got ({lo}, {hi})"
            )


def build_verifier_dataset(
    episodes: list[Episode],
    records_by_id: dict[str, QaRecord],
    cfg: VerifierTrainConfig,
    subpar_source: list[Episode] | None = None,
) -> list[LabeledPair]:
    """Turn pipeline episodes into labeled verifier training pairs.

    Each pair's input is the serialized question-chain concatenation and its
    label is 1 iff the episode's extraction was correct. If positives
    dominate beyond the configured balance interval, incorrect episodes from
    the subpar source are appended as extra negatives — labels are never
    changed, only rows added — until the positive fraction falls inside the
    interval or the source runs out.
    """
    if not episodes:
        raise DataError("cannot build a verifier dataset from zero episodes")

    def pair_for(episode: Episode, origin: PairOrigin) -> LabeledPair:
        record = records_by_id.get(episode.record_id)
        if record is None:
            raise DataError(f"no record for episode {episode.record_id!r}")
        if episode.chain is None:
            raise DataError(f"episode {episode.record_id!r} has no chain")
        return LabeledPair(
            input=concat_qr(record, episode.chain),
            label=1 if episode.correct else 0,
            origin=origin,
        )

    pairs = [pair_for(ep, PairOrigin.MAIN) for ep in episodes]
    positives = sum(p.label for p in pairs)
    lo, hi = cfg.target_class_balance
    if subpar_source:
        extra_negatives = (ep for ep in subpar_source if not ep.correct)
        while positives / len(pairs) > hi:
            episode = next(extra_negatives, None)
            if episode is None:
                break
            pairs.append(pair_for(episode, PairOrigin.SUBPAR))
    return pairs


def positive_fraction(pairs: list[LabeledPair]) -> float:
    if not pairs:
        raise DataError("no pairs")
    return sum(p.label for p in pairs) / len(pairs)


# --------------------------------------------------------------------------
# Linear verifier over hashed n-gram features


@dataclass(frozen=True, eq=False)
class LinearVerifier:
    """Logistic scorer over a signed hashed bag of word n-grams."""

    weights: np.ndarray
    bias: float
    threshold: float = VERIFIER_THRESHOLD
    b: int = VERIFIER_HASH_BITS
    ngram_range: tuple[int, int] = VERIFIER_NGRAM_RANGE

    def __post_init__(self):
        if self.weights.shape != (1 << self.b,):
            raise ConfigError(
                f"weights shape {self.weights.shape} does not match 2^{self.b} dimensions"
            )
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold {self.threshold} outside (0, 1)")
        lo, hi = self.ngram_range
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad ngram range ({lo}, {hi})")


def hashed_features(text: str, b: int, ngram_range: tuple[int, int]) -> dict[int, float]:
    """Signed hashed counts of word n-grams: index is the hash's low b bits,
    sign comes from its top bit."""
    tokens = tokenize(text)
    lo, hi = ngram_range
    mask = (1 << b) - 1
    feats: dict[int, float] = {}
    for n in range(lo, hi + 1):
        for i in range(len(tokens) - n + 1):
            h = zlib.crc32(" ".join(tokens[i : i + n]).encode())
            sign = 1.0 if (h >> 31) & 1 == 0 else -1.0
            idx = h & mask
            feats[idx] = feats.get(idx, 0.0) + sign
    return feats


def _feature_matrix(texts: list[str], b: int, ngram_range: tuple[int, int]) -> sparse.csr_matrix:
    data: list[float] = []
    indices: list[int] = []
    indptr = [0]
    for text in texts:
        feats = hashed_features(text, b, ngram_range)
        indices.extend(feats.keys())
        data.extend(feats.values())
        indptr.append(len(indices))
    return sparse.csr_matrix(
        (np.array(data), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(len(texts), 1 << b),
    )


@dataclass(frozen=True)
class TrainResult:
    verifier: LinearVerifier
    loss: float
    accuracy: float
    epochs: int


def train_verifier(
    pairs: list[LabeledPair],
    cfg: VerifierTrainConfig,
    b: int = VERIFIER_HASH_BITS,
    ngram_range: tuple[int, int] = VERIFIER_NGRAM_RANGE,
) -> TrainResult:
    """Fit the linear verifier by full-batch gradient descent on the mean
    logistic loss. Using the mean (not the sum) makes the decision function
    invariant under dataset duplication, and zero-initialized full-batch
    updates make training deterministic outright — cfg.seed is accepted for
    interface stability but nothing here draws from it.
    """
    if len(pairs) < 2:
        raise DataError("need at least two pairs to train")
    labels = np.array([p.label for p in pairs], dtype=np.float64)
    if labels.min() == labels.max():
        raise DataError("training pairs contain a single class; need both labels")
    x = _feature_matrix([p.input for p in pairs], b, ngram_range)
    n = len(pairs)
    weights = np.zeros(1 << b)
    bias = 0.0
    for _ in range(cfg.epochs):
        probs = expit(x @ weights + bias)
        residual = probs - labels
        grad_w = x.T @ residual / n + cfg.l2 * weights
        grad_b = float(residual.mean())
        weights -= cfg.learning_rate * np.asarray(grad_w).ravel()
        bias -= cfg.learning_rate * grad_b
    probs = expit(x @ weights + bias)
    eps = 1e-12
    loss = float(
        -(labels * np.log(probs + eps) + (1 - labels) * np.log(1 - probs + eps)).mean()
        + cfg.l2 / 2 * float(weights @ weights)
    )
    verifier = LinearVerifier(weights=weights, bias=bias, b=b, ngram_range=tuple(ngram_range))
    accuracy = float(((probs >= verifier.threshold) == (labels == 1)).mean())
    return TrainResult(verifier=verifier, loss=loss, accuracy=accuracy, epochs=cfg.epochs)


def verifier_predict(verifier: LinearVerifier, text: str) -> Verdict:
    z = verifier.bias
    for idx, value in hashed_features(text, verifier.b, verifier.ngram_range).items():
        z += float(verifier.weights[idx]) * value
    score = float(expit(z))
    return Verdict(
        valid=score >= verifier.threshold,
        score=score,
        filter_kind=FilterKind.LEARNED,
    )


def save_verifier(verifier: LinearVerifier, path) -> None:
    np.savez(
        path,
        b=verifier.b,
        ngram_range=np.array(verifier.ngram_range, dtype=np.int64),
        threshold=verifier.threshold,
        bias=verifier.bias,
        weights=verifier.weights,
    )


def load_verifier(path) -> LinearVerifier:
    try:
        with np.load(path) as data:
            return LinearVerifier(
                weights=data["weights"],
                bias=float(data["bias"]),
                threshold=float(data["threshold"]),
                b=int(data["b"]),
                ngram_range=(int(data["ngram_range"][0]), int(data["ngram_range"][1])),
            )
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot load verifier from {path}: {exc}") from exc
