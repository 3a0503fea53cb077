"""Automatic evaluation metrics.

Exact-match accuracy over answers, sentence-level BLEU and ROUGE-L over
chains, embedding-cosine similarity with a term-frequency fallback, and
the chain-quality report that splits generated chains by whether they led
to a correct answer.

All metrics are pure functions of their inputs; tokenization is the shared
rule from core (lowercase, punctuation split off).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .backends import EmbeddingBackend
from .core import (
    ConfigError,
    DataError,
    Episode,
    answer_payload,
    normalize_answer,
    resolve_choice,
    tokenize,
)


def exact_match(pred: str | None, gold: str, choices: tuple[str, ...] = ()) -> bool:
    """Normalized equality of predicted and gold answers.

    Either side may be a bare answer or a full answer sentence; the marker
    is stripped first. With choices present, both sides are resolved to an
    option index and the indices compared.
    """
    if pred is None:
        return False
    pred_payload = answer_payload(pred)
    gold_payload = answer_payload(gold)
    if pred_payload is None or gold_payload is None:
        return False
    if choices:
        pred_idx = resolve_choice(pred_payload, tuple(choices))
        gold_idx = resolve_choice(gold_payload, tuple(choices))
        return pred_idx is not None and pred_idx == gold_idx
    return normalize_answer(pred_payload) == normalize_answer(gold_payload)


def accuracy(episodes: list[Episode]) -> float:
    if not episodes:
        raise DataError("no episodes to score")
    return sum(ep.correct for ep in episodes) / len(episodes)


def _ngram_counts(tokens: tuple[str, ...], k: int) -> Counter:
    return Counter(tokens[i : i + k] for i in range(len(tokens) - k + 1))


def bleu(candidate: str, reference: str, n: int = 4) -> float:
    """Sentence-level BLEU-n.

    Geometric mean of modified k-gram precisions for k = 1..min(n, |cand|)
    (orders longer than the candidate are unrealizable and excluded), with
    brevity penalty exp(1 - |ref|/|cand|) when the candidate is shorter than
    the reference. A zero precision is smoothed to 1/(2 * number of
    candidate k-grams).
    """
    if n < 1:
        raise ConfigError(f"bleu order must be >= 1, got {n}")
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return 0.0
    log_sum = 0.0
    orders = range(1, min(n, len(cand)) + 1)
    for k in orders:
        cand_counts = _ngram_counts(cand, k)
        ref_counts = _ngram_counts(ref, k)
        total = len(cand) - k + 1
        matched = sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
        precision = matched / total if matched else 1.0 / (2.0 * total)
        log_sum += math.log(precision)
    score = math.exp(log_sum / len(orders))
    if len(cand) < len(ref):
        score *= math.exp(1.0 - len(ref) / len(cand))
    return score


def _lcs_length(a: tuple[str, ...], b: tuple[str, ...]) -> int:
    # single-row dynamic program
    previous = [0] * (len(b) + 1)
    for token in a:
        current = [0]
        for j, other in enumerate(b, start=1):
            if token == other:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l(candidate: str, reference: str, beta: float = 1.2) -> float:
    """Longest-common-subsequence F-measure over word tokens:
    F = (1 + beta^2) P R / (R + beta^2 P)."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return 0.0
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    b2 = beta * beta
    return (1 + b2) * precision * recall / (recall + b2 * precision)


def _tf_vectors(candidate: str, reference: str) -> tuple[np.ndarray, np.ndarray]:
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        raise DataError("similarity fallback needs non-empty texts on both sides")
    vocab = sorted(set(cand) | set(ref))
    index = {token: i for i, token in enumerate(vocab)}
    vectors = np.zeros((2, len(vocab)))
    for row, tokens in enumerate((cand, ref)):
        for token in tokens:
            vectors[row, index[token]] += 1.0
    return vectors[0], vectors[1]


def similarity(candidate: str, reference: str, embedder: EmbeddingBackend | None = None) -> float:
    """Cosine similarity of the two texts' embeddings. Without an embedding
    backend, falls back to L2-normalized term-frequency vectors over the
    pair's joint vocabulary (which keeps the value in [0, 1])."""
    if embedder is not None:
        vec_a, vec_b = (np.asarray(v, dtype=np.float64) for v in embedder.embed([candidate, reference]))
    else:
        vec_a, vec_b = _tf_vectors(candidate, reference)
    norm_a = float(np.linalg.norm(vec_a))
    norm_b = float(np.linalg.norm(vec_b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise DataError("cannot take cosine of a zero embedding vector")
    return float(vec_a @ vec_b / (norm_a * norm_b))


@dataclass(frozen=True)
class SplitQuality:
    """Mean chain metrics over one split of episodes."""

    count: int
    bleu1: float
    bleu4: float
    rouge_l: float
    similarity: float


@dataclass(frozen=True)
class ChainQualityReport:
    """Chain quality split by whether the chain led to a correct answer."""

    correct: SplitQuality
    incorrect: SplitQuality
    all: SplitQuality


def _split_quality(
    pairs: list[tuple[str, str]], embedder: EmbeddingBackend | None
) -> SplitQuality:
    if not pairs:
        return SplitQuality(count=0, bleu1=0.0, bleu4=0.0, rouge_l=0.0, similarity=0.0)
    bleu1s, bleu4s, rouges, sims = [], [], [], []
    for cand, ref in pairs:
        bleu1s.append(bleu(cand, ref, 1))
        bleu4s.append(bleu(cand, ref, 4))
        rouges.append(rouge_l(cand, ref))
        sims.append(similarity(cand, ref, embedder))
    n = len(pairs)
    return SplitQuality(
        count=n,
        bleu1=sum(bleu1s) / n,
        bleu4=sum(bleu4s) / n,
        rouge_l=sum(rouges) / n,
        similarity=sum(sims) / n,
    )


def chain_quality_report(
    episodes: list[Episode],
    gold_chains: dict[str, str],
    embedder: EmbeddingBackend | None = None,
) -> ChainQualityReport:
    """Compare each episode's chain against its gold chain, split by episode
    correctness. Episodes without a (non-empty) chain are excluded; the
    "all" split is computed over the union of the other two, never by
    averaging their means.
    """
    correct_pairs: list[tuple[str, str]] = []
    incorrect_pairs: list[tuple[str, str]] = []
    for episode in episodes:
        if episode.chain is None or not episode.chain.text:
            continue
        gold = gold_chains.get(episode.record_id)
        if gold is None:
            raise DataError(f"no gold chain for record {episode.record_id!r}")
        target = correct_pairs if episode.correct else incorrect_pairs
        target.append((episode.chain.text, gold))
    return ChainQualityReport(
        correct=_split_quality(correct_pairs, embedder),
        incorrect=_split_quality(incorrect_pairs, embedder),
        all=_split_quality(correct_pairs + incorrect_pairs, embedder),
    )


def report_to_dict(report: ChainQualityReport) -> dict:
    def split_dict(split: SplitQuality) -> dict:
        return {
            "count": split.count,
            "bleu1": split.bleu1,
            "bleu4": split.bleu4,
            "rouge_l": split.rouge_l,
            "similarity": split.similarity,
        }

    return {
        "lead_to_correct": split_dict(report.correct),
        "lead_to_incorrect": split_dict(report.incorrect),
        "all": split_dict(report.all),
    }


def format_report(report: ChainQualityReport) -> str:
    """Aligned plain-text table: one row per split, one column per metric."""
    header = f"{'split':<20} {'count':>6} {'BLEU-1':>8} {'BLEU-4':>8} {'ROUGE-L':>8} {'Sim':>8}"
    rows = [header, "-" * len(header)]
    for name, split in (
        ("lead-to-correct", report.correct),
        ("lead-to-incorrect", report.incorrect),
        ("all", report.all),
    ):
        rows.append(
            f"{name:<20} {split.count:>6} {split.bleu1:>8.4f} {split.bleu4:>8.4f} "
            f"{split.rouge_l:>8.4f} {split.similarity:>8.4f}"
        )
    return "\n".join(rows)


@dataclass(frozen=True)
class HumanAnnotation:
    """One annotator's judgment of one episode's chain. These labels are
    only ever consumed (for agreement tallies), never produced here."""

    record_id: str
    annotator: str
    complete: bool
    entailment: bool
    correct: bool


def annotation_agreement(annotations: list[HumanAnnotation]) -> dict[str, float]:
    """Per-field fraction of multiply-annotated records whose annotators
    agree unanimously."""
    by_record: dict[str, list[HumanAnnotation]] = {}
    for annotation in annotations:
        by_record.setdefault(annotation.record_id, []).append(annotation)
    shared = [group for group in by_record.values() if len(group) >= 2]
    if not shared:
        raise DataError("agreement needs at least one record with two annotations")
    tallies = {}
    for field in ("complete", "entailment", "correct"):
        unanimous = sum(
            1 for group in shared if len({getattr(a, field) for a in group}) == 1
        )
        tallies[field] = unanimous / len(shared)
    return tallies
