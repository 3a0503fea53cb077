"""Domain types shared by every module: QA records, reasoning chains,
filter verdicts, per-question episodes, and the text conventions
(question block, question-chain concatenation, answer normalization)
that all strategies rely on.

All types are immutable value objects and safe to share between workers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from string import ascii_uppercase

from .config import ANSWER_MARKER, SEPARATOR


class SelcotError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(SelcotError):
    """Invalid configuration (bad flag combination, bad hyperparameter)."""


class DataError(SelcotError):
    """Invalid or inconsistent input data."""


class Task(str, Enum):
    SCIENCEQA = "scienceqa-like"
    ECQA = "ecqa-like"
    LASTLETTER = "lastletter"


class ChainSource(str, Enum):
    GOLD = "gold"
    GENERATED = "generated"
    INJECTED_ERROR = "injected-error"


class FilterKind(str, Enum):
    RULE = "rule"
    LEARNED = "learned"
    ORACLE = "oracle"
    RANDOM = "random"
    ALWAYS_PASS = "always-pass"


class Strategy(str, Enum):
    VANILLA = "vanilla"
    COMPOUND_RA = "compound-RA"
    COMPOUND_AR = "compound-AR"
    PIPELINE = "pipeline"
    SELF_REASONER = "self-reasoner"


class Branch(str, Enum):
    EXTRACTED = "extracted-from-QR"
    DIRECT = "direct-from-Q"
    SINGLE_SHOT = "single-shot"


class CompoundOrder(str, Enum):
    RA = "RA"
    AR = "AR"


class PairOrigin(str, Enum):
    MAIN = "main-reasoner"
    SUBPAR = "subpar-reasoner"


@dataclass(frozen=True)
class QaRecord:
    """One question with its gold answer and optional annotations.

    Attributes:
        id:          Unique identifier within a split.
        question:    Question text (for last-letter records: "Words: w1, w2, ...").
        choices:     Answer options, empty for free-form tasks.
        lecture:     Optional background lecture text.
        explanation: Optional annotated reasoning chain used for training.
        context:     Optional extra context (e.g. an image caption as text).
        gold_answer: The reference answer; must equal exactly one choice
                     when choices are present.
        task:        Which task family the record belongs to.
    """

    id: str
    question: str
    choices: tuple[str, ...] = ()
    lecture: str | None = None
    explanation: str | None = None
    context: str | None = None
    gold_answer: str = ""
    task: Task = Task.LASTLETTER

    def __post_init__(self):
        if not self.gold_answer:
            raise DataError(f"record {self.id!r}: gold answer must be non-empty")
        if self.choices and self.choices.count(self.gold_answer) != 1:
            raise DataError(
                f"record {self.id!r}: gold answer {self.gold_answer!r} must equal "
                f"exactly one choice, got {list(self.choices)}"
            )


@dataclass(frozen=True)
class ReasoningChain:
    """A reasoning chain: gold (annotated), generated, or deliberately corrupted."""

    text: str
    source: ChainSource = ChainSource.GENERATED

    def __post_init__(self):
        if self.source is ChainSource.GOLD and not self.text:
            raise DataError("gold reasoning chain must have non-empty text")


@dataclass(frozen=True)
class Verdict:
    """A filter decision over a (question, chain) pair.

    ``valid`` means the chain passed the filter; ``score`` is the filter's
    confidence. Rule and oracle filters are binary and emit score 0 or 1.
    """

    valid: bool
    score: float
    filter_kind: FilterKind

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise DataError(f"verdict score {self.score} outside [0, 1]")
        if self.filter_kind in (FilterKind.RULE, FilterKind.ORACLE) and self.score not in (0.0, 1.0):
            raise DataError(f"{self.filter_kind.value} filter must emit a binary score")


@dataclass(frozen=True)
class Episode:
    """Full trace of one record through one prediction strategy.

    ``error`` is set only when a filter call failed and the configured
    policy marked the episode as failed instead of falling back; such
    episodes carry no branch and are scored incorrect.
    """

    record_id: str
    strategy: Strategy
    chain: ReasoningChain | None
    verdict: Verdict | None
    branch: Branch | None
    raw_output: str
    predicted_answer: str | None
    answer_missing: bool
    correct: bool
    error: str | None = None

    def validate(self) -> "Episode":
        """Assert the cross-field consistency rules; returns self."""
        if self.answer_missing and self.predicted_answer is not None:
            raise DataError(f"episode {self.record_id}: missing answer but prediction present")
        if self.answer_missing and self.correct:
            raise DataError(f"episode {self.record_id}: missing answer cannot be correct")
        if self.error is not None:
            if self.branch is None:
                # hard failure: no branch ran, nothing was predicted
                if self.correct or self.predicted_answer is not None:
                    raise DataError(
                        f"episode {self.record_id}: failed episode cannot carry a prediction"
                    )
                return self
            # fallback after a filter failure always takes the direct path
            if self.strategy is Strategy.SELF_REASONER and self.branch is not Branch.DIRECT:
                raise DataError(
                    f"episode {self.record_id}: fallback episode must use the direct branch"
                )
            return self
        if self.branch is None:
            raise DataError(f"episode {self.record_id}: branch missing")
        if self.strategy is Strategy.SELF_REASONER:
            if self.verdict is None:
                raise DataError(f"episode {self.record_id}: self-reasoner episode lacks a verdict")
            expected = Branch.EXTRACTED if self.verdict.valid else Branch.DIRECT
            if self.branch is not expected:
                raise DataError(
                    f"episode {self.record_id}: branch {self.branch.value} inconsistent "
                    f"with verdict valid={self.verdict.valid}"
                )
        return self


@dataclass(frozen=True)
class LabeledPair:
    """A verifier training example: serialized question-chain input with a 0/1 label."""

    input: str
    label: int
    origin: PairOrigin = PairOrigin.MAIN

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DataError(f"pair label must be 0 or 1, got {self.label}")


def question_block(record: QaRecord) -> str:
    """Serialize the input side of a record: question, then context,
    then the choice list, one block per line."""
    parts = [record.question]
    if record.context:
        parts.append(record.context)
    if record.choices:
        rendered = " ".join(
            f"({letter}) {choice}" for letter, choice in zip(ascii_uppercase, record.choices)
        )
        parts.append(f"Choices: {rendered}")
    return "\n".join(parts)


def concat_qr(record: QaRecord, chain: ReasoningChain) -> str:
    """Deterministic question-chain concatenation: question block, a fixed
    separator line, then the chain text."""
    return f"{question_block(record)}\n{SEPARATOR}\n{chain.text}"


def answer_sentence(answer: str) -> str:
    """Render an answer in the canonical sentence form."""
    return f"{ANSWER_MARKER} {answer}."


_MARKER_RE = re.compile(r"the\s+answer\s+is", re.IGNORECASE)


def answer_payload(text: str) -> str | None:
    """Pull the answer text out of ``text`` if it contains the answer
    marker (last occurrence wins); otherwise return ``text`` itself.
    Returns None when the marker is present but followed by nothing."""
    matches = list(_MARKER_RE.finditer(text))
    if not matches:
        return text
    tail = text[matches[-1].end():]
    period = tail.find(".")
    if period >= 0:
        tail = tail[:period]
    tail = tail.strip()
    return tail or None


_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def tokenize(text: str) -> tuple[str, ...]:
    """Shared word tokenization: lowercase, alphanumeric runs kept whole,
    punctuation split off as separate tokens."""
    return tuple(_TOKEN_RE.findall(text.lower()))


def normalize_answer(text: str) -> str:
    """Case-insensitive, whitespace-collapsed canonical form of an answer,
    with any trailing period removed."""
    collapsed = " ".join(text.split()).strip().lower()
    return collapsed[:-1].strip() if collapsed.endswith(".") else collapsed


def resolve_choice(answer: str, choices: tuple[str, ...]) -> int | None:
    """Map an answer string to a choice index: exact normalized match first,
    then a unique substring match in either direction."""
    norm = normalize_answer(answer)
    norm_choices = [normalize_answer(c) for c in choices]
    exact = [i for i, c in enumerate(norm_choices) if c == norm]
    if len(exact) == 1:
        return exact[0]
    if not norm:
        return None
    partial = [i for i, c in enumerate(norm_choices) if c and (c in norm or norm in c)]
    if len(partial) == 1:
        return partial[0]
    return None
