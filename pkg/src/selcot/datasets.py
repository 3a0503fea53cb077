"""Dataset construction and ingestion.

Covers the synthetic last-letter concatenation task (word groups with
templated gold chains), JSONL ingestion of multiple-choice QA records,
and input/target composition for every training and evaluation format.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

from .config import MAX_GROUP_LEN, ORDINALS
from .core import (
    ChainSource,
    ConfigError,
    DataError,
    QaRecord,
    ReasoningChain,
    Task,
    answer_sentence,
    concat_qr,
    question_block,
)

_WORD_RE = re.compile(r"^[a-z]+$")


@dataclass(frozen=True)
class LastLetterGroup:
    """An ordered group of 1-5 lowercase words belonging to one split."""

    words: tuple[str, ...]
    split: str = "train"

    def __post_init__(self):
        if not 1 <= len(self.words) <= MAX_GROUP_LEN:
            raise DataError(f"group must contain 1..{MAX_GROUP_LEN} words, got {len(self.words)}")
        for w in self.words:
            if not _WORD_RE.match(w):
                raise DataError(f"group word {w!r} is not lowercase alphabetic")


class FormatKind(str, Enum):
    Q_A = "Q-A"
    Q_R = "Q-R"
    QR_A = "QR-A"
    Q_RA = "Q-RA"
    Q_AR = "Q-AR"


_KINDS_WITH_RATIONALE = (FormatKind.Q_R, FormatKind.QR_A, FormatKind.Q_RA, FormatKind.Q_AR)


@dataclass(frozen=True)
class FormatSpec:
    """A training/eval format: which side carries the rationale, and which
    annotation fields ("L" for lecture, "E" for explanation, in order)
    realize it. E.g. Q-RA with parts (L, E) composes lecture-then-
    explanation-then-answer targets."""

    kind: FormatKind
    rationale_parts: tuple[str, ...] = ("E",)

    def __post_init__(self):
        for part in self.rationale_parts:
            if part not in ("L", "E"):
                raise DataError(f"unknown rationale part {part!r} (expected 'L' or 'E')")
        if self.kind in _KINDS_WITH_RATIONALE and not self.rationale_parts:
            raise DataError(f"format {self.kind.value} requires at least one rationale part")


def lastletter_gold_answer(words: Iterable[str]) -> str:
    """Concatenate the final letter of each word, in order."""
    words = list(words)
    if not words:
        raise DataError("cannot build a gold answer for an empty word list")
    return "".join(w[-1] for w in words)


def lastletter_gold_chain(words: Iterable[str]) -> ReasoningChain:
    """Templated gold chain, one sentence per word:
    "The last letter of the <ordinal> word '<w>' is '<c>'." """
    words = list(words)
    if not words:
        raise DataError("cannot build a gold chain for an empty word list")
    if len(words) > len(ORDINALS):
        raise DataError(f"gold chain template supports at most {len(ORDINALS)} words")
    sentences = [
        f"The last letter of the {ORDINALS[i]} word '{w}' is '{w[-1]}'."
        for i, w in enumerate(words)
    ]
    return ReasoningChain(text=" ".join(sentences), source=ChainSource.GOLD)


@dataclass(frozen=True)
class ChainParse:
    """Letters asserted by a last-letter chain, in sentence order, plus the
    number of step-like sentences that carried no parsable quoted letter."""

    letters: tuple[str, ...]
    gaps: int


_STEP_LETTER_RE = re.compile(r"is\s+'([a-z])'", re.IGNORECASE)


def parse_lastletter_chain(text: str) -> ChainParse:
    """Read the per-step reported letters back out of a chain.

    A sentence mentioning "last letter" is treated as a step; a step whose
    reported letter is missing or unquoted counts as a parse gap and
    contributes no letter.
    """
    letters: list[str] = []
    gaps = 0
    for sentence in re.split(r"\.\s*", text):
        if "last letter" not in sentence.lower():
            continue
        found = _STEP_LETTER_RE.findall(sentence)
        if found:
            letters.append(found[-1].lower())
        else:
            gaps += 1
    return ChainParse(letters=tuple(letters), gaps=gaps)


def _bucket_counts(n: int) -> list[int]:
    # remainder goes to the shortest lengths first
    base, rem = divmod(n, MAX_GROUP_LEN)
    return [base + (1 if k < rem else 0) for k in range(MAX_GROUP_LEN)]


def load_vocab(path: str | Path) -> list[str]:
    """Read a newline-delimited word list: lowercased, deduplicated
    (first occurrence wins), non-alphabetic entries dropped."""
    seen = {}
    for line in Path(path).read_text().splitlines():
        word = line.strip().lower()
        if word and _WORD_RE.match(word):
            seen.setdefault(word, None)
    return list(seen)


def generate_lastletter(
    vocab: list[str],
    n_train: int,
    n_test: int,
    seed: int,
) -> tuple[list[LastLetterGroup], list[LastLetterGroup]]:
    """Generate train/test word groups with lengths spread evenly over 1..5.

    The vocabulary is partitioned into disjoint train and test word pools
    before any sampling, so no test word can ever appear in a train group.
    Within a group, words are sampled without replacement.
    """
    if n_train <= 0 or n_test <= 0:
        raise DataError("n_train and n_test must be positive")
    vocab = sorted(set(vocab))
    if len(vocab) < 2 * MAX_GROUP_LEN:
        raise DataError(
            f"vocabulary of {len(vocab)} words cannot fill disjoint pools: "
            f"need at least {MAX_GROUP_LEN} train words and {MAX_GROUP_LEN} test words"
        )
    rng = random.Random(seed)
    rng.shuffle(vocab)
    test_share = n_test / (n_train + n_test)
    n_test_words = min(max(round(len(vocab) * test_share), MAX_GROUP_LEN), len(vocab) - MAX_GROUP_LEN)
    test_pool = vocab[:n_test_words]
    train_pool = vocab[n_test_words:]

    def sample_split(pool: list[str], n: int, split: str) -> list[LastLetterGroup]:
        groups = []
        for length, count in enumerate(_bucket_counts(n), start=1):
            for _ in range(count):
                groups.append(LastLetterGroup(words=tuple(rng.sample(pool, length)), split=split))
        return groups

    return sample_split(train_pool, n_train, "train"), sample_split(test_pool, n_test, "test")


def group_to_record(group: LastLetterGroup, index: int) -> QaRecord:
    """Render a word group as a QA record; the gold chain rides along as
    the explanation field."""
    return QaRecord(
        id=f"{group.split}-{index:05d}",
        question="Words: " + ", ".join(group.words),
        explanation=lastletter_gold_chain(group.words).text,
        gold_answer=lastletter_gold_answer(group.words),
        task=Task.LASTLETTER,
    )


def parse_words_from_question(question: str) -> tuple[str, ...]:
    """Invert the "Words: w1, w2, ..." serialization."""
    prefix = "Words:"
    if not question.startswith(prefix):
        raise DataError(f"not a last-letter question: {question!r}")
    words = tuple(w.strip() for w in question[len(prefix):].split(",") if w.strip())
    if not words:
        raise DataError(f"no words found in question: {question!r}")
    return words


_JSONL_KEYS = ("id", "question", "choices", "lecture", "explanation", "context", "answer", "task")


def record_to_json(record: QaRecord) -> dict:
    return {
        "id": record.id,
        "question": record.question,
        "choices": list(record.choices),
        "lecture": record.lecture,
        "explanation": record.explanation,
        "context": record.context,
        "answer": record.gold_answer,
        "task": record.task.value,
    }


def save_jsonl(path: str | Path, records: Iterable[QaRecord]) -> None:
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record_to_json(record)) + "\n")


def load_jsonl(path: str | Path, task: Task | None = None) -> list[QaRecord]:
    """Load records from a JSONL file, one object per line.

    ``task`` is the default for lines that carry no "task" key. Every
    validation failure names the offending line number.
    """
    records: list[QaRecord] = []
    seen_ids: set[str] = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc})") from exc
            for key in ("id", "question", "answer"):
                if not raw.get(key):
                    raise DataError(f"{path}:{lineno}: missing required field {key!r}")
            unknown = set(raw) - set(_JSONL_KEYS)
            if unknown:
                raise DataError(f"{path}:{lineno}: unknown fields {sorted(unknown)}")
            task_value = raw.get("task")
            if task_value is None:
                if task is None:
                    raise DataError(f"{path}:{lineno}: no task on record and no default given")
                record_task = task
            else:
                try:
                    record_task = Task(task_value)
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: unknown task {task_value!r}") from exc
            try:
                record = QaRecord(
                    id=str(raw["id"]),
                    question=raw["question"],
                    choices=tuple(raw.get("choices") or ()),
                    lecture=raw.get("lecture"),
                    explanation=raw.get("explanation"),
                    context=raw.get("context"),
                    gold_answer=raw["answer"],
                    task=record_task,
                )
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            if record.id in seen_ids:
                raise DataError(f"{path}:{lineno}: duplicate record id {record.id!r}")
            seen_ids.add(record.id)
            records.append(record)
    return records


def rationale_text(record: QaRecord, parts: tuple[str, ...]) -> str:
    pieces = []
    for part in parts:
        value = record.lecture if part == "L" else record.explanation
        if not value:
            raise DataError(f"record {record.id!r} lacks the {part!r} part required by the format")
        pieces.append(value)
    return " ".join(pieces)


def compose(record: QaRecord, fmt: FormatSpec) -> tuple[str, str]:
    """Build the (input, target) text pair for a record under a format."""
    answer = answer_sentence(record.gold_answer)
    if fmt.kind is FormatKind.Q_A:
        return question_block(record), answer
    rationale = rationale_text(record, fmt.rationale_parts)
    if fmt.kind is FormatKind.Q_R:
        return question_block(record), rationale
    if fmt.kind is FormatKind.QR_A:
        chain = ReasoningChain(text=rationale, source=ChainSource.GOLD)
        return concat_qr(record, chain), answer
    if fmt.kind is FormatKind.Q_RA:
        return question_block(record), f"{rationale} {answer}"
    if fmt.kind is FormatKind.Q_AR:
        return question_block(record), f"{answer} {rationale}"
    raise ConfigError(f"unhandled format kind {fmt.kind}")  # pragma: no cover
