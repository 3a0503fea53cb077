"""Prediction strategies.

Runs one question through one of four strategies — vanilla direct answer,
compound chain+answer generation, the two-level reason-then-extract
pipeline, or the selective variant that consults a chain filter and routes
to extraction only when the chain passes. Exactly one answerer call is made
per episode regardless of route.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

from .backends import (
    EpisodeSeeds,
    GenerationBackend,
    ROLE_ANSWER_DIRECT,
    ROLE_ANSWER_EXTRACT,
    ROLE_COMPOUND,
    ROLE_REASON,
)
from .config import DEFAULT_MAX_NEW_TOKENS
from .core import (
    Branch,
    ChainSource,
    CompoundOrder,
    ConfigError,
    DataError,
    Episode,
    FilterKind,
    QaRecord,
    ReasoningChain,
    SelcotError,
    Strategy,
    Verdict,
    _MARKER_RE,
    concat_qr,
    question_block,
)
from .datasets import parse_lastletter_chain  # noqa: F401  (re-exported: template parsing is part of this API)
from .filters import CotFilter
from .metrics import exact_match


class FilterFailPolicy(str, Enum):
    FAIL = "fail"
    FALLBACK_DIRECT = "fallback-direct"


_COMPOUND_ORDERS = {
    Strategy.COMPOUND_RA: CompoundOrder.RA,
    Strategy.COMPOUND_AR: CompoundOrder.AR,
}


@dataclass(frozen=True)
class StrategyConfig:
    """Everything needed to run one strategy over records.

    For compound strategies the single generator goes in ``reasoner`` and
    ``compound_order`` controls how its output is parsed (it is implied by
    the strategy and checked for consistency if given explicitly).
    """

    strategy: Strategy
    reasoner: GenerationBackend | None = None
    answerer: GenerationBackend | None = None
    filter: CotFilter | None = None
    compound_order: CompoundOrder | None = None
    max_output_len: int = DEFAULT_MAX_NEW_TOKENS
    filter_fail_policy: FilterFailPolicy = FilterFailPolicy.FAIL

    def __post_init__(self):
        if self.max_output_len < 1:
            raise ConfigError(f"max_output_len must be >= 1, got {self.max_output_len}")
        implied = _COMPOUND_ORDERS.get(self.strategy)
        if implied is not None:
            if self.reasoner is None:
                raise ConfigError("compound strategy needs a generator in 'reasoner'")
            if self.compound_order is None:
                object.__setattr__(self, "compound_order", implied)
            elif self.compound_order is not implied:
                raise ConfigError(
                    f"compound_order {self.compound_order.value} contradicts "
                    f"strategy {self.strategy.value}"
                )
        elif self.compound_order is not None:
            raise ConfigError(f"compound_order is meaningless for {self.strategy.value}")
        if self.strategy in (Strategy.VANILLA, Strategy.PIPELINE, Strategy.SELF_REASONER):
            if self.answerer is None:
                raise ConfigError(f"{self.strategy.value} needs an answerer")
        if self.strategy in (Strategy.PIPELINE, Strategy.SELF_REASONER):
            if self.reasoner is None:
                raise ConfigError(f"{self.strategy.value} needs a reasoner")
        if self.strategy is Strategy.SELF_REASONER and self.filter is None:
            raise ConfigError("self-reasoner needs a filter")


def extract_answer(raw_output: str) -> tuple[str | None, bool]:
    """Find the answer in a generated output.

    The last occurrence of the answer marker wins; the answer runs from the
    marker to the end of its sentence, trimmed. No marker (or an empty
    payload) means the answer is missing.
    """
    matches = list(_MARKER_RE.finditer(raw_output))
    if not matches:
        return None, True
    tail = raw_output[matches[-1].end() :]
    period = tail.find(".")
    if period >= 0:
        tail = tail[:period]
    payload = tail.strip()
    if not payload:
        return None, True
    return payload, False


def _score(record: QaRecord, raw_output: str) -> tuple[str | None, bool, bool]:
    answer, missing = extract_answer(raw_output)
    correct = not missing and exact_match(answer, record.gold_answer, record.choices)
    return answer, missing, correct


def predict_vanilla(cfg: StrategyConfig, record: QaRecord, run_seed: int) -> Episode:
    """Answer directly from the question; no chain is involved."""
    seeds = EpisodeSeeds(run_seed, record.id)
    raw = cfg.answerer.generate(
        question_block(record), cfg.max_output_len, seeds.role(ROLE_ANSWER_DIRECT)
    )
    answer, missing, correct = _score(record, raw)
    return Episode(
        record_id=record.id,
        strategy=Strategy.VANILLA,
        chain=None,
        verdict=None,
        branch=Branch.SINGLE_SHOT,
        raw_output=raw,
        predicted_answer=answer,
        answer_missing=missing,
        correct=correct,
    ).validate()


def _parse_compound(raw: str, order: CompoundOrder) -> str:
    """Split the chain text out of a compound output (the answer itself is
    recovered by extract_answer). RA order: everything before the last
    marker is chain. AR order: everything after the marker's sentence."""
    matches = list(_MARKER_RE.finditer(raw))
    if not matches:
        return raw.strip()
    if order is CompoundOrder.RA:
        return raw[: matches[-1].start()].strip()
    tail = raw[matches[0].end() :]
    period = tail.find(".")
    return tail[period + 1 :].strip() if period >= 0 else ""


def predict_compound(cfg: StrategyConfig, record: QaRecord, run_seed: int) -> Episode:
    """One generation producing chain and answer together."""
    seeds = EpisodeSeeds(run_seed, record.id)
    raw = cfg.reasoner.generate(
        question_block(record), cfg.max_output_len, seeds.role(ROLE_COMPOUND)
    )
    chain_text = _parse_compound(raw, cfg.compound_order)
    chain = ReasoningChain(chain_text, ChainSource.GENERATED) if chain_text else None
    answer, missing, correct = _score(record, raw)
    return Episode(
        record_id=record.id,
        strategy=cfg.strategy,
        chain=chain,
        verdict=None,
        branch=Branch.SINGLE_SHOT,
        raw_output=raw,
        predicted_answer=answer,
        answer_missing=missing,
        correct=correct,
    ).validate()


def predict_pipeline(cfg: StrategyConfig, record: QaRecord, run_seed: int) -> Episode:
    """Two-level: generate a chain from the question, then extract the
    answer from the question-chain concatenation. No filtering."""
    seeds = EpisodeSeeds(run_seed, record.id)
    chain = ReasoningChain(
        cfg.reasoner.generate(question_block(record), cfg.max_output_len, seeds.role(ROLE_REASON)),
        ChainSource.GENERATED,
    )
    raw = cfg.answerer.generate(
        concat_qr(record, chain), cfg.max_output_len, seeds.role(ROLE_ANSWER_EXTRACT)
    )
    answer, missing, correct = _score(record, raw)
    return Episode(
        record_id=record.id,
        strategy=Strategy.PIPELINE,
        chain=chain,
        verdict=None,
        branch=Branch.EXTRACTED,
        raw_output=raw,
        predicted_answer=answer,
        answer_missing=missing,
        correct=correct,
    ).validate()


def predict_self_reasoner(cfg: StrategyConfig, record: QaRecord, run_seed: int) -> Episode:
    """Generate a chain, ask the filter whether to trust it, then make
    exactly one answerer call: extraction from question+chain when the
    verdict is valid, direct answering otherwise.

    A filter failure follows cfg.filter_fail_policy: either the episode is
    marked failed (scored incorrect, error recorded) or prediction falls
    back to the direct branch with the error recorded.
    """
    seeds = EpisodeSeeds(run_seed, record.id)
    chain = ReasoningChain(
        cfg.reasoner.generate(question_block(record), cfg.max_output_len, seeds.role(ROLE_REASON)),
        ChainSource.GENERATED,
    )
    verdict: Verdict | None
    error: str | None = None
    try:
        verdict = cfg.filter.verdict(record, chain, seeds)
    except SelcotError as exc:
        if cfg.filter_fail_policy is FilterFailPolicy.FAIL:
            return Episode(
                record_id=record.id,
                strategy=Strategy.SELF_REASONER,
                chain=chain,
                verdict=None,
                branch=None,
                raw_output="",
                predicted_answer=None,
                answer_missing=True,
                correct=False,
                error=str(exc),
            ).validate()
        verdict = None
        error = str(exc)
    if verdict is not None and verdict.valid:
        branch = Branch.EXTRACTED
        raw = cfg.answerer.generate(
            concat_qr(record, chain), cfg.max_output_len, seeds.role(ROLE_ANSWER_EXTRACT)
        )
    else:
        branch = Branch.DIRECT
        raw = cfg.answerer.generate(
            question_block(record), cfg.max_output_len, seeds.role(ROLE_ANSWER_DIRECT)
        )
    answer, missing, correct = _score(record, raw)
    return Episode(
        record_id=record.id,
        strategy=Strategy.SELF_REASONER,
        chain=chain,
        verdict=verdict,
        branch=branch,
        raw_output=raw,
        predicted_answer=answer,
        answer_missing=missing,
        correct=correct,
        error=error,
    ).validate()


_RUNNERS = {
    Strategy.VANILLA: predict_vanilla,
    Strategy.COMPOUND_RA: predict_compound,
    Strategy.COMPOUND_AR: predict_compound,
    Strategy.PIPELINE: predict_pipeline,
    Strategy.SELF_REASONER: predict_self_reasoner,
}


def predict(cfg: StrategyConfig, record: QaRecord, run_seed: int) -> Episode:
    return _RUNNERS[cfg.strategy](cfg, record, run_seed)


def run_strategy(
    cfg: StrategyConfig,
    records: Iterable[QaRecord],
    run_seed: int,
    workers: int = 1,
) -> list[Episode]:
    """Run every record through the configured strategy. Results are ordered
    by record id regardless of completion order, and each episode's
    randomness depends only on (run_seed, record id), so worker count never
    changes outcomes."""
    records = list(records)
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    if workers == 1:
        episodes = [predict(cfg, record, run_seed) for record in records]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            episodes = list(pool.map(lambda r: predict(cfg, r, run_seed), records))
    return sorted(episodes, key=lambda ep: ep.record_id)


# --------------------------------------------------------------------------
# Episode logs (JSONL, one episode per line, input to the analysis module)


def episode_to_json(episode: Episode) -> dict:
    return {
        "record_id": episode.record_id,
        "strategy": episode.strategy.value,
        "chain": (
            {"text": episode.chain.text, "source": episode.chain.source.value}
            if episode.chain is not None
            else None
        ),
        "verdict": (
            {
                "valid": episode.verdict.valid,
                "score": episode.verdict.score,
                "filter_kind": episode.verdict.filter_kind.value,
            }
            if episode.verdict is not None
            else None
        ),
        "branch": episode.branch.value if episode.branch is not None else None,
        "raw_output": episode.raw_output,
        "predicted_answer": episode.predicted_answer,
        "answer_missing": episode.answer_missing,
        "correct": episode.correct,
        "error": episode.error,
    }


def episode_from_json(raw: dict) -> Episode:
    try:
        chain = raw.get("chain")
        verdict = raw.get("verdict")
        branch = raw.get("branch")
        return Episode(
            record_id=raw["record_id"],
            strategy=Strategy(raw["strategy"]),
            chain=(
                ReasoningChain(chain["text"], ChainSource(chain["source"]))
                if chain is not None
                else None
            ),
            verdict=(
                Verdict(
                    valid=verdict["valid"],
                    score=verdict["score"],
                    filter_kind=FilterKind(verdict["filter_kind"]),
                )
                if verdict is not None
                else None
            ),
            branch=Branch(branch) if branch is not None else None,
            raw_output=raw["raw_output"],
            predicted_answer=raw.get("predicted_answer"),
            answer_missing=raw["answer_missing"],
            correct=raw["correct"],
            error=raw.get("error"),
        ).validate()
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed episode record: {exc}") from exc


def save_episodes(path: str | Path, episodes: Iterable[Episode]) -> None:
    with open(path, "w") as fh:
        for episode in episodes:
            fh.write(json.dumps(episode_to_json(episode)) + "\n")


def load_episodes(path: str | Path) -> list[Episode]:
    episodes = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                episodes.append(episode_from_json(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc})") from exc
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return episodes
