"""Post-hoc analyses over episode logs.

Everything here is read-only over episodes produced by the pipeline module:
branch-level confusion against counterpart strategies, the ideal-filter
upper bound, the random-routing ablation, filter discrimination stats, the
missing-answer ratio, and the reasoner/filter quality sweep that emits
plot-ready CSV.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass
from pathlib import Path

from .backends import (
    ErrorModel,
    SimulatedAnswerer,
    SimulatedReasoner,
    derive_seed,
)
from .config import (
    CALIBRATED_P_LETTER_ERR,
    CALIBRATED_P_OMIT,
    CALIBRATED_P_WORD_SUB,
    CALIBRATED_Q_ACC,
)
from .core import Branch, DataError, Episode, QaRecord, Strategy, normalize_answer
from .datasets import parse_lastletter_chain
from .filters import NoisyOracleFilter
from .metrics import accuracy
from .pipeline import StrategyConfig, run_strategy


def _by_id(episodes: list[Episode], name: str) -> dict[str, Episode]:
    table = {ep.record_id: ep for ep in episodes}
    if len(table) != len(episodes):
        raise DataError(f"{name} episodes contain duplicate record ids")
    return table


@dataclass(frozen=True)
class ConfusionCell:
    """Outcomes of the counterpart method on one branch's failures."""

    correct_otherwise: int
    both_fail: int

    @property
    def total(self) -> int:
        return self.correct_otherwise + self.both_fail


@dataclass(frozen=True)
class ConfusionReport:
    """Branch-level breakdown of a selective run's incorrect episodes.

    For an episode that failed on the extraction branch the counterpart is
    direct prediction (the vanilla run); for one that failed on the direct
    branch it is extraction (the pipeline run).
    """

    extracted: ConfusionCell
    direct: ConfusionCell

    @property
    def total_incorrect(self) -> int:
        return self.extracted.total + self.direct.total


def confusion_matrix(
    self_episodes: list[Episode],
    vanilla_episodes: list[Episode],
    pipeline_episodes: list[Episode],
) -> ConfusionReport:
    """Tabulate the selective run's incorrect episodes by branch and by
    whether the counterpart method got the same record right. All runs must
    come from the same records under the same seed discipline. Episodes
    that failed outright (no branch) are outside the branch taxonomy and
    are excluded."""
    vanilla = _by_id(vanilla_episodes, "vanilla")
    pipeline = _by_id(pipeline_episodes, "pipeline")
    cells = {Branch.EXTRACTED: [0, 0], Branch.DIRECT: [0, 0]}
    for episode in self_episodes:
        if episode.correct or episode.branch not in cells:
            continue
        counterpart_table = vanilla if episode.branch is Branch.EXTRACTED else pipeline
        counterpart = counterpart_table.get(episode.record_id)
        if counterpart is None:
            raise DataError(f"no counterpart episode for record {episode.record_id!r}")
        cells[episode.branch][0 if counterpart.correct else 1] += 1
    return ConfusionReport(
        extracted=ConfusionCell(*cells[Branch.EXTRACTED]),
        direct=ConfusionCell(*cells[Branch.DIRECT]),
    )


def upper_bound(pipeline_episodes: list[Episode], vanilla_episodes: list[Episode]) -> float:
    """Accuracy an ideal filter would reach: 1 minus the fraction of records
    where extraction and direct prediction both fail."""
    pipeline = _by_id(pipeline_episodes, "pipeline")
    vanilla = _by_id(vanilla_episodes, "vanilla")
    if pipeline.keys() != vanilla.keys():
        raise DataError("upper_bound needs the two runs to cover the same records")
    if not pipeline:
        raise DataError("no episodes")
    both_fail = sum(
        1
        for record_id, pipe_ep in pipeline.items()
        if not pipe_ep.correct and not vanilla[record_id].correct
    )
    return 1.0 - both_fail / len(pipeline)


@dataclass(frozen=True)
class AblationSummary:
    p: float
    trials: int
    mean: float
    std: float
    per_trial: tuple[float, ...]


def random_ablation(
    pipeline_episodes: list[Episode],
    vanilla_episodes: list[Episode],
    p: float,
    seed: int,
    trials: int = 10,
) -> AblationSummary:
    """Mix the two runs by routing each record to the pipeline outcome with
    probability p (else the vanilla outcome); repeat over fresh draws and
    summarize the accuracy distribution."""
    if not 0.0 <= p <= 1.0:
        raise DataError(f"mixture probability {p} outside [0, 1]")
    if trials < 1:
        raise DataError(f"trials must be >= 1, got {trials}")
    pipeline = _by_id(pipeline_episodes, "pipeline")
    vanilla = _by_id(vanilla_episodes, "vanilla")
    if pipeline.keys() != vanilla.keys():
        raise DataError("random_ablation needs the two runs to cover the same records")
    record_ids = sorted(pipeline)
    accuracies = []
    for trial in range(trials):
        rng = random.Random(derive_seed(seed, "ablation", str(trial)))
        hits = sum(
            (pipeline[rid] if rng.random() < p else vanilla[rid]).correct for rid in record_ids
        )
        accuracies.append(hits / len(record_ids))
    mean = sum(accuracies) / trials
    variance = sum((a - mean) ** 2 for a in accuracies) / trials
    return AblationSummary(
        p=p, trials=trials, mean=mean, std=variance**0.5, per_trial=tuple(accuracies)
    )


@dataclass(frozen=True)
class FilterStats:
    """How well verdicts discriminate chains that would extract correctly.

    valid_acc / invalid_acc are per-class recalls against replayed oracle
    labels; overall_acc is their count-weighted mean; F1 treats "valid" as
    the positive class. filtered_fraction is the share of chains the filter
    rejected; true_invalid_fraction is the share that actually deserved it.
    """

    valid_acc: float
    invalid_acc: float
    overall_acc: float
    f1: float
    filtered_fraction: float
    true_invalid_fraction: float
    tp: int
    fp: int
    fn: int
    tn: int


def filter_stats(episodes: list[Episode], records_by_id: dict[str, QaRecord]) -> FilterStats:
    """Score recorded verdicts against oracle labels obtained by replaying
    extraction on each chain (never by trusting the episode outcome, which
    a rejecting filter short-circuits)."""
    tp = fp = fn = tn = 0
    for episode in episodes:
        if episode.verdict is None or episode.chain is None:
            raise DataError(
                f"episode {episode.record_id!r} lacks a verdict or chain; "
                "filter stats need both"
            )
        record = records_by_id.get(episode.record_id)
        if record is None:
            raise DataError(f"no record for episode {episode.record_id!r}")
        extracted = "".join(parse_lastletter_chain(episode.chain.text).letters)
        oracle_valid = bool(extracted) and normalize_answer(extracted) == normalize_answer(
            record.gold_answer
        )
        if oracle_valid:
            if episode.verdict.valid:
                tp += 1
            else:
                fn += 1
        else:
            if episode.verdict.valid:
                fp += 1
            else:
                tn += 1
    total = tp + fp + fn + tn
    if total == 0:
        raise DataError("no episodes")
    # vacuously perfect on an empty class; F1 is 0 on a zero denominator
    valid_acc = tp / (tp + fn) if tp + fn else 1.0
    invalid_acc = tn / (fp + tn) if fp + tn else 1.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    f1 = 2 * precision * valid_acc / (precision + valid_acc) if precision + valid_acc else 0.0
    return FilterStats(
        valid_acc=valid_acc,
        invalid_acc=invalid_acc,
        overall_acc=(tp + tn) / total,
        f1=f1,
        filtered_fraction=(fn + tn) / total,
        true_invalid_fraction=(fp + tn) / total,
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
    )


def missing_answer_ratio(episodes: list[Episode]) -> float:
    if not episodes:
        raise DataError("no episodes")
    return sum(ep.answer_missing for ep in episodes) / len(episodes)


# --------------------------------------------------------------------------
# Reasoner/filter quality sweep

SWEEP_COLUMNS = (
    "config_id",
    "reasoner_quality",
    "filter_quality",
    "acc_pipeline",
    "acc_self",
    "delta",
)

_BASE_ERROR = ErrorModel(
    p_word_sub=CALIBRATED_P_WORD_SUB,
    p_letter_err=CALIBRATED_P_LETTER_ERR,
    p_omit=CALIBRATED_P_OMIT,
)


def scaling_sweep(
    records: list[QaRecord],
    reasoner_qualities: list[float],
    filter_qualities: list[float],
    run_seed: int,
    q_acc: float = CALIBRATED_Q_ACC,
    base_error: ErrorModel = _BASE_ERROR,
) -> list[dict]:
    """Grid sweep over reasoner and filter quality.

    Reasoner quality r scales every error probability by (1 - r), so r=0 is
    the base error model and r=1 a perfect reasoner. Filter quality is the
    agreement of a noisy oracle filter. Per grid point the pipeline and the
    selective strategy run over the same records and seed; one CSV-ready row
    per point, in deterministic grid order (reasoner outer, filter inner).
    """
    if not records:
        raise DataError("no records to sweep over")
    for name, values in (("reasoner", reasoner_qualities), ("filter", filter_qualities)):
        if not values:
            raise DataError(f"empty {name} quality grid")
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise DataError(f"{name} qualities must lie in [0, 1]")
    rows = []
    for r in reasoner_qualities:
        error_model = ErrorModel(
            p_word_sub=base_error.p_word_sub * (1.0 - r),
            p_letter_err=base_error.p_letter_err * (1.0 - r),
            p_omit=base_error.p_omit * (1.0 - r),
        )
        reasoner = SimulatedReasoner(error_model)
        answerer = SimulatedAnswerer(q_acc)
        pipeline_cfg = StrategyConfig(Strategy.PIPELINE, reasoner=reasoner, answerer=answerer)
        acc_pipeline = accuracy(run_strategy(pipeline_cfg, records, run_seed))
        for f in filter_qualities:
            self_cfg = StrategyConfig(
                Strategy.SELF_REASONER,
                reasoner=reasoner,
                answerer=answerer,
                filter=NoisyOracleFilter(agreement=f),
            )
            acc_self = accuracy(run_strategy(self_cfg, records, run_seed))
            rows.append(
                {
                    "config_id": f"r{r:.2f}-f{f:.2f}",
                    "reasoner_quality": r,
                    "filter_quality": f,
                    "acc_pipeline": acc_pipeline,
                    "acc_self": acc_self,
                    "delta": acc_self - acc_pipeline,
                }
            )
    return rows


def write_sweep_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
