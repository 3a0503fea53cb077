"""Confusion, upper bound, ablation, filter stats, and the quality sweep."""

import csv

import pytest

from selcot.analysis import (
    SWEEP_COLUMNS,
    AblationSummary,
    confusion_matrix,
    filter_stats,
    missing_answer_ratio,
    random_ablation,
    scaling_sweep,
    upper_bound,
    write_sweep_csv,
)
from selcot.backends import ErrorModel, SimulatedAnswerer, SimulatedReasoner
from selcot.config import (
    CALIBRATED_P_LETTER_ERR,
    CALIBRATED_P_OMIT,
    CALIBRATED_P_WORD_SUB,
    CALIBRATED_Q_ACC,
)
from selcot.core import (
    Branch,
    DataError,
    Episode,
    FilterKind,
    QaRecord,
    ReasoningChain,
    Strategy,
    Verdict,
)
from selcot.datasets import lastletter_gold_chain
from selcot.filters import OracleFilter, RuleFilter
from selcot.metrics import accuracy
from selcot.pipeline import StrategyConfig, run_strategy

CALIBRATED_ERRORS = ErrorModel(
    p_word_sub=CALIBRATED_P_WORD_SUB,
    p_letter_err=CALIBRATED_P_LETTER_ERR,
    p_omit=CALIBRATED_P_OMIT,
)


@pytest.fixture(scope="module")
def calibrated_runs(eval_records):
    """Vanilla, pipeline, and two selective runs over the same 400 records
    and seed, so counterpart lookups are meaningful."""
    records = eval_records[:400]
    reasoner = SimulatedReasoner(CALIBRATED_ERRORS)
    answerer = SimulatedAnswerer(q_acc=CALIBRATED_Q_ACC)
    vanilla = run_strategy(
        StrategyConfig(Strategy.VANILLA, answerer=answerer), records, run_seed=11
    )
    pipeline = run_strategy(
        StrategyConfig(Strategy.PIPELINE, reasoner=reasoner, answerer=answerer),
        records,
        run_seed=11,
    )
    self_rule = run_strategy(
        StrategyConfig(
            Strategy.SELF_REASONER, reasoner=reasoner, answerer=answerer, filter=RuleFilter()
        ),
        records,
        run_seed=11,
    )
    self_oracle = run_strategy(
        StrategyConfig(
            Strategy.SELF_REASONER, reasoner=reasoner, answerer=answerer, filter=OracleFilter()
        ),
        records,
        run_seed=11,
    )
    return records, vanilla, pipeline, self_rule, self_oracle


# --------------------------------------------------------------------------
# Hand-built episode helpers

WORDS = ("poison", "dame", "cornell")
GOLD_CHAIN_TEXT = lastletter_gold_chain(WORDS).text
BAD_CHAIN_TEXT = GOLD_CHAIN_TEXT.replace("'poison' is 'n'", "'poison' is 'x'")


def _record(rid):
    return QaRecord(id=rid, question="Words: poison, dame, cornell", gold_answer="nel")


def _verdict(valid):
    return Verdict(valid=valid, score=1.0 if valid else 0.0, filter_kind=FilterKind.RULE)


def _self_episode(rid, *, branch, correct, chain_text=GOLD_CHAIN_TEXT, verdict=None, error=None):
    missing = False
    predicted = "nel" if correct else ("zz" if branch is not None else None)
    if branch is None:
        missing, predicted = True, None
    return Episode(
        record_id=rid,
        strategy=Strategy.SELF_REASONER,
        chain=ReasoningChain(text=chain_text),
        verdict=verdict,
        branch=branch,
        raw_output="" if branch is None else f"The answer is {predicted}.",
        predicted_answer=predicted,
        answer_missing=missing,
        correct=correct,
        error=error,
    )


def _flat_episode(rid, strategy, correct):
    predicted = "nel" if correct else "zz"
    return Episode(
        record_id=rid,
        strategy=strategy,
        chain=None if strategy is Strategy.VANILLA else ReasoningChain(text=GOLD_CHAIN_TEXT),
        verdict=None,
        branch=Branch.SINGLE_SHOT if strategy is Strategy.VANILLA else Branch.EXTRACTED,
        raw_output=f"The answer is {predicted}.",
        predicted_answer=predicted,
        answer_missing=False,
        correct=correct,
    )


# --------------------------------------------------------------------------
# Confusion matrix


def test_confusion_all_correct_is_empty(eval_records):
    records = eval_records[:30]
    reasoner = SimulatedReasoner(ErrorModel())
    answerer = SimulatedAnswerer(q_acc=1.0)
    self_eps = run_strategy(
        StrategyConfig(
            Strategy.SELF_REASONER, reasoner=reasoner, answerer=answerer, filter=RuleFilter()
        ),
        records,
        run_seed=1,
    )
    vanilla = run_strategy(StrategyConfig(Strategy.VANILLA, answerer=answerer), records, 1)
    pipeline = run_strategy(
        StrategyConfig(Strategy.PIPELINE, reasoner=reasoner, answerer=answerer), records, 1
    )
    report = confusion_matrix(self_eps, vanilla, pipeline)
    assert report.total_incorrect == 0
    assert report.extracted.total == report.direct.total == 0


def test_confusion_hand_fixture_fills_each_cell():
    self_eps = [
        # failed on extraction; vanilla would have been right
        _self_episode("a", branch=Branch.EXTRACTED, correct=False, verdict=_verdict(True)),
        # failed on extraction; vanilla also wrong
        _self_episode("b", branch=Branch.EXTRACTED, correct=False, verdict=_verdict(True)),
        # failed on direct; pipeline would have been right
        _self_episode("c", branch=Branch.DIRECT, correct=False, verdict=_verdict(False)),
        # failed on direct; pipeline also wrong
        _self_episode("d", branch=Branch.DIRECT, correct=False, verdict=_verdict(False)),
        # correct episodes never enter the table
        _self_episode("e", branch=Branch.EXTRACTED, correct=True, verdict=_verdict(True)),
        # outright failures (no branch) are outside the branch taxonomy
        _self_episode("f", branch=None, correct=False, error="filter failure"),
    ]
    vanilla = [_flat_episode(r, Strategy.VANILLA, c) for r, c in
               [("a", True), ("b", False), ("c", False), ("d", False), ("e", True), ("f", True)]]
    pipeline = [_flat_episode(r, Strategy.PIPELINE, c) for r, c in
                [("a", False), ("b", False), ("c", True), ("d", False), ("e", True), ("f", True)]]
    report = confusion_matrix(self_eps, vanilla, pipeline)
    assert report.extracted.correct_otherwise == 1  # record a
    assert report.extracted.both_fail == 1  # record b
    assert report.direct.correct_otherwise == 1  # record c
    assert report.direct.both_fail == 1  # record d
    assert report.total_incorrect == 4


def test_confusion_cells_cover_all_branch_failures(calibrated_runs):
    _, vanilla, pipeline, self_rule, _ = calibrated_runs
    report = confusion_matrix(self_rule, vanilla, pipeline)
    incorrect = [ep for ep in self_rule if not ep.correct and ep.branch is not None]
    assert report.total_incorrect == len(incorrect)
    extracted_fail = sum(1 for ep in incorrect if ep.branch is Branch.EXTRACTED)
    assert report.extracted.total == extracted_fail
    assert report.direct.total == len(incorrect) - extracted_fail


def test_confusion_missing_counterpart_is_an_error():
    self_eps = [
        _self_episode("a", branch=Branch.EXTRACTED, correct=False, verdict=_verdict(True))
    ]
    with pytest.raises(DataError):
        confusion_matrix(self_eps, [], [_flat_episode("a", Strategy.PIPELINE, True)])


def test_confusion_duplicate_counterparts_rejected():
    dup = [_flat_episode("a", Strategy.VANILLA, True)] * 2
    with pytest.raises(DataError):
        confusion_matrix([], dup, [])


# --------------------------------------------------------------------------
# Upper bound


def test_upper_bound_hand_example():
    # ten records; exactly one fails under both methods
    pipeline, vanilla = [], []
    for i in range(10):
        rid = f"r{i}"
        pipeline.append(_flat_episode(rid, Strategy.PIPELINE, i < 6))
        vanilla.append(_flat_episode(rid, Strategy.VANILLA, i in (0, 1, 6, 7, 8)))
    # record r9 fails in both runs
    assert upper_bound(pipeline, vanilla) == 0.9


def test_upper_bound_requires_matching_records():
    a = [_flat_episode("r0", Strategy.PIPELINE, True)]
    b = [_flat_episode("r1", Strategy.VANILLA, True)]
    with pytest.raises(DataError):
        upper_bound(a, b)
    with pytest.raises(DataError):
        upper_bound([], [])


def test_oracle_filter_meets_upper_bound_exactly(calibrated_runs):
    _, vanilla, pipeline, _, self_oracle = calibrated_runs
    assert accuracy(self_oracle) == upper_bound(pipeline, vanilla)


# --------------------------------------------------------------------------
# Random ablation


def test_ablation_extremes_replicate_pure_runs(calibrated_runs):
    _, vanilla, pipeline, _, _ = calibrated_runs
    pure_pipeline = random_ablation(pipeline, vanilla, p=1.0, seed=3)
    assert set(pure_pipeline.per_trial) == {accuracy(pipeline)}
    assert pure_pipeline.mean == pytest.approx(accuracy(pipeline), abs=1e-12)
    assert pure_pipeline.std <= 1e-12
    pure_vanilla = random_ablation(pipeline, vanilla, p=0.0, seed=3)
    assert pure_vanilla.mean == pytest.approx(accuracy(vanilla), abs=1e-12)
    assert set(pure_vanilla.per_trial) == {accuracy(vanilla)}


def test_ablation_midpoint_sits_between(calibrated_runs):
    _, vanilla, pipeline, _, _ = calibrated_runs
    summary = random_ablation(pipeline, vanilla, p=0.5, seed=3)
    assert isinstance(summary, AblationSummary)
    assert summary.trials == 10 and len(summary.per_trial) == 10
    midpoint = (accuracy(pipeline) + accuracy(vanilla)) / 2
    assert abs(summary.mean - midpoint) <= 0.04


def test_ablation_is_deterministic(calibrated_runs):
    _, vanilla, pipeline, _, _ = calibrated_runs
    a = random_ablation(pipeline, vanilla, p=0.5, seed=3)
    b = random_ablation(pipeline, vanilla, p=0.5, seed=3)
    assert a == b
    c = random_ablation(pipeline, vanilla, p=0.5, seed=4)
    assert c.per_trial != a.per_trial


def test_ablation_validation(calibrated_runs):
    _, vanilla, pipeline, _, _ = calibrated_runs
    with pytest.raises(DataError):
        random_ablation(pipeline, vanilla, p=1.5, seed=0)
    with pytest.raises(DataError):
        random_ablation(pipeline, vanilla, p=0.5, seed=0, trials=0)
    with pytest.raises(DataError):
        random_ablation(pipeline[:10], vanilla[:20], p=0.5, seed=0)


# --------------------------------------------------------------------------
# Filter stats


def test_filter_stats_oracle_filter_is_perfect(calibrated_runs):
    records, _, _, _, self_oracle = calibrated_runs
    stats = filter_stats(self_oracle, {r.id: r for r in records})
    assert stats.fp == 0 and stats.fn == 0
    assert stats.valid_acc == stats.invalid_acc == stats.overall_acc == 1.0
    assert stats.f1 == 1.0
    assert stats.filtered_fraction == stats.true_invalid_fraction


def test_filter_stats_hand_counts():
    episodes = []
    # 3 true positives: good chain accepted
    for i in range(3):
        episodes.append(
            _self_episode(f"tp{i}", branch=Branch.EXTRACTED, correct=True, verdict=_verdict(True))
        )
    # 1 false positive: bad chain accepted
    episodes.append(
        _self_episode(
            "fp0", branch=Branch.EXTRACTED, correct=False,
            chain_text=BAD_CHAIN_TEXT, verdict=_verdict(True),
        )
    )
    # 1 false negative: good chain rejected
    episodes.append(
        _self_episode("fn0", branch=Branch.DIRECT, correct=False, verdict=_verdict(False))
    )
    # 5 true negatives: bad chains rejected
    for i in range(5):
        episodes.append(
            _self_episode(
                f"tn{i}", branch=Branch.DIRECT, correct=False,
                chain_text=BAD_CHAIN_TEXT, verdict=_verdict(False),
            )
        )
    records = {ep.record_id: _record(ep.record_id) for ep in episodes}
    stats = filter_stats(episodes, records)
    assert (stats.tp, stats.fp, stats.fn, stats.tn) == (3, 1, 1, 5)
    assert stats.valid_acc == 0.75
    assert stats.invalid_acc == pytest.approx(5 / 6)
    assert stats.overall_acc == 0.8
    assert stats.f1 == 0.75
    assert stats.filtered_fraction == 0.6
    assert stats.true_invalid_fraction == 0.6
    # dual route for the overall accuracy: count-weighted mean of recalls
    total = stats.tp + stats.fp + stats.fn + stats.tn
    weighted = (
        stats.valid_acc * (stats.tp + stats.fn) + stats.invalid_acc * (stats.fp + stats.tn)
    ) / total
    assert stats.overall_acc == pytest.approx(weighted, abs=1e-12)


def test_filter_stats_always_pass_measures_base_rate(calibrated_runs):
    records, _, _, _, _ = calibrated_runs
    episodes = [
        _self_episode("a", branch=Branch.EXTRACTED, correct=True, verdict=_verdict(True)),
        _self_episode(
            "b", branch=Branch.EXTRACTED, correct=False,
            chain_text=BAD_CHAIN_TEXT, verdict=_verdict(True),
        ),
        _self_episode(
            "c", branch=Branch.EXTRACTED, correct=False,
            chain_text=BAD_CHAIN_TEXT, verdict=_verdict(True),
        ),
        _self_episode("d", branch=Branch.EXTRACTED, correct=True, verdict=_verdict(True)),
    ]
    table = {ep.record_id: _record(ep.record_id) for ep in episodes}
    stats = filter_stats(episodes, table)
    assert stats.valid_acc == 1.0  # nothing was rejected
    assert stats.invalid_acc == 0.0
    assert stats.filtered_fraction == 0.0
    assert stats.overall_acc == 0.5  # the oracle-valid base rate


def test_filter_stats_requires_verdict_and_chain(calibrated_runs):
    records, vanilla, _, self_rule, _ = calibrated_runs
    table = {r.id: r for r in records}
    with pytest.raises(DataError):
        filter_stats(vanilla, table)  # vanilla episodes carry no verdicts
    with pytest.raises(DataError):
        filter_stats(self_rule[:5], {})
    with pytest.raises(DataError):
        filter_stats([], table)


# --------------------------------------------------------------------------
# Missing-answer ratio


def test_missing_answer_ratio_counts():
    episodes = [
        _self_episode("a", branch=Branch.EXTRACTED, correct=True, verdict=_verdict(True)),
        _self_episode("b", branch=None, correct=False, error="x"),
        _self_episode("c", branch=None, correct=False, error="x"),
        _self_episode("d", branch=Branch.EXTRACTED, correct=True, verdict=_verdict(True)),
    ]
    assert missing_answer_ratio(episodes) == 0.5
    with pytest.raises(DataError):
        missing_answer_ratio([])


# --------------------------------------------------------------------------
# Scaling sweep


@pytest.fixture(scope="module")
def sweep_rows(eval_records):
    records = eval_records[:100]
    return scaling_sweep(
        records,
        reasoner_qualities=[0.0, 1.0],
        filter_qualities=[0.0, 0.5, 1.0],
        run_seed=19,
    )


def test_sweep_produces_grid_rows(sweep_rows):
    assert len(sweep_rows) == 6
    assert [row["config_id"] for row in sweep_rows] == [
        "r0.00-f0.00", "r0.00-f0.50", "r0.00-f1.00",
        "r1.00-f0.00", "r1.00-f0.50", "r1.00-f1.00",
    ]
    for row in sweep_rows:
        assert set(row) == set(SWEEP_COLUMNS)
        assert row["delta"] == row["acc_self"] - row["acc_pipeline"]


def test_sweep_pipeline_constant_within_reasoner_level(sweep_rows):
    by_r = {}
    for row in sweep_rows:
        by_r.setdefault(row["reasoner_quality"], set()).add(row["acc_pipeline"])
    assert all(len(values) == 1 for values in by_r.values())


def test_sweep_perfect_reasoner_and_filter(sweep_rows):
    perfect = [row for row in sweep_rows if row["reasoner_quality"] == 1.0]
    assert all(row["acc_pipeline"] == 1.0 for row in perfect)
    assert next(r for r in perfect if r["filter_quality"] == 1.0)["acc_self"] == 1.0


def test_sweep_self_accuracy_monotone_in_filter_quality(sweep_rows):
    by_r = {}
    for row in sweep_rows:
        by_r.setdefault(row["reasoner_quality"], []).append(
            (row["filter_quality"], row["acc_self"])
        )
    for points in by_r.values():
        points.sort()
        accs = [acc for _, acc in points]
        assert accs == sorted(accs)


def test_sweep_validation(eval_records):
    records = eval_records[:5]
    with pytest.raises(DataError):
        scaling_sweep([], [0.5], [0.5], 0)
    with pytest.raises(DataError):
        scaling_sweep(records, [], [0.5], 0)
    with pytest.raises(DataError):
        scaling_sweep(records, [0.5], [1.5], 0)


def test_sweep_csv_round_trip(sweep_rows, tmp_path):
    path = tmp_path / "sweep.csv"
    write_sweep_csv(sweep_rows, path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        assert tuple(reader.fieldnames) == SWEEP_COLUMNS
        parsed = list(reader)
    assert len(parsed) == len(sweep_rows)
    for raw, row in zip(parsed, sweep_rows):
        assert raw["config_id"] == row["config_id"]
        assert float(raw["acc_self"]) == pytest.approx(row["acc_self"], abs=1e-12)
        assert float(raw["delta"]) == pytest.approx(row["delta"], abs=1e-12)
