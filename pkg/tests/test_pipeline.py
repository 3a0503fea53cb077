"""Strategy runners: routing, answer extraction, logs, determinism."""

import pytest

from selcot.backends import (
    GenerationBackend,
    ErrorModel,
    SimulatedAnswerer,
    SimulatedCompound,
    SimulatedReasoner,
)
from selcot.config import (
    CALIBRATED_P_LETTER_ERR,
    CALIBRATED_P_OMIT,
    CALIBRATED_P_WORD_SUB,
    CALIBRATED_Q_ACC,
)
from selcot.core import (
    Branch,
    CompoundOrder,
    ConfigError,
    DataError,
    QaRecord,
    Strategy,
)
from selcot.filters import AlwaysPassFilter, CotFilter, RandomFilter, RuleFilter
from selcot.pipeline import (
    FilterFailPolicy,
    StrategyConfig,
    _parse_compound,
    extract_answer,
    load_episodes,
    predict,
    run_strategy,
    save_episodes,
)

CALIBRATED_ERRORS = ErrorModel(
    p_word_sub=CALIBRATED_P_WORD_SUB,
    p_letter_err=CALIBRATED_P_LETTER_ERR,
    p_omit=CALIBRATED_P_OMIT,
)


def _perfect(strategy: Strategy, **overrides) -> StrategyConfig:
    base = dict(
        reasoner=SimulatedReasoner(ErrorModel()),
        answerer=SimulatedAnswerer(q_acc=1.0),
    )
    if strategy is Strategy.VANILLA:
        base.pop("reasoner")
    if strategy in (Strategy.COMPOUND_RA, Strategy.COMPOUND_AR):
        base = dict(reasoner=SimulatedCompound(ErrorModel(), strategy.value.split("-")[1]))
    if strategy is Strategy.SELF_REASONER:
        base["filter"] = RuleFilter()
    base.update(overrides)
    return StrategyConfig(strategy=strategy, **base)


def _noisy_self(filter_=None, **overrides) -> StrategyConfig:
    return StrategyConfig(
        strategy=Strategy.SELF_REASONER,
        reasoner=SimulatedReasoner(CALIBRATED_ERRORS),
        answerer=SimulatedAnswerer(q_acc=CALIBRATED_Q_ACC),
        filter=filter_ or RuleFilter(),
        **overrides,
    )


# --------------------------------------------------------------------------
# Answer extraction


def test_extract_answer_basic():
    assert extract_answer("Answer: The answer is wall.") == ("wall", False)


def test_extract_answer_last_marker_wins():
    assert extract_answer("The answer is a. The answer is b.") == ("b", False)


def test_extract_answer_missing_marker():
    assert extract_answer("no conclusion was reached") == (None, True)
    assert extract_answer("") == (None, True)


def test_extract_answer_empty_payload():
    assert extract_answer("The answer is .") == (None, True)
    assert extract_answer("The answer is") == (None, True)


def test_extract_answer_without_period():
    assert extract_answer("The answer is nel") == ("nel", False)


def test_extract_answer_case_insensitive():
    assert extract_answer("THE ANSWER IS x.") == ("x", False)


def test_parse_compound_ra_takes_prefix():
    raw = "Step one. Step two. The answer is x."
    assert _parse_compound(raw, CompoundOrder.RA) == "Step one. Step two."


def test_parse_compound_ar_takes_suffix():
    raw = "The answer is x. Step one. Step two."
    assert _parse_compound(raw, CompoundOrder.AR) == "Step one. Step two."


def test_parse_compound_edge_cases():
    assert _parse_compound("just a chain, no marker", CompoundOrder.RA) == "just a chain, no marker"
    # AR output that never closes the answer sentence has no usable chain
    assert _parse_compound("The answer is x", CompoundOrder.AR) == ""


# --------------------------------------------------------------------------
# Config validation


def test_config_requires_components():
    answerer = SimulatedAnswerer(q_acc=1.0)
    reasoner = SimulatedReasoner(ErrorModel())
    with pytest.raises(ConfigError):
        StrategyConfig(strategy=Strategy.VANILLA)
    with pytest.raises(ConfigError):
        StrategyConfig(strategy=Strategy.PIPELINE, answerer=answerer)
    with pytest.raises(ConfigError):
        StrategyConfig(strategy=Strategy.PIPELINE, reasoner=reasoner)
    with pytest.raises(ConfigError):
        StrategyConfig(strategy=Strategy.SELF_REASONER, reasoner=reasoner, answerer=answerer)
    with pytest.raises(ConfigError):
        StrategyConfig(strategy=Strategy.COMPOUND_RA)


def test_config_compound_order_consistency():
    gen = SimulatedCompound(ErrorModel(), "RA")
    cfg = StrategyConfig(strategy=Strategy.COMPOUND_RA, reasoner=gen)
    assert cfg.compound_order is CompoundOrder.RA
    with pytest.raises(ConfigError):
        StrategyConfig(strategy=Strategy.COMPOUND_RA, reasoner=gen, compound_order=CompoundOrder.AR)
    with pytest.raises(ConfigError):
        StrategyConfig(
            strategy=Strategy.VANILLA,
            answerer=SimulatedAnswerer(q_acc=1.0),
            compound_order=CompoundOrder.RA,
        )


def test_config_rejects_bad_output_len():
    with pytest.raises(ConfigError):
        _perfect(Strategy.VANILLA, max_output_len=0)


def test_run_strategy_rejects_bad_workers(eval_records):
    with pytest.raises(ConfigError):
        run_strategy(_perfect(Strategy.VANILLA), eval_records[:1], 0, workers=0)


# --------------------------------------------------------------------------
# Strategy behavior with perfect backends


@pytest.mark.parametrize(
    "strategy",
    [
        Strategy.VANILLA,
        Strategy.COMPOUND_RA,
        Strategy.COMPOUND_AR,
        Strategy.PIPELINE,
        Strategy.SELF_REASONER,
    ],
)
def test_perfect_backends_solve_everything(strategy, eval_records):
    episodes = run_strategy(_perfect(strategy), eval_records[:50], run_seed=1)
    assert len(episodes) == 50
    assert all(ep.correct for ep in episodes)
    assert all(not ep.answer_missing for ep in episodes)


def test_pipeline_extracts_from_known_chain():
    record = QaRecord(id="t-0", question="Words: poison, dame, cornell", gold_answer="nel")
    episode = predict(_perfect(Strategy.PIPELINE), record, run_seed=0)
    assert episode.predicted_answer == "nel"
    assert episode.correct
    assert episode.branch is Branch.EXTRACTED
    assert "'poison' is 'n'" in episode.chain.text


def test_vanilla_has_no_chain(eval_records):
    episode = predict(_perfect(Strategy.VANILLA), eval_records[0], run_seed=1)
    assert episode.chain is None
    assert episode.verdict is None
    assert episode.branch is Branch.SINGLE_SHOT


def test_compound_keeps_chain_and_answer(eval_records):
    episode = predict(_perfect(Strategy.COMPOUND_RA), eval_records[0], run_seed=1)
    assert episode.chain is not None
    assert "The answer is" not in episode.chain.text
    assert episode.predicted_answer == eval_records[0].gold_answer


def test_truncated_compound_yields_missing_answer(eval_records):
    cfg = StrategyConfig(
        strategy=Strategy.COMPOUND_RA,
        reasoner=SimulatedCompound(ErrorModel(p_trunc=1.0), "RA"),
    )
    episode = predict(cfg, eval_records[0], run_seed=1)
    assert episode.answer_missing
    assert episode.predicted_answer is None
    assert not episode.correct
    assert episode.chain is not None  # the truncated chain prefix survives


# --------------------------------------------------------------------------
# Self-reasoner routing


def test_self_reasoner_branches_follow_verdicts(eval_records):
    episodes = run_strategy(_noisy_self(), eval_records[:300], run_seed=11)
    extracted = [ep for ep in episodes if ep.branch is Branch.EXTRACTED]
    direct = [ep for ep in episodes if ep.branch is Branch.DIRECT]
    assert len(extracted) + len(direct) == len(episodes)
    assert extracted and direct  # calibrated noise produces both routes
    assert all(ep.verdict is not None and ep.verdict.valid for ep in extracted)
    assert all(ep.verdict is not None and not ep.verdict.valid for ep in direct)


class _CountingAnswerer(GenerationBackend):
    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def generate(self, prompt, max_new_tokens=256, seed=None):
        self.calls += 1
        return self.inner.generate(prompt, max_new_tokens, seed)


@pytest.mark.parametrize("strategy", [Strategy.VANILLA, Strategy.PIPELINE, Strategy.SELF_REASONER])
def test_exactly_one_answerer_call_per_episode(strategy, eval_records):
    counter = _CountingAnswerer(SimulatedAnswerer(q_acc=CALIBRATED_Q_ACC))
    kwargs = dict(answerer=counter)
    if strategy is not Strategy.VANILLA:
        kwargs["reasoner"] = SimulatedReasoner(CALIBRATED_ERRORS)
    if strategy is Strategy.SELF_REASONER:
        kwargs["filter"] = RuleFilter()
    run_strategy(StrategyConfig(strategy=strategy, **kwargs), eval_records[:100], run_seed=2)
    assert counter.calls == 100


class _ExplodingFilter(CotFilter):
    def verdict(self, record, chain, seeds):
        raise DataError("filter blew up")


def test_filter_failure_fail_policy(eval_records):
    cfg = _noisy_self(filter_=_ExplodingFilter())
    episode = predict(cfg, eval_records[0], run_seed=3)
    assert episode.error == "filter blew up"
    assert episode.branch is None
    assert episode.verdict is None
    assert episode.answer_missing and not episode.correct
    assert episode.raw_output == ""


def test_filter_failure_fallback_policy_matches_vanilla(eval_records):
    cfg = _noisy_self(
        filter_=_ExplodingFilter(), filter_fail_policy=FilterFailPolicy.FALLBACK_DIRECT
    )
    vanilla_cfg = StrategyConfig(
        strategy=Strategy.VANILLA, answerer=SimulatedAnswerer(q_acc=CALIBRATED_Q_ACC)
    )
    for record in eval_records[:50]:
        fallback = predict(cfg, record, run_seed=3)
        vanilla = predict(vanilla_cfg, record, run_seed=3)
        assert fallback.error == "filter blew up"
        assert fallback.branch is Branch.DIRECT
        assert fallback.verdict is None
        # the direct branch shares the vanilla answer seed, so the fallback
        # prediction is the vanilla prediction
        assert fallback.raw_output == vanilla.raw_output
        assert fallback.predicted_answer == vanilla.predicted_answer
        assert fallback.correct == vanilla.correct


# --------------------------------------------------------------------------
# Degeneracy: filter extremes collapse onto pipeline / vanilla


def _projection(episode):
    return (
        episode.record_id,
        episode.raw_output,
        episode.predicted_answer,
        episode.answer_missing,
        episode.correct,
    )


def test_always_pass_filter_degenerates_to_pipeline(eval_records):
    records = eval_records[:100]
    self_eps = run_strategy(_noisy_self(filter_=AlwaysPassFilter()), records, run_seed=11)
    pipe_cfg = StrategyConfig(
        strategy=Strategy.PIPELINE,
        reasoner=SimulatedReasoner(CALIBRATED_ERRORS),
        answerer=SimulatedAnswerer(q_acc=CALIBRATED_Q_ACC),
    )
    pipe_eps = run_strategy(pipe_cfg, records, run_seed=11)
    for se, pe in zip(self_eps, pipe_eps):
        assert _projection(se) == _projection(pe)
        assert se.chain.text == pe.chain.text
        assert se.branch is Branch.EXTRACTED


def test_never_pass_filter_degenerates_to_vanilla(eval_records):
    records = eval_records[:100]
    self_eps = run_strategy(_noisy_self(filter_=RandomFilter(p=0.0)), records, run_seed=11)
    vanilla_cfg = StrategyConfig(
        strategy=Strategy.VANILLA, answerer=SimulatedAnswerer(q_acc=CALIBRATED_Q_ACC)
    )
    vanilla_eps = run_strategy(vanilla_cfg, records, run_seed=11)
    for se, ve in zip(self_eps, vanilla_eps):
        assert _projection(se) == _projection(ve)
        assert se.branch is Branch.DIRECT


# --------------------------------------------------------------------------
# Determinism, ordering, workers


def test_results_sorted_by_record_id(eval_records):
    shuffled = list(reversed(eval_records[:40]))
    episodes = run_strategy(_perfect(Strategy.VANILLA), shuffled, run_seed=5)
    assert [ep.record_id for ep in episodes] == sorted(ep.record_id for ep in episodes)


def test_worker_count_never_changes_outcomes(eval_records):
    cfg = _noisy_self()
    records = eval_records[:80]
    serial = run_strategy(cfg, records, run_seed=13, workers=1)
    parallel = run_strategy(cfg, records, run_seed=13, workers=4)
    assert serial == parallel


def test_repeat_runs_identical(eval_records):
    cfg = _noisy_self()
    records = eval_records[:60]
    assert run_strategy(cfg, records, run_seed=21) == run_strategy(cfg, records, run_seed=21)


def test_different_seeds_differ(eval_records):
    cfg = _noisy_self()
    records = eval_records[:200]
    a = run_strategy(cfg, records, run_seed=1)
    b = run_strategy(cfg, records, run_seed=2)
    assert a != b


# --------------------------------------------------------------------------
# Episode logs


def test_episode_log_round_trip(tmp_path, eval_records):
    episodes = run_strategy(_noisy_self(), eval_records[:120], run_seed=17)
    path = tmp_path / "episodes.jsonl"
    save_episodes(path, episodes)
    assert load_episodes(path) == episodes


def test_episode_log_bytes_deterministic(tmp_path, eval_records):
    episodes = run_strategy(_noisy_self(), eval_records[:50], run_seed=17)
    first = tmp_path / "a.jsonl"
    second = tmp_path / "b.jsonl"
    save_episodes(first, episodes)
    save_episodes(second, episodes)
    assert first.read_bytes() == second.read_bytes()


def test_load_episodes_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"record_id": "x"\n')
    with pytest.raises(DataError, match="bad.jsonl:1"):
        load_episodes(path)


def test_load_episodes_rejects_inconsistent_episode(tmp_path, eval_records):
    episodes = run_strategy(_perfect(Strategy.VANILLA), eval_records[:1], run_seed=1)
    path = tmp_path / "episodes.jsonl"
    save_episodes(path, episodes)
    text = path.read_text().replace('"branch": "single-shot"', '"branch": null')
    path.write_text(text)
    with pytest.raises(DataError):
        load_episodes(path)
