"""Command-line entry point.

Subcommands cover the full experiment surface: synthetic dataset
generation, strategy runs, verifier-pair construction, verifier training,
and post-hoc analyses. Every subcommand is deterministic given its
configuration and seed (remote backends excepted), and writes only under
the path given by --out.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 transport
error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .analysis import (
    confusion_matrix,
    filter_stats,
    missing_answer_ratio,
    random_ablation,
    scaling_sweep,
    upper_bound,
    write_sweep_csv,
)
from .backends import (
    ErrorModel,
    RemoteBackendConfig,
    RemoteClassifier,
    RemoteClient,
    RemoteGenerator,
    RemoteModelError,
    SimulatedAnswerer,
    SimulatedCompound,
    SimulatedReasoner,
    TransportError,
)
from .config import (
    CALIBRATED_P_LETTER_ERR,
    CALIBRATED_P_OMIT,
    CALIBRATED_P_WORD_SUB,
    CALIBRATED_Q_ACC,
    DEFAULT_MAX_NEW_TOKENS,
    VERIFIER_HASH_BITS,
    VERIFIER_NGRAM_RANGE,
)
from .core import (
    ConfigError,
    DataError,
    LabeledPair,
    PairOrigin,
    Strategy,
    Task,
)
from .datasets import generate_lastletter, group_to_record, load_jsonl, load_vocab, save_jsonl
from .filters import (
    AlwaysPassFilter,
    LearnedFilter,
    OracleFilter,
    RandomFilter,
    RemoteClassifyFilter,
    RuleFilter,
    VerifierTrainConfig,
    build_verifier_dataset,
    load_verifier,
    positive_fraction,
    save_verifier,
    train_verifier,
)
from .metrics import accuracy, chain_quality_report, report_to_dict
from .pipeline import StrategyConfig, load_episodes, run_strategy, save_episodes

_FILTER_KINDS = ("rule", "learned", "oracle", "random", "always-pass", "remote-classify")


def _print_summary(summary: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(summary))
    else:
        for key, value in summary.items():
            print(f"{key}: {value}")


def _load_config_file(path: str) -> dict[str, str]:
    mapping: dict[str, str] = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        mapping[key.strip().replace("-", "_")] = value.strip()
    return mapping


_RUN_KEYS = {
    "task": str,
    "strategy": str,
    "backend": str,
    "data": str,
    "out": str,
    "seed": int,
    "q_acc": float,
    "p_word_sub": float,
    "p_letter_err": float,
    "p_omit": float,
    "p_trunc": float,
    "filter": str,
    "filter_p": float,
    "verifier": str,
    "workers": int,
    "max_output_len": int,
}

_RUN_DEFAULTS = {
    "task": Task.LASTLETTER.value,
    "strategy": Strategy.SELF_REASONER.value,
    "backend": "simulated",
    "seed": 0,
    "q_acc": CALIBRATED_Q_ACC,
    "p_word_sub": CALIBRATED_P_WORD_SUB,
    "p_letter_err": CALIBRATED_P_LETTER_ERR,
    "p_omit": CALIBRATED_P_OMIT,
    "p_trunc": 0.0,
    "filter": "rule",
    "filter_p": 0.5,
    "verifier": None,
    "workers": 1,
    "max_output_len": DEFAULT_MAX_NEW_TOKENS,
}


def _resolve_run_settings(args: argparse.Namespace) -> dict:
    """Merge settings: command-line flags win over config-file keys, which
    win over defaults."""
    from_file = _load_config_file(args.config) if args.config else {}
    unknown = set(from_file) - set(_RUN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    settings = {}
    for key, cast in _RUN_KEYS.items():
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            settings[key] = flag_value
        elif key in from_file:
            try:
                settings[key] = cast(from_file[key])
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from exc
        else:
            settings[key] = _RUN_DEFAULTS.get(key)
    if not settings.get("data"):
        raise ConfigError("a dataset is required (--data or config key data)")
    if not settings.get("out"):
        raise ConfigError("an output directory is required (--out or config key out)")
    return settings


def _build_strategy_config(settings: dict) -> StrategyConfig:
    try:
        strategy = Strategy(settings["strategy"])
    except ValueError as exc:
        raise ConfigError(f"unknown strategy {settings['strategy']!r}") from exc
    error_model = ErrorModel(
        p_word_sub=settings["p_word_sub"],
        p_letter_err=settings["p_letter_err"],
        p_omit=settings["p_omit"],
        p_trunc=settings["p_trunc"],
    )
    backend = settings["backend"]
    remote = None
    if backend != "simulated":
        if not backend.startswith(("http://", "https://")):
            raise ConfigError(
                f"backend must be 'simulated' or an http(s) URL, got {backend!r}"
            )
        remote = RemoteClient(RemoteBackendConfig(base_url=backend))

    if remote is None:
        answerer = SimulatedAnswerer(settings["q_acc"])
        if strategy in (Strategy.COMPOUND_RA, Strategy.COMPOUND_AR):
            reasoner = SimulatedCompound(error_model, strategy.value.split("-")[1])
        else:
            reasoner = SimulatedReasoner(error_model)
    else:
        answerer = RemoteGenerator(remote)
        reasoner = RemoteGenerator(remote)

    filt = None
    if strategy is Strategy.SELF_REASONER:
        kind = settings["filter"]
        if kind not in _FILTER_KINDS:
            raise ConfigError(f"unknown filter kind {kind!r} (expected one of {_FILTER_KINDS})")
        if kind == "rule":
            filt = RuleFilter()
        elif kind == "oracle":
            filt = OracleFilter()
        elif kind == "random":
            filt = RandomFilter(settings["filter_p"])
        elif kind == "always-pass":
            filt = AlwaysPassFilter()
        elif kind == "learned":
            if not settings.get("verifier"):
                raise ConfigError("learned filter needs --verifier PATH")
            filt = LearnedFilter(load_verifier(settings["verifier"]))
        else:  # remote-classify
            if remote is None:
                raise ConfigError("remote-classify filter needs a remote backend URL")
            filt = RemoteClassifyFilter(RemoteClassifier(remote))

    return StrategyConfig(
        strategy=strategy,
        reasoner=None if strategy is Strategy.VANILLA else reasoner,
        answerer=answerer if strategy not in (Strategy.COMPOUND_RA, Strategy.COMPOUND_AR) else None,
        filter=filt,
        max_output_len=settings["max_output_len"],
    )


def _cmd_gen_data(args: argparse.Namespace) -> int:
    vocab = load_vocab(args.vocab)
    train, test = generate_lastletter(vocab, args.train, args.test, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    buckets = {}
    for name, groups in (("train", train), ("test", test)):
        records = [group_to_record(group, i) for i, group in enumerate(groups)]
        path = out / f"{name}.jsonl"
        save_jsonl(path, records)
        paths[name] = str(path)
        counts: dict[int, int] = {}
        for group in groups:
            counts[len(group.words)] = counts.get(len(group.words), 0) + 1
        buckets[name] = {str(k): counts[k] for k in sorted(counts)}
    summary = {
        "command": "gen-data",
        "train_groups": len(train),
        "test_groups": len(test),
        "buckets": buckets,
        "paths": paths,
    }
    _print_summary(summary, args.json)
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    settings = _resolve_run_settings(args)
    cfg = _build_strategy_config(settings)
    try:
        task = Task(settings["task"])
    except ValueError as exc:
        raise ConfigError(f"unknown task {settings['task']!r}") from exc
    records = load_jsonl(settings["data"], task=task)
    if args.dry_run:
        _print_summary(
            {"command": "run", "dry_run": True, "records": len(records), "config": "ok"},
            args.json,
        )
        return 0
    episodes = run_strategy(cfg, records, settings["seed"], workers=settings["workers"])
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    episodes_path = out / "episodes.jsonl"
    save_episodes(episodes_path, episodes)
    with_verdict = [ep for ep in episodes if ep.verdict is not None]
    filtered = sum(1 for ep in with_verdict if not ep.verdict.valid)
    summary = {
        "command": "run",
        "strategy": settings["strategy"],
        "task": settings["task"],
        "records": len(records),
        "accuracy": accuracy(episodes),
        "filtered_fraction": filtered / len(with_verdict) if with_verdict else 0.0,
        "missing_answer_ratio": missing_answer_ratio(episodes),
        "episodes_path": str(episodes_path),
    }
    _print_summary(summary, args.json)
    return 0


def _load_pairs(path: str) -> list[LabeledPair]:
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                pairs.append(
                    LabeledPair(
                        input=raw["input"],
                        label=raw["label"],
                        origin=PairOrigin(raw.get("origin", PairOrigin.MAIN.value)),
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed pair ({exc})") from exc
    return pairs


def _save_pairs(path: Path, pairs: list[LabeledPair]) -> None:
    with open(path, "w") as fh:
        for pair in pairs:
            fh.write(
                json.dumps(
                    {"input": pair.input, "label": pair.label, "origin": pair.origin.value}
                )
                + "\n"
            )


def _cmd_build_pairs(args: argparse.Namespace) -> int:
    episodes = load_episodes(args.episodes)
    records = {r.id: r for r in load_jsonl(args.records, task=Task(args.task))}
    subpar = load_episodes(args.subpar) if args.subpar else None
    cfg = VerifierTrainConfig(target_class_balance=(args.balance_lo, args.balance_hi))
    before = sum(1 for ep in episodes if ep.correct) / len(episodes) if episodes else 0.0
    pairs = build_verifier_dataset(episodes, records, cfg, subpar_source=subpar)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _save_pairs(out, pairs)
    summary = {
        "command": "build-pairs",
        "pairs": len(pairs),
        "appended_negatives": len(pairs) - len(episodes),
        "positive_fraction_before": before,
        "positive_fraction_after": positive_fraction(pairs),
        "out": str(out),
    }
    _print_summary(summary, args.json)
    return 0


def _cmd_train_filter(args: argparse.Namespace) -> int:
    pairs = _load_pairs(args.pairs)
    cfg = VerifierTrainConfig(
        epochs=args.epochs, learning_rate=args.lr, l2=args.l2, seed=args.seed
    )
    result = train_verifier(
        pairs, cfg, b=args.hash_bits, ngram_range=(args.ngram_lo, args.ngram_hi)
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_verifier(result.verifier, out)
    summary = {
        "command": "train-filter",
        "pairs": len(pairs),
        "epochs": result.epochs,
        "train_loss": result.loss,
        "train_accuracy": result.accuracy,
        "out": str(out),
    }
    _print_summary(summary, args.json)
    return 0


def _cmd_analyze(args: argparse.Namespace) -> int:
    kind = args.kind
    report: dict
    if kind == "confusion":
        report_obj = confusion_matrix(
            load_episodes(args.self_run), load_episodes(args.vanilla), load_episodes(args.pipeline)
        )
        report = {
            "kind": kind,
            "extracted": {
                "correct_otherwise": report_obj.extracted.correct_otherwise,
                "both_fail": report_obj.extracted.both_fail,
            },
            "direct": {
                "correct_otherwise": report_obj.direct.correct_otherwise,
                "both_fail": report_obj.direct.both_fail,
            },
            "total_incorrect": report_obj.total_incorrect,
        }
    elif kind == "upper-bound":
        report = {
            "kind": kind,
            "upper_bound": upper_bound(load_episodes(args.pipeline), load_episodes(args.vanilla)),
        }
    elif kind == "random":
        summary = random_ablation(
            load_episodes(args.pipeline),
            load_episodes(args.vanilla),
            p=args.p,
            seed=args.seed,
            trials=args.trials,
        )
        report = {
            "kind": kind,
            "p": summary.p,
            "trials": summary.trials,
            "mean": summary.mean,
            "std": summary.std,
            "per_trial": list(summary.per_trial),
        }
    elif kind == "filter-stats":
        records = {r.id: r for r in load_jsonl(args.records, task=Task(args.task))}
        stats = filter_stats(load_episodes(args.episodes), records)
        report = {
            "kind": kind,
            "valid_acc": stats.valid_acc,
            "invalid_acc": stats.invalid_acc,
            "overall_acc": stats.overall_acc,
            "f1": stats.f1,
            "filtered_fraction": stats.filtered_fraction,
            "true_invalid_fraction": stats.true_invalid_fraction,
            "counts": {"tp": stats.tp, "fp": stats.fp, "fn": stats.fn, "tn": stats.tn},
        }
    elif kind == "quality":
        records = load_jsonl(args.records, task=Task(args.task))
        gold_chains = {r.id: r.explanation for r in records if r.explanation}
        report = {
            "kind": kind,
            **report_to_dict(chain_quality_report(load_episodes(args.episodes), gold_chains)),
        }
    elif kind == "sweep":
        records = load_jsonl(args.records, task=Task(args.task))
        rows = scaling_sweep(
            records,
            [float(v) for v in args.reasoner_qualities.split(",")],
            [float(v) for v in args.filter_qualities.split(",")],
            run_seed=args.seed,
            q_acc=args.q_acc,
        )
        write_sweep_csv(rows, args.out)
        _print_summary({"command": "analyze", "kind": kind, "rows": len(rows), "out": args.out}, args.json)
        return 0
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown analysis kind {kind!r}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(report, indent=2) + "\n")
        report["out"] = str(out)
    _print_summary(report, args.json)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selcot",
        description="Selective chain-of-thought filtering: datasets, strategy runs, "
        "verifier training, and analyses.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic last-letter dataset")
    p.add_argument("--vocab", required=True, help="newline-delimited word list")
    p.add_argument("--train", type=int, default=10000)
    p.add_argument("--test", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("run", help="run a prediction strategy over a dataset")
    p.add_argument("--config", help="flat key=value config file; flags win")
    p.add_argument("--data", help="records JSONL")
    p.add_argument("--task", choices=[t.value for t in Task])
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.add_argument("--backend", help="'simulated' or a model-server base URL")
    p.add_argument("--q-acc", type=float, dest="q_acc")
    p.add_argument("--p-word-sub", type=float, dest="p_word_sub")
    p.add_argument("--p-letter-err", type=float, dest="p_letter_err")
    p.add_argument("--p-omit", type=float, dest="p_omit")
    p.add_argument("--p-trunc", type=float, dest="p_trunc")
    p.add_argument("--filter", choices=_FILTER_KINDS)
    p.add_argument("--filter-p", type=float, dest="filter_p")
    p.add_argument("--verifier", help="trained verifier file for the learned filter")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--max-output-len", type=int, dest="max_output_len")
    p.add_argument("--out")
    p.add_argument("--json", action="store_true")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("build-pairs", help="build verifier training pairs from episodes")
    p.add_argument("--episodes", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--subpar", help="episode log from a weaker reasoner (extra negatives)")
    p.add_argument("--task", default=Task.LASTLETTER.value, choices=[t.value for t in Task])
    p.add_argument("--balance-lo", type=float, default=0.4)
    p.add_argument("--balance-hi", type=float, default=0.6)
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_build_pairs)

    p = sub.add_parser("train-filter", help="train the linear verifier on labeled pairs")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--l2", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hash-bits", type=int, default=VERIFIER_HASH_BITS, dest="hash_bits")
    p.add_argument("--ngram-lo", type=int, default=VERIFIER_NGRAM_RANGE[0], dest="ngram_lo")
    p.add_argument("--ngram-hi", type=int, default=VERIFIER_NGRAM_RANGE[1], dest="ngram_hi")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_train_filter)

    p = sub.add_parser("analyze", help="analyses over episode logs")
    p.add_argument(
        "--kind",
        required=True,
        choices=["confusion", "upper-bound", "random", "filter-stats", "sweep", "quality"],
    )
    p.add_argument("--episodes", help="episode log (filter-stats, quality)")
    p.add_argument("--self-run", dest="self_run", help="selective run log (confusion)")
    p.add_argument("--vanilla", help="vanilla run log")
    p.add_argument("--pipeline", help="pipeline run log")
    p.add_argument("--records", help="records JSONL")
    p.add_argument("--task", default=Task.LASTLETTER.value, choices=[t.value for t in Task])
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--q-acc", type=float, default=CALIBRATED_Q_ACC, dest="q_acc")
    p.add_argument("--reasoner-qualities", default="0.0", dest="reasoner_qualities")
    p.add_argument("--filter-qualities", default="0.5,1.0", dest="filter_qualities")
    p.add_argument("--out")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_analyze)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (TransportError, RemoteModelError) as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
