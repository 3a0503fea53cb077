"""Selective chain-of-thought filtering.

A library and CLI for running question-answering strategies that generate
intermediate reasoning chains, filtering those chains before trusting
them, training the chain verifier, and analyzing the results.
"""

from .core import (
    Branch,
    ChainSource,
    CompoundOrder,
    ConfigError,
    DataError,
    Episode,
    FilterKind,
    LabeledPair,
    PairOrigin,
    QaRecord,
    ReasoningChain,
    SelcotError,
    Strategy,
    Task,
    Verdict,
    answer_sentence,
    concat_qr,
    normalize_answer,
    question_block,
    resolve_choice,
    tokenize,
)
from .datasets import (
    ChainParse,
    FormatKind,
    FormatSpec,
    LastLetterGroup,
    compose,
    generate_lastletter,
    group_to_record,
    lastletter_gold_answer,
    lastletter_gold_chain,
    load_jsonl,
    load_vocab,
    parse_lastletter_chain,
    parse_words_from_question,
    save_jsonl,
)
from .backends import (
    BackendCapability,
    ClassifierBackend,
    EmbeddingBackend,
    EpisodeSeeds,
    ErrorModel,
    GenerationBackend,
    RemoteBackendConfig,
    RemoteClassifier,
    RemoteClient,
    RemoteEmbedder,
    RemoteGenerator,
    RemoteModelError,
    RemoteSchemaError,
    SimulatedAnswerer,
    SimulatedCompound,
    SimulatedReasoner,
    TransportError,
    derive_seed,
    remote_classify,
    remote_embed,
    remote_generate,
    simulated_direct_answerer,
    simulated_reasoner_generate,
)
from .filters import (
    AlwaysPassFilter,
    CotFilter,
    LearnedFilter,
    LinearVerifier,
    NoisyOracleFilter,
    OracleFilter,
    RandomFilter,
    RemoteClassifyFilter,
    RuleFilter,
    TrainResult,
    VerifierTrainConfig,
    build_verifier_dataset,
    load_verifier,
    oracle_filter,
    random_filter,
    rule_filter_lastletter,
    save_verifier,
    train_verifier,
    verifier_predict,
)
from .pipeline import (
    FilterFailPolicy,
    StrategyConfig,
    extract_answer,
    load_episodes,
    predict,
    predict_compound,
    predict_pipeline,
    predict_self_reasoner,
    predict_vanilla,
    run_strategy,
    save_episodes,
)
from .metrics import (
    ChainQualityReport,
    HumanAnnotation,
    SplitQuality,
    accuracy,
    annotation_agreement,
    bleu,
    chain_quality_report,
    exact_match,
    rouge_l,
    similarity,
)
from .analysis import (
    AblationSummary,
    ConfusionCell,
    ConfusionReport,
    FilterStats,
    confusion_matrix,
    filter_stats,
    missing_answer_ratio,
    random_ablation,
    scaling_sweep,
    upper_bound,
    write_sweep_csv,
)

__version__ = "0.1.0"
