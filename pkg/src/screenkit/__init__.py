"""Screening harness for LLM-assisted title/abstract review.

Pipeline pieces: labeled-corpus ingestion and partitioning, chat-formatted
SFT export, multi-temperature inference through pluggable transports, and
evaluation via imbalance-aware classification metrics plus chance-corrected
inter-rater agreement statistics with bootstrap confidence intervals.
"""

from .agreement import (
    AgreementResult,
    BootstrapSpec,
    RatingMatrix,
    bootstrap_ci,
    cohen_kappa,
    fleiss_kappa,
    gwet_ac1_multi,
    gwet_ac1_pairwise,
    observed_agreement,
    pabak,
    pairwise_consistency,
)
from .corpus import (
    Corpus,
    PartitionResult,
    ScreeningLabel,
    SplitSpec,
    StudyRecord,
    ingest_corpus,
    partition,
)
from .errors import ScreenKitError
from .inference import (
    ChatCompletionTransport,
    InferenceConfig,
    PredictionRecord,
    RecordingTransport,
    ReplayTransport,
    RunLedger,
    parse_decision,
    run_multi_pass,
    run_pass,
)
from .metrics import (
    AggregateMetrics,
    ClassMetrics,
    ConfusionMatrix,
    aggregate,
    build_confusion,
    per_class_metrics,
    row_normalize,
)
from .prompts import (
    ChatMarkers,
    PromptTemplate,
    SftExample,
    TrainingManifest,
    emit_training_manifest,
    export_sft_dataset,
    render_chat,
    render_prompt,
)

__version__ = "0.1.0"

__all__ = [
    "AgreementResult",
    "AggregateMetrics",
    "BootstrapSpec",
    "ChatCompletionTransport",
    "ChatMarkers",
    "ClassMetrics",
    "ConfusionMatrix",
    "Corpus",
    "InferenceConfig",
    "PartitionResult",
    "PredictionRecord",
    "PromptTemplate",
    "RatingMatrix",
    "RecordingTransport",
    "ReplayTransport",
    "RunLedger",
    "ScreenKitError",
    "ScreeningLabel",
    "SftExample",
    "SplitSpec",
    "StudyRecord",
    "TrainingManifest",
    "aggregate",
    "bootstrap_ci",
    "build_confusion",
    "cohen_kappa",
    "emit_training_manifest",
    "export_sft_dataset",
    "fleiss_kappa",
    "gwet_ac1_multi",
    "gwet_ac1_pairwise",
    "ingest_corpus",
    "observed_agreement",
    "pabak",
    "pairwise_consistency",
    "parse_decision",
    "partition",
    "per_class_metrics",
    "render_chat",
    "render_prompt",
    "row_normalize",
    "run_multi_pass",
    "run_pass",
]
