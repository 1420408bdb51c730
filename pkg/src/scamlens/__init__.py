"""Scam detection over serialized payment transactions.

The pipeline: tabular records are validated against a feature schema,
numeric features are bucketed by training-set quantiles, records serialize
to prompt text, a completion backend judges them, the structured verdict is
parsed back out, and classification plus reasoning quality are measured. A
review service queues contested cases for humans.
"""

from .errors import ScamlensError
from .featurizer import (
    BinningModel,
    SplitSpec,
    balance,
    bucketize,
    fit_bins,
    serialize_record,
    stratified_split,
)
from .gateway import (
    CompletionRequest,
    CompletionResult,
    Gateway,
    HttpBackend,
    HttpBackendConfig,
    RuleOracleBackend,
    RuleOracleConfig,
)
from .grammar import Evaluation, Reason, canonicalize_reason, parse_evaluation, render_evaluation
from .metrics import (
    Annotation,
    MetricsReport,
    PredictionRow,
    ReasonCategoryCounts,
    ScoredPrediction,
    auc_roc,
    build_report,
    categorize_reasons,
    confusion_and_prf,
    quality_summary,
    reasoning_accuracy,
)
from .model import (
    FeatureSchema,
    FeatureSpec,
    LabeledTransaction,
    ReasonTag,
    ReviewerReason,
    TransactionRecord,
    default_schema,
    validate_record,
)
from .prompts import (
    Exemplar,
    Prompt,
    PromptSettings,
    PromptTemplate,
    build_classifier_prompt,
    build_reasoning_prompt,
    default_exemplars,
    default_template,
)
from .service import ReasonFeedback, ReviewCase, ReviewService, build_app
from .synthetic import CorpusPlan, generate_corpus, planted_config

__all__ = [
    "Annotation",
    "BinningModel",
    "CompletionRequest",
    "CompletionResult",
    "CorpusPlan",
    "Evaluation",
    "Exemplar",
    "FeatureSchema",
    "FeatureSpec",
    "Gateway",
    "HttpBackend",
    "HttpBackendConfig",
    "LabeledTransaction",
    "MetricsReport",
    "PredictionRow",
    "Prompt",
    "PromptSettings",
    "PromptTemplate",
    "Reason",
    "ReasonCategoryCounts",
    "ReasonFeedback",
    "ReasonTag",
    "ReviewCase",
    "ReviewService",
    "ReviewerReason",
    "RuleOracleBackend",
    "RuleOracleConfig",
    "ScamlensError",
    "ScoredPrediction",
    "SplitSpec",
    "TransactionRecord",
    "auc_roc",
    "balance",
    "bucketize",
    "build_app",
    "build_classifier_prompt",
    "build_reasoning_prompt",
    "build_report",
    "canonicalize_reason",
    "categorize_reasons",
    "confusion_and_prf",
    "default_exemplars",
    "default_schema",
    "default_template",
    "fit_bins",
    "generate_corpus",
    "parse_evaluation",
    "planted_config",
    "quality_summary",
    "reasoning_accuracy",
    "render_evaluation",
    "serialize_record",
    "stratified_split",
    "validate_record",
]
