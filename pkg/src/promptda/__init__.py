"""Few-shot source-free domain adaptation for dual-encoder classifiers.

The workflow has two phases. First, class text features are learned from a
handful of labeled source samples by optimizing one prompt token per class
against a frozen dual encoder; the resulting matrix is frozen and hashed.
Second, an unlabeled target domain adapts a dual-branch head — a
cross-attention correction of the frozen class features driven by a bank of
confident target samples, fused with a learnable soft-prompt branch — using
pseudo-label cross-entropy, weak/strong consistency, and information
maximization.
"""

__version__ = "0.1.0"

from .adaptation import (
    AdaptationResult,
    EpochMetrics,
    EvalReport,
    SeedRunResult,
    adapt_single_seed,
    evaluate_model,
    run_adaptation,
)
from .bank import (
    FeatureBank,
    HighConfidenceSet,
    PseudoLabelRecord,
    assign_pseudo_labels,
    build_bank_from_features,
    build_feature_bank,
    select_top_k,
)
from .config import (
    AdaptationConfig,
    DataConfig,
    EncoderConfig,
    ExperimentConfig,
    SourceConfig,
    config_from_dict,
    config_to_dict,
    load_config,
    save_config,
)
from .datasets import (
    DomainDataset,
    SyntheticTask,
    SyntheticTaskSpec,
    generate_synthetic_task,
    ingest_dataset,
    load_domain_features,
    load_task,
    nearest_anchor_accuracy,
    save_task,
)
from .encoders import MockEncoderPair, MockImageEncoder, MockTextEncoder, build_encoders
from .errors import (
    BackendUnavailableError,
    ChecksumMismatchError,
    ClassMismatchAcrossDomainsError,
    ConfigInvalidError,
    DegenerateEmbeddingError,
    DegenerateSpecError,
    DivergedLossError,
    EmptyClassError,
    EmptyDomainError,
    EmptyEvalSetError,
    EmptyRecordListError,
    NonFiniteLossError,
    PromptDAError,
    SequenceTooLongError,
    ShapeMismatchError,
    UnknownSampleError,
    ZeroNormFeatureError,
)
from .estimators import DualBranchAdapter, SourcePromptClassifier
from .fusion import (
    CrossAttentionFusion,
    DualBranchModel,
    FusedPrediction,
    branch_logits,
    fuse_class_features,
    fused_prediction,
)
from .objectives import (
    LossBreakdown,
    augment_strong,
    augment_weak,
    consistency_loss,
    information_maximization_loss,
    pseudo_label_ce,
    total_loss,
)
from .pipeline import (
    K_ABLATION_OVERRIDES,
    LOSS_COMBINATIONS,
    PipelineResult,
    SourceArtifacts,
    TaskData,
    build_target_bank,
    calibrated_synthetic_experiment,
    load_task_data,
    run_pipeline,
    run_source_phase,
    run_sweep,
)
from .prompting import (
    ClassTextFeatureMatrix,
    FewShotSourceSplit,
    LearnableClassTokens,
    SourceTrainResult,
    classify_zero_shot,
    cross_entropy_from_probs,
    hand_prompt_class_features,
    make_few_shot_split,
    one_hot,
    train_source_prompts,
)

__all__ = [
    "__version__",
    # adaptation
    "AdaptationResult",
    "EpochMetrics",
    "EvalReport",
    "SeedRunResult",
    "adapt_single_seed",
    "evaluate_model",
    "run_adaptation",
    # bank
    "FeatureBank",
    "HighConfidenceSet",
    "PseudoLabelRecord",
    "assign_pseudo_labels",
    "build_bank_from_features",
    "build_feature_bank",
    "select_top_k",
    # config
    "AdaptationConfig",
    "DataConfig",
    "EncoderConfig",
    "ExperimentConfig",
    "SourceConfig",
    "config_from_dict",
    "config_to_dict",
    "load_config",
    "save_config",
    # datasets
    "DomainDataset",
    "SyntheticTask",
    "SyntheticTaskSpec",
    "generate_synthetic_task",
    "ingest_dataset",
    "nearest_anchor_accuracy",
    "load_domain_features",
    "load_task",
    "save_task",
    # encoders
    "MockEncoderPair",
    "MockImageEncoder",
    "MockTextEncoder",
    "build_encoders",
    # errors
    "BackendUnavailableError",
    "ChecksumMismatchError",
    "ClassMismatchAcrossDomainsError",
    "ConfigInvalidError",
    "DegenerateEmbeddingError",
    "DegenerateSpecError",
    "DivergedLossError",
    "EmptyClassError",
    "EmptyDomainError",
    "EmptyEvalSetError",
    "EmptyRecordListError",
    "NonFiniteLossError",
    "PromptDAError",
    "SequenceTooLongError",
    "ShapeMismatchError",
    "UnknownSampleError",
    "ZeroNormFeatureError",
    # estimators
    "DualBranchAdapter",
    "SourcePromptClassifier",
    # fusion
    "CrossAttentionFusion",
    "DualBranchModel",
    "FusedPrediction",
    "branch_logits",
    "fuse_class_features",
    "fused_prediction",
    # objectives
    "LossBreakdown",
    "augment_strong",
    "augment_weak",
    "consistency_loss",
    "information_maximization_loss",
    "pseudo_label_ce",
    "total_loss",
    # pipeline
    "K_ABLATION_OVERRIDES",
    "LOSS_COMBINATIONS",
    "PipelineResult",
    "calibrated_synthetic_experiment",
    "run_pipeline",
    "run_source_phase",
    "SourceArtifacts",
    "TaskData",
    "build_target_bank",
    "load_task_data",
    "run_sweep",
    # prompting
    "ClassTextFeatureMatrix",
    "FewShotSourceSplit",
    "LearnableClassTokens",
    "SourceTrainResult",
    "classify_zero_shot",
    "cross_entropy_from_probs",
    "hand_prompt_class_features",
    "make_few_shot_split",
    "one_hot",
    "train_source_prompts",
]
