"""Scikit-learn style estimators over the prompt-learning / adaptation core.

``SourcePromptClassifier`` fits class text features from labeled source
feature vectors; ``DualBranchAdapter`` wraps a fitted source classifier and
adapts it to an unlabeled target feature matrix (``fit`` ignores ``y``).
Both follow the scikit-learn contract: constructor stores parameters
verbatim, ``fit`` validates inputs and sets trailing-underscore attributes,
and ``get_params``/``set_params``/``clone`` work out of the box.
"""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .adaptation import adapt_single_seed
from .bank import build_bank_from_features
from .config import AdaptationConfig, EncoderConfig, SourceConfig
from .encoders import build_encoders
from .prompting import classify_zero_shot, make_few_shot_split, train_source_prompts


class SourcePromptClassifier(ClassifierMixin, BaseEstimator):
    """Few-shot prompt learning on feature vectors via the mock dual encoder.

    ``X`` rows are treated as image-encoder outputs; a frozen seeded text
    encoder with one learnable token per class is trained to match them.
    """

    def __init__(
        self,
        shots: int = 8,
        epochs: int = 50,
        lr: float = 1e-3,
        weight_decay: float = 5e-4,
        batch_size: int = 32,
        tau: float = 1.0,
        similarity: str = "cosine",
        token_init_std: float = 0.02,
        seed: int = 0,
        encoder_seed: int = 0,
    ) -> None:
        self.shots = shots
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.tau = tau
        self.similarity = similarity
        self.token_init_std = token_init_std
        self.seed = seed
        self.encoder_seed = encoder_seed

    def _source_config(self) -> SourceConfig:
        config = SourceConfig(
            shots=self.shots,
            epochs=self.epochs,
            lr=self.lr,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            tau=self.tau,
            similarity=self.similarity,
            token_init_std=self.token_init_std,
            seed=self.seed,
        )
        config.validate()
        return config

    def fit(self, X, y) -> "SourcePromptClassifier":
        X, y = check_X_y(X, y, dtype=np.float32)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        config = self._source_config()

        encoders = build_encoders(
            EncoderConfig(
                backend="mock", embed_dim=X.shape[1], seed=self.encoder_seed
            )
        )
        ids = [f"fit_{i:06d}" for i in range(X.shape[0])]
        encoders.image.register_samples(ids, X)
        split = make_few_shot_split(
            ids,
            y_idx,
            [str(c) for c in self.classes_],
            shots=self.shots,
            seed=self.seed,
        )
        result = train_source_prompts(split, encoders, config)
        self.encoders_ = encoders
        self.split_ = split
        self.result_ = result
        self.class_features_ = result.class_features
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "class_features_")
        X = check_array(X, dtype=np.float32)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but {type(self).__name__} was "
                f"fitted with {self.n_features_in_}"
            )
        probs = classify_zero_shot(
            torch.as_tensor(X),
            self.class_features_,
            tau=self.tau,
            similarity=self.similarity,
        )
        return probs.detach().numpy()

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "class_features_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


class DualBranchAdapter(ClassifierMixin, BaseEstimator):
    """Source-free adapter: refines a fitted source classifier on unlabeled X.

    ``fit(X)`` pseudo-labels the rows with the frozen source class features,
    banks the most confident samples per class, and trains the dual-branch
    model; ``y`` is accepted only for API compatibility and never read.
    """

    def __init__(
        self,
        source: SourcePromptClassifier | None = None,
        alpha_fuse: float = 0.5,
        bank_size: int = 8,
        prompt_tokens: int = 16,
        theta: float = 0.95,
        tau: float = 1.0,
        similarity: str = "cosine",
        lr: float = 1e-3,
        momentum_beta: float = 0.9,
        weight_decay: float = 5e-4,
        decoupled_weight_decay: bool = True,
        batch_size: int = 32,
        epochs: int = 30,
        seed: int = 0,
        use_pseudo_ce: bool = True,
        use_consistency: bool = True,
        use_info_max: bool = True,
        weak_noise_sigma: float = 0.01,
        strong_noise_sigma: float = 0.1,
        strong_dropout: float = 0.1,
        attention_scope: str = "per_class",
        gate_mode: str = "scalar",
        attention_dim: int | None = None,
        bank_trainable: bool = True,
        token_init_std: float = 0.02,
    ) -> None:
        self.source = source
        self.alpha_fuse = alpha_fuse
        self.bank_size = bank_size
        self.prompt_tokens = prompt_tokens
        self.theta = theta
        self.tau = tau
        self.similarity = similarity
        self.lr = lr
        self.momentum_beta = momentum_beta
        self.weight_decay = weight_decay
        self.decoupled_weight_decay = decoupled_weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.use_pseudo_ce = use_pseudo_ce
        self.use_consistency = use_consistency
        self.use_info_max = use_info_max
        self.weak_noise_sigma = weak_noise_sigma
        self.strong_noise_sigma = strong_noise_sigma
        self.strong_dropout = strong_dropout
        self.attention_scope = attention_scope
        self.gate_mode = gate_mode
        self.attention_dim = attention_dim
        self.bank_trainable = bank_trainable
        self.token_init_std = token_init_std

    def _adaptation_config(self) -> AdaptationConfig:
        config = AdaptationConfig(
            alpha_fuse=self.alpha_fuse,
            bank_size=self.bank_size,
            prompt_tokens=self.prompt_tokens,
            theta=self.theta,
            tau=self.tau,
            similarity=self.similarity,
            lr=self.lr,
            momentum_beta=self.momentum_beta,
            weight_decay=self.weight_decay,
            decoupled_weight_decay=self.decoupled_weight_decay,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seeds=(self.seed,),
            use_pseudo_ce=self.use_pseudo_ce,
            use_consistency=self.use_consistency,
            use_info_max=self.use_info_max,
            weak_noise_sigma=self.weak_noise_sigma,
            strong_noise_sigma=self.strong_noise_sigma,
            strong_dropout=self.strong_dropout,
            attention_scope=self.attention_scope,
            gate_mode=self.gate_mode,
            attention_dim=self.attention_dim,
            bank_trainable=self.bank_trainable,
            token_init_std=self.token_init_std,
        )
        config.validate()
        return config

    def fit(self, X, y=None) -> "DualBranchAdapter":
        if self.source is None:
            raise NotFittedError(
                "DualBranchAdapter needs a fitted SourcePromptClassifier as "
                "its `source` parameter"
            )
        check_is_fitted(self.source, "class_features_")
        X = check_array(X, dtype=np.float32)
        if X.shape[1] != self.source.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features but the source classifier was "
                f"fitted with {self.source.n_features_in_}"
            )
        config = self._adaptation_config()
        ids = [f"target_{i:06d}" for i in range(X.shape[0])]
        bank, high_conf, _ = build_bank_from_features(
            ids,
            X,
            self.source.class_features_,
            k=self.bank_size,
            tau=self.tau,
            similarity=self.similarity,
        )
        run = adapt_single_seed(
            source_features=self.source.class_features_,
            bank=bank,
            high_conf=high_conf,
            target_features=X,
            text_encoder=self.source.encoders_.text,
            config=config,
            seed=self.seed,
        )
        self.classes_ = self.source.classes_
        self.n_features_in_ = X.shape[1]
        self.bank_ = bank
        self.model_ = run.model
        self.run_result_ = run
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float32)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but {type(self).__name__} was "
                f"fitted with {self.n_features_in_}"
            )
        return self.model_.predict_probs(torch.as_tensor(X)).numpy()

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


def clone_with_source(adapter: DualBranchAdapter) -> DualBranchAdapter:
    """Fresh unfitted adapter with the same hyperparameters and the *same*
    fitted source classifier, ready to ``fit`` on a new target set.

    Plain :func:`sklearn.base.clone` would also reset the nested source
    estimator, forcing a source re-train; this keeps it.
    """
    params = adapter.get_params(deep=False)
    return DualBranchAdapter(**params)
