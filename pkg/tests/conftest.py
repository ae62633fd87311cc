"""Shared fixtures.

Two tiers: cheap per-module fixtures for unit tests, and session-scoped
fixtures for the end-to-end checks so the reference experiment's source
phase and bank are computed once and reused.
"""

from __future__ import annotations

import numpy as np
import pytest
import torch

from promptda import (
    EncoderConfig,
    SyntheticTaskSpec,
    build_encoders,
    build_target_bank,
    calibrated_synthetic_experiment,
    generate_synthetic_task,
    hand_prompt_class_features,
    load_task_data,
    run_source_phase,
)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(max(1, torch.get_num_threads()))
    yield


# ---------------------------------------------------------------------------
# cheap fixtures for unit tests


@pytest.fixture()
def tiny_spec() -> SyntheticTaskSpec:
    return SyntheticTaskSpec(
        classes=3,
        dim=8,
        source_per_class=6,
        target_per_class=8,
        rotation_deg=25.0,
        translation=0.3,
        noise_sigma=0.2,
        seed=7,
    )


@pytest.fixture()
def tiny_task(tiny_spec):
    return generate_synthetic_task(tiny_spec)


@pytest.fixture()
def tiny_encoders():
    return build_encoders(EncoderConfig(embed_dim=8, seed=3))


@pytest.fixture()
def tiny_class_features(tiny_encoders, tiny_task):
    return hand_prompt_class_features(tiny_encoders, tiny_task.class_names)


# ---------------------------------------------------------------------------
# the calibrated reference experiment, computed once per session


@pytest.fixture(scope="session")
def calibrated_config():
    return calibrated_synthetic_experiment()


@pytest.fixture(scope="session")
def calibrated_task(calibrated_config):
    return load_task_data(calibrated_config)


@pytest.fixture(scope="session")
def calibrated_source(calibrated_config, calibrated_task):
    return run_source_phase(calibrated_config, calibrated_task)


@pytest.fixture(scope="session")
def calibrated_bank(calibrated_config, calibrated_task, calibrated_source):
    bank, high_conf = build_target_bank(
        calibrated_task, calibrated_source.class_features, calibrated_config
    )
    return bank, high_conf


@pytest.fixture(scope="session")
def calibrated_eval(calibrated_task):
    features = np.asarray(calibrated_task.target_features, dtype=np.float32)
    labels = np.asarray(calibrated_task.target_labels, dtype=np.int64)
    return features, labels
