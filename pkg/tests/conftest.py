import pytest

from stackfed.harness import ExperimentConfig, build_federation


@pytest.fixture
def small_config():
    return ExperimentConfig(
        n_samples=420,
        n_features=6,
        n_classes=3,
        class_sep=3.0,
        rounds=4,
        reps=2,
        epochs=1,
        batch_size=16,
        lr=0.1,
        base_seed=7,
    )


@pytest.fixture
def small_federation(small_config):
    state, _ = build_federation(small_config, rep_seed=3)
    return state
