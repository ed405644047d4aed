import numpy as np
import pytest

from sdcluster import ModelConfig, TrainConfig, make_synthetic_blobs


def tiny_model_config(**overrides) -> ModelConfig:
    defaults = dict(
        backbone="tiny_mlp",
        num_student_exits=1,
        feature_dim=16,
        hidden_dim=64,
        num_prototypes=6,
        temperature=0.5,
        activation="tanh",
        input_dim=16,
        mlp_width=32,
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)


def desk_train_config(seed=0, distill=True, **overrides) -> TrainConfig:
    """The blobs desk-scale config (mirrors configs/blobs.cfg)."""
    model_overrides = {
        k: overrides.pop(k)
        for k in list(overrides)
        if k in ("feature_dim", "hidden_dim", "num_prototypes", "mlp_width", "input_dim")
    }
    defaults = dict(
        epochs=30,
        warmup_epochs=10,
        batch_size=64,
        base_lr=6e-3,
        frozen_proto_iters=5000,
        kmeans_max_iters=50,
        dataset="synthetic",
        seed=seed,
        model=tiny_model_config(**model_overrides),
    )
    defaults.update(overrides)
    config = TrainConfig(**defaults)
    return config if distill else config.without_distillation()


@pytest.fixture(scope="session")
def blobs_train():
    return make_synthetic_blobs(200, 3, 16, 10.0, seed=0)


@pytest.fixture(scope="session")
def blobs_test():
    return make_synthetic_blobs(100, 3, 16, 10.0, seed=0, noise_seed=1)


@pytest.fixture(scope="session")
def unit_rows_rng():
    def make(n, d, seed):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((n, d))
        return z / np.linalg.norm(z, axis=1, keepdims=True)

    return make
