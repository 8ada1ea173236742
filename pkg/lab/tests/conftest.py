import numpy as np
import pytest

from mer_lab.models.schema import SynthConfig, TrainConfig
from mer_lab.tools import synthgen
from mer_lab.utils.linalg import SeededRng


@pytest.fixture
def rng():
    return SeededRng(0)


@pytest.fixture
def tiny_synth_config():
    return SynthConfig(
        num_classes=3,
        input_dims=[6, 5],
        samples_per_domain=90,
        latent_dim=4,
        seed=3,
    )


@pytest.fixture
def tiny_bundle(tiny_synth_config):
    return synthgen.generate(tiny_synth_config)


@pytest.fixture
def tiny_train_config():
    return TrainConfig(epochs=3, batch_size=16, hidden_widths=[8], embedding_dim=4, seed=1)


@pytest.fixture
def bundle_dir(tmp_path, tiny_bundle):
    return synthgen.save_bundle(tiny_bundle, tmp_path / "data")


@pytest.fixture
def orthogonal_signs():
    """N=4 columns with orthogonal +-1 patterns: off-diagonal correlation is exactly 0."""
    return np.array([[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]])
