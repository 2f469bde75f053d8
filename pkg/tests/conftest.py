import time

import numpy as np
import pytest

from ncreg.datasets import SyntheticCortex
from ncreg.neural_field import NeuralCorticalMap


@pytest.fixture(scope="session")
def cortex():
    """Two-channel synthetic subject: a degree-4 and a degree-12 channel on icosphere 5."""
    return SyntheticCortex([4, 12], n_labels=16, level=5, seed=0)


@pytest.fixture(scope="session")
def template_fit(cortex):
    """Default 3,000-iteration fit of the synthetic subject, with its wall time."""
    feats = cortex.features_at(cortex.mesh.vertices)
    # load the compiled kernels outside the timed region
    NeuralCorticalMap(n_iter=2, random_state=0).fit(cortex.mesh, feats)
    t0 = time.perf_counter()
    model = NeuralCorticalMap(random_state=0).fit(cortex.mesh, feats)
    return model, time.perf_counter() - t0


@pytest.fixture(scope="session")
def template_model(template_fit):
    return template_fit[0]


@pytest.fixture(scope="session")
def small_model():
    """Untrained map with random non-trivial tables for gradient checks."""
    model = NeuralCorticalMap(n_levels=4, log2_table_size=8, hidden_width=16, random_state=3).initialize(2)
    rng = np.random.default_rng(11)
    model.tables_ = rng.uniform(-1.0, 1.0, size=model.tables_.shape)
    model.biases_ = [rng.normal(0.0, 0.1, size=b.shape) for b in model.biases_]
    return model
