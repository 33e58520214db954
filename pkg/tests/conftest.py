import numpy as np
import pytest

from sentinel.features import SynthSpec, synth_generate
from sentinel.mlp import MLPDetector, init_network


@pytest.fixture(scope="session")
def small_data():
    spec = SynthSpec(d=60, n_samples=400, malware_ratio=0.25, n_signature_features=6)
    return synth_generate(spec, 7)


@pytest.fixture(scope="session")
def fitted_mlp(small_data):
    return MLPDetector(hidden_sizes=(16, 8), epochs=3, random_state=0).fit(
        small_data.to_csr(), small_data.y)


def random_detector(d, hidden, seed, scale=1.0):
    """An MLPDetector with random weights and no training."""
    rng = np.random.default_rng(seed)
    det = MLPDetector(hidden_sizes=hidden)
    net = init_network(d, hidden, rng)
    net.weights = [w * scale for w in net.weights]
    net.biases = [rng.normal(0, 0.3, size=b.shape) for b in net.biases]
    det.network_ = net
    det.n_features_in_ = d
    det.classes_ = np.array([0, 1])
    return det
