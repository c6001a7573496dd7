import numpy as np
import pytest

from react_ood.smallnet import TrainConfig, init_mlp, train
from react_ood.synthdata import BlobSpec, gen_id_blobs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def blob_model():
    """A (2, 16, 8, 3) BatchNorm MLP trained on well-separated 2-D blobs."""
    spec = BlobSpec(n_classes=3, dim=2, samples_per_class=150, std=0.4, mean_scale=2.0, seed=7)
    data = gen_id_blobs(spec, seed=8)
    result = train(init_mlp((2, 16, 8, 3), seed=9), data, TrainConfig(epochs=40, batch_size=32, seed=10))
    return result.model, data


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for num in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[num][1])
