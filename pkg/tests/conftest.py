import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from noisyseg.volume import GridGeometry, LabelVolume, UncertaintyTable

# numba JIT on first kernel call can blow per-example deadlines
settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def make_labels(dims, ids, num_labels, spacing=(1.0, 1.0, 1.0)):
    """LabelVolume from an [x, y, z]-indexed integer grid."""
    ids = np.asarray(ids, dtype=np.uint16)
    assert ids.shape == tuple(dims)
    return LabelVolume(GridGeometry(dims, spacing), ids.ravel(order="F"), num_labels)


def random_volume_and_table(rng, max_dim=12, max_labels=5, max_uncertainty=3):
    dims = tuple(int(v) for v in rng.integers(3, max_dim + 1, size=3))
    num_labels = int(rng.integers(2, max_labels + 1))
    ids = rng.integers(0, num_labels, size=dims).astype(np.uint16)
    table = {l: int(rng.integers(0, max_uncertainty + 1)) for l in range(num_labels)}
    return make_labels(dims, ids, num_labels), UncertaintyTable(table), ids, table


@pytest.fixture(scope="session", autouse=True)
def warm_smoothing_kernel():
    """Compile the smoothing kernel once so timings elsewhere are JIT-free."""
    from noisyseg.smoothing import smooth_labels

    vol = make_labels((4, 4, 4), np.zeros((4, 4, 4)), 2)
    smooth_labels(vol, UncertaintyTable({0: 1, 1: 1}))
