import numpy as np
import pytest

from nienie.lstm import ModelBundle, init_params
from nienie.windows import NormStats


@pytest.fixture(scope="session")
def small_bundle():
    """Untrained H=16 model with hand-set channel stats. Mechanics tests
    (buffering, sessions, service, replay) need a working bundle, not an
    accurate one."""
    params = init_params(seed=7, hidden=16)
    stats = NormStats(mean=np.array([4.0, 34.0, 80.0]),
                      std=np.array([2.5, 0.5, 12.0]))
    return ModelBundle(params=params, stats=stats)
