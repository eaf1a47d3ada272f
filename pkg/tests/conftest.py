from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from otmkit.instances import make_rng

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return make_rng(20240611)


def two_cycle_pair():
    """Deterministic 2-cycles started on opposite states with the 0/1 label cost."""
    from otmkit.chains import validate_chain

    K = [[0.0, 1.0], [1.0, 0.0]]
    X = validate_chain(K, [1.0, 0.0])
    Y = validate_chain(K, [0.0, 1.0])
    return X, Y, np.array([[0.0, 1.0], [1.0, 0.0]])
