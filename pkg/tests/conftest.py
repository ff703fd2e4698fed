import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fuseclust.exceptions import ClippingWarning, ConnectivityWarning

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _quiet_graph_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConnectivityWarning)
        warnings.simplefilter("ignore", ClippingWarning)
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
