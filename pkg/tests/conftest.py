import sys
from pathlib import Path

import numpy as np
import pytest

from genmeasures.tensor import available_backends, use_backend

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(params=available_backends())
def backend(request):
    with use_backend(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
