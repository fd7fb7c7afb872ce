import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from wafernet.tensor import kernels  # noqa: E402


@pytest.fixture(params=kernels.available())
def backend(request):
    prev = kernels.use(request.param)
    yield request.param
    kernels.use(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
