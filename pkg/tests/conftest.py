import numpy as np
import pytest

from mtsmae import autodiff as ad


@pytest.fixture(autouse=True)
def float64_default():
    """Tests run at 64-bit unless they opt out; training default is 32-bit."""
    with ad.use_dtype(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
