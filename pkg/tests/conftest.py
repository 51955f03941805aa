import numpy as np
import pytest

from asdweld.geometry import ChartSpec, NeckParams


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_chart():
    return ChartSpec(2.0, 8, (0.6, 1.0, 1.0, 1.0), (1.4, 1.0, 1.0, 1.0))


@pytest.fixture
def neck():
    return NeckParams()
