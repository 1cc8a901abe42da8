import pytest

from shortfall.model import Frictions, MarketParams

BENCH = MarketParams(S0=1.0, sigma=0.2, kappa=0.0, T=1.0)


@pytest.fixture
def bench():
    return BENCH


@pytest.fixture
def costs():
    return Frictions(0.01, 0.01)
