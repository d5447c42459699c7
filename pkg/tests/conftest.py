import numpy as np
import pytest

from alphaforge.data import SignalSpec, generate_synthetic_panel
from alphaforge.evaluation import BacktestConfig
from alphaforge.program import SearchSpaceConfig


@pytest.fixture(scope="session")
def ss_cfg():
    return SearchSpaceConfig()


@pytest.fixture(scope="session")
def small_panel():
    """Plain random-walk market, no planted signal: 8 stocks, 17 samples."""
    return generate_synthetic_panel(k=8, t=60, seed=11)


@pytest.fixture(scope="session")
def medium_panel():
    """K=20 panel used by executor/pruning checks."""
    return generate_synthetic_panel(k=20, t=120, seed=3)


@pytest.fixture(scope="session")
def planted_panel():
    """Noise-free planted signal on feature cell (3, 12)."""
    return generate_synthetic_panel(k=20, t=200, signal=SignalSpec(noise=0.0), seed=5)


@pytest.fixture(scope="session")
def small_bt_cfg():
    return BacktestConfig(top_n=2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
