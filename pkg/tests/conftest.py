import numpy as np
import pytest
from hypothesis import settings

from heraldloop import mcsim
from heraldloop.analysis import tally_records
from heraldloop.protocol import LoopConfig

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def lab_cfg():
    return LoopConfig.lab(0.3, loop_eff=0.6)


@pytest.fixture(scope="session")
def lab_tally(lab_cfg):
    """1e7 two-pass records at the experimental loss parameters."""
    return tally_records(mcsim.sample_blocks(lab_cfg, 2, 10_000_000, seed=11))


def binomial_clicks(N, q):
    from scipy import stats

    return stats.binom.pmf(np.arange(N + 1), N, q)
