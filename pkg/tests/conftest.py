import math

import numpy as np
import pytest

from vamh.chain import ComponentProposal, TargetDensity


def discrete_target(pi):
    """Generic-machinery target on the index grid of the array ``pi`` (positive entries)."""
    pi = np.asarray(pi, dtype=float)
    log_pi = np.log(pi, where=pi > 0, out=np.full(pi.shape, -np.inf))

    def lp(x):
        idx = tuple(int(round(v)) for v in x)
        if any(i < 0 or i >= k for i, k in zip(idx, pi.shape)):
            return -math.inf
        return float(log_pi[idx])

    return TargetDensity(dims=(1,) * pi.ndim, log_pi=lp)


def discrete_proposal(i, table):
    """State-independent categorical proposal for component i."""
    table = np.asarray(table, dtype=float)
    cdf = np.cumsum(table)

    def sample(x, rng):
        return np.array([float(min(np.searchsorted(cdf, rng.uniform(), side="right"), table.size - 1))])

    def log_density(x, v):
        p = table[int(round(v[0]))]
        return math.log(p) if p > 0 else -math.inf

    return ComponentProposal(i, sample, log_density, state_independent=True)


@pytest.fixture
def rng_np():
    return np.random.default_rng(20240611)
