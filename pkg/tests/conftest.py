import os
import time

import pytest

from debm.eval import run_sweep
from debm.models import METHODS

# Single worker unless the box has spare cores; results are jobs-invariant.
JOBS = max(1, min(4, os.cpu_count() or 1))


@pytest.fixture(scope="session")
def noise_sweep():
    """N=7 noise sweep shared by the comparative acceptance criteria.

    Multiplier fixed at 2, sigma_beta in {0.5, 1, 2}, 50 repetitions, all
    four methods on identical datasets per repetition.
    """
    start = time.perf_counter()
    result = run_sweep(
        METHODS, [(0.5, 2.0), (1.0, 2.0), (2.0, 2.0)], 50, 7, seed=0, jobs=JOBS
    )
    return result, time.perf_counter() - start


@pytest.fixture(scope="session")
def scale_sweep():
    """N=47 sweep at sigma_beta=1, multipliers 0..24 step 6, 50 repetitions."""
    grid = [(1.0, m) for m in (0.0, 6.0, 12.0, 18.0, 24.0)]
    start = time.perf_counter()
    result = run_sweep(("debm-prob",), grid, 50, 47, seed=0, jobs=JOBS)
    return result, time.perf_counter() - start
