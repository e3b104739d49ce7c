"""Shared test configuration.

Thread caps are exported before numpy is first imported so that wall-clock
budgets in the acceptance tests measure genuine single-core work rather than
whatever BLAS threading the host happens to allow.
"""

import os

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import pytest
from hypothesis import HealthCheck, settings

from chmffn.autodiff import reset_default_tape

settings.register_profile(
    "chmffn",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("chmffn")


@pytest.fixture(autouse=True)
def fresh_tape():
    """Every test starts and ends with an empty default tape so recorded nodes
    from one test cannot retain memory or leak gradients into the next."""
    reset_default_tape()
    yield
    reset_default_tape()
