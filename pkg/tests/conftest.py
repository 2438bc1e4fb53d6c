import functools
import logging
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

DATA = Path(__file__).parent / "data"


@pytest.fixture(autouse=True)
def _quiet_lengthscale_fallback(caplog):
    # constant step columns trigger the documented median fallback warning
    caplog.set_level(logging.ERROR, logger="specflow.kernels")
    yield


@functools.cache
def shipped_report(name: str):
    """Run a shipped sweep once per session (in-process, one worker)."""
    from specflow.config import load_config
    from specflow.harness import run_sweep

    return run_sweep(load_config(name), jobs=1)
