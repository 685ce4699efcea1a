import json
import logging
import warnings
from pathlib import Path

import numpy as np
import pytest

from llaca.models import NetSpec, RunConfig, TaskConfig
from llaca.utils.logging_utils import TqdmLoggingHandler

SMALL_INI = """\
[tasks]
num_tasks = 3
train_samples = 200
test_samples = 100

[net]
hidden_sizes = 8

[logging]
show_status = false
"""

GOLDEN_PATH = Path(__file__).resolve().parent / "golden_values.json"


def pytest_addoption(parser):
    parser.addoption("--regen-golden", action="store_true", default=False,
                     help="overwrite tests/golden_values.json with the values of this run")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small_task_config():
    return TaskConfig(num_tasks=3, train_samples=200, test_samples=100, seed=0)


@pytest.fixture
def small_run_config(small_task_config):
    return RunConfig(
        task_config=small_task_config,
        net_spec=NetSpec(layer_sizes=[16, 8, 4], init_seed=0),
        policy="llaca",
    )


@pytest.fixture
def small_ini(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL_INI, encoding="utf-8")
    return path


@pytest.fixture(autouse=True)
def _drop_console_handlers():
    # handlers installed by configure_logging keep a reference to the captured stream
    yield
    for handler in logging.root.handlers[:]:
        if isinstance(handler, TqdmLoggingHandler):
            logging.root.removeHandler(handler)


@pytest.fixture
def golden(request):
    """
    Compare seeded outputs against tests/golden_values.json.

    A key that is not in the file yet is recorded (with a warning) and the file
    should be committed; afterwards every run must reproduce the value exactly.
    """
    values = json.loads(GOLDEN_PATH.read_text(encoding="utf-8")) if GOLDEN_PATH.exists() else {}
    regen = request.config.getoption("--regen-golden")

    def check(key, value):
        if regen or key not in values:
            values[key] = value
            GOLDEN_PATH.write_text(json.dumps(values, indent=2, sort_keys=True) + "\n", encoding="utf-8")
            warnings.warn(f"recorded golden value {key} = {value!r}")
            return
        assert value == values[key], f"{key}: got {value!r}, recorded {values[key]!r}"

    return check
