"""Pytest configuration and fixtures for the sste project."""
from pathlib import Path
from typing import Any, Callable, Dict, Generator

import numpy as np
import pytest
from loguru import logger

from sste.config import ExperimentConfig
from sste.models import PruneConfig
from sste.settings import reset_settings

# Set up test configuration: tiny float64 runs that finish in well under a second
SMALL_RUN: Dict[str, Any] = {
    "name": "small",
    "task": "synthetic_classification",
    "dtype": "float64",
    "seed": 3,
    "data.n_train": 128,
    "data.n_val": 64,
    "data.input_dim": 8,
    "model.hidden": [8],
    "train.steps": 12,
    "train.batch_size": 16,
    "train.probe_size": 32,
    "optim.lr": 0.05,
}


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for reproducible random inputs."""
    return np.random.default_rng(1234)


@pytest.fixture
def cfg24() -> PruneConfig:
    return PruneConfig(n=2, m=4)


@pytest.fixture
def cfg12() -> PruneConfig:
    return PruneConfig(n=1, m=2)


@pytest.fixture
def output_root(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> Generator[Path, None, None]:
    """Point SSTE_OUTPUT_ROOT at a temporary directory."""
    root = tmp_path / "runs"
    monkeypatch.setenv("SSTE_OUTPUT_ROOT", str(root))
    reset_settings()
    yield root
    reset_settings()


@pytest.fixture
def small_config(tmp_path: Path) -> ExperimentConfig:
    """A tiny classification run writing into a temporary directory."""
    return ExperimentConfig.from_flat({**SMALL_RUN, "output_dir": str(tmp_path / "small")})


@pytest.fixture
def captured_logs() -> Generator[list, None, None]:
    """Messages emitted through loguru while the test runs."""
    messages: list = []
    handler = logger.add(lambda message: messages.append(message.record["message"]), level="DEBUG")
    yield messages
    logger.remove(handler)


@pytest.fixture
def small_flat() -> Dict[str, Any]:
    """Flat form of the tiny classification run, for tests that add their own keys."""
    return dict(SMALL_RUN)


def _central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, delta: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    grad = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = delta
        grad[i] = (f(x + step) - f(x - step)) / (2 * delta)
    return grad


@pytest.fixture
def central_difference() -> Callable[..., np.ndarray]:
    """Numerical gradient (f(x + δ) − f(x − δ)) / 2δ of a scalar function of a flat array."""
    return _central_difference
