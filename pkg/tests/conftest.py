from functools import lru_cache

import numpy as np
import pytest

from hessurgery import data as D, models
from hessurgery.models import MlpSpec, TrainConfig

FIXTURE_SPEC = MlpSpec((20, 16, 4))


@lru_cache(maxsize=None)
def fixture_run(seed: int, name: str = "imbalanced-4"):
    """Seeded fixture dataset and the model trained on it (cached for the session)."""
    data = D.make_blobs(D.preset(name, seed=seed))
    theta, _ = models.train(FIXTURE_SPEC, data.split("train"), TrainConfig(seed=seed))
    theta.setflags(write=False)
    return data, theta


@pytest.fixture
def fixture0():
    data, theta = fixture_run(0)
    return data, np.array(theta)


def small_model(seed: int = 0, widths=(5, 7, 3), n: int = 40):
    """A p < 500 tanh MLP with a random batch and random parameters."""
    from hessurgery.vecspace import Rng
    spec = MlpSpec(widths)
    rng = Rng(seed)
    X = rng.normal(n * widths[0]).reshape(n, widths[0])
    y = (np.argsort(rng.raw(n)) % widths[-1]).astype(np.int64)
    theta = rng.normal(spec.n_params) * 0.5
    return spec, models.Batch(X, y), theta


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
