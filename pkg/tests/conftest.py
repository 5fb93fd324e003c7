from __future__ import annotations

import numpy as np
import pytest

from offab.logstore import LogDataset
from offab.policyspace import Policy


def make_dataset(
    timestamps,
    contexts,
    actions,
    propensities,
    rewards,
    d: int | None = None,
    K: int = 2,
) -> LogDataset:
    contexts = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    if d is None:
        d = contexts.shape[1]
    return LogDataset(
        d=d,
        K=K,
        timestamps=timestamps,
        contexts=contexts,
        actions=actions,
        propensities=propensities,
        rewards=rewards,
    )


def uniform_policy(d: int, K: int) -> Policy:
    return Policy(weights=np.zeros((K, d)), temperature=1.0, floor=0.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
