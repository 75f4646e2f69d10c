from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigError
from .types import FederatedSplit, UserDataset


def user_independent_split(users: list[UserDataset], test_frac: float = 0.1,
                           rng: np.random.Generator | None = None) -> FederatedSplit:
    """Hold out whole users for testing; everyone else becomes a client.

    The held-out count is ``round(test_frac * n)`` (halves round up), at least one.
    """
    n = len(users)
    if n < 2:
        raise ConfigError("a user-independent split needs at least two users")
    if not 0.0 < test_frac < 1.0:
        raise ConfigError("test_frac must lie in (0, 1)")
    n_test = min(max(1, math.floor(test_frac * n + 0.5)), n - 1)
    rng = rng if rng is not None else np.random.default_rng(0)
    held = set(rng.permutation(n)[:n_test].tolist())
    test = [u for i, u in enumerate(users) if i in held]
    train = [u for i, u in enumerate(users) if i not in held]
    return FederatedSplit(train, test)


def kfold_user_folds(users: list[UserDataset], k: int = 5,
                     rng: np.random.Generator | None = None) -> list[list[UserDataset]]:
    """Shuffle users and deal them round-robin into ``k`` user-disjoint folds."""
    if k < 2:
        raise ConfigError("need at least two folds")
    if len(users) < k:
        raise ConfigError(f"{len(users)} users cannot fill {k} folds")
    rng = rng if rng is not None else np.random.default_rng(0)
    order = rng.permutation(len(users))
    return [[users[i] for i in order[j::k]] for j in range(k)]
