from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError


@dataclass
class Sample:
    """One labelled clip: per-frame features plus the validity and brightness channels.

    ``label`` is 1 for the positive state (mind wandering, disengaged, bored).
    """

    user_id: str
    label: int
    features: np.ndarray
    valid: np.ndarray
    brightness: np.ndarray
    fps: float
    glass: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ShapeError("features must be a T x F matrix")
        T = self.features.shape[0]
        self.valid = np.asarray(self.valid, dtype=bool)
        self.brightness = np.asarray(self.brightness, dtype=np.float64)
        if self.valid.shape != (T,) or self.brightness.shape != (T,):
            raise ShapeError("validity and brightness channels must have length T")
        if self.glass is not None:
            self.glass = np.asarray(self.glass, dtype=np.float64)
            if self.glass.ndim != 2 or self.glass.shape[0] != T:
                raise ShapeError("glass features must be a T x glass_dim matrix")
        if np.any(self.brightness < 0) or np.any(self.brightness > 255):
            raise ValueError("brightness must lie in [0, 255]")
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")

    @property
    def T(self) -> int:
        return self.features.shape[0]

    @property
    def F(self) -> int:
        return self.features.shape[1]


@dataclass
class UserDataset:
    user_id: str
    samples: list[Sample] = field(default_factory=list)
    wears_glasses: bool = False

    def __post_init__(self):
        for s in self.samples:
            if s.user_id != self.user_id:
                raise ValueError(f"sample of user {s.user_id!r} filed under {self.user_id!r}")

    def __len__(self):
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)


@dataclass
class FederatedSplit:
    train_clients: list[UserDataset]
    test_users: list[UserDataset]

    def __post_init__(self):
        train_ids = {u.user_id for u in self.train_clients}
        test_ids = {u.user_id for u in self.test_users}
        overlap = train_ids & test_ids
        if overlap:
            raise ValueError(f"users on both sides of the split: {sorted(overlap)}")

    @property
    def N(self) -> int:
        return len(self.train_clients)


def pooled(users) -> list[Sample]:
    return [s for u in users for s in u.samples]
