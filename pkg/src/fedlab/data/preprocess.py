"""Frame-quality filtering, illumination screening and input reshaping."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..errors import ShapeError
from .types import Sample, UserDataset

MAX_INVALID_RUN = 10      # a run this long excludes the clip
MAX_INVALID_TOTAL = 30    # more invalid frames than this excludes the clip
MIN_USER_SAMPLES = 5      # users with four or fewer samples are dropped
DARK_LEVEL = 100.0


@dataclass(frozen=True)
class Accepted:
    sample: Sample


@dataclass(frozen=True)
class Excluded:
    reason: str   # "no-face" | "consecutive-run" | "total-count"


def longest_run(mask) -> int:
    best = run = 0
    for v in np.asarray(mask, dtype=bool):
        run = run + 1 if v else 0
        best = max(best, run)
    return best


def preprocess_sample(sample: Sample, max_run: int = MAX_INVALID_RUN,
                      max_total: int = MAX_INVALID_TOTAL) -> Accepted | Excluded:
    invalid = ~sample.valid
    if invalid.all():
        return Excluded("no-face")
    if longest_run(invalid) >= max_run:
        return Excluded("consecutive-run")
    if int(invalid.sum()) > max_total:
        return Excluded("total-count")
    if not invalid.any():
        return Accepted(sample)
    # index of the most recent valid frame; the head borrows the first valid frame
    idx = np.where(sample.valid, np.arange(sample.T), -1)
    idx = np.maximum.accumulate(idx)
    idx[idx < 0] = int(np.argmax(sample.valid))
    glass = None if sample.glass is None else sample.glass[idx]
    return Accepted(replace(sample, features=sample.features[idx], glass=glass,
                            valid=np.ones(sample.T, dtype=bool)))


def detect_low_illumination(sample: Sample, level: float = DARK_LEVEL) -> bool:
    """True when mean gray stays below ``level`` for at least one second of frames."""
    need = math.ceil(sample.fps)
    return longest_run(sample.brightness < level) >= need


def exclude_sparse_users(users: list[UserDataset], min_samples: int = MIN_USER_SAMPLES):
    return [u for u in users if len(u.samples) >= min_samples]


def downsample_for_mlp(X, block: int = 10, frames: int = 124) -> np.ndarray:
    """Average blocks of ten frames and drop the trailing remainder (124 -> 12 rows)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != frames:
        raise ShapeError(f"expected {frames} frames, got shape {X.shape}")
    n = frames // block
    return X[:n * block].reshape(n, block, X.shape[1]).mean(axis=1)


@dataclass
class PreprocessReport:
    kept_samples: int = 0
    excluded: dict = None
    dark_samples: int = 0
    dropped_users: list = None

    def to_dict(self) -> dict:
        return {"kept_samples": self.kept_samples, "excluded": dict(self.excluded or {}),
                "dark_samples": self.dark_samples, "dropped_users": list(self.dropped_users or [])}


def preprocess_corpus(users: list[UserDataset], drop_dark: bool = False,
                      min_samples: int = MIN_USER_SAMPLES):
    """Apply the frame rules to every clip, then the sparse-user rule.

    Returns the cleaned users and a :class:`PreprocessReport`.
    """
    report = PreprocessReport(excluded={"no-face": 0, "consecutive-run": 0, "total-count": 0},
                              dropped_users=[])
    cleaned = []
    for u in users:
        kept = []
        for s in u.samples:
            dark = detect_low_illumination(s)
            report.dark_samples += int(dark)
            if dark and drop_dark:
                report.excluded["dark"] = report.excluded.get("dark", 0) + 1
                continue
            res = preprocess_sample(s)
            if isinstance(res, Excluded):
                report.excluded[res.reason] += 1
            else:
                kept.append(res.sample)
        cleaned.append(UserDataset(u.user_id, kept, u.wears_glasses))
    out = exclude_sparse_users(cleaned, min_samples)
    keep_ids = {u.user_id for u in out}
    report.dropped_users = [u.user_id for u in cleaned if u.user_id not in keep_ids]
    report.kept_samples = sum(len(u) for u in out)
    return out, report
