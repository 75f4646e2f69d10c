"""Dense float64 helpers, path-keyed random streams and a finite-difference oracle.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64; the helpers
here only add the shape checks the rest of the package relies on.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

PathLabel = str | int


def as_mat(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a, b = as_mat(a), as_mat(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


_BINARY = {"add": np.add, "sub": np.subtract, "hadamard": np.multiply}


def elementwise(a, b, kind: str) -> np.ndarray:
    a, b = as_mat(a), as_mat(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    try:
        op = _BINARY[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return op(a, b)


def map_mat(a, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Apply a vectorised scalar function to every entry."""
    a = as_mat(a)
    return np.asarray(fn(a), dtype=np.float64).reshape(a.shape)


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * np.tanh(0.5 * np.asarray(x, dtype=np.float64)) + 0.5


def _label_words(label: PathLabel) -> list[int]:
    if isinstance(label, (bool, np.bool_)):
        raise TypeError("path labels must be str or int")
    if isinstance(label, (int, np.integer)):
        v = int(label)
        # tag 1 = int, sign folded into the tag so -1 and 1 differ
        return [1 if v >= 0 else 2, abs(v) & 0xFFFFFFFF, abs(v) >> 32]
    if isinstance(label, str):
        digest = hashlib.sha256(label.encode("utf-8")).digest()
        return [3] + [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    raise TypeError(f"path labels must be str or int, got {type(label).__name__}")


def rng_derive(seed: int, path: Iterable[PathLabel] = ()) -> np.random.Generator:
    """Independent generator keyed by ``(seed, path)``.

    Each distinct path gets its own counter-based Philox stream, so the order
    in which streams are consumed never changes what any of them produce.
    """
    words = [int(seed) & 0xFFFFFFFF, int(seed) >> 32 & 0xFFFFFFFF]
    for label in path:
        words.extend(_label_words(label))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``f`` at ``x``.

    Extended-precision inputs (``np.longdouble``) keep their dtype, which lets
    callers push the roundoff floor well below float64's.
    """
    x = np.array(x, dtype=np.result_type(np.asarray(x).dtype, np.float64))
    flat = x.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = np.asarray(f(x), dtype=x.dtype)
        flat[i] = orig - h
        fm = np.asarray(f(x), dtype=x.dtype)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite objective while perturbing coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def stable_sum(values: Sequence[np.ndarray]) -> np.ndarray:
    """Left-to-right sum in the given order (no pairwise reordering)."""
    it = iter(values)
    total = np.array(next(it), dtype=np.float64, copy=True)
    for v in it:
        total += v
    return total
