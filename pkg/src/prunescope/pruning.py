"""Magnitude-based pruning masks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidParameter
from .numkernel import RngStream

METHODS = ("lowest", "highest", "random")


@dataclass(frozen=True, eq=False)
class WeightVector:
    values: np.ndarray
    origin: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if values.size < 1:
            raise InvalidParameter("weight vector must have at least one entry")
        if not np.all(np.isfinite(values)):
            raise InvalidParameter(f"weight vector {self.origin!r} has non-finite entries")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True, eq=False)
class PruneMask:
    bits: np.ndarray
    fraction: float
    method: str
    seed: int | None = None

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8).reshape(-1)
        if np.any(bits > 1):
            raise InvalidParameter("mask bits must be 0 or 1")
        if self.method not in METHODS:
            raise InvalidParameter(f"unknown pruning method {self.method!r}")
        if self.method == "random" and self.seed is None:
            raise InvalidParameter("random masks must record their seed")
        object.__setattr__(self, "bits", bits)

    def __len__(self) -> int:
        return self.bits.size

    @property
    def zeros(self) -> int:
        return int(self.bits.size - np.count_nonzero(self.bits))


def pruned_count(fraction: float, d: int) -> int:
    """``floor(fraction * d)`` in float64 arithmetic; never over-prunes."""
    return math.floor(float(fraction) * d)


def magnitude_mask(
    w: WeightVector,
    fraction: float,
    method: str = "lowest",
    rng: RngStream | None = None,
) -> PruneMask:
    """Zero ``floor(fraction * d)`` entries chosen by magnitude or at random.

    Ties in magnitude are broken by ascending index for both ``lowest`` and
    ``highest``.
    """
    if not 0.0 <= fraction <= 1.0:
        raise InvalidParameter(f"fraction must lie in [0, 1], got {fraction}")
    if method not in METHODS:
        raise InvalidParameter(f"unknown pruning method {method!r}")
    if method == "random" and rng is None:
        raise InvalidParameter("random pruning needs an rng")
    values = w.values if isinstance(w, WeightVector) else np.asarray(w, dtype=np.float64).reshape(-1)
    d = values.size
    k = pruned_count(fraction, d)
    mags = np.abs(values)
    if method == "lowest":
        chosen = np.lexsort((np.arange(d), mags))[:k]
    elif method == "highest":
        chosen = np.lexsort((np.arange(d), -mags))[:k]
    else:
        chosen = rng.permutation(d)[:k]
    bits = np.ones(d, dtype=np.uint8)
    bits[chosen] = 0
    seed = rng.seed if method == "random" else None
    return PruneMask(bits, float(fraction), method, seed)


def apply_mask(w: WeightVector, mask: PruneMask) -> WeightVector:
    if len(w) != len(mask):
        raise DimensionMismatch(f"weights have {len(w)} entries, mask has {len(mask)}")
    origin = f"{w.origin}|{mask.method}@{mask.fraction:g}"
    return WeightVector(np.where(mask.bits == 1, w.values, 0.0), origin)
