"""Training-target construction: chronological scaling followed by a global rank map to [-1, 1]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TooFewTargetsError, TooFewValuesError
from .metrics import average_ranks


@dataclass(frozen=True)
class TransformSpec:
    """Raw target y at period t is scaled to y * t**power before global ranking."""

    power: float = 2.0

    def __post_init__(self):
        if not np.isfinite(self.power) or self.power < 0:
            raise ValueError(f"power must be finite and >= 0, got {self.power}")


def rank_normalize(values) -> np.ndarray:
    """Map values to [-1, 1] by average rank: r -> 2(r-1)/(n-1) - 1.

    Strictly increasing inputs come out as an arithmetic progression from -1
    to 1; ties share the midpoint of their rank span.
    """
    a = np.asarray(values, dtype=np.float64).ravel()
    if a.size < 2:
        raise TooFewValuesError("rank_normalize needs at least 2 values")
    r = average_ranks(a)
    return 2.0 * (r - 1.0) / (a.size - 1.0) - 1.0


def chrono_scale_rank(ordinals, raw_targets, spec: TransformSpec) -> np.ndarray:
    """Scale each target by its period ordinal raised to spec.power, then rank-normalize jointly.

    Scaling pushes recent-period values toward the ranking extremes, so they
    carry a stronger training signal than old periods.
    """
    t = np.asarray(ordinals, dtype=np.float64).ravel()
    y = np.asarray(raw_targets, dtype=np.float64).ravel()
    if t.size != y.size:
        raise TooFewTargetsError(f"ordinals and targets differ in length: {t.size} vs {y.size}")
    if y.size < 2:
        raise TooFewTargetsError("chrono_scale_rank needs at least 2 entries")
    if np.any(t < 1):
        raise ValueError("period ordinals must be >= 1")
    scaled = y * t**spec.power
    return rank_normalize(scaled)
