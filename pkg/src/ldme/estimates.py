"""Candidate lists produced by the estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def safe_ceil(x: float) -> int:
    """``ceil`` that ignores float noise such as ``4 / 0.1 = 40.000000000000004``."""
    return math.ceil(x - 1e-9 * max(1.0, abs(x)))


@dataclass(frozen=True)
class Decomposition:
    """``mean = fixed + V V^T x_index`` with ``fixed`` orthogonal to ``V``.

    ``index`` refers to the point set the candidate was sampled from.
    """

    fixed: np.ndarray
    basis: np.ndarray
    index: int


@dataclass(frozen=True)
class Candidate:
    mean: np.ndarray
    decomposition: Decomposition | None
    cluster_id: int
    algorithm: str


@dataclass
class EstimateList:
    candidates: list[Candidate] = field(default_factory=list)
    alpha_effective: dict[int, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.candidates)

    def means(self) -> np.ndarray:
        if not self.candidates:
            return np.zeros((0, 0))
        return np.vstack([c.mean for c in self.candidates])

    def extend(self, other: "EstimateList") -> None:
        self.candidates.extend(other.candidates)
        self.alpha_effective.update(other.alpha_effective)
