"""Fine-grained magnitude pruning."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError


@dataclass
class PruneMask:
    keep: np.ndarray  # bool, same shape as the weight tensor
    theta: float

    def apply(self, w: np.ndarray) -> np.ndarray:
        return np.where(self.keep, w, 0.0)

    @property
    def kept(self) -> int:
        return int(self.keep.sum())

    @property
    def total(self) -> int:
        return int(self.keep.size)


def prune_threshold(w, theta: float) -> PruneMask:
    """Keep a weight iff its magnitude is strictly greater than ``theta``."""
    if theta < 0:
        raise ConfigError("threshold must be >= 0")
    return PruneMask(np.abs(np.asarray(w, dtype=np.float64)) > theta, float(theta))


def density(masks: PruneMask | Iterable[PruneMask]) -> float:
    if isinstance(masks, PruneMask):
        masks = [masks]
    kept = total = 0
    for m in masks:
        kept += m.kept
        total += m.total
    return kept / total if total else 0.0


def threshold_for_density(weights: np.ndarray | Sequence[np.ndarray], target: float) -> float:
    """Smallest-magnitude cut so that about ``target`` of all weights survive.

    Weights tied with the cut value are pruned, so ties err on the side of
    keeping fewer weights.
    """
    if not 0 < target <= 1:
        raise ConfigError("target density must be in (0, 1]")
    if isinstance(weights, np.ndarray):
        weights = [weights]
    mags = np.sort(np.concatenate([np.abs(np.ravel(w)) for w in weights]))
    n = mags.size
    if n == 0:
        raise ConfigError("empty weight set")
    keep = min(n, int(math.floor(target * n + 0.5)))
    if keep == n:
        return 0.0
    return float(mags[n - keep - 1])
