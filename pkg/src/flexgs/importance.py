"""Global significance score: ray hits x opacity x normalized volume.

A hit is one blended contribution of a Gaussian to one pixel (the rasterizer's
own contribution rule), summed over every pixel of every view. The volume
term is ``(min(v, cap) / cap) ** 0.1`` with ``v`` the product of the three
activated scales and ``cap`` their 90th percentile.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .model import GaussianModel
from .renderer import accumulate_stats

log = logging.getLogger(__name__)

VOLUME_PERCENTILE = 90.0
VOLUME_EXPONENT = 0.1


@dataclass
class ImportanceScores:
    scores: np.ndarray
    rank_descending: np.ndarray
    percentile_volume_cap: float
    hit_counts: np.ndarray = None

    def __len__(self):
        return len(self.scores)

    @classmethod
    def from_scores(cls, scores, cap: float = 1.0, hit_counts=None) -> ImportanceScores:
        scores = np.asarray(scores, dtype=np.float64)
        return cls(scores, rank_descending(scores), cap, hit_counts)

    def save_f32(self, path) -> None:
        self.scores.astype("<f4").tofile(path)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["row", "score", "hits", "rank"])
            ranks = np.empty(len(self), dtype=np.int64)
            ranks[self.rank_descending] = np.arange(len(self))
            hits = self.hit_counts if self.hit_counts is not None else np.zeros(len(self), dtype=np.int64)
            for i in range(len(self)):
                w.writerow([i, repr(float(self.scores[i])), int(hits[i]), int(ranks[i])])


def rank_descending(scores) -> np.ndarray:
    """Row indices by descending score; ties keep ascending row index."""
    scores = np.asarray(scores)
    return np.lexsort((np.arange(len(scores)), -scores))


def gaussian_volume(scales, cap: float, exponent: float = VOLUME_EXPONENT):
    """Normalized volume term for activated ``scales`` (..., 3)."""
    scales = np.asarray(scales, dtype=np.float64)
    if np.any(~(scales > 0)):
        raise ValueError("scales must be positive")
    if not cap > 0:
        raise ValueError("volume cap must be positive")
    v = np.prod(scales, axis=-1)
    return (np.minimum(v, cap) / cap) ** exponent


def volume_cap(model: GaussianModel, percentile: float = VOLUME_PERCENTILE) -> float:
    if len(model) == 0:
        return 1.0
    cap = float(np.percentile(np.prod(model.scales, axis=1), percentile))
    return cap if cap > 0 else float(np.finfo(np.float64).tiny)


def compute_scores(model: GaussianModel, cameras, percentile=VOLUME_PERCENTILE, exponent=VOLUME_EXPONENT):
    if not cameras:
        raise ValueError("importance needs at least one camera")
    stats = accumulate_stats(model, cameras)
    cap = volume_cap(model, percentile)
    if len(model) == 0:
        return ImportanceScores(np.zeros(0), np.zeros(0, dtype=np.int64), cap, stats.hit_counts)
    gamma = gaussian_volume(model.scales, cap, exponent)
    scores = stats.hit_counts.astype(np.float64) * model.opacities * gamma
    return ImportanceScores(scores, rank_descending(scores), cap, stats.hit_counts)
