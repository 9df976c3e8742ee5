"""Tunable compression knobs and their JSON forms."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .model import NUM_CHANNELS, SCHEMA, ChannelGroup

DEFAULT_GROUP_COUNT = 1000
ALLOWED_BITS = (4, 8)

# Geometry at INT8, color at INT4.
DEFAULT_GROUP_BITS = {
    ChannelGroup.POSITION: 8,
    ChannelGroup.SCALE: 8,
    ChannelGroup.ROTATION: 8,
    ChannelGroup.OPACITY: 8,
    ChannelGroup.SH_BASE: 4,
    ChannelGroup.SH_ADV: 4,
}


def _count(fraction: float, n: int, rounding) -> int:
    # round first so 0.3 * 10 == 3.0000000000000004 does not ceil to 4
    return int(rounding(round(fraction * n, 9)))


@dataclass(frozen=True)
class PruningPlan:
    """``alpha``: top fraction kept whole; ``beta``: bottom fraction removed.

    The middle band keeps its rows but loses SH_adv.
    """

    alpha: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError(f"pruning fractions must lie in [0, 1]: alpha={self.alpha}, beta={self.beta}")
        if self.alpha + self.beta > 1.0 + 1e-6:
            raise ValueError(f"alpha + beta must not exceed 1 (got {self.alpha + self.beta})")

    @classmethod
    def from_grid(cls, row_fraction: float, sh_fraction: float) -> PruningPlan:
        """Grid point: remove ``row_fraction`` of rows, strip SH from ``sh_fraction`` of the rest."""
        beta = float(row_fraction)
        alpha = (1.0 - beta) * (1.0 - float(sh_fraction))
        return cls(alpha=min(max(alpha, 0.0), 1.0 - beta), beta=beta)

    @property
    def sh_fraction(self) -> float:
        kept = 1.0 - self.beta
        return 0.0 if kept <= 0 else 1.0 - self.alpha / kept

    def counts(self, n: int) -> tuple[int, int, int]:
        """(fully kept, SH-pruned, removed) row counts for ``n`` rows."""
        n_full = min(_count(self.alpha, n, math.ceil), n)
        n_removed = min(_count(self.beta, n, math.floor), n - n_full)
        return n_full, n - n_full - n_removed, n_removed

    def to_dict(self):
        return {"alpha": self.alpha, "beta": self.beta}

    @classmethod
    def from_dict(cls, d):
        return cls(alpha=float(d["alpha"]), beta=float(d["beta"]))


@dataclass(frozen=True)
class QuantizationPlan:
    bitwidths: tuple[int, ...] = field(default_factory=lambda: default_bitwidths())
    group_count: int = DEFAULT_GROUP_COUNT
    threshold_db: float | None = None

    def __post_init__(self):
        bw = tuple(int(b) for b in self.bitwidths)
        object.__setattr__(self, "bitwidths", bw)
        if len(bw) != NUM_CHANNELS:
            raise ValueError(f"need {NUM_CHANNELS} bit-widths, got {len(bw)}")
        if any(b not in ALLOWED_BITS for b in bw):
            raise ValueError(f"bit-widths must be 4 or 8, got {sorted(set(bw))}")
        if int(self.group_count) < 1:
            raise ValueError("group_count must be >= 1")
        object.__setattr__(self, "group_count", int(self.group_count))

    @classmethod
    def uniform(cls, bits: int, group_count: int = DEFAULT_GROUP_COUNT) -> QuantizationPlan:
        return cls((bits,) * NUM_CHANNELS, group_count)

    @classmethod
    def from_groups(cls, group_bits: dict, group_count: int = DEFAULT_GROUP_COUNT, threshold_db=None):
        bw = tuple(group_bits[SCHEMA.group_of(i)] for i in range(NUM_CHANNELS))
        return cls(bw, group_count, threshold_db)

    def profile(self) -> str:
        """Compact bit-width summary such as ``P8S8R8O8B4A4``."""
        tags = {
            ChannelGroup.POSITION: "P",
            ChannelGroup.SCALE: "S",
            ChannelGroup.ROTATION: "R",
            ChannelGroup.OPACITY: "O",
            ChannelGroup.SH_BASE: "B",
            ChannelGroup.SH_ADV: "A",
        }
        parts = []
        for group, tag in tags.items():
            bits = {self.bitwidths[i] for i in SCHEMA.indices(group)}
            parts.append(tag + ("/".join(str(b) for b in sorted(bits))))
        return "".join(parts)

    def to_dict(self):
        d = {"bitwidths": list(self.bitwidths), "group_count": self.group_count}
        if self.threshold_db is not None:
            d["threshold_db"] = self.threshold_db
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["bitwidths"]), int(d.get("group_count", DEFAULT_GROUP_COUNT)), d.get("threshold_db"))

    @classmethod
    def load(cls, path) -> QuantizationPlan:
        with open(path) as f:
            return cls.from_dict(json.load(f))


def default_bitwidths() -> tuple[int, ...]:
    return tuple(DEFAULT_GROUP_BITS[SCHEMA.group_of(i)] for i in range(NUM_CHANNELS))


@dataclass(frozen=True)
class CompressionPlan:
    pruning: PruningPlan = field(default_factory=PruningPlan)
    quantization: QuantizationPlan = field(default_factory=QuantizationPlan)

    def to_dict(self):
        return {"pruning": self.pruning.to_dict(), "quantization": self.quantization.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(PruningPlan.from_dict(d["pruning"]), QuantizationPlan.from_dict(d["quantization"]))
