"""Attribute-discriminative pruning and the candidate path it exposes.

Rows are ranked by importance. The top ``alpha`` fraction keeps every
attribute, the bottom ``beta`` fraction is dropped, and the band in between
keeps geometry and base color but loses its SH_adv block (mask bit only; the
floats stay in memory until the FGC writer drops them).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .importance import ImportanceScores
from .model import SH_ADV, SH_BASE, GaussianModel
from .plans import PruningPlan, QuantizationPlan
from .ply_io import estimate_compressed_size, ply_header_size

DEFAULT_ROW_FRACTIONS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
DEFAULT_SH_FRACTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)


def apply_pruning(model: GaussianModel, scores: ImportanceScores, plan: PruningPlan) -> GaussianModel:
    """Return a pruned copy, rows ordered by descending importance."""
    n = len(model)
    if len(scores) != n:
        raise ValueError(f"scores cover {len(scores)} rows but the model has {n}")
    n_full, n_masked, _ = plan.counts(n)
    out = model.take(scores.rank_descending[: n_full + n_masked])
    out.sh_mask[n_full:] = True
    return out


def row_prune_only(model, scores, ratio: float) -> GaussianModel:
    return apply_pruning(model, scores, PruningPlan(alpha=1.0 - ratio, beta=ratio))


def sh_prune_only(model, scores, ratio: float) -> GaussianModel:
    return apply_pruning(model, scores, PruningPlan(alpha=1.0 - ratio, beta=0.0))


def view_dependent_share(model: GaussianModel) -> np.ndarray:
    """Per-row fraction of mean-square color carried by SH_adv.

    Over the sphere the SH_adv radiance has mean square ``sum(c**2) / 4pi``
    (orthonormal basis); the base color is ``0.5 + C0 * dc``.
    """
    base = 0.5 + 0.28209479177387814 * model.data[:, SH_BASE].astype(np.float64)
    adv = model.data[:, SH_ADV].astype(np.float64)
    adv_ms = np.sum(adv**2, axis=1) / (4 * np.pi)
    total = np.sum(base**2, axis=1) + adv_ms
    with np.errstate(divide="ignore", invalid="ignore"):
        share = np.where(total > 0, adv_ms / total, 0.0)
    return share


@dataclass
class Candidate:
    pruning: PruningPlan
    quantization: QuantizationPlan | None
    row_fraction: float
    sh_fraction: float
    est_bytes: int = 0
    retained: float = 0.0
    counts: tuple = field(default=(0, 0, 0))

    def to_dict(self) -> dict:
        return {
            "alpha": self.pruning.alpha,
            "beta": self.pruning.beta,
            "row_fraction": self.row_fraction,
            "sh_fraction": self.sh_fraction,
            "bitwidth_profile": self.quantization.profile() if self.quantization else "fp32",
            "est_bytes": self.est_bytes,
        }


def load_grid(path) -> list[tuple[float, float]]:
    """Grid JSON: ``{"row_fractions": [...], "sh_fractions": [...]}`` or ``{"points": [[row, sh], ...]}``."""
    with open(path) as f:
        doc = json.load(f)
    return parse_grid(doc)


def parse_grid(doc) -> list[tuple[float, float]]:
    if "points" in doc:
        pts = [(float(r), float(s)) for r, s in doc["points"]]
    else:
        pts = [(float(r), float(s)) for r in doc["row_fractions"] for s in doc["sh_fractions"]]
    if not pts:
        raise ValueError("grid is empty")
    for r, s in pts:
        if not (0 <= r <= 1 and 0 <= s <= 1):
            raise ValueError(f"grid point ({r}, {s}) outside [0, 1]")
    return pts


def default_grid() -> list[tuple[float, float]]:
    return [(r, s) for r in DEFAULT_ROW_FRACTIONS for s in DEFAULT_SH_FRACTIONS]


def raw_size(n_full: int, n_masked: int) -> int:
    """Uncompressed float32 size of a pruned model (no quantization)."""
    return ply_header_size(n_full + n_masked) + 4 * (59 * n_full + 14 * n_masked)


def build_candidates(grid, model, scores, qplan: QuantizationPlan | None) -> list[Candidate]:
    """Evaluate size and retained-importance for every grid point (no rendering)."""
    n = len(model)
    ranked = scores.scores[scores.rank_descending]
    share = view_dependent_share(model)[scores.rank_descending]
    full_cum = np.concatenate([[0.0], np.cumsum(ranked)])
    masked_cum = np.concatenate([[0.0], np.cumsum(ranked * (1.0 - share))])
    out = []
    for row, sh in grid:
        plan = PruningPlan.from_grid(row, sh)
        nf, nm, nr = plan.counts(n)
        size = estimate_compressed_size(nf, nm, qplan) if qplan is not None else raw_size(nf, nm)
        retained = full_cum[nf] + (masked_cum[nf + nm] - masked_cum[nf])
        out.append(Candidate(plan, qplan, row, sh, int(size), float(retained), (nf, nm, nr)))
    return out


def order_path(cands: list[Candidate]) -> list[Candidate]:
    """Largest size first; equal sizes put the larger alpha first."""
    return sorted(cands, key=lambda c: (-c.est_bytes, -c.pruning.alpha))


def remove_dominated(cands: list[Candidate]) -> list[Candidate]:
    keep = []
    for c in cands:
        dominated = any(
            o is not c
            and o.est_bytes <= c.est_bytes
            and o.retained >= c.retained
            and (o.est_bytes < c.est_bytes or o.retained > c.retained)
            for o in cands
        )
        if not dominated:
            keep.append(c)
    # identical (size, retained) points: keep the first in path order
    seen, unique = set(), []
    for c in order_path(keep):
        key = (c.est_bytes, c.retained, c.counts)
        if key not in seen:
            seen.add(key)
            unique.append(c)
    return unique


def candidate_frontier(grid, model, scores, qplan=None, prune_dominated=True) -> list[Candidate]:
    """Ordered candidate path, quality-first end to compression-first end."""
    cands = build_candidates(grid, model, scores, qplan)
    if prune_dominated:
        cands = remove_dominated(cands)
    return order_path(cands)
