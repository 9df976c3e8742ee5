"""INT4/INT8 channel-wise mixed-precision quantization with sub-channel groups.

Each channel is split into contiguous row groups of ``ceil(n / group_count)``
rows; every group gets its own ``[min, max]`` range and values are mapped to
``round((x - min) / (max - min) * (2**b - 1))`` with ties rounded away from
zero. Ranges are kept as float32 so that what is evaluated in memory is
exactly what the FGC container decodes to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    NON_SH_ADV,
    NUM_CHANNELS,
    SCHEMA,
    ChannelGroup,
    GaussianModel,
)
from .plans import ALLOWED_BITS, DEFAULT_GROUP_BITS, DEFAULT_GROUP_COUNT, QuantizationPlan

DEFAULT_THRESHOLD_DB = 0.25


def group_layout(n: int, group_count: int) -> tuple[int, int]:
    """(rows per group, number of non-empty groups) for ``n`` rows."""
    if n == 0:
        return 0, 0
    size = math.ceil(n / group_count)
    return size, math.ceil(n / size)


def _round_half_away(t):
    return np.copysign(np.floor(np.abs(t) + 0.5), t)


def quantize_channel(values, bitwidth: int, group_count: int = DEFAULT_GROUP_COUNT):
    """Quantize one channel.

    Returns ``(ranges, codes)``: a ``(groups, 2)`` float32 array of per-group
    ``(min, max)`` and one unsigned code per value.
    """
    if bitwidth not in ALLOWED_BITS:
        raise ValueError(f"unsupported bit-width {bitwidth}")
    # codes are computed in float64 against the float32 ranges the decoder sees
    values = np.asarray(values, dtype=np.float64).ravel()
    if not np.isfinite(values).all():
        raise ValueError("cannot quantize non-finite values")
    n = len(values)
    size, groups = group_layout(n, group_count)
    code_dtype = np.uint8 if bitwidth <= 8 else np.uint16
    if n == 0:
        return np.zeros((0, 2), dtype=np.float32), np.zeros(0, dtype=code_dtype)

    starts = np.arange(groups) * size
    lo = np.minimum.reduceat(values, starts)
    hi = np.maximum.reduceat(values, starts)
    ranges = np.stack([lo, hi], axis=1).astype(np.float32)
    lo, hi = ranges[:, 0], ranges[:, 1]

    levels = (1 << bitwidth) - 1
    gidx = np.arange(n) // size
    lo64 = lo.astype(np.float64)[gidx]
    span = hi.astype(np.float64)[gidx] - lo64
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(span > 0, (values - lo64) / span * levels, 0.0)
    codes = np.clip(_round_half_away(t), 0, levels).astype(code_dtype)
    return ranges, codes


def dequantize_channel(ranges, codes, bitwidth: int) -> np.ndarray:
    """Inverse of :func:`quantize_channel`; returns float64 values."""
    ranges = np.asarray(ranges, dtype=np.float32).reshape(-1, 2)
    codes = np.asarray(codes)
    levels = (1 << bitwidth) - 1
    n = len(codes)
    if n == 0:
        return np.zeros(0, dtype=np.float64)
    if codes.max() > levels:
        raise ValueError(f"code {int(codes.max())} out of range for {bitwidth} bits")
    size = math.ceil(n / len(ranges))
    if math.ceil(n / size) != len(ranges):
        raise ValueError(f"{len(ranges)} groups do not match {n} codes")
    gidx = np.arange(n) // size
    lo = ranges[gidx, 0].astype(np.float64)
    step = (ranges[gidx, 1].astype(np.float64) - lo) / levels
    return lo + codes.astype(np.float64) * step


@dataclass
class QuantizedSegment:
    """Codes for one row segment; ``channels`` lists the schema columns present."""

    channels: np.ndarray
    ranges: list
    codes: list

    @property
    def n_rows(self) -> int:
        return len(self.codes[0]) if self.codes else 0


@dataclass
class QuantizedModel:
    plan: QuantizationPlan
    full: QuantizedSegment
    shpruned: QuantizedSegment
    alpha: float = 1.0
    beta: float = 0.0

    @property
    def n_full(self) -> int:
        return self.full.n_rows

    @property
    def n_shpruned(self) -> int:
        return self.shpruned.n_rows

    def dequantize(self) -> GaussianModel:
        """Decode to a model: full rows first, then SH-pruned rows with the mask set."""
        nf, ns = self.n_full, self.n_shpruned
        data = np.zeros((nf + ns, NUM_CHANNELS), dtype=np.float32)
        bw = self.plan.bitwidths
        for seg, rows in ((self.full, slice(0, nf)), (self.shpruned, slice(nf, nf + ns))):
            for k, c in enumerate(seg.channels):
                data[rows, c] = dequantize_channel(seg.ranges[k], seg.codes[k], bw[c]).astype(np.float32)
        mask = np.zeros(nf + ns, dtype=bool)
        mask[nf:] = True
        return GaussianModel(data, mask)


def _quantize_segment(rows: np.ndarray, channels: np.ndarray, plan: QuantizationPlan) -> QuantizedSegment:
    ranges, codes = [], []
    for c in channels:
        r, q = quantize_channel(rows[:, c], plan.bitwidths[c], plan.group_count)
        ranges.append(r)
        codes.append(q)
    return QuantizedSegment(np.asarray(channels, dtype=np.intp), ranges, codes)


def quantize_model(model: GaussianModel, plan: QuantizationPlan, alpha=1.0, beta=0.0) -> QuantizedModel:
    full_rows = np.nonzero(~model.sh_mask)[0]
    pruned_rows = np.nonzero(model.sh_mask)[0]
    return QuantizedModel(
        plan,
        _quantize_segment(model.data[full_rows], np.arange(NUM_CHANNELS), plan),
        _quantize_segment(model.data[pruned_rows], NON_SH_ADV, plan),
        alpha,
        beta,
    )


def apply_quantization(model: GaussianModel, plan: QuantizationPlan, alpha=1.0, beta=0.0):
    """Quantize the full segment over all channels and the SH-pruned segment over 14.

    Returns ``(quantized, dequantized_model)``. Rows of the dequantized model
    are in segment order (unmasked rows first, order otherwise preserved);
    SH_adv of masked rows is zero.
    """
    q = quantize_model(model, plan, alpha, beta)
    return q, q.dequantize()


def reconstruction_error(values, bitwidth, group_count) -> float:
    """Total squared error of a quantize/dequantize round trip."""
    ranges, codes = quantize_channel(values, bitwidth, group_count)
    x = np.asarray(values, dtype=np.float32).astype(np.float64)
    return float(np.sum((dequantize_channel(ranges, codes, bitwidth) - x) ** 2))


# --- sensitivity probing ---------------------------------------------------

PROBE_GROUPS = (
    ChannelGroup.POSITION,
    ChannelGroup.SCALE,
    ChannelGroup.ROTATION,
    ChannelGroup.OPACITY,
    ChannelGroup.SH_BASE,
    ChannelGroup.SH_ADV,
)


def default_plan(group_count: int = DEFAULT_GROUP_COUNT) -> QuantizationPlan:
    return QuantizationPlan.from_groups(DEFAULT_GROUP_BITS, group_count)


def probe_channel_sensitivity(model, cameras, baseline=None, group_count=DEFAULT_GROUP_COUNT, per_channel=False):
    """INT4 PSNR gap per channel group (or per channel) against the all-INT8 model.

    Each probe quantizes one group to 4 bits with the rest at 8 bits, renders
    every camera and reports ``psnr(all INT8) - psnr(probe)`` in dB, both
    measured against ``baseline`` renders of the uncompressed model.
    """
    from .metrics import compare_to_renders
    from .renderer import render_views

    if baseline is None:
        baseline = render_views(model, cameras)

    def psnr_for(bitwidths):
        _, deq = apply_quantization(model, QuantizationPlan(tuple(bitwidths), group_count))
        return compare_to_renders(baseline, deq, cameras).psnr

    ref = psnr_for([8] * NUM_CHANNELS)
    gaps = {}
    if per_channel:
        for c, name in enumerate(SCHEMA.names):
            bw = [8] * NUM_CHANNELS
            bw[c] = 4
            gaps[name] = ref - psnr_for(bw)
    else:
        for group in PROBE_GROUPS:
            bw = np.full(NUM_CHANNELS, 8)
            bw[SCHEMA.indices(group)] = 4
            gaps[group.value] = ref - psnr_for(bw)
    return gaps


def assign_bitwidths(gaps: dict, threshold_db: float = DEFAULT_THRESHOLD_DB, group_count=DEFAULT_GROUP_COUNT):
    """Channels (or groups) whose INT4 gap is at most ``threshold_db`` get 4 bits."""
    bw = [8] * NUM_CHANNELS
    names = SCHEMA.names
    for key, gap in gaps.items():
        if key in names:
            idx = [names.index(key)]
        else:
            idx = SCHEMA.indices(ChannelGroup(key))
        for c in idx:
            bw[c] = 4 if gap <= threshold_db else 8
    return QuantizationPlan(tuple(bw), group_count, threshold_db)

