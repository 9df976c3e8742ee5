"""Fast online adaptation: walk the ordered candidate path to the constraint boundary.

The path runs from the largest (quality-first) candidate to the smallest
(compression-first). The walk starts at the middle. For a quality budget it
steps toward smaller candidates while the budget holds and toward larger
ones until it holds; for a byte or ratio budget the directions swap. Every
step copies the input, prunes, quantizes, dequantizes and renders the
evaluation views against baseline renders made once up front.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

from .adp import Candidate, apply_pruning, candidate_frontier, default_grid
from .importance import ImportanceScores, compute_scores
from .metrics import DEFAULT_REFERENCE_PSNR, QualityReport, compare_to_renders, expected_psnr_drop
from .model import GaussianModel, model_byte_size
from .mpq import QuantizedModel, apply_quantization, assign_bitwidths, default_plan, probe_channel_sensitivity
from .plans import QuantizationPlan
from .ply_io import encode_fgc, estimate_compressed_size
from .renderer import render_views

log = logging.getLogger(__name__)

EVAL_VIEWS = 32


@dataclass(frozen=True)
class Constraint:
    kind: str
    value: float

    KINDS = ("psnr_drop", "bytes", "ratio")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if not self.value > 0:
            raise ValueError("constraint value must be positive")

    @classmethod
    def max_psnr_drop(cls, db: float) -> Constraint:
        return cls("psnr_drop", float(db))

    @classmethod
    def max_bytes(cls, n: int) -> Constraint:
        return cls("bytes", float(n))

    @classmethod
    def min_ratio(cls, r: float) -> Constraint:
        return cls("ratio", float(r))

    @property
    def is_quality(self) -> bool:
        return self.kind == "psnr_drop"

    def byte_budget(self, original_bytes: int | None) -> float:
        if self.kind == "bytes":
            return self.value
        if original_bytes is None:
            raise ValueError("a ratio target needs the original size")
        return original_bytes / self.value

    def satisfied(self, result, original_bytes=None) -> bool:
        if self.is_quality:
            return result.psnr_drop <= self.value
        return result.est_bytes <= self.byte_budget(original_bytes)


@dataclass
class EvalResult:
    psnr_drop: float
    est_bytes: int
    psnr: float = float("nan")
    ssim: float = float("nan")
    quality: QualityReport | None = field(default=None, repr=False)
    quantized: QuantizedModel | None = field(default=None, repr=False)


@dataclass
class Step:
    index: int
    plan: dict
    psnr_drop: float
    est_bytes: int
    wall_time: float
    satisfied: bool
    psnr: float = float("nan")
    ssim: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "plan": self.plan,
            "psnr_drop_db": self.psnr_drop,
            "psnr_db": self.psnr,
            "ssim": self.ssim,
            "est_bytes": self.est_bytes,
            "wall_time_s": self.wall_time,
            "satisfied": self.satisfied,
        }


@dataclass
class SearchTrace:
    steps: list = field(default_factory=list)
    chosen: int | None = None
    feasible: bool = False
    path_length: int = 0

    @property
    def evaluations(self) -> int:
        return len(self.steps)

    def to_jsonl(self) -> str:
        lines = [json.dumps({"step": k, **s.to_dict()}) for k, s in enumerate(self.steps)]
        lines.append(json.dumps({"final": True, "chosen": self.chosen, "feasible": self.feasible,
                                 "evaluations": self.evaluations, "path_length": self.path_length}))
        return "\n".join(lines) + "\n"


def _describe(candidate) -> dict:
    if hasattr(candidate, "to_dict"):
        return candidate.to_dict()
    return {"candidate": repr(candidate)}


def search(path, constraint: Constraint, evaluate, original_bytes=None):
    """Directional walk from the path midpoint.

    ``evaluate(candidate)`` returns an object with ``psnr_drop`` and
    ``est_bytes``. Returns ``(chosen_index, results, trace)``; ``results`` maps
    evaluated indices to their results. When no candidate satisfies the
    constraint the trace is marked infeasible and the quality-most (quality
    budget) or smallest (size budget) candidate is chosen.
    """
    n = len(path)
    if n == 0:
        raise ValueError("empty candidate path")
    trace = SearchTrace(path_length=n)
    results = {}

    def probe(i):
        t0 = time.perf_counter()
        res = evaluate(path[i])
        dt = max(time.perf_counter() - t0, 1e-9)
        ok = constraint.satisfied(res, original_bytes)
        results[i] = res
        trace.steps.append(Step(i, _describe(path[i]), float(res.psnr_drop), int(res.est_bytes), dt, ok,
                                float(getattr(res, "psnr", float("nan"))), float(getattr(res, "ssim", float("nan")))))
        return ok

    # A satisfied quality budget walks toward smaller candidates (+1) and a
    # satisfied size budget toward larger ones (-1); a failing midpoint walks
    # the other way until the first candidate that satisfies.
    i = (n - 1) // 2
    ok = probe(i)
    grow_on_ok = not constraint.is_quality
    step = -1 if grow_on_ok == ok else 1
    chosen = i if ok else None
    if ok:
        while 0 <= i + step < n:
            i += step
            if not probe(i):
                break
            chosen = i
    else:
        while 0 <= i + step < n:
            i += step
            if probe(i):
                chosen = i
                break

    trace.feasible = chosen is not None
    if chosen is None:
        chosen = 0 if constraint.is_quality else n - 1
        if chosen not in results:
            probe(chosen)
    trace.chosen = chosen
    return chosen, results, trace


class Adapter:
    """Evaluates candidates for one input model against fixed baseline renders."""

    def __init__(self, model: GaussianModel, scores: ImportanceScores, cameras,
                 reference_psnr: float = DEFAULT_REFERENCE_PSNR, baseline=None):
        if not cameras:
            raise ValueError("need at least one evaluation camera")
        self.model = model
        self.scores = scores
        self.cameras = list(cameras)
        self.reference_psnr = reference_psnr
        self.baseline = baseline if baseline is not None else render_views(model, self.cameras)

    def quantize(self, candidate: Candidate):
        pruned = apply_pruning(self.model, self.scores, candidate.pruning)
        return apply_quantization(pruned, candidate.quantization, candidate.pruning.alpha, candidate.pruning.beta)

    def evaluate_model(self, model: GaussianModel, est_bytes: int, quantized=None) -> EvalResult:
        q = compare_to_renders(self.baseline, model, self.cameras)
        drop = expected_psnr_drop(q.mse_views, self.reference_psnr)
        return EvalResult(drop, int(est_bytes), q.psnr, q.ssim, q, quantized)

    def evaluate(self, candidate: Candidate) -> EvalResult:
        quantized, deq = self.quantize(candidate)
        size = estimate_compressed_size(quantized.n_full, quantized.n_shpruned, candidate.quantization)
        return self.evaluate_model(deq, size, quantized)


def evaluate_candidate(model, scores, candidate, baseline, cameras, reference_psnr=DEFAULT_REFERENCE_PSNR):
    return Adapter(model, scores, cameras, reference_psnr, baseline).evaluate(candidate)


@dataclass
class Options:
    grid: list | None = None
    plan: QuantizationPlan | None = None
    probe_sensitivity: bool = False
    threshold_db: float = 0.25
    joint: bool = False
    reference_psnr: float = DEFAULT_REFERENCE_PSNR
    train_cameras: list | None = None
    eval_views: int = EVAL_VIEWS
    volume_percentile: float = 90.0
    volume_exponent: float = 0.1


@dataclass
class CompressResult:
    blob: bytes
    candidate: Candidate
    result: EvalResult
    trace: SearchTrace
    feasible: bool
    input_bytes: int
    timings: dict
    path: list
    scores: ImportanceScores = field(repr=False, default=None)
    sensitivity: dict | None = None

    @property
    def output_bytes(self) -> int:
        return len(self.blob)

    def report(self) -> dict:
        from .metrics import compression_ratio, reduction_pct

        return {
            "psnr_drop_db": self.result.psnr_drop,
            "psnr_db": self.result.psnr,
            "ssim": self.result.ssim,
            "lpips": None,
            "input_bytes": self.input_bytes,
            "output_bytes": self.output_bytes,
            "ratio": compression_ratio(self.input_bytes, self.output_bytes),
            "reduction_pct": reduction_pct(self.input_bytes, self.output_bytes),
            "plan": self.candidate.to_dict(),
            "evaluations": self.trace.evaluations,
            "time_breakdown": self.timings,
            "feasible": self.feasible,
        }


def joint_path(path: list[Candidate]) -> list[Candidate]:
    """Extend the path with uniform INT8 (front) and uniform INT4 (back) variants."""
    if not path:
        return path
    first, last = path[0], path[-1]
    g = first.quantization.group_count
    hi = QuantizationPlan.uniform(8, g)
    lo = QuantizationPlan.uniform(4, g)
    front = Candidate(first.pruning, hi, first.row_fraction, first.sh_fraction,
                      estimate_compressed_size(first.counts[0], first.counts[1], hi), first.retained, first.counts)
    back = Candidate(last.pruning, lo, last.row_fraction, last.sh_fraction,
                     estimate_compressed_size(last.counts[0], last.counts[1], lo), last.retained, last.counts)
    return [front] + path + [back]


def compress(model: GaussianModel, cameras, constraint: Constraint, options: Options | None = None) -> CompressResult:
    """Score, search and encode. Timings use the phase names load/scoring/adaptation/storage."""
    opts = options or Options()
    if not cameras:
        raise ValueError("need at least one camera")
    timings = {"load": 0.0}

    t0 = time.perf_counter()
    train = opts.train_cameras
    if not train:
        log.warning("no training cameras given; importance uses the evaluation cameras")
        train = cameras
    scores = compute_scores(model, train, opts.volume_percentile, opts.volume_exponent)
    timings["scoring"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    eval_cams = list(cameras)[: opts.eval_views]
    adapter = Adapter(model, scores, eval_cams, opts.reference_psnr)
    sensitivity = None
    qplan = opts.plan or default_plan()
    if opts.probe_sensitivity:
        sensitivity = probe_channel_sensitivity(model, eval_cams, adapter.baseline, qplan.group_count)
        qplan = assign_bitwidths(sensitivity, opts.threshold_db, qplan.group_count)
    path = candidate_frontier(opts.grid or default_grid(), model, scores, qplan)
    if opts.joint:
        path = joint_path(path)
    input_bytes = model_byte_size(model)
    chosen, results, trace = search(path, constraint, adapter.evaluate, input_bytes)
    timings["adaptation"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    res = results[chosen]
    blob = encode_fgc(res.quantized)
    timings["storage"] = time.perf_counter() - t0
    return CompressResult(blob, path[chosen], res, trace, trace.feasible, input_bytes, timings, path, scores, sensitivity)

