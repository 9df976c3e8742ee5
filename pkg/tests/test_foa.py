import json
import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flexgs.adp import Candidate
from flexgs.foa import Adapter, Constraint, Options, compress, evaluate_candidate, joint_path, search
from flexgs.importance import compute_scores
from flexgs.metrics import expected_psnr_drop, psnr
from flexgs.model import GaussianModel
from flexgs.mpq import default_plan
from flexgs.plans import PruningPlan, QuantizationPlan
from flexgs.ply_io import decode_fgc
from flexgs.renderer import render_views


@dataclass
class Scripted:
    psnr_drop: float
    est_bytes: int


class Stub:
    """Evaluator that replays fixed results and counts calls."""

    def __init__(self, drops, sizes=None):
        self.drops = list(drops)
        self.sizes = list(sizes) if sizes is not None else list(range(len(drops) * 100, 0, -100))
        self.calls = []

    def __call__(self, i):
        self.calls.append(i)
        return Scripted(self.drops[i], self.sizes[i])


def _run(drops, constraint, sizes=None, original=None):
    stub = Stub(drops, sizes)
    chosen, results, trace = search(list(range(len(drops))), constraint, stub, original)
    return chosen, trace, stub


def test_single_candidate():
    chosen, trace, stub = _run([0.1], Constraint.max_psnr_drop(1.0))
    assert chosen == 0 and trace.feasible and len(stub.calls) == 1


def test_monotone_five():
    chosen, trace, stub = _run([0.2, 0.5, 0.9, 1.4, 2.0], Constraint.max_psnr_drop(1.0))
    assert chosen == 2 and trace.feasible
    assert len(stub.calls) <= 4


def test_all_violate():
    chosen, trace, stub = _run([0.2, 0.5, 0.9, 1.4, 2.0], Constraint.max_psnr_drop(0.001))
    assert not trace.feasible and chosen == 0
    assert 0 in [s.index for s in trace.steps]
    assert trace.chosen == 0


def test_budget_exactly_met_counts_as_satisfied():
    chosen, _, _ = _run([0.2, 0.5, 1.0, 1.4], Constraint.max_psnr_drop(1.0))
    assert chosen == 2


def test_empty_path():
    with pytest.raises(ValueError):
        search([], Constraint.max_psnr_drop(1.0), Stub([]))


def test_constraint_validation():
    with pytest.raises(ValueError):
        Constraint.max_psnr_drop(0.0)
    with pytest.raises(ValueError):
        Constraint("speed", 1.0)


monotone_drops = st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=40).map(sorted)


@given(monotone_drops, st.floats(0.01, 10))
def test_quality_search_finds_boundary(drops, budget):
    chosen, trace, stub = _run(drops, Constraint.max_psnr_drop(budget))
    ok = [i for i, d in enumerate(drops) if d <= budget]
    if ok:
        assert trace.feasible and chosen == max(ok)
    else:
        assert not trace.feasible and chosen == 0
    n = len(drops)
    assert len(stub.calls) <= math.ceil(n / 2) + 1
    assert len(stub.calls) == len(set(stub.calls)) == trace.evaluations <= n
    assert [s.index for s in trace.steps] == stub.calls
    assert all(s.wall_time > 0 for s in trace.steps)


@given(st.lists(st.integers(1, 10**6), min_size=1, max_size=40, unique=True), st.integers(1, 10**6))
def test_size_search_finds_best_quality_within_budget(sizes, budget):
    sizes = sorted(sizes, reverse=True)
    drops = np.linspace(0, 5, len(sizes)).tolist()
    chosen, trace, stub = _run(drops, Constraint.max_bytes(budget), sizes)
    ok = [i for i, s in enumerate(sizes) if s <= budget]
    if ok:
        assert trace.feasible and chosen == min(ok)
    else:
        assert not trace.feasible and chosen == len(sizes) - 1
    assert len(stub.calls) <= math.ceil(len(sizes) / 2) + 1


def test_ratio_constraint():
    sizes = [1000, 500, 250, 125]
    chosen, trace, _ = _run([0, 1, 2, 3], Constraint.min_ratio(4.0), sizes, original=1000)
    assert chosen == 2 and trace.feasible


def test_ratio_needs_original_size():
    with pytest.raises(ValueError):
        _run([0, 1], Constraint.min_ratio(2.0), [10, 5])


def test_trace_jsonl():
    _, trace, _ = _run([0.2, 0.5, 0.9, 1.4, 2.0], Constraint.max_psnr_drop(1.0))
    lines = [json.loads(x) for x in trace.to_jsonl().splitlines()]
    assert lines[-1]["final"] and lines[-1]["chosen"] == 2
    assert all({"index", "plan", "psnr_drop_db", "est_bytes", "wall_time_s"} <= set(x) for x in lines[:-1])


# --- real pipeline ------------------------------------------------------------

def _candidate(alpha, beta, plan, n):
    p = PruningPlan(alpha, beta)
    return Candidate(p, plan, beta, 0.0, 0, 0.0, p.counts(n))


def test_identity_candidate_constant_model(small_scene):
    _, cams = small_scene
    row = np.zeros(59)
    row[3:6] = [0.4, -0.2, 0.1]
    row[51] = 0.5
    row[52:55] = np.log(0.3)
    row[55] = 1.0
    m = GaussianModel(np.tile(row, (50, 1)))
    scores = compute_scores(m, cams[:2])
    base = render_views(m, cams[:2])
    r = evaluate_candidate(m, scores, _candidate(1.0, 0.0, QuantizationPlan.uniform(8), 50), base, cams[:2])
    assert r.psnr_drop == 0.0


def test_total_prune_drop(small_scene):
    m, cams = small_scene
    scores = compute_scores(m, cams[:2])
    base = render_views(m, cams[:2])
    r = evaluate_candidate(m, scores, _candidate(0.0, 1.0, default_plan(), len(m)), base, cams[:2])
    black = np.mean([psnr(np.zeros_like(b), b) for b in base])
    assert r.psnr == pytest.approx(black, abs=1e-12)
    assert math.isfinite(r.psnr_drop) and r.psnr_drop > 10


def test_evaluation_never_mutates(small_scene):
    m, cams = small_scene
    before = m.checksum()
    scores = compute_scores(m, cams[:2])
    ad = Adapter(m, scores, cams[:2])
    for a, b in [(1.0, 0.0), (0.3, 0.2), (0.0, 0.5)]:
        ad.evaluate(_candidate(a, b, default_plan(), len(m)))
        assert m.checksum() == before


@pytest.fixture(scope="module")
def compressed(small_scene):
    m, cams = small_scene
    before = m.checksum()
    res = compress(m, cams, Constraint.max_psnr_drop(1.0), Options(train_cameras=cams))
    assert m.checksum() == before
    return m, cams, res


def test_compress_posthoc(compressed):
    m, cams, res = compressed
    _, q = decode_fgc(res.blob)
    base = render_views(m, cams[:32])
    from flexgs.metrics import compare_to_renders

    rep = compare_to_renders(base, q.dequantize(), cams[:32])
    assert abs(expected_psnr_drop(rep.mse_views) - res.result.psnr_drop) <= 1e-6
    assert res.feasible and res.result.psnr_drop < 1.0
    assert len(res.blob) == res.candidate.est_bytes == res.result.est_bytes


def test_compress_report(compressed):
    _, _, res = compressed
    rep = res.report()
    assert set(rep["time_breakdown"]) == {"load", "scoring", "adaptation", "storage"}
    assert rep["ratio"] > 1 and rep["lpips"] is None and rep["feasible"] is True
    assert rep["output_bytes"] == len(res.blob)
    assert res.trace.evaluations <= len(res.path)


def test_byte_budget_at_original_size(small_scene):
    m, cams = small_scene
    from flexgs.model import model_byte_size

    res = compress(m, cams[:2], Constraint.max_bytes(model_byte_size(m)), Options(train_cameras=cams))
    assert res.feasible and res.trace.chosen == 0
    assert res.report()["ratio"] >= 1


def test_infeasible_quality_returns_best_effort(small_scene):
    m, cams = small_scene
    res = compress(m, cams[:2], Constraint.max_psnr_drop(1e-9), Options(train_cameras=cams))
    assert not res.feasible and res.trace.chosen == 0


def test_joint_path_ends(small_scene):
    m, cams = small_scene
    from flexgs.adp import candidate_frontier, default_grid

    scores = compute_scores(m, cams[:2])
    path = candidate_frontier(default_grid(), m, scores, default_plan())
    jp = joint_path(path)
    assert len(jp) == len(path) + 2
    assert jp[0].quantization.profile() == "P8S8R8O8B8A8"
    assert jp[-1].quantization.profile() == "P4S4R4O4B4A4"
    sizes = [c.est_bytes for c in jp]
    assert sizes == sorted(sizes, reverse=True)
