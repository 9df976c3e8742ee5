"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py``; the summary at the end lists
every criterion. Criterion 9 needs a pretrained Truck PLY at the path in
FLEXGS_TRUCK_PLY (optionally cameras in FLEXGS_TRUCK_CAMERAS) and is skipped
otherwise.
"""

import contextlib
import json
import math
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS, random_model
from oracles import naive_psnr, naive_ssim
from flexgs.adp import Candidate, build_candidates, default_grid
from flexgs.foa import Adapter, Constraint, compress, search
from flexgs.importance import compute_scores
from flexgs.metrics import compare_to_renders, expected_psnr_drop, psnr, ssim
from flexgs.model import GaussianModel
from flexgs.mpq import (
    apply_quantization,
    default_plan,
    dequantize_channel,
    group_layout,
    probe_channel_sensitivity,
    quantize_model,
    quantize_channel,
)
from flexgs.plans import PruningPlan, QuantizationPlan
from flexgs.ply_io import decode_fgc, encode_fgc, estimate_compressed_size
from flexgs.renderer import Camera, render, render_views
from flexgs.scenegen import SceneSpec, generate

SEEDS = (0, 1, 2)


@contextlib.contextmanager
def criterion(n, title, budget_s):
    t0 = time.perf_counter()
    try:
        yield
        dt = time.perf_counter() - t0
        assert dt < budget_s, f"took {dt:.1f} s, budget {budget_s} s"
    except pytest.skip.Exception as e:
        ACCEPTANCE_RESULTS[n] = f"criterion {n} SKIP  {title}: {e}"
        raise
    except BaseException as e:
        ACCEPTANCE_RESULTS[n] = f"criterion {n} FAIL  {title}: {type(e).__name__}: {str(e).splitlines()[0] if str(e) else ''}"
        print(ACCEPTANCE_RESULTS[n])
        raise
    ACCEPTANCE_RESULTS[n] = f"criterion {n} PASS  {title} ({time.perf_counter() - t0:.1f} s)"
    print(ACCEPTANCE_RESULTS[n])


def test_1_quantization_error_bound():
    with criterion(1, "quantization error within half a group step", 10):
        rng = np.random.default_rng(2024)
        violations = 0
        for _ in range(1000):
            n = int(np.exp(rng.uniform(0, np.log(1e5))))
            # blocks whose magnitudes differ by up to 200x within one channel
            blocks = rng.integers(1, 5)
            scales = np.exp(rng.uniform(0, np.log(200), blocks))
            x = np.concatenate([rng.normal(rng.normal(0, s), s, size=len(part))
                                for s, part in zip(scales, np.array_split(np.empty(n), blocks))]).astype(np.float32)
            bits = int(rng.choice([4, 8]))
            groups = int(rng.choice([1, 10, 1000]))
            ranges, codes = quantize_channel(x, bits, groups)
            deq = dequantize_channel(ranges, codes, bits)
            size, _ = group_layout(n, groups)
            r64 = ranges.astype(np.float64)
            half = np.repeat((r64[:, 1] - r64[:, 0]) / (2 * (2**bits - 1)), size)[:n]
            slack = np.repeat(np.abs(r64).max(axis=1), size)[:n] * 1e-12
            violations += int(np.sum(np.abs(deq - x) > half + slack))
        assert violations == 0, f"{violations} elements exceed half a step"


def test_2_grouped_quantization_benefit():
    with criterion(2, "1000 groups beat 1 group by >= 0.1 dB", 30):
        m, cams = generate(SceneSpec())
        base = render_views(m, cams)
        results = {}
        for g in (1000, 1):
            plan = QuantizationPlan(default_plan().bitwidths, g)
            _, deq = apply_quantization(m, plan)
            sq = float(np.sum((deq.data.astype(np.float64) - m.data) ** 2))
            results[g] = (compare_to_renders(base, deq, cams).psnr, sq)
        gain = results[1000][0] - results[1][0]
        assert gain >= 0.1, f"gain {gain:.3f} dB"
        assert results[1000][1] < results[1][1]


def test_3_channel_sensitivity_ordering():
    with criterion(3, "Position INT4 gap > SHAdv INT4 gap on 3 fixtures", 60):
        for seed in SEEDS:
            m, cams = generate(SceneSpec(seed=seed))
            gaps = probe_channel_sensitivity(m, cams)
            assert gaps["position"] > gaps["sh_adv"], (seed, gaps)


def test_4_adp_dominance():
    with criterion(4, "ADP plan dominates Row-P 0.5 on 3 fixtures", 120):
        qplan = default_plan()
        for seed in SEEDS:
            m, cams = generate(SceneSpec(seed=seed))
            scores = compute_scores(m, cams)
            adapter = Adapter(m, scores, cams)
            n = len(m)
            rowp = PruningPlan(0.5, 0.5)
            nf, nm, nr = rowp.counts(n)
            ref_size = estimate_compressed_size(nf, nm, qplan)
            ref = adapter.evaluate(Candidate(rowp, qplan, 0.5, 0.0, ref_size, 0.0, (nf, nm, nr)))
            cands = [c for c in build_candidates(default_grid(), m, scores, qplan)
                     if c.est_bytes <= ref_size and c.pruning != rowp]
            cands.sort(key=lambda c: -c.retained)
            best = -math.inf
            for c in cands:
                best = max(best, adapter.evaluate(c).psnr)
                if best >= ref.psnr + 0.1:
                    break
            assert best >= ref.psnr + 0.1, f"seed {seed}: best {best:.3f} vs Row-P {ref.psnr:.3f}"


class _Scripted:
    def __init__(self, drops):
        self.drops, self.calls = drops, []

    def __call__(self, i):
        self.calls.append(i)
        return type("R", (), {"psnr_drop": self.drops[i], "est_bytes": 1000 - i})()


def test_5_foa_correctness():
    with criterion(5, "FOA boundary, post-hoc < 1 dB, ratio >= 8x", 120):
        length = 33
        for boundary in range(-1, length):
            drops = [0.5 if i <= boundary else 1.5 for i in range(length)]
            stub = _Scripted(drops)
            chosen, _, trace = search(list(range(length)), Constraint.max_psnr_drop(1.0), stub)
            assert len(stub.calls) <= 17, (boundary, len(stub.calls))
            if boundary >= 0:
                assert trace.feasible and chosen == boundary
            else:
                assert not trace.feasible

        m, cams = generate(SceneSpec())
        res = compress(m, cams, Constraint.max_psnr_drop(1.0))
        _, q = decode_fgc(res.blob)
        eval_cams = cams[:32]
        rep = compare_to_renders(render_views(m, eval_cams), q.dequantize(), eval_cams)
        posthoc = expected_psnr_drop(rep.mse_views)
        assert res.feasible
        assert posthoc < 1.0, f"post-hoc drop {posthoc:.4f} dB"
        assert abs(posthoc - res.result.psnr_drop) <= 1e-6
        ratio = res.report()["ratio"]
        assert ratio >= 8.0, f"ratio {ratio:.2f}"


def test_6_round_trip_exactness():
    with criterion(6, "FGC round trip bit-exact, size estimate exact", 60):
        rng = np.random.default_rng(6)
        for _ in range(200):
            n = int(rng.integers(0, 3000))
            m = random_model(rng, n)
            alpha = float(rng.uniform(0, 1))
            m.sh_mask[int(np.ceil(alpha * n)):] = True
            plan = QuantizationPlan(tuple(int(b) for b in rng.choice([4, 8], 59)), int(rng.choice([1, 7, 100, 1000])))
            q = quantize_model(m, plan, alpha=alpha)
            blob = encode_fgc(q)
            assert len(blob) == estimate_compressed_size(q.n_full, q.n_shpruned, plan)
            _, back = decode_fgc(blob)
            a, b = q.dequantize(), back.dequantize()
            assert a.data.tobytes() == b.data.tobytes()
            assert np.array_equal(a.sh_mask, b.sh_mask)


def test_7_renderer_oracles():
    with criterion(7, "renderer oracles", 60):
        cam = Camera(32, 32, 40.0, 40.0, 16.0, 16.0, np.eye(4))
        splat = GaussianModel.from_activated([[0, 0, 2]], [[0.05] * 3], [[1, 0, 0, 0]], [0.8], [[0.2, 0.0, -0.2]])
        img, _ = render(splat, cam)
        expected = np.maximum(0.5 + 0.28209479177387814 * splat.data[0, 3:6].astype(np.float64), 0) * splat.opacities[0]
        assert np.max(np.abs(img[16, 16] - expected)) <= 1e-6

        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            m = random_model(rng, 80)
            m.data[:, 0:2] = rng.uniform(-0.6, 0.6, (80, 2))
            m.data[:, 2] = rng.uniform(1.5, 4.0, 80)
            cam = Camera(53, 37, 40.0, 40.0, 26.0, 18.0, np.eye(4))
            ref = render(m, cam)[0]
            perm = rng.permutation(80)
            assert np.array_equal(ref, render(m.take(perm), cam)[0]), "permutation"
            rows = rng.choice(80, 20, replace=False)
            masked, zeroed = m.copy(), m.copy()
            masked.sh_mask[rows] = True
            zeroed.data[rows, 6:51] = 0
            assert np.array_equal(render(masked, cam)[0], render(zeroed, cam)[0]), "masked SH"
            assert np.array_equal(ref, render(m, cam, tile_size=64)[0]), "tiles"


def test_8_metric_oracles():
    with criterion(8, "PSNR/SSIM match naive references", 30):
        rng = np.random.default_rng(8)
        for _ in range(50):
            h, w = rng.integers(11, 18, size=2)
            a = rng.random((h, w, 3))
            b = np.clip(a + rng.normal(0, rng.uniform(0.01, 0.3), a.shape), 0, 1)
            assert abs(psnr(a, b) - naive_psnr(a, b)) <= 1e-9
            assert abs(ssim(a, b) - naive_ssim(a, b)) <= 1e-6
        assert abs(psnr(np.zeros((8, 8, 3)), np.full((8, 8, 3), 0.5)) - 6.0206) <= 1e-4


def _orbit_cameras(model, count=32, width=160, height=120):
    pos = model.positions
    center = np.median(pos, axis=0)
    radius = 1.5 * float(np.percentile(np.linalg.norm(pos - center, axis=1), 90))
    cams = []
    for k in range(count):
        az = 2 * np.pi * k / count
        eye = center + radius * np.array([np.cos(az), np.sin(az), 0.3])
        cams.append(Camera.look_at(eye, center, width, height, 60.0))
    return cams


@pytest.mark.asset
def test_9_truck_reduction(tmp_path):
    path = os.environ.get("FLEXGS_TRUCK_PLY")
    with criterion(9, "Truck reduction >= 90% at 1 dB", math.inf):
        if not path:
            pytest.skip("set FLEXGS_TRUCK_PLY to a pretrained Truck PLY")
        from flexgs.cli import main
        from flexgs.ply_io import load_ply
        from flexgs.renderer import save_cameras

        cams_path = os.environ.get("FLEXGS_TRUCK_CAMERAS")
        if not cams_path:
            cams_path = tmp_path / "cams.json"
            save_cameras(_orbit_cameras(load_ply(path)), cams_path)
        out = tmp_path / "truck.fgc"
        import io
        from contextlib import redirect_stdout

        buf = io.StringIO()
        with redirect_stdout(buf):
            code = main(["compress", "--input", path, "--cameras", str(cams_path), "--target-psnr-drop", "1.0",
                         "--output", str(out)])
        rep = json.loads(buf.getvalue())
        assert code == 0 and rep["feasible"]
        assert rep["reduction_pct"] >= 90.0, f"reduction {rep['reduction_pct']:.2f}%"
