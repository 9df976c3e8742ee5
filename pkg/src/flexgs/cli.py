"""Command-line entry point.

Exit codes: 0 success, 1 runtime or format error, 2 usage error, 3 the target
was infeasible (a best-effort result was still written). JSON reports go to
stdout and diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2, 3

log = logging.getLogger("flexgs")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _set_threads(n):
    if n is None:
        env = os.environ.get("FLEXGS_THREADS")
        if not env:
            return
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"FLEXGS_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise UsageError("--threads must be >= 1")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _emit(report):
    json.dump(report, sys.stdout, indent=1)
    sys.stdout.write("\n")


def _load_inputs(args):
    from .ply_io import load_model
    from .renderer import load_cameras

    t0 = time.perf_counter()
    model = load_model(args.input)
    cams = load_cameras(args.cameras)
    return model, cams, time.perf_counter() - t0


def cmd_compress(args):
    from .adp import load_grid
    from .foa import Constraint, Options, compress
    from .plans import QuantizationPlan

    targets = [t for t in (args.target_psnr_drop, args.target_bytes, args.target_ratio) if t is not None]
    if len(targets) != 1:
        raise UsageError("give exactly one of --target-psnr-drop, --target-bytes, --target-ratio")
    try:
        if args.target_psnr_drop is not None:
            constraint = Constraint.max_psnr_drop(args.target_psnr_drop)
        elif args.target_bytes is not None:
            constraint = Constraint.max_bytes(args.target_bytes)
        else:
            constraint = Constraint.min_ratio(args.target_ratio)
    except ValueError as e:
        raise UsageError(str(e)) from None

    model, cams, t_load = _load_inputs(args)
    train = None
    if args.train_cameras:
        from .renderer import load_cameras

        train = load_cameras(args.train_cameras)
    opts = Options(
        grid=load_grid(args.grid) if args.grid else None,
        plan=QuantizationPlan.load(args.plan) if args.plan else None,
        probe_sensitivity=args.probe_sensitivity,
        joint=args.joint,
        train_cameras=train,
    )
    result = compress(model, cams, constraint, opts)
    with open(args.output, "wb") as f:
        f.write(result.blob)
    if args.trace:
        with open(args.trace, "w") as f:
            f.write(result.trace.to_jsonl())
    result.timings["load"] = t_load
    _emit(result.report())
    if not result.feasible:
        print("target not reachable; wrote the best-effort result", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_decompress(args):
    from .ply_io import read_fgc, write_ply

    _, q = read_fgc(args.input)
    model = q.dequantize()
    write_ply(model, args.output)
    _emit({"rows": len(model), "sh_pruned_rows": int(model.sh_mask.sum()), "output": args.output})
    return EXIT_OK


def _write_pfm(path, img):
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(f"PF\n{w} {h}\n-1.0\n".encode())
        f.write(np.ascontiguousarray(img[::-1], dtype="<f4").tobytes())


def cmd_render(args):
    from PIL import Image

    from .ply_io import load_model
    from .renderer import load_cameras, render

    model = load_model(args.input)
    cams = load_cameras(args.cameras)
    os.makedirs(args.out, exist_ok=True)
    written = []
    for k, cam in enumerate(cams):
        img, _ = render(model, cam)
        path = os.path.join(args.out, f"view_{k:04d}.{args.format}")
        if args.format == "png":
            Image.fromarray(np.round(img * 255).astype(np.uint8)).save(path)
        else:
            _write_pfm(path, img)
        written.append(path)
    _emit({"images": written})
    return EXIT_OK


def cmd_sensitivity(args):
    from .mpq import assign_bitwidths, probe_channel_sensitivity

    model, cams, _ = _load_inputs(args)
    gaps = probe_channel_sensitivity(model, cams[: args.views])
    plan = assign_bitwidths(gaps, args.threshold)
    doc = {"int4_gap_db": {k.name if hasattr(k, "name") else str(k): v for k, v in gaps.items()},
           "threshold_db": args.threshold, "suggested_plan": plan.to_dict()}
    with open(args.out, "w") as f:
        json.dump(doc, f, indent=1)
    _emit(doc)
    return EXIT_OK


def cmd_rd_sweep(args):
    from .adp import candidate_frontier, load_grid
    from .foa import Adapter
    from .importance import compute_scores
    from .metrics import compression_ratio
    from .model import model_byte_size
    from .mpq import default_plan
    from .plans import QuantizationPlan

    model, cams, _ = _load_inputs(args)
    qplan = QuantizationPlan.load(args.plan) if args.plan else default_plan()
    eval_cams = cams[: args.views]
    scores = compute_scores(model, cams)
    adapter = Adapter(model, scores, eval_cams)
    cands = candidate_frontier(load_grid(args.grid), model, scores, qplan, prune_dominated=False)
    original = model_byte_size(model)
    fields = ["alpha", "beta", "sh_fraction", "bitwidth_profile", "bytes", "ratio", "psnr_drop", "ssim"]
    with open(args.out, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields)
        w.writeheader()
        for c in cands:
            r = adapter.evaluate(c)
            w.writerow({
                "alpha": repr(c.pruning.alpha),
                "beta": repr(c.pruning.beta),
                "sh_fraction": repr(c.sh_fraction),
                "bitwidth_profile": c.quantization.profile(),
                "bytes": r.est_bytes,
                "ratio": repr(compression_ratio(original, r.est_bytes)),
                "psnr_drop": repr(r.psnr_drop),
                "ssim": repr(r.ssim),
            })
    _emit({"rows": len(cands), "output": args.out})
    return EXIT_OK


def cmd_gen_scene(args):
    from .scenegen import SceneSpec, write_fixture

    try:
        spec = SceneSpec.load(args.spec) if args.spec else SceneSpec()
    except (ValueError, TypeError, json.JSONDecodeError) as e:
        raise UsageError(f"invalid scene spec: {e}") from None
    _emit(write_fixture(spec, args.out))
    return EXIT_OK


def build_parser():
    p = _Parser(prog="flexgs", description="Compress 3D Gaussian Splatting models under a quality or size target.")
    p.add_argument("--threads", type=int, default=None, help="worker thread cap (default: FLEXGS_THREADS or all cores)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("compress")
    c.add_argument("--input", required=True)
    c.add_argument("--cameras", required=True)
    c.add_argument("--train-cameras", help="cameras used for importance scoring (default: --cameras)")
    c.add_argument("--target-psnr-drop", type=float)
    c.add_argument("--target-bytes", type=int)
    c.add_argument("--target-ratio", type=float)
    c.add_argument("--plan")
    c.add_argument("--grid")
    c.add_argument("--probe-sensitivity", action="store_true")
    c.add_argument("--joint", action="store_true")
    c.add_argument("--trace")
    c.add_argument("--output", required=True)
    c.set_defaults(func=cmd_compress)

    d = sub.add_parser("decompress")
    d.add_argument("--input", required=True)
    d.add_argument("--output", required=True)
    d.set_defaults(func=cmd_decompress)

    r = sub.add_parser("render")
    r.add_argument("--input", required=True)
    r.add_argument("--cameras", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--format", choices=("png", "pfm"), default="png")
    r.set_defaults(func=cmd_render)

    s = sub.add_parser("sensitivity")
    s.add_argument("--input", required=True)
    s.add_argument("--cameras", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--threshold", type=float, default=0.25)
    s.add_argument("--views", type=int, default=32)
    s.set_defaults(func=cmd_sensitivity)

    w = sub.add_parser("rd-sweep")
    w.add_argument("--input", required=True)
    w.add_argument("--cameras", required=True)
    w.add_argument("--grid", required=True)
    w.add_argument("--plan")
    w.add_argument("--views", type=int, default=32)
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_rd_sweep)

    g = sub.add_parser("gen-scene")
    g.add_argument("--spec")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_scene)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        _set_threads(args.threads)
        return args.func(args)
    except UsageError as e:
        print(f"flexgs: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as e:
        print(f"flexgs: error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
