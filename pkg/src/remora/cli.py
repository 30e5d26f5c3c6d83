"""Command-line entry point.

Exit codes: 0 success, 1 failed check or I/O error, 2 usage, 3 format,
4 numeric.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import config as config_mod
from . import formats, rmr
from .errors import FormatError, InvalidConfigError, InvalidInputError, NumericError

log = logging.getLogger("remora")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_FORMAT, EXIT_NUMERIC = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


def _dump(obj):
    print(json.dumps(obj, sort_keys=True))


def _config(args):
    overrides = {k: getattr(args, k, None) for k in (
        "T", "H", "W", "p", "T_g", "max_gop_len", "K", "N_m", "d_s", "Q", "search_range",
        "scene_threshold", "q", "fps", "seed_texture", "seed_embed", "seed_ssm",
        "seed_refiner", "seed_projection")}
    if getattr(args, "block", None):
        overrides["b_h"] = overrides["b_w"] = args.block
    return config_mod.load(args.preset, args.config, **overrides)


def _add_config_flags(p, *groups):
    p.add_argument("--preset", choices=sorted(config_mod.PRESETS), default="desk")
    p.add_argument("--config", help="key=value file overriding preset fields")
    if "codec" in groups:
        p.add_argument("--max-gop-len", dest="max_gop_len", type=int)
        p.add_argument("--t-g", dest="T_g", type=int)
        p.add_argument("--block", type=int, help="square block size b_h = b_w")
        p.add_argument("--search-range", dest="search_range", type=int)
        p.add_argument("--scene-threshold", dest="scene_threshold", type=float)
        p.add_argument("--q", type=int, help="residual quantization step")
    if "model" in groups:
        p.add_argument("--p", type=int, help="patch size")
        p.add_argument("--n-m", dest="N_m", type=int)
        p.add_argument("--d-s", dest="d_s", type=int)
        p.add_argument("--state", dest="Q", type=int)
        p.add_argument("--k-limit", dest="K", type=int)
    for name in ("texture", "embed", "ssm", "refiner", "projection"):
        p.add_argument(f"--seed-{name}", dest=f"seed_{name}", type=int)


def cmd_synth(args):
    from .synthflow import MotionSpec, render_clip, render_cut_clip

    cfg = _config(args)
    T = args.t or cfg.T
    H, W = args.h or cfg.H, args.w or cfg.W
    spec = MotionSpec(args.kind, ty=args.ty, tx=args.tx, theta=args.theta, scale=args.scale)
    spec.validate()
    if args.cuts:
        cuts = sorted(set(args.cuts))
        if any(not 0 < c < T for c in cuts):
            raise InvalidInputError(f"cuts must lie inside (0, {T})")
        bounds = [0, *cuts, T]
        parts = [(spec, b - a, cfg.seed_texture + i) for i, (a, b) in enumerate(zip(bounds, bounds[1:]))]
        clip, _ = render_cut_clip(parts, H, W, cfg.fps)
        flows = [spec.flow(H, W)] * (T - 1)
    else:
        clip, flows = render_clip(spec, T, H, W, cfg.seed_texture, cfg.fps)
    flow_path = args.flow_out or os.path.splitext(args.out)[0] + ".flow"
    formats.write_clip(args.out, clip)
    formats.write_flows(flow_path, flows)
    _dump({"clip": args.out, "flow": flow_path, "T": T, "H": H, "W": W, "kind": args.kind})
    return EXIT_OK


def _compressed_size_proxy(stream):
    """Bytes a sparse coder would need: I-frames, i8 motion pairs, a
    significance bitmap and 2 bytes per nonzero residual, real slots only."""
    h = stream.header
    total, nnz, entries = 0, 0, 0
    for gop in stream.gops:
        total += gop.iframe.size
        n = gop.real_count
        res = gop.residuals[:n]
        k = int(np.count_nonzero(res))
        nnz += k
        entries += res.size
        total += n * (gop.motion[0].size if n else 0)
        total += n * -(-h.H * h.W * 3 // 8) + 2 * k
    return total, (nnz / entries if entries else 0.0)


def cmd_compress(args):
    from .codec import compress_clip

    clip = formats.read_clip(args.input)
    cfg = _config(args)
    stream = compress_clip(clip, cfg.codec())
    formats.write_gops(args.out, stream)
    proxy, frac = _compressed_size_proxy(stream)
    raw = clip.frames.nbytes
    _dump({
        "K": stream.K,
        "gop_lengths": stream.gop_lengths,
        "bytes_raw": raw,
        "bytes_compressed": proxy,
        "bytes_file": os.path.getsize(args.out),
        "ratio": raw / proxy,
        "nonzero_residual_fraction": frac,
    })
    return EXIT_OK


def cmd_decode(args):
    from .codec import decompress_stream

    stream = formats.read_gops(args.input)
    clip = decompress_stream(stream)
    formats.write_clip(args.out, clip)
    _dump({"frames": len(clip), "out": args.out})
    return EXIT_OK


def cmd_pretrain_rmr(args):
    cfg = _config(args)
    if args.steps < 0 or args.lr < 0:
        raise UsageError("steps and lr must be non-negative")
    ss = np.random.SeedSequence(args.seed)
    train_seed, held_seed, init_seed, batch_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(4))
    kw = dict(T=args.frames, H=cfg.H, W=cfg.W, block_h=cfg.b_h, block_w=cfg.b_w,
              search_range=cfg.search_range)
    train = rmr.make_dataset(args.n_train, train_seed, **kw)
    held = rmr.make_dataset(args.n_heldout, held_seed, **kw)
    params = rmr.RefinerParams.init(cfg.refiner(), init_seed)
    result = rmr.pretrain(params, train, args.steps, args.lr, batch_seed, args.batch_size,
                          log_every=args.log_every, logger=log)
    formats.write_archive(args.out, result.params.tensors, result.params.manifest())
    trace = args.trace or os.path.splitext(args.out)[0] + ".jsonl"
    with open(trace, "w") as f:
        f.write("\n".join(result.trace_lines()) + "\n")
    train_epe, train_base = rmr.dataset_epe(result.params, train)
    held_epe, held_base = rmr.dataset_epe(result.params, held)
    _dump({
        "steps": args.steps, "lr": args.lr, "seed": args.seed,
        "final_loss": result.losses[-1] if result.losses else None,
        "train_epe": train_epe, "train_baseline_epe": train_base,
        "heldout_epe": held_epe, "heldout_baseline_epe": held_base,
        "margin": held_base - held_epe,
        "params": args.out, "trace": trace,
    })
    return EXIT_OK


def load_refiner(path):
    tensors, manifest = formats.read_archive(path)
    if not manifest or manifest.get("kind") != "refiner":
        raise FormatError(f"{path} is not a refiner parameter archive")
    return rmr.RefinerParams.from_named(tensors, manifest)


def cmd_aggregate(args):
    from .codec import GopStream
    from .hmss import accounting, aggregate, project_to_prompt

    cfg = _config(args)
    stream = formats.read_gops(args.input)
    h = stream.header
    if args.params:
        refiner = load_refiner(args.params)
    else:
        refiner = rmr.RefinerParams.init(cfg.refiner(), cfg.seed_refiner)
    rc = refiner.config
    if (rc.block_h, rc.block_w) != (h.block_h, h.block_w):
        raise InvalidConfigError("refiner block size does not match the GOPS stream")
    if rc.d_s != cfg.d_s or rc.n_tokens != cfg.N_m:
        raise InvalidConfigError(f"refiner (N_m={rc.n_tokens}, d_s={rc.d_s}) does not match "
                                 f"config (N_m={cfg.N_m}, d_s={cfg.d_s})")
    if h.H % cfg.p or h.W % cfg.p:
        raise InvalidConfigError(f"stream frames {h.H}x{h.W} are not divisible by p={cfg.p}")
    if stream.K > cfg.K:
        log.warning("stream has %d GOPs; keeping the first %d", stream.K, cfg.K)
        stream = GopStream(stream.gops[:cfg.K], h)
    feats = aggregate(stream, refiner, cfg.hmss())
    n_p = (h.H * h.W) // (cfg.p * cfg.p)
    formats.write_tensor(args.out, feats.matrix)
    sidecar = accounting(n_p, rc.n_tokens, h.T_g, stream.K)
    sidecar.update({
        "d_s": cfg.d_s, "seeds": cfg.seeds(), "preset": cfg.preset, "K_limit": cfg.K,
        "flat_tokens_at_K_limit": cfg.K * sidecar["L_g"],
        "features_shape": list(feats.matrix.shape),
    })
    if args.d_llm:
        prompt = project_to_prompt(feats, args.d_llm, cfg.seed_projection)
        prompt_path = os.path.splitext(args.out)[0] + ".prompt.tnsr"
        formats.write_tensor(prompt_path, prompt)
        sidecar["prompt"] = {"file": os.path.basename(prompt_path), "shape": list(prompt.shape)}
    side_path = args.sidecar or os.path.splitext(args.out)[0] + ".json"
    with open(side_path, "w") as f:
        json.dump(sidecar, f, sort_keys=True)
    _dump(sidecar)
    return EXIT_OK


def _sizes(args):
    if args.sizes:
        return sorted(args.sizes)
    lo, hi = args.sweep
    return [2 ** e for e in range(lo, hi + 1)]


def cmd_bench(args):
    from . import bench

    sizes = _sizes(args)
    if len(sizes) < 3:
        raise UsageError("a sweep needs at least 3 sizes")
    if args.repeats < 1:
        raise UsageError("repeats must be >= 1")
    if not args.parallel:
        os.environ["REMORA_THREADS"] = "1"
    if args.stage == "scan":
        records = bench.sweep_scan(sizes, args.repeats, backend=args.backend)
    elif args.stage == "attention":
        records = bench.sweep_attention(sizes, args.repeats)
    else:
        records = bench.sweep_pipeline(sizes, _config(args), args.repeats, backend=args.backend)
    print(f"# {bench.HEADER}")
    lines = [json.dumps(r.as_dict(), sort_keys=True) for r in records]
    print("\n".join(lines))
    if args.out:
        with open(args.out, "w") as f:
            f.write("\n".join(lines) + "\n")
    if args.csv:
        with open(args.csv, "w") as f:
            f.write(bench.to_csv(records))
    print(f"# doubling ratios: {[round(r, 3) for r in bench.doubling_ratios(records)]}")
    return EXIT_OK


def cmd_gradcheck(args):
    if args.trials < 1:
        raise UsageError("trials must be >= 1")
    worst = rmr.gradient_check(args.seed, args.trials, corrupt=args.corrupt_gradient)
    failing = sorted(name for name, err in worst.items() if err > args.tolerance)
    _dump({"seed": args.seed, "trials": args.trials, "tolerance": args.tolerance,
           "max_relative_error": worst, "failing": failing, "ok": not failing})
    if failing:
        print(f"gradient check failed for: {', '.join(failing)}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="remora", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic clip plus analytic flow")
    p.add_argument("--kind", required=True, choices=("translate", "rotate", "zoom"))
    p.add_argument("--ty", type=float, default=0.0)
    p.add_argument("--tx", type=float, default=0.0)
    p.add_argument("--theta", type=float, default=0.0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--t", type=int, help="frame count (default: preset T)")
    p.add_argument("--h", type=int)
    p.add_argument("--w", type=int)
    p.add_argument("--cuts", type=int, nargs="*", help="frames where a fresh texture starts")
    p.add_argument("--out", required=True, help="VCLP output path")
    p.add_argument("--flow-out", help="FLOW output path (default: OUT with .flow)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("compress", help="VCLP clip -> GOPS stream")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    _add_config_flags(p, "codec")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decode", help="GOPS stream -> VCLP clip")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("pretrain-rmr", help="train the motion refiner on synthetic flow")
    p.add_argument("--n-train", type=int, default=64, help="training clips")
    p.add_argument("--n-heldout", type=int, default=48, help="held-out clips")
    p.add_argument("--frames", type=int, default=4, help="frames per clip")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-every", type=int, default=0)
    p.add_argument("--out", required=True, help="TNSR parameter archive")
    p.add_argument("--trace", help="loss trace JSONL (default: OUT with .jsonl)")
    _add_config_flags(p, "codec", "model")
    p.set_defaults(func=cmd_pretrain_rmr)

    p = sub.add_parser("aggregate", help="GOPS stream -> clip feature matrix")
    p.add_argument("input")
    p.add_argument("--params", help="refiner archive from pretrain-rmr (default: seeded init)")
    p.add_argument("--out", required=True, help="TNSR feature output")
    p.add_argument("--sidecar", help="JSON sidecar path (default: OUT with .json)")
    p.add_argument("--d-llm", type=int, help="also write a projection to this width")
    _add_config_flags(p, "model")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("bench", help="time a stage over a size sweep")
    p.add_argument("--stage", required=True, choices=("scan", "attention", "pipeline"))
    g = p.add_mutually_exclusive_group()
    g.add_argument("--sizes", type=int, nargs="+")
    g.add_argument("--sweep", type=int, nargs=2, metavar=("LO", "HI"), default=(10, 14),
                   help="powers of two 2**LO ... 2**HI")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--backend", choices=("auto", "compiled", "python"), default="auto")
    p.add_argument("--parallel", action="store_true", help="allow REMORA_THREADS workers")
    p.add_argument("--out", help="BenchRecord JSONL path")
    p.add_argument("--csv", help="plot-data CSV path")
    _add_config_flags(p, "model")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference check of the refiner gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--corrupt-gradient", metavar="TENSOR", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidInputError, InvalidConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"remora: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"remora: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericError as exc:
        print(f"remora: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"remora: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
