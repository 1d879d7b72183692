"""``rlcsc`` command line: prepare, train, sr, eval, ista-demo, gradcheck, summary."""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import data as D
from .errors import ConfigError, RlcscError
from .model import ModelConfig, RlcscParams, depth, parameter_count, restore_y
from .rng import generator

log = logging.getLogger("rlcsc")


def _scales(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad scale list {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError(f"bad scale list {text!r}")
    return vals


def _channels(text: str) -> tuple[int, int]:
    parts = text.split(",")
    try:
        if len(parts) == 1:
            n = int(parts[0])
            return n, 2 * n
        if len(parts) == 2:
            return int(parts[0]), int(parts[1])
    except ValueError:
        pass
    raise argparse.ArgumentTypeError(f"--channels wants N or N_F,M_F, got {text!r}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_prepare(args) -> int:
    paths = D.read_manifest(args.manifest)
    images = D.load_images(paths)
    spec = D.AugmentSpec.full(args.scales) if args.aug == "full" else D.AugmentSpec.none(args.scales)
    ps = D.build_patchset(images, spec, args.patch, args.stride)
    digest = ps.save(args.out)
    print(f"pairs {len(ps)}")
    print(f"sha256 {digest}")
    return 0


def _load_params(path) -> RlcscParams:
    from .trainer import Checkpoint

    return Checkpoint.load(path).params


def cmd_train(args) -> int:
    from .trainer import Checkpoint, TrainConfig, format_config, parse_config, trace_csv, train

    cfg = TrainConfig()
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        cfg = parse_config(text)
    patches = D.PatchSet.load(args.data)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    resume = Checkpoint.load(args.resume) if args.resume else None
    if resume is not None:
        model_cfg = resume.params.config
    else:
        n_f, m_f = args.channels
        model_cfg = ModelConfig(n_f=n_f, m_f=m_f, K=args.k)
    (out / "config.txt").write_text(format_config(cfg))

    csv_path = out / "loss.csv"
    rows = []
    if resume is not None and csv_path.exists():
        # keep the trace contiguous: drop anything recorded after the resumed epoch
        from .trainer import TraceRow

        for line in csv_path.read_text().splitlines()[1:]:
            e, s, l, lr = line.split(",")
            if int(e) <= resume.epoch:
                rows.append(TraceRow(int(e), int(s), float(l), float(lr)))

    def sink(kind, payload):
        if kind == "step":
            rows.append(payload)
        elif kind == "epoch":
            epoch, lr, mean = payload
            print(f"epoch {epoch:4d}  lr {lr:.3g}  loss {mean:.6g}", flush=True)
            csv_path.write_text(trace_csv(rows))
        elif kind == "checkpoint":
            log.info("wrote %s", payload)

    try:
        train(patches, model_cfg, cfg, sink=sink, resume=resume, out_dir=out)
    finally:
        csv_path.write_text(trace_csv(rows))
    epoch_lines = len({r.epoch for r in rows})
    print(f"done: {epoch_lines} epochs in {csv_path}")
    return 0


def cmd_sr(args) -> int:
    if args.scale not in (2, 3, 4) and not args.allow_any:
        raise ConfigError(f"scale {args.scale} not in {{2, 3, 4}} (use --allow-any)")
    params = _load_params(args.model)
    img = D.load_image(args.input)
    t0 = time.perf_counter()
    if img.ndim == 2:
        up = D.bicubic_resize(img, args.scale)
        out = np.clip(restore_y(params, up), 0, 1)
        D.save_y(out, args.output)
    else:
        ycc = D.bicubic_resize(D.rgb_to_ycbcr(img), args.scale)
        ycc[..., 0] = restore_y(params, ycc[..., 0])
        D.save_rgb(np.clip(D.ycbcr_to_rgb(ycc), 0, 1), args.output)
    dt = time.perf_counter() - t0
    h, w = img.shape[:2]
    print(f"{h}x{w} -> {h * args.scale}x{w * args.scale} in {dt:.3f} s")
    return 0


def cmd_eval(args) -> int:
    from .metrics import evaluate

    if args.bicubic:
        report = evaluate("bicubic", args.manifest, args.scale, args.crop)
    else:
        params = _load_params(args.model)
        report = evaluate(lambda y: restore_y(params, y), args.manifest, args.scale, args.crop,
                          label="RL-CSC")
    print(report.to_table())
    if report.missing:
        print(f"missing: {', '.join(report.missing)}", file=sys.stderr)
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    return 0


def cmd_ista_demo(args) -> int:
    from . import sparse as S

    rng = generator(args.seed, "ista-demo")
    Dm = rng.standard_normal((args.n, args.m)) / np.sqrt(args.n)
    y = rng.standard_normal(args.n)
    L = S.largest_eigenvalue(Dm) * 1.01
    p = S.SparseProblem(Dm, y, args.lam, L)
    z, trace = S.ista_solve(p, args.iters)
    _, best = S.reference_minimum(p)
    stride = max(1, args.iters // 20)
    for k in range(0, len(trace), stride):
        print(f"iter {k:6d}  objective {trace[k]:.12g}")
    if (len(trace) - 1) % stride:
        print(f"iter {len(trace) - 1:6d}  objective {trace[-1]:.12g}")
    mono = bool(np.all(np.diff(trace) <= 1e-10))
    print(f"nonincreasing {mono}")
    print(f"oracle gap {trace[-1] - best:.3e}")
    print(f"nonzeros {int(np.count_nonzero(z))}/{args.m}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import check_model

    n_f, m_f = args.channels
    res = check_model(ModelConfig(n_f=n_f, m_f=m_f, K=args.k), eps=args.eps, seed=args.seed)
    for name, err in res.per_param.items():
        print(f"{name:6s} max rel err {err:.3e}  (kink-straddling probes redrawn: {res.rejected[name]})")
    ok = res.max_error < args.tol
    print(f"max rel err {res.max_error:.3e}  {'PASS' if ok else 'FAIL'} (tol {args.tol:g})")
    return 0 if ok else 8


def cmd_summary(args) -> int:
    n_f, m_f = args.channels
    cfg = ModelConfig(n_f=n_f, m_f=m_f, K=args.k)
    print(f"K {cfg.K}  depth {depth(cfg)}")
    for name, shp in cfg.shapes().items():
        print(f"  {name:6s} {'x'.join(map(str, shp)):>18s}  {int(np.prod(shp)):>9d}")
    print(f"parameters {parameter_count(cfg)} (conv weights {parameter_count(cfg, include_theta=False)})")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rlcsc", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build a packed patch file from an image manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scales", type=_scales, default=(2, 3, 4))
    p.add_argument("--patch", type=int, default=33)
    p.add_argument("--stride", type=int, default=33)
    p.add_argument("--aug", choices=("full", "none"), default="full")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train on a patch file")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--k", type=int, default=25)
    p.add_argument("--channels", type=_channels, default=(128, 256))
    p.add_argument("--resume")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sr", help="super-resolve one image")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--scale", type=int, required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--allow-any", action="store_true")
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("eval", help="PSNR/SSIM over a manifest")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--model")
    g.add_argument("--bicubic", action="store_true")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scale", type=int, required=True)
    p.add_argument("--crop", type=int, default=None, help="border crop in px (default: scale)")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ista-demo", help="ISTA on a random problem with an oracle comparison")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ista_demo)

    p = sub.add_parser("gradcheck", help="finite-difference check of model gradients")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--channels", type=_channels, default=(16, 32))
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("summary", help="depth, layer shapes and parameter count")
    p.add_argument("--k", type=int, default=25)
    p.add_argument("--channels", type=_channels, default=(128, 256))
    p.set_defaults(func=cmd_summary)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from threadpoolctl import threadpool_limits

    threads = int(os.environ.get("RLCSC_THREADS", "1"))
    try:
        with threadpool_limits(limits=threads):
            return args.func(args)
    except RlcscError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
