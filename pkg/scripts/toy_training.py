"""Desk-scale training study: the toy model across several seeds, with the no-skip ablation.

Trains K=3, 16/32-channel models for 300 steps at lr 0.01 on 500 x2 patches
from three scikit-image textures, then scores held-out images against
bicubic.  Each seed takes about a minute single-threaded.

    python scripts/toy_training.py --seeds 0 1 2 3 --ablation
"""
import argparse
import time

import numpy as np
from skimage import data as skdata

from rlcsc.data import AugmentSpec, PatchSet, build_patchset, make_ilr, to_y
from rlcsc.metrics import crop_border, psnr
from rlcsc.model import ModelConfig, restore_y
from rlcsc.rng import generator
from rlcsc.trainer import TrainConfig, dataset_loss, he_init, train


def sk_y(name):
    return to_y(getattr(skdata, name)().astype(np.float64) / 255.0)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--train", default="brick,grass,gravel")
    ap.add_argument("--held-out", default="camera,chelsea,coins,text,moon")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--lr", type=float, default=0.01)
    ap.add_argument("--patches", type=int, default=500)
    ap.add_argument("--ablation", action="store_true", help="also train without the skip connection")
    args = ap.parse_args()

    ps = build_patchset([sk_y(n) for n in args.train.split(",")], AugmentSpec.none((2,)))
    idx = np.sort(np.random.default_rng(0).choice(len(ps), min(args.patches, len(ps)), replace=False))
    ps = PatchSet(ps.ilr[idx], ps.hr[idx], ps.scales[idx], ps.patch_size, ps.stride, ps.scales_included)
    bic = float(np.mean((ps.ilr.astype(np.float64) - ps.hr) ** 2))
    print(f"{len(ps)} patches, bicubic training MSE {bic:.5g}")

    held = {n: make_ilr(sk_y(n), 2) for n in args.held_out.split(",")}
    model = ModelConfig(n_f=16, m_f=32, K=3)
    for seed in args.seeds:
        cfg = TrainConfig(batch_size=args.batch, lr0=args.lr, epochs=10**6, max_steps=args.steps, seed=seed)
        t0 = time.perf_counter()
        res = train(ps, model, cfg)
        first = dataset_loss(he_init(model, generator(seed, "init")), ps)
        last = dataset_loss(res.checkpoint.params, ps)
        print(f"seed {seed}: loss {first:.4g} -> {last:.5g} in {time.perf_counter() - t0:.0f} s")
        for name, (I_y, I_x) in held.items():
            b = psnr(crop_border(I_y, 2), crop_border(I_x, 2))
            m = psnr(crop_border(np.clip(restore_y(res.checkpoint.params, I_y), 0, 1), 2), crop_border(I_x, 2))
            print(f"    {name:<22s} bicubic {b:7.3f}  model {m:7.3f}  gain {m - b:+.3f} dB")
        if args.ablation:
            off = train(ps, model, TrainConfig(**{**cfg.__dict__, "residual_enabled": False}))
            print(f"    no skip connection: loss {dataset_loss(off.checkpoint.params, ps, False):.5g}")


if __name__ == "__main__":
    main()
