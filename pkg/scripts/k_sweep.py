"""Recursion count sweep at desk scale: depth, parameters and a short training run per K.

The full-scale sweep needs the 291-image set and long GPU training; this
script only shows the bookkeeping (depth K+5, K-independent parameter count)
and how the toy model's training loss responds to K under a fixed budget.

    python scripts/k_sweep.py --ks 1 3 5 9 --steps 150
"""
import argparse
import time

import numpy as np
from skimage import data as skdata

from rlcsc.data import AugmentSpec, PatchSet, build_patchset, to_y
from rlcsc.model import ModelConfig, depth, parameter_count
from rlcsc.trainer import TrainConfig, dataset_loss, train


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--ks", type=int, nargs="+", default=[1, 3, 5, 9])
    ap.add_argument("--steps", type=int, default=150)
    ap.add_argument("--channels", type=int, nargs=2, default=[16, 32])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    imgs = [to_y(getattr(skdata, n)().astype(np.float64) / 255.0) for n in ("brick", "grass", "gravel")]
    ps = build_patchset(imgs, AugmentSpec.none((2,)))
    idx = np.sort(np.random.default_rng(0).choice(len(ps), 500, replace=False))
    ps = PatchSet(ps.ilr[idx], ps.hr[idx], ps.scales[idx], ps.patch_size, ps.stride, ps.scales_included)

    print(f"{'K':>3} {'depth':>5} {'params':>8} {'loss':>10} {'time':>6}")
    for K in args.ks:
        cfg = ModelConfig(n_f=args.channels[0], m_f=args.channels[1], K=K)
        t0 = time.perf_counter()
        res = train(ps, cfg, TrainConfig(batch_size=16, lr0=0.01, epochs=10**6, max_steps=args.steps,
                                         seed=args.seed))
        loss = dataset_loss(res.checkpoint.params, ps)
        print(f"{K:>3} {depth(cfg):>5} {parameter_count(cfg):>8} {loss:>10.5g} {time.perf_counter() - t0:>5.0f}s")


if __name__ == "__main__":
    main()
