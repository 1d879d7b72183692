"""Bicubic PSNR/SSIM on a benchmark set at x2/x3/x4, next to the published bicubic row.

    python scripts/bicubic_baseline.py data/Set5            # directory of PNGs
    python scripts/bicubic_baseline.py sets/set14.txt --crop 0
"""
import argparse
from pathlib import Path

from rlcsc.metrics import evaluate

# published Set5 bicubic numbers (PSNR dB / SSIM)
SET5_BICUBIC = {2: (33.66, 0.9299), 3: (30.39, 0.8682), 4: (28.42, 0.8104)}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("images", help="directory of images or a manifest file")
    ap.add_argument("--scales", default="2,3,4")
    ap.add_argument("--crop", type=int, default=None, help="border crop (default: scale)")
    args = ap.parse_args()

    src = Path(args.images)
    paths = src if src.is_file() else sorted(p for p in src.iterdir() if p.suffix.lower() in (".png", ".bmp", ".pgm"))
    for s in (int(v) for v in args.scales.split(",")):
        rep = evaluate("bicubic", paths, s, args.crop)
        ref = SET5_BICUBIC.get(s)
        tail = f"   (Set5 reference {ref[0]:.2f}/{ref[1]:.4f})" if ref else ""
        print(f"x{s}  {rep.mean_psnr:.2f}/{rep.mean_ssim:.4f} over {len(rep.images)} images{tail}")
        for im in rep.images:
            print(f"    {im.name:<16s} {im.psnr:6.2f}/{im.ssim:.4f}")


if __name__ == "__main__":
    main()
