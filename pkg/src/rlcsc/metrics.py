"""Y-channel PSNR/SSIM with border cropping, and the benchmark evaluation loop."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import load_y, make_ilr, read_manifest
from .errors import DataError, ShapeError

log = logging.getLogger(__name__)

PSNR_IDENTICAL = math.inf


def crop_border(img: np.ndarray, px: int) -> np.ndarray:
    h, w = img.shape[:2]
    if px < 0 or 2 * px >= min(h, w):
        raise ShapeError(f"cannot crop {px} px from each side of a {h}x{w} image")
    if px == 0:
        return img
    return img[px : h - px, px : w - px]


def _same_dims(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: image dims {a.shape} and {b.shape} differ")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB for peak 1.0; identical images give ``math.inf``."""
    _same_dims(a, b, "psnr")
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    err = float(np.mean(d * d))
    if err == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(1.0 / err)


def gaussian_1d(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable Gaussian, valid positions only
    k = g.shape[0]
    rows = sliding_window_view(img, k, axis=1) @ g
    return sliding_window_view(rows, k, axis=0) @ g


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0, k1: float = 0.01, k2: float = 0.03,
         win_size: int = 11, sigma: float = 1.5) -> float:
    """Single-scale SSIM, Gaussian window, mean over valid window positions."""
    _same_dims(a, b, "ssim")
    if min(a.shape) < win_size:
        raise ShapeError(f"ssim needs images at least {win_size}x{win_size}, got {a.shape}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.array_equal(a, b):
        return 1.0
    w = gaussian_1d(win_size, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, w), _filter_valid(b, w)
    saa = _filter_valid(a * a, w) - mu_a * mu_a
    sbb = _filter_valid(b * b, w) - mu_b * mu_b
    sab = _filter_valid(a * b, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


@dataclass
class ImageScore:
    name: str
    psnr: float
    ssim: float


@dataclass
class EvalReport:
    scale: int
    crop: int
    label: str = "bicubic"
    dataset: str = ""
    images: list[ImageScore] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([s.psnr for s in self.images])) if self.images else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([s.ssim for s in self.images])) if self.images else math.nan

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["image", "scale", "psnr", "ssim"])
        for s in self.images:
            wr.writerow([s.name, self.scale, f"{s.psnr:.4f}", f"{s.ssim:.6f}"])
        wr.writerow(["mean", self.scale, f"{self.mean_psnr:.4f}", f"{self.mean_ssim:.6f}"])
        return buf.getvalue()

    def to_table(self) -> str:
        width = max([len(s.name) for s in self.images] + [len("Dataset"), len(self.dataset)])
        head = f"{'Dataset':<{width}}  Scale  {self.label:>16}"
        lines = [head, "-" * len(head)]
        for s in self.images:
            lines.append(f"{s.name:<{width}}  x{self.scale:<4}  {s.psnr:>7.2f}/{s.ssim:.4f}")
        lines.append("-" * len(head))
        lines.append(f"{self.dataset or 'mean':<{width}}  x{self.scale:<4}  "
                     f"{self.mean_psnr:>7.2f}/{self.mean_ssim:.4f}")
        return "\n".join(lines)


Predictor = Callable[[np.ndarray], np.ndarray]


def score_pair(pred: np.ndarray, target: np.ndarray, crop: int) -> tuple[float, float]:
    pred = crop_border(np.clip(pred, 0.0, 1.0), crop)
    target = crop_border(target, crop)
    return psnr(pred, target), ssim(pred, target)


def evaluate(
    predictor: Union[str, Predictor],
    manifest: Union[str, Path, Sequence],
    scale: int,
    crop: Optional[int] = None,
    label: Optional[str] = None,
) -> EvalReport:
    """Score a predictor (or ``"bicubic"``) on every image of a manifest.

    The predictor maps an interpolated Y plane to a restored Y plane of the
    same size.  Unreadable images are recorded in ``missing`` and skipped.
    """
    crop = scale if crop is None else crop
    if predictor == "bicubic":
        fn: Predictor = lambda x: x  # noqa: E731
        label = label or "bicubic"
    else:
        fn = predictor
        label = label or "model"
    if isinstance(manifest, (str, Path)):
        paths = read_manifest(manifest)
        dataset = Path(manifest).stem
    else:
        paths = [Path(p) for p in manifest]
        dataset = ""
    report = EvalReport(scale=scale, crop=crop, label=label, dataset=dataset)
    for p in paths:
        try:
            img = load_y(p)
        except DataError as exc:
            log.warning("skipping %s: %s", p, exc)
            report.missing.append(str(p))
            continue
        I_y, I_x = make_ilr(img, scale)
        ps, ss = score_pair(fn(I_y), I_x, crop)
        report.images.append(ImageScore(Path(p).stem, ps, ss))
    return report
