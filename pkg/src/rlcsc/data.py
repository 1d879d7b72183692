"""Luminance images, bicubic resizing, augmentation and packed patch sets.

Images are plain 2-D float64 arrays in [0, 1] holding the Y plane of
BT.601 studio-swing YCbCr (so pure white maps to 235/255, not 1.0).  The
resizer reproduces the cubic-convolution resizer the SR literature uses for
its bicubic baselines: kernel a = -0.5, kernel widened by 1/scale when
shrinking, mirrored indices at the borders.
"""
from __future__ import annotations

import hashlib
import io
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .errors import DataError

log = logging.getLogger(__name__)

PATCH_MAGIC = b"RLCSCPAT"
PATCH_VERSION = 1

# BT.601 studio swing, inputs in [0, 1], outputs in [0, 1]
_RGB2YCBCR = np.array(
    [
        [65.481, 128.553, 24.966],
        [-37.797, -74.203, 112.0],
        [112.0, -93.786, -18.214],
    ]
) / 255.0
_YCBCR_OFFSET = np.array([16.0, 128.0, 128.0]) / 255.0


# ---------------------------------------------------------------------------
# image I/O
# ---------------------------------------------------------------------------


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """(h, w, 3) RGB in [0, 1] to (h, w, 3) YCbCr in [0, 1]."""
    return rgb @ _RGB2YCBCR.T + _YCBCR_OFFSET


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    return (ycc - _YCBCR_OFFSET) @ np.linalg.inv(_RGB2YCBCR).T


def _open(path) -> Image.Image:
    try:
        im = Image.open(path)
        im.load()
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return im


def load_image(path) -> np.ndarray:
    """Load as float64 in [0, 1]: (h, w) for grayscale, (h, w, 3) for colour."""
    im = _open(path)
    if im.mode in ("L", "1"):
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    if im.mode in ("RGB", "RGBA", "P", "LA", "CMYK", "YCbCr"):
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        if im.mode == "LA":
            return rgb[..., 0]
        return rgb
    raise DataError(f"unsupported image mode {im.mode!r} in {path} (need 8-bit gray or RGB)")


def to_y(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img
    return rgb_to_ycbcr(img)[..., 0]


def load_y(path) -> np.ndarray:
    """Luminance plane of an 8-bit PNG/PGM (gray planes are taken as-is)."""
    return to_y(load_image(path))


def quantize8(img: np.ndarray) -> np.ndarray:
    """[0, 1] floats to uint8 with round-half-away-from-zero after clamping."""
    v = np.clip(img, 0.0, 1.0) * 255.0
    return np.floor(v + 0.5).astype(np.uint8)


def save_y(img: np.ndarray, path) -> None:
    Image.fromarray(quantize8(img), mode="L").save(path)


def save_rgb(rgb: np.ndarray, path) -> None:
    Image.fromarray(quantize8(rgb), mode="RGB").save(path)


def read_manifest(path) -> list[Path]:
    """One image path per line; blank lines and ``#`` comments ignored.

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    out = []
    for line in lines:
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        p = Path(line)
        out.append(p if p.is_absolute() else path.parent / p)
    return out


# ---------------------------------------------------------------------------
# bicubic resize
# ---------------------------------------------------------------------------


def cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    inner = (a + 2) * ax3 - (a + 3) * ax2 + 1
    outer = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return inner * (ax <= 1) + outer * ((ax > 1) & (ax <= 2))


def _resize_matrix(in_len: int, out_len: int, scale: float, antialias: bool = True) -> np.ndarray:
    """Dense (out_len, in_len) weight matrix for one axis."""
    width = 4.0
    if scale < 1 and antialias:
        kernel = lambda x: scale * cubic(scale * x)  # noqa: E731
        width = width / scale
    else:
        kernel = cubic
    x = np.arange(1, out_len + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(u - width / 2)
    taps = int(np.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    wts = kernel(u[:, None] - idx)
    wts = wts / wts.sum(axis=1, keepdims=True)
    # mirror out-of-range indices (1-based, period 2*in_len)
    period = np.concatenate([np.arange(in_len), np.arange(in_len)[::-1]])
    idx = period[np.mod(idx.astype(np.int64) - 1, 2 * in_len)]
    M = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(M, (rows, idx.ravel()), wts.ravel())
    return M


def output_size(n: int, scale: float) -> int:
    return int(np.floor(n * scale + 0.5))


def bicubic_resize(img: np.ndarray, scale: float, antialias: bool = True) -> np.ndarray:
    """Resize a 2-D (or h, w, c) image by ``scale`` with bicubic interpolation.

    Output dims are ``round(dim * scale)``.  The row axis is processed first.
    """
    scale = float(scale)
    if not scale > 0:
        raise DataError(f"scale must be positive, got {scale}")
    h, w = img.shape[:2]
    oh, ow = output_size(h, scale), output_size(w, scale)
    if oh < 1 or ow < 1:
        raise DataError(f"resizing {h}x{w} by {scale} gives a degenerate {oh}x{ow} image")
    Mh = _resize_matrix(h, oh, scale, antialias)
    Mw = _resize_matrix(w, ow, scale, antialias)
    if img.ndim == 2:
        return Mh @ img @ Mw.T
    return np.einsum("ij,jkc,lk->ilc", Mh, img, Mw)


def modcrop(img: np.ndarray, s: int) -> np.ndarray:
    h, w = img.shape[:2]
    return img[: h - h % s, : w - w % s]


def make_ilr(img: np.ndarray, sr_scale: int) -> tuple[np.ndarray, np.ndarray]:
    """(I_y, I_x): bicubic down-then-up interpolated input and the cropped target."""
    h, w = img.shape[:2]
    if h < sr_scale or w < sr_scale:
        raise DataError(f"image {h}x{w} smaller than scale {sr_scale}")
    I_x = modcrop(img, sr_scale)
    lr = bicubic_resize(I_x, 1.0 / sr_scale)
    I_y = bicubic_resize(lr, sr_scale)
    return I_y, I_x


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentSpec:
    hflip: bool = False
    vflip: bool = False
    rotations: tuple[int, ...] = ()
    downscales: tuple[float, ...] = ()
    sr_scales: tuple[int, ...] = (2, 3, 4)

    def __post_init__(self):
        bad = [r for r in self.rotations if r not in (90, 180, 270)]
        if bad:
            raise DataError(f"rotations must be multiples of 90 in (90, 180, 270), got {bad}")
        if any(not 0 < d < 1 for d in self.downscales):
            raise DataError(f"downscales must lie in (0, 1), got {self.downscales}")
        if not self.sr_scales:
            raise DataError("at least one SR scale is required")

    @classmethod
    def full(cls, sr_scales=(2, 3, 4)) -> "AugmentSpec":
        return cls(True, True, (90, 180, 270), (0.7, 0.5, 0.4), tuple(sr_scales))

    @classmethod
    def none(cls, sr_scales=(2, 3, 4)) -> "AugmentSpec":
        return cls(sr_scales=tuple(sr_scales))


def augment(img: np.ndarray, spec: AugmentSpec) -> list[np.ndarray]:
    """Identity, flips, rotations, then each of those bicubic-downscaled."""
    geo = [img]
    if spec.hflip:
        geo.append(img[:, ::-1])
    if spec.vflip:
        geo.append(img[::-1, :])
    for r in spec.rotations:
        geo.append(np.rot90(img, r // 90))
    geo = [np.ascontiguousarray(g) for g in geo]
    out = list(geo)
    for d in spec.downscales:
        out.extend(bicubic_resize(g, d) for g in geo)
    return out


# ---------------------------------------------------------------------------
# patch sets
# ---------------------------------------------------------------------------


def patch_positions(h: int, w: int, patch: int, stride: int) -> list[tuple[int, int]]:
    if h < patch or w < patch:
        return []
    return [(i, j) for i in range(0, h - patch + 1, stride) for j in range(0, w - patch + 1, stride)]


@dataclass
class PatchSet:
    """Aligned (ILR, HR) patch pairs, stored as (N, 1, p, p) float32 arrays."""

    ilr: np.ndarray
    hr: np.ndarray
    scales: np.ndarray
    patch_size: int = 33
    stride: int = 33
    scales_included: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.ilr.shape != self.hr.shape:
            raise DataError(f"ILR {self.ilr.shape} and HR {self.hr.shape} patches disagree")
        if len(self.scales) != len(self.ilr):
            raise DataError("one scale tag per pair is required")

    def __len__(self) -> int:
        return len(self.ilr)

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(PATCH_MAGIC)
        buf.write(struct.pack("<IQHH", PATCH_VERSION, len(self), self.patch_size, self.stride))
        buf.write(struct.pack("<B", len(self.scales_included)))
        buf.write(bytes(self.scales_included))
        buf.write(np.asarray(self.scales, dtype=np.uint8).tobytes())
        pairs = np.stack([self.ilr, self.hr], axis=1).astype("<f4")
        buf.write(pairs.tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "PatchSet":
        if raw[:8] != PATCH_MAGIC:
            raise DataError("not a patch file (bad magic)")
        version, count, patch, stride = struct.unpack_from("<IQHH", raw, 8)
        if version != PATCH_VERSION:
            raise DataError(f"unsupported patch file version {version}")
        off = 8 + struct.calcsize("<IQHH")
        (ns,) = struct.unpack_from("<B", raw, off)
        off += 1
        included = tuple(raw[off : off + ns])
        off += ns
        scales = np.frombuffer(raw, dtype=np.uint8, count=count, offset=off).copy()
        off += count
        n_floats = count * 2 * patch * patch
        if len(raw) - off != 4 * n_floats:
            raise DataError(f"patch file truncated: expected {4 * n_floats} payload bytes, got {len(raw) - off}")
        pairs = np.frombuffer(raw, dtype="<f4", count=n_floats, offset=off)
        pairs = pairs.reshape(count, 2, 1, patch, patch).astype(np.float32)
        return cls(pairs[:, 0].copy(), pairs[:, 1].copy(), scales, patch, stride, included)

    def save(self, path) -> str:
        raw = self.to_bytes()
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as f:
            f.write(raw)
        os.replace(tmp, path)
        return hashlib.sha256(raw).hexdigest()

    @classmethod
    def load(cls, path) -> "PatchSet":
        try:
            raw = Path(path).read_bytes()
        except OSError as exc:
            raise DataError(f"cannot read patch file {path}: {exc}") from exc
        return cls.from_bytes(raw)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def build_patchset(
    images: Iterable[np.ndarray],
    spec: AugmentSpec,
    patch: int = 33,
    stride: int = 33,
) -> PatchSet:
    """Augment every image, make ILR/HR pairs per SR scale, cut aligned patches.

    Order: image, augmentation, SR scale, then raster scan of patch positions.
    """
    ilr, hr, tags = [], [], []
    for n, img in enumerate(images):
        for a, aug in enumerate(augment(img, spec)):
            for s in spec.sr_scales:
                h, w = aug.shape
                if min(h - h % s, w - w % s) < patch:
                    log.warning("image %d variant %d (%dx%d) too small for %d-pixel patches at x%d; skipped",
                                n, a, h, w, patch, s)
                    continue
                I_y, I_x = make_ilr(aug, s)
                for i, j in patch_positions(*I_x.shape, patch, stride):
                    ilr.append(I_y[i : i + patch, j : j + patch])
                    hr.append(I_x[i : i + patch, j : j + patch])
                    tags.append(s)
    if not ilr:
        raise DataError("no patches produced (empty dataset or all images too small)")
    to4 = lambda xs: np.stack(xs)[:, None].astype(np.float32)  # noqa: E731
    return PatchSet(
        to4(ilr), to4(hr), np.array(tags, dtype=np.uint8), patch, stride, tuple(spec.sr_scales)
    )


def load_images(paths: Sequence) -> list[np.ndarray]:
    return [load_y(p) for p in paths]
