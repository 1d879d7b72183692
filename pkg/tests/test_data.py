from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from rlcsc.data import (
    AugmentSpec,
    PatchSet,
    augment,
    bicubic_resize,
    build_patchset,
    cubic,
    load_image,
    load_y,
    make_ilr,
    output_size,
    quantize8,
    read_manifest,
    rgb_to_ycbcr,
    save_y,
    ycbcr_to_rgb,
)
from rlcsc.errors import DataError


def smooth_image(h, w, seed=0):
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:h, 0:w] / max(h, w)
    img = 0.5 + 0.2 * np.sin(6 * x + rng.uniform(0, 3)) * np.cos(5 * y) + 0.05 * rng.standard_normal((h, w))
    return np.clip(img, 0, 1)


class TestColour:
    def test_white_and_black(self):
        ycc = rgb_to_ycbcr(np.array([[[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]]]))
        assert ycc[0, 0, 0] == pytest.approx(235 / 255, abs=1e-12)
        assert ycc[0, 1, 0] == pytest.approx(16 / 255, abs=1e-12)
        np.testing.assert_allclose(ycc[0, :, 1:], 128 / 255, atol=1e-12)

    def test_round_trip(self):
        rgb = np.random.default_rng(0).random((4, 5, 3))
        np.testing.assert_allclose(ycbcr_to_rgb(rgb_to_ycbcr(rgb)), rgb, atol=1e-12)

    def test_gray_passes_through(self, tmp_path):
        arr = np.random.default_rng(1).integers(0, 256, (6, 7), dtype=np.uint8)
        Image.fromarray(arr, mode="L").save(tmp_path / "g.png")
        np.testing.assert_array_equal(load_y(tmp_path / "g.png"), arr / 255.0)

    def test_colour_load_takes_luma(self, tmp_path):
        arr = np.random.default_rng(2).integers(0, 256, (5, 4, 3), dtype=np.uint8)
        Image.fromarray(arr, mode="RGB").save(tmp_path / "c.png")
        np.testing.assert_allclose(load_y(tmp_path / "c.png"), rgb_to_ycbcr(arr / 255.0)[..., 0])

    def test_save_load_within_half_step(self, tmp_path):
        img = np.random.default_rng(3).random((8, 9))
        save_y(img, tmp_path / "y.png")
        assert np.abs(load_y(tmp_path / "y.png") - img).max() <= 0.5 / 255 + 1e-12

    def test_pgm(self, tmp_path):
        arr = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
        Image.fromarray(arr, mode="L").save(tmp_path / "a.pgm")
        np.testing.assert_array_equal(load_image(tmp_path / "a.pgm"), arr / 255.0)

    def test_unreadable(self, tmp_path):
        (tmp_path / "x.png").write_bytes(b"not an image")
        with pytest.raises(DataError):
            load_image(tmp_path / "x.png")

    def test_quantize_rounds_half_up(self):
        assert quantize8(np.array([0.5 / 255, 1.49 / 255, -1.0, 2.0])).tolist() == [1, 1, 0, 255]


class TestManifest:
    def test_comments_and_relative_paths(self, tmp_path):
        m = tmp_path / "list.txt"
        m.write_text("# header\na.png\n\n  b.png  # trailing\n/abs/c.png\n")
        assert read_manifest(m) == [tmp_path / "a.png", tmp_path / "b.png", Path("/abs/c.png")]

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            read_manifest(tmp_path / "nope.txt")


class TestResize:
    def test_kernel_values(self):
        assert cubic(np.array([0.0]))[0] == 1.0
        np.testing.assert_allclose(cubic(np.array([1.0, 2.0, 2.5])), 0.0)
        # a = -0.5: k(0.5) = 0.5625, k(1.5) = -0.0625
        np.testing.assert_allclose(cubic(np.array([0.5, 1.5, -0.5])), [0.5625, -0.0625, 0.5625])

    def test_output_size(self):
        assert output_size(99, 1 / 3) == 33
        assert output_size(33, 3) == 99
        assert output_size(5, 0.5) == 3

    def test_scale_one_identity(self):
        img = np.random.default_rng(0).random((11, 13))
        np.testing.assert_allclose(bicubic_resize(img, 1), img, atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(c=st.floats(0, 1), h=st.integers(4, 20), w=st.integers(4, 20),
           s=st.sampled_from([2, 3, 4, 0.5, 1 / 3, 0.7]))
    def test_preserves_constants(self, c, h, w, s):
        out = bicubic_resize(np.full((h, w), c), s)
        np.testing.assert_allclose(out, c, atol=1e-12)

    @pytest.mark.parametrize("s", [2, 3, 4, 0.5, 1 / 3])
    def test_interior_matches_pillow(self, s):
        """Pillow's float BICUBIC uses the same kernel and support; only edges differ."""
        img = smooth_image(60, 48, seed=int(s * 10)).astype(np.float32)
        out = bicubic_resize(img.astype(np.float64), s)
        ref = np.asarray(Image.fromarray(img, mode="F").resize(out.shape[::-1], Image.BICUBIC), dtype=np.float64)
        b = int(np.ceil(4 * max(s, 1)))
        np.testing.assert_allclose(out[b:-b, b:-b], ref[b:-b, b:-b], atol=1e-6)

    def test_mirrored_boundary_by_hand(self):
        # x2 upscale of a 1-D ramp: output pixel 1 sits at input coordinate 0.75
        # (1-based), taps at -2..3 mirror to 3, 2, 1, 1, 2, 3.
        v = np.array([1.0, 2.0, 4.0, 8.0, 16.0, 32.0])
        out = bicubic_resize(np.tile(v, (3, 1)), 2)[1]
        u = 0.75
        taps = np.arange(-2, 4)
        wts = cubic(u - taps)
        wts /= wts.sum()
        mirrored = {-2: 3, -1: 2, 0: 1, 1: 1, 2: 2, 3: 3}
        expected = sum(wt * v[mirrored[t] - 1] for wt, t in zip(wts, taps))
        assert out[0] == pytest.approx(expected, abs=1e-12)

    def test_make_ilr_crops(self):
        Iy, Ix = make_ilr(smooth_image(100, 99), 3)
        assert Ix.shape == Iy.shape == (99, 99)
        Iy, Ix = make_ilr(smooth_image(99, 99), 3)
        assert Ix.shape == (99, 99)

    def test_make_ilr_too_small(self):
        with pytest.raises(DataError):
            make_ilr(np.zeros((2, 2)), 3)


class TestAugment:
    def test_variant_count(self):
        img = smooth_image(40, 40)
        assert len(augment(img, AugmentSpec.full())) == 24
        assert len(augment(img, AugmentSpec.none())) == 1

    def test_geometric_variants(self):
        img = np.arange(12.0).reshape(3, 4)
        spec = AugmentSpec(hflip=True, vflip=True, rotations=(90, 180, 270))
        out = augment(img, spec)
        np.testing.assert_array_equal(out[1], img[:, ::-1])
        np.testing.assert_array_equal(out[2], img[::-1])
        np.testing.assert_array_equal(np.rot90(out[3]), out[4])
        np.testing.assert_array_equal(out[4], img[::-1, ::-1])
        # every variant is a rearrangement of the same pixels
        for o in out:
            assert Counter(o.ravel().tolist()) == Counter(img.ravel().tolist())

    def test_downscaled_sizes(self):
        out = augment(smooth_image(40, 30), AugmentSpec(downscales=(0.5,)))
        assert [o.shape for o in out] == [(40, 30), (20, 15)]

    def test_bad_rotation(self):
        with pytest.raises(DataError):
            AugmentSpec(rotations=(45,))


class TestPatchSet:
    @pytest.mark.parametrize("size,patch,stride,count", [(99, 33, 33, 9), (99, 33, 14, 25), (33, 33, 33, 1)])
    def test_counts(self, size, patch, stride, count):
        ps = build_patchset([smooth_image(size, size)], AugmentSpec.none((3,)), patch, stride)
        assert len(ps) == count

    def test_rectangular_count(self):
        ps = build_patchset([smooth_image(66, 99)], AugmentSpec.none((3,)))
        assert len(ps) == 6

    def test_full_augmentation_count_formula(self):
        img = smooth_image(100, 100)
        spec = AugmentSpec.full((2, 3, 4))
        expected = 0
        for v in augment(img, spec):
            for s in spec.sr_scales:
                h, w = v.shape[0] - v.shape[0] % s, v.shape[1] - v.shape[1] % s
                if min(h, w) >= 33:
                    expected += ((h - 33) // 33 + 1) * ((w - 33) // 33 + 1)
        assert len(build_patchset([img], spec)) == expected

    def test_pairs_are_aligned(self):
        img = smooth_image(99, 99)
        Iy, Ix = make_ilr(img, 3)
        ps = build_patchset([img], AugmentSpec.none((3,)))
        np.testing.assert_array_equal(ps.hr[4, 0], Ix[33:66, 33:66].astype(np.float32))
        np.testing.assert_array_equal(ps.ilr[5, 0], Iy[33:66, 66:99].astype(np.float32))
        assert ps.hr.dtype == np.float32

    def test_deterministic_bytes(self):
        imgs = [smooth_image(70, 80, 1), smooth_image(50, 50, 2)]
        a = build_patchset(imgs, AugmentSpec(hflip=True, sr_scales=(2, 3)))
        b = build_patchset(imgs, AugmentSpec(hflip=True, sr_scales=(2, 3)))
        assert a.to_bytes() == b.to_bytes()

    def test_file_round_trip(self, tmp_path):
        ps = build_patchset([smooth_image(70, 80)], AugmentSpec.none((2, 3)))
        digest = ps.save(tmp_path / "p.bin")
        back = PatchSet.load(tmp_path / "p.bin")
        np.testing.assert_array_equal(back.ilr, ps.ilr)
        np.testing.assert_array_equal(back.hr, ps.hr)
        np.testing.assert_array_equal(back.scales, ps.scales)
        assert back.scales_included == (2, 3)
        assert back.digest() == digest

    def test_header_layout(self):
        ps = build_patchset([smooth_image(33, 33)], AugmentSpec.none((3,)))
        raw = ps.to_bytes()
        assert raw[:8] == b"RLCSCPAT"
        assert int.from_bytes(raw[8:12], "little") == 1
        assert int.from_bytes(raw[12:20], "little") == 1
        assert len(raw) == 8 + 16 + 1 + 1 + 1 + 2 * 33 * 33 * 4

    def test_corrupt_files(self, tmp_path):
        raw = build_patchset([smooth_image(33, 33)], AugmentSpec.none((3,))).to_bytes()
        with pytest.raises(DataError, match="magic"):
            PatchSet.from_bytes(b"XXXXXXXX" + raw[8:])
        with pytest.raises(DataError, match="truncated"):
            PatchSet.from_bytes(raw[:-4])

    def test_small_images_skipped(self):
        ps = build_patchset([smooth_image(20, 20), smooth_image(33, 33)], AugmentSpec.none((3,)))
        assert len(ps) == 1
        with pytest.raises(DataError, match="no patches"):
            build_patchset([smooth_image(20, 20)], AugmentSpec.none((3,)))
