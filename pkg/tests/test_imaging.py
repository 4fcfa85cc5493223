"""Core raster primitives: bit-exactness, bounds, and the PSNR contract."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xrayinpaint.errors import BoundsError, ShapeError
from xrayinpaint.imaging import (
    MaskSpec,
    PatchSpec,
    apply_mask,
    center_mask,
    compose,
    crop,
    denormalize,
    load_gray_png,
    normalize,
    paste_patch,
    psnr,
    quantize_u8,
    save_gray_png,
    subtraction_map,
)

from .oracles import psnr_loops

CENTER64 = center_mask(128, 64)


def rand_patch(rng, size=128):
    return rng.integers(0, 256, size=(size, size), dtype=np.uint8)


class TestCrop:
    def test_index_arithmetic(self):
        img = np.arange(16, dtype=np.uint8).reshape(4, 4)
        out = crop(img, PatchSpec(1, 1, 2))
        assert out.tolist() == [[5, 6], [9, 10]]

    def test_identity_crop(self):
        rng = np.random.default_rng(0)
        img = rand_patch(rng, 32)
        assert np.array_equal(crop(img, PatchSpec(0, 0, 32)), img)

    def test_out_of_bounds_names_coordinate(self):
        img = np.zeros((1024, 1024), dtype=np.uint8)
        with pytest.raises(BoundsError, match="1028"):
            crop(img, PatchSpec(900, 900, 128))

    def test_returns_copy(self):
        img = np.zeros((8, 8), dtype=np.uint8)
        out = crop(img, PatchSpec(0, 0, 4))
        out[0, 0] = 7
        assert img[0, 0] == 0


class TestApplyMask:
    def test_center_mask_changes_4096_pixels(self):
        rng = np.random.default_rng(1)
        patch = rng.integers(1, 256, size=(128, 128), dtype=np.uint8)  # no zeros
        out = apply_mask(patch, CENTER64, fill=0)
        assert int(np.sum(out != patch)) == 4096
        assert np.all(out[32:96, 32:96] == 0)

    def test_empty_hole_is_identity(self):
        rng = np.random.default_rng(2)
        patch = rand_patch(rng, 16)
        out = apply_mask(patch, MaskSpec(4, 4, 0, 0), fill=9)
        assert np.array_equal(out, patch)

    def test_fill_fixed_point(self):
        patch = np.full((16, 16), 7, dtype=np.uint8)
        out = apply_mask(patch, MaskSpec(2, 2, 8, 8), fill=7)
        assert np.array_equal(out, patch)

    def test_mask_exceeding_patch(self):
        patch = np.zeros((16, 16), dtype=np.uint8)
        with pytest.raises(BoundsError):
            apply_mask(patch, MaskSpec(10, 10, 8, 8), fill=0)

    def test_exact_pixel_set(self):
        rng = np.random.default_rng(3)
        patch = rand_patch(rng, 32)
        mask = MaskSpec(5, 7, 11, 6)
        out = apply_mask(patch, mask, fill=200)
        hole = mask.bool_mask(32, 32)
        assert np.array_equal(out[~hole], patch[~hole])
        assert np.all(out[hole] == 200)


class TestCompose:
    def test_round_trip(self):
        rng = np.random.default_rng(4)
        ctx = rand_patch(rng)
        hole_patch = crop(ctx, PatchSpec(CENTER64.hx, CENTER64.hy, 64))
        assert np.array_equal(compose(ctx, hole_patch, CENTER64), ctx)

    def test_all_zero_context_all_255_hole(self):
        ctx = np.zeros((128, 128), dtype=np.uint8)
        hole = np.full((64, 64), 255, dtype=np.uint8)
        out = compose(ctx, hole, CENTER64)
        assert int(np.sum(out == 255)) == 4096

    def test_compose_then_mask_equals_mask(self):
        rng = np.random.default_rng(5)
        ctx = rand_patch(rng)
        hole = rand_patch(rng, 64)
        lhs = apply_mask(compose(ctx, hole, CENTER64), CENTER64, fill=3)
        rhs = apply_mask(ctx, CENTER64, fill=3)
        assert np.array_equal(lhs, rhs)

    def test_shape_mismatch(self):
        ctx = np.zeros((128, 128), dtype=np.uint8)
        with pytest.raises(ShapeError):
            compose(ctx, np.zeros((63, 64), dtype=np.uint8), CENTER64)


class TestPastePatch:
    def test_round_trip(self):
        rng = np.random.default_rng(6)
        img = rand_patch(rng, 256)
        spec = PatchSpec(40, 60, 128)
        assert np.array_equal(paste_patch(img, crop(img, spec), spec), img)

    def test_hole_size_bound(self):
        rng = np.random.default_rng(7)
        img = rand_patch(rng, 256)
        spec = PatchSpec(10, 20, 128)
        patch = crop(img, spec)
        regen = compose(patch, rand_patch(rng, 64), CENTER64)
        altered = paste_patch(img, regen, spec)
        assert int(np.sum(altered != img)) <= 4096

    def test_full_replacement(self):
        rng = np.random.default_rng(8)
        img = rand_patch(rng, 64)
        patch = rand_patch(rng, 64)
        assert np.array_equal(paste_patch(img, patch, PatchSpec(0, 0, 64)), patch)

    def test_exact_pixel_set(self):
        rng = np.random.default_rng(9)
        img = rand_patch(rng, 96)
        patch = rand_patch(rng, 32)
        spec = PatchSpec(11, 23, 32)
        out = paste_patch(img, patch, spec)
        window = np.zeros((96, 96), dtype=bool)
        window[23:55, 11:43] = True
        assert np.array_equal(out[window].reshape(32, 32), patch)
        assert np.array_equal(out[~window], img[~window])


class TestPsnr:
    def test_identical_region_is_inf(self):
        rng = np.random.default_rng(10)
        a = rand_patch(rng)
        b = a.copy()
        b[0, 0] ^= 0xFF  # outside the center region
        assert psnr(a, b, CENTER64) == math.inf

    def test_max_difference_is_zero_db(self):
        a = np.zeros((128, 128), dtype=np.uint8)
        b = np.full((128, 128), 255, dtype=np.uint8)
        assert psnr(a, b, CENTER64) == 0.0

    def test_unit_difference(self):
        a = np.zeros((128, 128), dtype=np.uint8)
        b = np.ones((128, 128), dtype=np.uint8)
        expected = 20.0 * math.log10(255.0)  # 48.1308... dB
        assert psnr(a, b, CENTER64) == pytest.approx(expected, abs=1e-12)
        assert psnr(a, b, CENTER64) == pytest.approx(48.13080361, abs=1e-6)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            a, b = rand_patch(rng), rand_patch(rng)
            got = psnr(a, b, CENTER64)
            want = psnr_loops(a, b, 32, 32, 64, 64)
            assert got == pytest.approx(want, abs=1e-9)

    def test_symmetry_to_the_last_bit(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            a, b = rand_patch(rng), rand_patch(rng)
            assert psnr(a, b, CENTER64) == psnr(b, a, CENTER64)

    def test_monotone_in_single_pixel_error(self):
        rng = np.random.default_rng(13)
        a, b = rand_patch(rng), rand_patch(rng)
        before = psnr(a, b, CENTER64)
        bb = b.copy()
        j, i = 50, 50
        # push one in-region pixel further from a's value
        bb[j, i] = a[j, i] ^ 0xFF
        assert abs(int(bb[j, i]) - int(a[j, i])) > abs(int(b[j, i]) - int(a[j, i]))
        assert psnr(a, bb, CENTER64) < before

    def test_region_outside_pixels_ignored(self):
        rng = np.random.default_rng(14)
        a, b = rand_patch(rng), rand_patch(rng)
        base = psnr(a, b, CENTER64)
        b2 = b.copy()
        b2[:20, :] = 0  # entirely outside the center region
        assert psnr(a, b2, CENTER64) == base

    def test_empty_region_rejected(self):
        a = np.zeros((8, 8), dtype=np.uint8)
        with pytest.raises(ValueError):
            psnr(a, a, MaskSpec(0, 0, 0, 0))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(
                np.zeros((8, 8), dtype=np.uint8),
                np.zeros((9, 8), dtype=np.uint8),
                MaskSpec(0, 0, 2, 2),
            )


class TestSubtractionMap:
    def test_identical_inputs(self):
        rng = np.random.default_rng(15)
        a = rand_patch(rng)
        m = subtraction_map(a, a)
        assert np.all(m.values == 0)
        assert np.all(m.display == 128)

    def test_clamped_display(self):
        a = np.full((16, 16), 200, dtype=np.uint8)
        b = np.full((16, 16), 50, dtype=np.uint8)
        m = subtraction_map(a, b)
        assert np.all(m.values == 150)
        assert np.all(m.display == 255)  # 150+128=278 clamps

    def test_antisymmetry(self):
        rng = np.random.default_rng(16)
        a, b = rand_patch(rng), rand_patch(rng)
        assert np.array_equal(subtraction_map(a, b).values, -subtraction_map(b, a).values)

    def test_exact_integer_differences(self):
        a = np.array([[0, 255], [128, 3]], dtype=np.uint8)
        b = np.array([[255, 0], [128, 4]], dtype=np.uint8)
        assert subtraction_map(a, b).values.tolist() == [[-255, 255], [0, -1]]


class TestQuantization:
    def test_half_away_from_zero(self):
        vals = np.array([0.5, 1.5, 2.5, 254.5])
        assert quantize_u8(vals).tolist() == [1, 2, 3, 255]

    def test_denormalize_endpoints(self):
        assert denormalize(np.array([-1.0, 1.0])).tolist() == [0, 255]

    def test_round_trip_u8(self):
        rng = np.random.default_rng(17)
        p = rand_patch(rng, 16)
        assert np.array_equal(denormalize(normalize(p)), p)


class TestPngIo:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(18)
        p = rand_patch(rng, 64)
        path = save_gray_png(p, tmp_path / "img_0001.png")
        img = load_gray_png(path)
        assert img.id == "img_0001"
        assert np.array_equal(img.pixels, p)


@settings(max_examples=50, deadline=None)
@given(
    size=st.integers(8, 48),
    seed=st.integers(0, 2**31 - 1),
)
def test_compose_crop_round_trip_property(size, seed):
    rng = np.random.default_rng(seed)
    ctx = rng.integers(0, 256, size=(size, size), dtype=np.uint8)
    hw = rng.integers(1, size + 1)
    hh = rng.integers(1, size + 1)
    hx = rng.integers(0, size - hw + 1)
    hy = rng.integers(0, size - hh + 1)
    mask = MaskSpec(int(hx), int(hy), int(hw), int(hh))
    hole = ctx[mask.slices()].copy()
    assert np.array_equal(compose(ctx, hole, mask), ctx)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_psnr_oracle_property(seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 256, size=(32, 32), dtype=np.uint8)
    b = rng.integers(0, 256, size=(32, 32), dtype=np.uint8)
    mask = MaskSpec(8, 8, 16, 16)
    assert psnr(a, b, mask) == pytest.approx(psnr_loops(a, b, 8, 8, 16, 16), abs=1e-9)
