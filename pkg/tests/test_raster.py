import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import bicubic_upsample_pixel, gaussian_2d
from pancolorgan.errors import ArityError, RangeViolationError, ValidationError
from pancolorgan.raster import (NormalizationMode, NormalizationSpec, Raster, ResampleSpec, ValueRange,
                                denormalize, fit_minmax, gaussian_blur, normalize, resize_bicubic,
                                to_grayscale)

SPEC12 = NormalizationSpec(12)


def dn(values):
    return Raster(np.asarray(values, dtype=float).reshape(1, -1, 1), ValueRange.RAW_DN)


class TestRasterType:
    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError):
            Raster(np.array([[[np.nan]]]))

    def test_rejects_out_of_range_unit_signed(self):
        with pytest.raises(RangeViolationError, match="'NIR'"):
            Raster(np.full((2, 2, 4), 0.5) + np.array([0, 0, 0, 0.6]),
                   band_names=("B", "G", "R", "NIR"))

    def test_two_dimensional_input_gets_band_axis(self):
        assert Raster(np.zeros((3, 5))).shape == (3, 5, 1)


class TestNormalize:
    @pytest.mark.parametrize("value, expected", [(0, -1.0), (4095, 1.0), (2047.5, 0.0)])
    def test_bit_depth_12_anchor_points(self, value, expected):
        assert normalize(dn([value]), SPEC12).data.item() == expected

    @pytest.mark.parametrize("value, expected", [(-1.0, 0.0), (0.0, 2047.5)])
    def test_denormalize_anchor_points(self, value, expected):
        r = Raster(np.array([[[value]]]))
        assert denormalize(r, SPEC12).data.item() == expected

    def test_out_of_range_dn_names_band(self):
        r = Raster(np.array([[[10.0, 5000.0]]]), ValueRange.RAW_DN, ("PAN", "NIR"))
        with pytest.raises(RangeViolationError, match="NIR"):
            normalize(r, SPEC12)

    def test_requires_raw_dn(self):
        with pytest.raises(ValidationError):
            normalize(Raster(np.zeros((2, 2, 1))), SPEC12)

    @pytest.mark.parametrize("bits", [8, 11, 12, 16])
    def test_round_trip_random_tensor(self, rng, bits):
        data = rng.uniform(0, 2 ** bits - 1, (16, 16, 4))
        r = Raster(data, ValueRange.RAW_DN)
        back = denormalize(normalize(r, NormalizationSpec(bits)), NormalizationSpec(bits))
        np.testing.assert_allclose(back.data, data, rtol=1e-12, atol=1e-12 * (2 ** bits))

    def test_minmax_mode_round_trip(self, rng):
        r = Raster(rng.uniform(100, 900, (8, 8, 4)), ValueRange.RAW_DN)
        spec = fit_minmax(r)
        assert spec.mode is NormalizationMode.PER_SCENE_MINMAX
        n = normalize(r, spec)
        assert n.data.min() == -1.0 and n.data.max() == 1.0
        np.testing.assert_allclose(denormalize(n, spec).data, r.data, rtol=1e-12)

    def test_unsupported_bit_depth(self):
        with pytest.raises(ValidationError):
            NormalizationSpec(10)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (4, 5, 3), elements=st.floats(0, 4095)))
    def test_round_trip_property(self, data):
        r = Raster(data, ValueRange.RAW_DN)
        back = denormalize(normalize(r, SPEC12), SPEC12).data
        np.testing.assert_allclose(back, data, rtol=1e-12, atol=1e-9)


class TestGrayscale:
    def test_equal_bands(self):
        r = Raster(np.full((4, 4, 4), 0.37))
        np.testing.assert_allclose(to_grayscale(r).data, 0.37, atol=1e-15)

    def test_pixel_mean(self):
        r = Raster(np.array([[[0.2, 0.4, 0.6, 0.8]]]))
        assert to_grayscale(r).data.item() == pytest.approx(0.5, abs=1e-15)

    def test_random_tensor_matches_loop_mean(self, rng):
        data = rng.uniform(-1, 1, (8, 8, 4))
        gray = to_grayscale(Raster(data)).data
        for y in range(8):
            for x in range(8):
                assert gray[y, x, 0] == pytest.approx(sum(data[y, x]) / 4, abs=1e-15)

    def test_single_band_rejected(self):
        with pytest.raises(ArityError):
            to_grayscale(Raster(np.zeros((2, 2, 1))))

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (3, 3, 4), elements=st.floats(-0.4, 0.4)),
           st.floats(-1.0, 1.0), st.floats(-0.5, 0.5))
    def test_commutes_with_affine_maps(self, data, a, b):
        lhs = to_grayscale(Raster(a * data + b)).data
        rhs = a * to_grayscale(Raster(data)).data + b
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


class TestResize:
    def test_constant_preserved(self):
        r = Raster(np.full((37, 23, 2), 0.3))
        for h, w in [(1, 1), (5, 90), (128, 7), (37, 23)]:
            np.testing.assert_allclose(resize_bicubic(r, h, w).data, 0.3, atol=1e-9)

    def test_factor_four_reduction_shape(self, rng):
        out = resize_bicubic(Raster(rng.uniform(-1, 1, (256, 256, 4))), 64, 64)
        assert out.shape == (64, 64, 4)

    def test_non_positive_size(self):
        with pytest.raises(ValidationError):
            resize_bicubic(Raster(np.zeros((4, 4, 1))), 0, 4)

    def test_same_size_is_identity(self, rng):
        data = rng.uniform(-1, 1, (9, 11, 2))
        np.testing.assert_array_equal(resize_bicubic(Raster(data), 9, 11).data, data)

    def test_ramp_upsample_matches_direct_kernel(self):
        ramp = np.add.outer(np.arange(8.0), 0.5 * np.arange(8.0)) / 20.0
        out = resize_bicubic(Raster(ramp), 16, 16, ResampleSpec(bicubic_a=-0.5)).data[:, :, 0]
        for i in range(16):
            for j in range(16):
                assert out[i, j] == pytest.approx(bicubic_upsample_pixel(ramp, i, j, 2), abs=1e-12)
        # Catmull-Rom reproduces linear functions away from the clamped border
        for i in range(4, 12):
            for j in range(4, 12):
                sy, sx = (i + 0.5) / 2 - 0.5, (j + 0.5) / 2 - 0.5
                assert out[i, j] == pytest.approx((sy + 0.5 * sx) / 20.0, abs=1e-12)

    def test_kernel_parameter_is_honoured(self, rng):
        img = rng.uniform(-0.5, 0.5, (8, 8))
        out = resize_bicubic(Raster(img), 16, 16, ResampleSpec(bicubic_a=-0.75)).data[:, :, 0]
        assert out[7, 9] == pytest.approx(bicubic_upsample_pixel(img, 7, 9, 2, a=-0.75), abs=1e-12)

    def test_overshoot_clipped_to_declared_range(self):
        step = np.where(np.arange(16) < 8, -1.0, 1.0)[None, :].repeat(4, 0)
        out = resize_bicubic(Raster(step), 4, 64).data
        assert out.min() >= -1.0 and out.max() <= 1.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 40), st.integers(1, 40), st.floats(-1, 1))
    def test_shape_and_constant_property(self, h, w, c):
        out = resize_bicubic(Raster(np.full((13, 17, 1), c)), h, w).data
        assert out.shape == (h, w, 1)
        np.testing.assert_allclose(out, c, atol=1e-9)


class TestBlur:
    def test_constant_unchanged(self):
        out = gaussian_blur(Raster(np.full((10, 12, 3), -0.4)), 5, 2.0).data
        np.testing.assert_allclose(out, -0.4, atol=1e-9)

    def test_impulse_response_is_normalized_gaussian(self):
        img = np.zeros((9, 9))
        img[4, 4] = 1.0
        out = gaussian_blur(Raster(img), 5, 2.0).data[:, :, 0]
        np.testing.assert_allclose(out[2:7, 2:7], gaussian_2d(5, 2.0), atol=1e-15)
        assert out.sum() == pytest.approx(1.0, abs=1e-12)
        assert out[:2].sum() == 0 and out[7:].sum() == 0

    def test_reduces_variance(self, rng):
        img = rng.uniform(-1, 1, (32, 32, 2))
        assert gaussian_blur(Raster(img), 5, 2.0).data.var() < img.var()

    def test_even_kernel_rejected(self):
        with pytest.raises(ValidationError):
            gaussian_blur(Raster(np.zeros((8, 8, 1))), 4, 2.0)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (11, 7, 2), elements=st.floats(-1, 1)))
    def test_preserves_mean_and_never_widens_range(self, data):
        out = gaussian_blur(Raster(data), 5, 2.0).data
        np.testing.assert_allclose(out.mean(axis=(0, 1)), data.mean(axis=(0, 1)), atol=1e-9)
        for b in range(2):
            assert np.ptp(out[:, :, b]) <= np.ptp(data[:, :, b]) + 1e-12
