import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from flowsdf.sdf import (binary_field, boundary_pixels, denormalize_sdf, edt_squared,
                         mask_from_sdf, normalize_sdf, sdf_from_mask)
from oracles import brute_boundary, brute_edt_squared, brute_sdf, random_mask

masks = st.tuples(st.integers(1, 12), st.integers(1, 12)).flatmap(
    lambda shape: arrays(np.bool_, shape))


def centred_square():
    m = np.zeros((5, 5), np.uint8)
    m[1:4, 1:4] = 1
    return m


class TestBoundary:
    def test_single_pixel_is_its_own_boundary(self):
        np.testing.assert_array_equal(boundary_pixels([[0, 1, 0]]), [[0, 1, 0]])

    def test_ring_of_centred_square(self):
        expected = centred_square()
        expected[2, 2] = 0
        np.testing.assert_array_equal(boundary_pixels(centred_square()), expected)
        np.testing.assert_array_equal(brute_boundary(centred_square()), expected)

    def test_empty(self):
        assert not boundary_pixels(np.zeros((4, 4))).any()

    def test_image_border_is_not_background(self):
        assert not boundary_pixels(np.ones((3, 3))).any()

    @given(masks)
    def test_matches_neighbourhood_enumeration(self, mask):
        np.testing.assert_array_equal(boundary_pixels(mask), brute_boundary(mask))


class TestEdt:
    def test_line(self):
        np.testing.assert_array_equal(edt_squared([[0, 0, 1, 0, 0]]), [[4, 1, 0, 1, 4]])

    def test_all_seeds(self):
        np.testing.assert_array_equal(edt_squared(np.ones((3, 4))), np.zeros((3, 4)))

    def test_no_seeds_is_infinite(self):
        assert np.isinf(edt_squared(np.zeros((3, 3)))).all()

    def test_zero_exactly_at_seeds(self):
        rng = np.random.default_rng(3)
        s = rng.random((9, 11)) < 0.2
        d = edt_squared(s)
        np.testing.assert_array_equal(d == 0, s)

    @given(masks)
    @settings(max_examples=200)
    def test_matches_brute_force(self, seeds):
        np.testing.assert_array_equal(edt_squared(seeds), brute_edt_squared(seeds))

    def test_random_64(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            s = rng.random((64, 64)) < rng.uniform(0.001, 0.05)
            np.testing.assert_array_equal(edt_squared(s), brute_edt_squared(s))

    def test_integer_valued(self):
        rng = np.random.default_rng(5)
        d = edt_squared(rng.random((20, 13)) < 0.1)
        np.testing.assert_array_equal(d, np.round(d))


class TestSdf:
    def test_line(self):
        np.testing.assert_allclose(sdf_from_mask([[0, 0, 1, 0, 0]], 1.5), [[1.5, 1, 0, 1, 1.5]])

    def test_centred_square(self):
        sdf = sdf_from_mask(centred_square(), 3)
        assert sdf[2, 2] == -1
        assert sdf[0, 0] == pytest.approx(np.sqrt(2))
        assert sdf[0, 2] == 1

    def test_empty_and_full(self):
        np.testing.assert_array_equal(sdf_from_mask(np.zeros((4, 4)), 2), np.full((4, 4), 2.0))
        np.testing.assert_array_equal(sdf_from_mask(np.ones((4, 4)), 2), np.full((4, 4), -2.0))

    @pytest.mark.parametrize("delta", [0, -1.0])
    def test_rejects_non_positive_delta(self, delta):
        with pytest.raises(ValueError):
            sdf_from_mask(np.ones((2, 2)), delta)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            m = random_mask(rng, 10)
            delta = rng.uniform(0.5, 6)
            np.testing.assert_allclose(sdf_from_mask(m, delta), brute_sdf(m, delta), rtol=0, atol=1e-12)

    @given(masks, st.floats(1.0, 12.0))
    def test_properties(self, mask, delta):
        sdf = sdf_from_mask(mask, delta)
        boundary = boundary_pixels(mask).astype(bool)
        assert np.all(np.abs(sdf) <= delta)
        if boundary.any():
            np.testing.assert_array_equal(sdf == 0, boundary)
        assert np.all(mask[sdf < 0])
        assert not np.any(mask[sdf > 0])
        np.testing.assert_array_equal(mask_from_sdf(sdf), mask)


class TestMaskFromSdf:
    def test_zero_is_foreground(self):
        np.testing.assert_array_equal(mask_from_sdf([1.5, 1, 0, 1, 1.5]), [0, 0, 1, 0, 0])

    def test_all_negative(self):
        assert mask_from_sdf(np.full((3, 3), -4.0)).all()


class TestNormalize:
    def test_values(self):
        assert normalize_sdf(0.0, 5) == 0
        assert normalize_sdf(-5.0, 5) == -1

    def test_round_trip(self):
        rng = np.random.default_rng(2)
        s = rng.uniform(-7, 7, size=(16, 16))
        np.testing.assert_allclose(denormalize_sdf(normalize_sdf(s, 7), 7), s, rtol=1e-15, atol=0)

    def test_binary_field_thresholds_back(self):
        m = np.array([[0, 1], [1, 0]])
        np.testing.assert_array_equal(binary_field(m), [[1, -1], [-1, 1]])
        np.testing.assert_array_equal(mask_from_sdf(binary_field(m)), m)
