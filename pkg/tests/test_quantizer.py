import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catquant.quantizer import (
    QuantParams,
    dequantize,
    derive_minmax,
    fake_quantize,
    quantize,
)


def make_params(bit_width=2, scale=0.5, zero_point=0):
    return QuantParams(
        bit_width=bit_width,
        scale=np.asarray(scale, dtype=np.float64),
        zero_point=np.asarray(zero_point, dtype=np.int64),
    )


class TestQuantParams:
    def test_grid_bounds(self):
        p = make_params(bit_width=2)
        assert (p.q_min, p.q_max) == (-2, 1)
        p8 = make_params(bit_width=8)
        assert (p8.q_min, p8.q_max) == (-128, 127)

    def test_rejects_bad_bit_width(self):
        for bits in (1, 9, 0):
            with pytest.raises(ValueError):
                make_params(bit_width=bits)

    def test_rejects_nonpositive_scale(self):
        with pytest.raises(ValueError):
            make_params(scale=0.0)

    def test_per_channel_shape_checks(self):
        with pytest.raises(ValueError):
            QuantParams(bit_width=4, scale=np.ones(3), zero_point=np.zeros(3, np.int64))
        QuantParams(
            bit_width=4,
            scale=np.ones(3),
            zero_point=np.zeros(3, np.int64),
            channel_axis=0,
        )


class TestDeriveMinmax:
    def test_two_bit_asymmetric_range(self):
        p = derive_minmax(np.array([-1.0, 0.5]), 2)
        assert p.scale == pytest.approx(0.5)
        assert p.zero_point == 0

    def test_eight_bit_unit_interval(self):
        p = derive_minmax(np.array([0.0, 1.0]), 8)
        assert p.scale == pytest.approx(1.0 / 255.0)
        assert p.zero_point == -128

    def test_symmetric_range_round_half_even(self):
        # z = rint(-128 + 127.5) = rint(-0.5) -> 0 under half-to-even
        p = derive_minmax(np.array([-1.0, 1.0]), 8)
        assert p.zero_point == 0

    def test_constant_slice_never_crashes(self):
        p = derive_minmax(np.full(5, 3.0), 4)
        assert p.scale == pytest.approx(3.0 * 2.0 ** (1 - 4))
        assert p.zero_point == 0
        p0 = derive_minmax(np.zeros(5), 4)
        assert p0.scale == pytest.approx(2.0 ** (1 - 4))
        out = fake_quantize(np.zeros(5), p0)
        np.testing.assert_array_equal(out, np.zeros(5))

    def test_per_channel_matches_per_row_derivation(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=(4, 6))
        p = derive_minmax(w, 4, channel_axis=0)
        for row in range(4):
            p_row = derive_minmax(w[row], 4)
            assert p.scale[row] == pytest.approx(float(p_row.scale))
            assert p.zero_point[row] == int(p_row.zero_point)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            derive_minmax(np.empty(0), 4)


class TestQuantizeDequantize:
    def test_hand_evaluated_quantize(self):
        p = make_params()
        assert quantize(0.3, p) == 1

    def test_saturation(self):
        p = make_params()
        assert quantize(10.0, p) == p.q_max
        assert quantize(-10.0, p) == p.q_min

    def test_zero_maps_to_zero_point(self):
        p = make_params()
        assert quantize(0.0, p) == 0

    def test_hand_evaluated_dequantize(self):
        p = make_params()
        assert dequantize(1, p) == pytest.approx(0.5)
        assert dequantize(0, p) == 0.0

    def test_grid_min_of_unit_interval_params(self):
        p = derive_minmax(np.array([0.0, 1.0]), 8)
        assert dequantize(p.q_min, p) == pytest.approx(0.0)

    def test_dequantize_rejects_off_grid(self):
        p = make_params()
        with pytest.raises(ValueError):
            dequantize(5, p)


class TestFakeQuantize:
    def test_zero_tensor_unchanged(self):
        p = make_params()
        np.testing.assert_array_equal(fake_quantize(np.zeros(7), p), np.zeros(7))

    def test_grid_points_unchanged(self):
        p = make_params(bit_width=4, scale=0.37, zero_point=2)
        grid = p.scale * (np.arange(p.q_min, p.q_max + 1) - int(p.zero_point))
        np.testing.assert_array_equal(fake_quantize(grid, p), grid)

    def test_idempotent(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(50, 3)) * 4
        p = derive_minmax(x, 3)
        once = fake_quantize(x, p)
        np.testing.assert_array_equal(fake_quantize(once, p), once)

    @given(
        st.integers(2, 8),
        st.floats(-100, 100),
        st.floats(1e-3, 100),
        st.floats(0, 1),
    )
    @settings(max_examples=300, deadline=None)
    def test_round_trip_bound_inside_range(self, bits, low, span, frac):
        values = np.array([low, low + span])
        p = derive_minmax(values, bits)
        lo = dequantize(p.q_min, p)
        hi = dequantize(p.q_max, p)
        f = lo + frac * (hi - lo)
        err = abs(f - float(fake_quantize(np.array([f]), p)[0]))
        assert err <= float(p.scale) / 2 + 1e-12

    @given(
        st.integers(2, 8),
        st.floats(-50, 50),
        st.floats(1e-3, 50),
        st.floats(-200, 200),
        st.floats(-200, 200),
    )
    @settings(max_examples=300, deadline=None)
    def test_monotonicity(self, bits, low, span, f1, f2):
        p = derive_minmax(np.array([low, low + span]), bits)
        a, b = sorted((f1, f2))
        assert quantize(a, p) <= quantize(b, p)

    def test_grid_cardinality(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=10000)
        for bits in (2, 3, 5, 8):
            p = derive_minmax(x, bits)
            assert len(np.unique(quantize(x, p))) <= 2**bits

    def test_per_channel_broadcast(self):
        rng = np.random.default_rng(2)
        w = rng.normal(size=(3, 5))
        p = derive_minmax(w, 4, channel_axis=0)
        out = fake_quantize(w, p)
        for row in range(3):
            p_row = derive_minmax(w[row], 4)
            np.testing.assert_allclose(out[row], fake_quantize(w[row], p_row))
