import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ivpf.errors import PrecisionOverflow
from ivpf.fixnum import (QuantScalar, QuantVector, floor_to_precision,
                         floor_vector_to_precision, quantize, quantize_array,
                         quantize_mantissas, round_half_away, to_real)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


class TestQuantize:
    def test_examples(self):
        assert quantize(0.3, 2) == QuantScalar(1, 2)
        assert quantize(0.25, 1).mantissa == 1
        assert quantize(-0.25, 1).mantissa == -1
        assert to_real(QuantScalar(4915, 14)) == 0.29998779296875

    def test_ties_go_away_from_zero(self):
        x = np.array([0.5, 1.5, 2.5, -0.5, -1.5, -2.5, 0.49999999999999994])
        np.testing.assert_array_equal(round_half_away(x), [1, 2, 3, -1, -2, -3, 0])

    def test_rejects_non_finite_and_overflow(self):
        with pytest.raises(ValueError):
            quantize(float("nan"), 4)
        with pytest.raises(PrecisionOverflow):
            quantize(2.0 ** 50, 14)
        with pytest.raises(PrecisionOverflow):
            quantize_array([2.0 ** 50], 14)

    @given(finite, st.integers(0, 24))
    def test_idempotent(self, x, k):
        q = quantize(x, k)
        assert quantize(q.value, k) == q

    @given(finite, st.integers(0, 24))
    def test_within_half_ulp(self, x, k):
        assert abs(quantize(x, k).value - x) <= math.ldexp(1.0, -k - 1)

    @given(st.lists(finite, min_size=1, max_size=20), st.integers(0, 24))
    def test_vector_matches_scalar(self, xs, k):
        vec = quantize_array(xs, k)
        assert vec.mantissas.tolist() == [quantize(x, k).mantissa for x in xs]
        assert quantize_mantissas(np.array(xs), k).tolist() == vec.mantissas.tolist()


class TestQuantVector:
    def test_read_only_and_equality(self):
        v = QuantVector([1, 2, 3], 4)
        with pytest.raises(ValueError):
            v.mantissas[0] = 5
        assert v == QuantVector(np.array([1, 2, 3]), 4)
        assert v != QuantVector([1, 2, 3], 5)
        np.testing.assert_array_equal(v.values(), [1 / 16, 2 / 16, 3 / 16])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            QuantVector([], 3)


class TestFloorToPrecision:
    def test_example(self):
        coarse, rem = floor_to_precision(QuantScalar(-5, 3), 1)
        # -5/8 = -1 + 3/8
        assert coarse == QuantScalar(-2, 1)
        assert rem == QuantScalar(3, 3)

    @given(st.integers(-(2 ** 40), 2 ** 40), st.integers(0, 24), st.integers(0, 24))
    def test_reconstructs(self, m, a, b):
        h, k = min(a, b), max(a, b)
        coarse, rem = floor_to_precision(QuantScalar(m, k), h)
        assert 0 <= rem.mantissa < 2 ** (k - h)
        assert coarse.mantissa * 2 ** (k - h) + rem.mantissa == m

    def test_vector(self):
        coarse, rem = floor_vector_to_precision(QuantVector([-5, 7, 0], 3), 1)
        assert coarse.mantissas.tolist() == [-2, 1, 0]
        assert rem.mantissas.tolist() == [3, 3, 0]

    def test_rejects_h_above_k(self):
        with pytest.raises(ValueError):
            floor_to_precision(QuantScalar(1, 2), 3)
