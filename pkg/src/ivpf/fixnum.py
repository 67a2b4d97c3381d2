"""k-precision fixed-point numbers.

A value is stored as an integer mantissa ``m`` together with a precision ``k``
and represents ``m / 2**k`` exactly.  Rounding to the grid is always
round-half-away-from-zero so that every module quantizes identically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PrecisionOverflow

MANTISSA_LIMIT = 1 << 62
MAX_PRECISION = 24


def _check_mantissa(m: int) -> int:
    if not -MANTISSA_LIMIT < m < MANTISSA_LIMIT:
        raise PrecisionOverflow(f"mantissa {m} exceeds 2**62")
    return m


@dataclass(frozen=True)
class QuantScalar:
    mantissa: int
    precision: int

    def __post_init__(self):
        if self.precision < 0:
            raise ValueError("precision must be non-negative")
        _check_mantissa(self.mantissa)

    @property
    def value(self) -> float:
        return to_real(self)


@dataclass(frozen=True, eq=False)
class QuantVector:
    """A vector of fixed-point values sharing one precision.

    ``mantissas`` is an int64 array and is made read-only on construction.
    """

    mantissas: np.ndarray
    precision: int

    def __post_init__(self):
        m = np.array(self.mantissas, dtype=np.int64, copy=True).reshape(-1)
        if m.size == 0:
            raise ValueError("QuantVector must have at least one element")
        if self.precision < 0:
            raise ValueError("precision must be non-negative")
        if m.size and int(np.abs(m).max()) >= MANTISSA_LIMIT:
            raise PrecisionOverflow("mantissa exceeds 2**62")
        m.flags.writeable = False
        object.__setattr__(self, "mantissas", m)

    @property
    def dim(self) -> int:
        return self.mantissas.size

    def __len__(self) -> int:
        return self.dim

    def values(self) -> np.ndarray:
        """Exact binary64 values (exact while |mantissa| < 2**53)."""
        return np.ldexp(self.mantissas.astype(np.float64), -self.precision)

    def __eq__(self, other):
        if not isinstance(other, QuantVector):
            return NotImplemented
        return (self.precision == other.precision
                and np.array_equal(self.mantissas, other.mantissas))

    def __repr__(self):
        return f"QuantVector({self.mantissas.tolist()!r}, k={self.precision})"


def round_half_away(v):
    """Round binary64 values to integers, ties away from zero.

    Works on scalars and arrays; the fractional test is exact because
    ``|v| - floor(|v|)`` is exact in binary64.
    """
    a = np.abs(v)
    f = np.floor(a)
    r = f + (a - f >= 0.5)
    return np.copysign(r, v)


def quantize(x: float, k: int) -> QuantScalar:
    """Round ``x`` to the nearest multiple of ``2**-k`` (ties away from zero)."""
    if not math.isfinite(x):
        raise ValueError(f"cannot quantize non-finite value {x}")
    if k < 0:
        raise ValueError("precision must be non-negative")
    scaled = math.ldexp(x, k)
    if not math.isfinite(scaled) or abs(scaled) >= MANTISSA_LIMIT:
        raise PrecisionOverflow(f"{x} at precision {k} overflows")
    return QuantScalar(int(round_half_away(scaled)), k)


def quantize_array(x, k: int) -> QuantVector:
    """Vectorized :func:`quantize`."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize non-finite values")
    scaled = np.ldexp(x, k)
    if x.size and np.abs(scaled).max() >= MANTISSA_LIMIT:
        raise PrecisionOverflow(f"values at precision {k} overflow")
    return QuantVector(round_half_away(scaled).astype(np.int64), k)


def quantize_mantissas(x: np.ndarray, k: int) -> np.ndarray:
    """Mantissas of ``x`` at precision ``k`` as an int64 array (no wrapper)."""
    scaled = np.ldexp(np.asarray(x, dtype=np.float64), k)
    if scaled.size and not np.all(np.abs(scaled) < MANTISSA_LIMIT):
        raise PrecisionOverflow(f"values at precision {k} overflow")
    return round_half_away(scaled).astype(np.int64)


def to_real(q: QuantScalar) -> float:
    return math.ldexp(float(q.mantissa), -q.precision)


def floor_to_precision(x: QuantScalar, h: int) -> tuple[QuantScalar, QuantScalar]:
    """Split ``x`` into the largest multiple of ``2**-h`` not above it plus a remainder.

    The coarse part is returned at precision ``h``; the remainder keeps
    precision ``k`` and lies in ``[0, 2**-h)``.
    """
    k = x.precision
    if h > k or h < 0:
        raise ValueError(f"need 0 <= h <= k, got h={h}, k={k}")
    shift = k - h
    coarse = x.mantissa >> shift
    rem = x.mantissa - (coarse << shift)
    return QuantScalar(coarse, h), QuantScalar(rem, k)


def floor_vector_to_precision(x: QuantVector, h: int) -> tuple[QuantVector, QuantVector]:
    """Elementwise :func:`floor_to_precision`."""
    k = x.precision
    if h > k or h < 0:
        raise ValueError(f"need 0 <= h <= k, got h={h}, k={k}")
    shift = k - h
    coarse = x.mantissas >> shift
    return QuantVector(coarse, h), QuantVector(x.mantissas - (coarse << shift), k)
