"""Modular affine transformation (MAT).

An exactly invertible fixed-point version of ``z = s * x + t`` for scale
vectors with unit product.  Each scale is approximated by a ratio of
consecutive integer moduli ``m[i-1] / m[i]`` with ``m[0] = m[-1] = 2**C``,
and the rounding residue of every division is carried to the next element
through an auxiliary register ``r`` in ``[0, 2**C)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ModelError, PrecisionOverflow
from .fixnum import MANTISSA_LIMIT, QuantVector, quantize_mantissas

DEFAULT_C = 16
VOLUME_TOL = 1e-6


@dataclass(frozen=True)
class ModulusChain:
    moduli: tuple[int, ...]
    C: int

    def __len__(self):
        return len(self.moduli)


def _round_modulus(v: float) -> int:
    # Ordinary rounding, except (0, 1] -> 1 so no modulus is ever zero.
    if not math.isfinite(v):
        raise PrecisionOverflow(f"modulus {v} is not finite")
    if v <= 1.0:
        return 1
    return int(math.floor(v + 0.5))


def compute_moduli(s: Sequence[float], C: int = DEFAULT_C) -> ModulusChain:
    """Integer moduli whose consecutive ratios approximate the scales ``s``.

    The running product of ``s`` is accumulated left to right in binary64.
    """
    s = [float(v) for v in s]
    if not s:
        raise ValueError("scale vector is empty")
    if any(not math.isfinite(v) or v <= 0 for v in s):
        raise ValueError("scales must be positive and finite")
    log_vol = math.fsum(math.log(v) for v in s)
    if abs(log_vol) >= VOLUME_TOL:
        raise ModelError(f"scales are not volume preserving (sum log s = {log_vol:.3g})")
    m0 = 1 << C
    moduli = [m0]
    prod = 1.0
    for v in s[:-1]:
        prod *= v
        moduli.append(_round_modulus(m0 / prod))
    moduli.append(m0)
    return ModulusChain(tuple(moduli), C)


def check_register(r: int, C: int) -> int:
    r = int(r)
    if not 0 <= r < (1 << C):
        raise ValueError(f"auxiliary register {r} outside [0, 2**{C})")
    return r


def forward_ints(x: Sequence[int], moduli: Sequence[int], r: int) -> tuple[list[int], int]:
    """Integer core of the forward pass: divide-with-remainder chain."""
    y = []
    for i, xi in enumerate(x):
        v = xi * moduli[i] + r
        if not -MANTISSA_LIMIT < v < MANTISSA_LIMIT:
            raise PrecisionOverflow(f"MAT product {v} exceeds 2**62")
        q, r = divmod(v, moduli[i + 1])
        y.append(q)
    return y, r


def inverse_ints(y: Sequence[int], moduli: Sequence[int], r: int) -> tuple[list[int], int]:
    x = [0] * len(y)
    for i in range(len(y) - 1, -1, -1):
        v = y[i] * moduli[i + 1] + r
        if not -MANTISSA_LIMIT < v < MANTISSA_LIMIT:
            raise PrecisionOverflow(f"MAT product {v} exceeds 2**62")
        x[i], r = divmod(v, moduli[i])
    return x, r


def mat_forward_mantissas(x: np.ndarray, s, t, r: int, k: int,
                          C: int = DEFAULT_C) -> tuple[np.ndarray, int]:
    r = check_register(r, C)
    chain = compute_moduli(s, C)
    if len(chain) != len(x) + 1:
        raise ValueError("scale and input dimensions differ")
    y, r = forward_ints(np.asarray(x).tolist(), chain.moduli, r)
    z = np.asarray(y, dtype=np.int64) + quantize_mantissas(t, k)
    return z, r


def mat_inverse_mantissas(z: np.ndarray, s, t, r: int, k: int,
                          C: int = DEFAULT_C) -> tuple[np.ndarray, int]:
    r = check_register(r, C)
    chain = compute_moduli(s, C)
    if len(chain) != len(z) + 1:
        raise ValueError("scale and input dimensions differ")
    y = np.asarray(z, dtype=np.int64) - quantize_mantissas(t, k)
    x, r = inverse_ints(y.tolist(), chain.moduli, r)
    return np.asarray(x, dtype=np.int64), r


def mat_forward(x: QuantVector, s, t, r: int, C: int = DEFAULT_C) -> tuple[QuantVector, int]:
    """Apply ``z ~= s * x + t`` exactly invertibly, threading the register ``r``.

    ``t`` is rounded to the precision of ``x`` before it is added.
    Returns the output vector and the updated register.
    """
    z, r = mat_forward_mantissas(x.mantissas, s, t, r, x.precision, C)
    return QuantVector(z, x.precision), r


def mat_inverse(z: QuantVector, s, t, r: int, C: int = DEFAULT_C) -> tuple[QuantVector, int]:
    """Exact inverse of :func:`mat_forward` for the same ``s``, ``t`` and ``C``."""
    x, r = mat_inverse_mantissas(z.mantissas, s, t, r, z.precision, C)
    return QuantVector(x, z.precision), r
