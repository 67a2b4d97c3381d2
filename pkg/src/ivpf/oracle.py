"""Brute-force verifiers and demonstrations.

The MAT checker deliberately does not reuse :mod:`ivpf.mat` internals: it
rebuilds the moduli and the division-with-remainder chain with
:class:`fractions.Fraction` so that a bug shared by the encoder and decoder
still shows up as a mismatch.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import mat
from .fixnum import QuantScalar, QuantVector, quantize_array
from .model import FlowModel, continuous_eval
from .prior import MixGaussPrior

MAX_WITNESSES = 16


@dataclass
class ScanReport:
    domain: str
    cases: int = 0
    violations: list = field(default_factory=list)
    n_violations: int = 0
    max_error: float = 0.0

    @property
    def ok(self) -> bool:
        return self.n_violations == 0

    def add(self, witness) -> None:
        self.n_violations += 1
        if len(self.violations) < MAX_WITNESSES:
            self.violations.append(witness)

    def merge(self, other: "ScanReport") -> "ScanReport":
        out = ScanReport(f"{self.domain}; {other.domain}", self.cases + other.cases,
                         (self.violations + other.violations)[:MAX_WITNESSES],
                         self.n_violations + other.n_violations,
                         max(self.max_error, other.max_error))
        return out

    def to_text(self) -> str:
        status = "ok" if self.ok else f"{self.n_violations} VIOLATIONS"
        lines = [f"{self.domain}: {self.cases} cases, {status}, max error {self.max_error:.3g}"]
        lines += [f"  witness: {w}" for w in self.violations]
        return "\n".join(lines)

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["ok"] = self.ok
        rec["violations"] = [str(w) for w in self.violations]
        return rec


def to_jsonl(records: Sequence) -> str:
    """Line-delimited JSON for reports exposing ``to_record``."""
    return "\n".join(json.dumps(r.to_record(), sort_keys=True) for r in records)


# --------------------------------------------------------------------------
# MAT reference
# --------------------------------------------------------------------------

def reference_moduli(s: Sequence[float], C: int) -> list[int]:
    """Moduli ``[2**C, round(2**C / s1), round(2**C / (s1 s2)), ..., 2**C]``."""
    top = 2 ** C
    out = [top]
    running = list(itertools.accumulate((float(v) for v in s[:-1]), lambda a, b: a * b))
    for p in running:
        q = Fraction(top) / Fraction(p)
        out.append(1 if q <= 1 else math.floor(q + Fraction(1, 2)))
    out.append(top)
    return out


def _floordiv(v: int, m: int) -> tuple[int, int]:
    q = math.floor(Fraction(v, m))
    return q, v - q * m


def _round_away(x: Fraction) -> int:
    a = abs(x)
    n = math.floor(a + Fraction(1, 2))
    return n if x >= 0 else -n


def reference_forward(x: Sequence[int], s, t, r: int, k: int, C: int) -> tuple[list[int], int]:
    m = reference_moduli(s, C)
    z = []
    for i, xi in enumerate(x):
        y, r = _floordiv(xi * m[i] + r, m[i + 1])
        z.append(y + _round_away(Fraction(float(t[i])) * 2 ** k))
    return z, r


def reference_inverse(z: Sequence[int], s, t, r: int, k: int, C: int) -> tuple[list[int], int]:
    m = reference_moduli(s, C)
    x = [0] * len(z)
    for i in range(len(z) - 1, -1, -1):
        y = z[i] - _round_away(Fraction(float(t[i])) * 2 ** k)
        x[i], r = _floordiv(y * m[i + 1] + r, m[i])
    return x, r


def _library_forward(x, s, t, r, k, C):
    z, r = mat.mat_forward_mantissas(np.asarray(x, dtype=np.int64), s, t, r, k, C)
    return z.tolist(), r


def _library_inverse(z, s, t, r, k, C):
    x, r = mat.mat_inverse_mantissas(np.asarray(z, dtype=np.int64), s, t, r, k, C)
    return x.tolist(), r


def brute_force_mat_check(d_b: int, k: int, C: int, s, t, *, lo: int = -8, hi: int = 8,
                          forward: Callable | None = None,
                          inverse: Callable | None = None) -> ScanReport:
    """Enumerate every ``(x_b, r)`` with mantissas in ``[lo, hi)`` and ``r`` in ``[0, 2**C)``.

    Checks the round trip, the output ranges, agreement with the independent
    reference and injectivity of the joint map.  ``forward``/``inverse``
    default to the library MAT; pass replacements to test the checker itself.
    """
    forward = forward or _library_forward
    inverse = inverse or _library_inverse
    s = [float(v) for v in s]
    t = [float(v) for v in t]
    if len(s) != d_b or len(t) != d_b:
        raise ValueError("s and t must have d_b entries")
    n_cases = (hi - lo) ** d_b * 2 ** C
    if n_cases > 10 ** 7:
        raise ValueError(f"{n_cases} cases is too many to enumerate")
    report = ScanReport(f"MAT d_b={d_b} k={k} C={C} s={s} x in [{lo},{hi})")
    seen: dict[tuple, tuple] = {}
    for xs in itertools.product(range(lo, hi), repeat=d_b):
        for r in range(2 ** C):
            report.cases += 1
            key = (xs, r)
            try:
                z, r2 = forward(list(xs), s, t, r, k, C)
                z = [int(v) for v in z]
            except Exception as exc:
                report.add(("forward raised", key, repr(exc)))
                continue
            if not 0 <= r2 < 2 ** C:
                report.add(("register out of range", key, r2))
            if (z, r2) != reference_forward(xs, s, t, r, k, C):
                report.add(("disagrees with reference", key, (z, r2)))
            try:
                back = inverse(z, s, t, r2, k, C)
                back = ([int(v) for v in back[0]], back[1])
            except Exception as exc:
                report.add(("inverse raised", key, repr(exc)))
                continue
            if back != (list(xs), r):
                report.add(("round trip", key, back))
            out = (tuple(z), r2)
            if out in seen:
                report.add(("collision", seen[out], key))
            else:
                seen[out] = key
            err = max(abs(math.ldexp(zi - si * xi, -k) - ti) for zi, si, xi, ti in zip(z, s, xs, t))
            report.max_error = max(report.max_error, err)
    return report


def random_admissible_scales(d_b: int, rng: np.random.Generator, spread: float = 1.0):
    """Positive scales with unit product (product exact up to binary64 rounding)."""
    logs = spread * rng.standard_normal(d_b)
    logs -= logs.mean()
    return np.exp(logs)


# --------------------------------------------------------------------------
# non-volume-preserving demonstrations
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CollisionWitness:
    """Two distinct grid points that land in the same output bin."""

    x1: QuantScalar
    x2: QuantScalar
    z: QuantScalar
    scale: float

    def __str__(self):
        return (f"{self.scale} * {self.x1.value} and {self.scale} * {self.x2.value} "
                f"both round to {self.z.value}")


def bijection_failure_demo(scale: float, k: int, max_points: int | None = None):
    """Find a collision of ``x -> round_k(scale * x)`` on the grid ``{i / 2**k}``.

    Scans ``i = 0, 1, ..`` (at most ``max_points``, default ``2**k + 1``) and
    returns a :class:`CollisionWitness`, or ``None`` if the map is injective
    on the scanned points.
    """
    if not scale > 0:
        raise ValueError("scale must be positive")
    count = (1 << k) + 1 if max_points is None else max_points
    bins: dict[int, int] = {}
    for i in range(count):
        b = _round_away(Fraction(scale) * i)
        if b in bins:
            return CollisionWitness(QuantScalar(bins[b], k), QuantScalar(i, k),
                                    QuantScalar(b, k), float(scale))
        bins[b] = i
    return None


@dataclass
class GapReport:
    scale: float
    d: int
    k: int
    n_samples: int
    mean_gap: float
    predicted: float

    @property
    def relative_error(self) -> float:
        if self.predicted == 0:
            return abs(self.mean_gap)
        return abs(self.mean_gap - self.predicted) / abs(self.predicted)

    def to_text(self) -> str:
        return (f"scale {self.scale}: mean gap {self.mean_gap:.4f} bits "
                f"(d log2 scale = {self.predicted:.4f})")

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["relative_error"] = self.relative_error
        return rec


def _bin_log2_mass(prior: MixGaussPrior, lo: np.ndarray, hi: np.ndarray) -> float:
    total = 0.0
    for i in range(prior.dim):
        total += math.log2(prior.cdf(i, float(hi[i])) - prior.cdf(i, float(lo[i])))
    return total


def codelength_gap_demo(scale: float, prior: MixGaussPrior | None = None, k: int = 8,
                        d: int = 1, n_samples: int = 2000, seed: int = 0) -> GapReport:
    """Extra bits paid when coding ``z = scale * x`` on the same grid as ``x``.

    ``x`` is drawn from ``prior`` (standard normal by default) and put on the
    ``2**-k`` grid.  The gap per sample is the codelength of the rounded
    ``z`` bin under the pushed-forward density minus the codelength of the
    ``x`` bin under ``prior``; its mean approaches ``d * log2(scale)``.
    """
    if not scale > 0:
        raise ValueError("scale must be positive")
    if prior is None:
        prior = MixGaussPrior(np.zeros((d, 1)), np.zeros((d, 1)), np.zeros((d, 1)))
    d = prior.dim
    rng = np.random.default_rng(seed)
    delta = math.ldexp(1.0, -k)
    gaps = []
    for x in prior.sample(n_samples, rng):
        xq = quantize_array(x, k).values()
        zq = quantize_array(scale * xq, k).values()
        bits_x = -_bin_log2_mass(prior, xq - delta / 2, xq + delta / 2)
        bits_z = -_bin_log2_mass(prior, (zq - delta / 2) / scale, (zq + delta / 2) / scale)
        gaps.append(bits_z - bits_x)
    return GapReport(float(scale), d, k, n_samples, float(np.mean(gaps)), d * math.log2(scale))


# --------------------------------------------------------------------------
# error scaling
# --------------------------------------------------------------------------

@dataclass
class ErrorCurve:
    k_values: list[int]
    errors: list[float]
    n_samples: int
    C: int

    @property
    def ratios(self) -> list[float]:
        """Per-unit-``k`` decay factors between successive points."""
        out = []
        for (k1, e1), (k2, e2) in zip(zip(self.k_values, self.errors),
                                      zip(self.k_values[1:], self.errors[1:])):
            out.append((e2 / e1) ** (1.0 / (k2 - k1)) if e1 > 0 else math.nan)
        return out

    def to_text(self) -> str:
        lines = [f"k={k:>2}  max|z_q - z| = {e:.3e}" for k, e in zip(self.k_values, self.errors)]
        lines.append("ratios: " + ", ".join(f"{r:.3f}" for r in self.ratios))
        return "\n".join(lines)

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["ratios"] = self.ratios
        return rec


def max_latent_error(model: FlowModel, k: int, n_samples: int = 64, seed: int = 0,
                     C: int | None = None) -> float:
    """``max |flow_forward(x_q) - continuous_eval(x_q)|_inf`` over random ``x`` in [-0.5, 0.5)."""
    from .codec import flow_forward

    C = model.C if C is None else C
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        xq = quantize_array(rng.uniform(-0.5, 0.5, model.dim), k)
        zq = flow_forward(xq, model, 0, C).latents().values()
        z = continuous_eval(model, xq.values())
        worst = max(worst, float(np.max(np.abs(zq - z))))
    return worst


def error_scaling_probe(model: FlowModel, k_values: Sequence[int], n_samples: int = 64,
                        seed: int = 0, C: int | None = None) -> ErrorCurve:
    """Worst-case latent error of the fixed-point flow for each precision ``k``."""
    C = model.C if C is None else C
    ks = [int(k) for k in k_values]
    errs = [max_latent_error(model, k, n_samples, seed, C) for k in ks]
    return ErrorCurve(ks, errs, n_samples, C)


__all__ = [
    "CollisionWitness", "ErrorCurve", "GapReport", "ScanReport", "bijection_failure_demo",
    "brute_force_mat_check", "codelength_gap_demo", "error_scaling_probe", "max_latent_error",
    "random_admissible_scales", "reference_forward", "reference_inverse", "reference_moduli",
    "to_jsonl",
]
