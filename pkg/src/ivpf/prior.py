"""Discretized latent priors exposed as integer CDFs for the entropy coder.

Latents live on the ``2**-k`` grid.  Each dimension is coded over a bounded
window of ``N`` grid points; the coder sees a monotone integer CDF with total
mass ``2**n`` built by the "stretch" rule

    cdf(i) = round(Phi(edge_i) * (2**n - N)) + i,   cdf(0) = 0,  cdf(N) = 2**n

which gives every symbol a frequency of at least one.  The two outer bins
absorb the tail mass outside the window.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import LatentOutOfSupport, ModelError
from .fixnum import QuantScalar

WINDOW_SIGMAS = 16.0
DEFAULT_SUPPORT = 2.0
_SQRT2 = math.sqrt(2.0)
_LOG2PI = math.log(2.0 * math.pi)


def _gauss_cdf(x: float, mu: float, scale: float) -> float:
    # scale = sigma * sqrt(2)
    return 0.5 * (1.0 + math.erf((x - mu) / scale))


class QuantizedCdf:
    """Integer CDF over the symbols ``0 .. N-1`` of one latent dimension.

    Symbol ``i`` stands for the grid mantissa ``lo + i``.  Values are computed
    on demand; the object also behaves as the sorted sequence
    ``cdf(0), ..., cdf(N)`` so :mod:`bisect` can search it directly.
    """

    def __init__(self, edge_cdf: Callable[[int], float], lo: int, n_symbols: int, n: int):
        if n_symbols < 1:
            raise ModelError("coding window is empty")
        if n_symbols >= (1 << n):
            raise ModelError(f"{n_symbols} symbols do not fit a {n}-bit frequency table")
        self.edge_cdf = edge_cdf
        self.lo = lo
        self.N = n_symbols
        self.n = n
        self._spread = (1 << n) - n_symbols

    def cdf(self, i: int) -> int:
        if i <= 0:
            return 0
        if i >= self.N:
            return 1 << self.n
        p = min(max(self.edge_cdf(i), 0.0), 1.0)
        return int(math.floor(p * self._spread + 0.5)) + i

    __getitem__ = cdf

    def __len__(self):
        return self.N + 1

    def freq(self, i: int) -> int:
        return self.cdf(i + 1) - self.cdf(i)

    def symbol_of(self, mantissa: int) -> int:
        i = int(mantissa) - self.lo
        if not 0 <= i < self.N:
            raise LatentOutOfSupport(
                f"latent mantissa {mantissa} outside coding window [{self.lo}, {self.lo + self.N})")
        return i

    def interval(self, i: int) -> tuple[int, int]:
        """``(start, freq)`` of symbol ``i``."""
        start = self.cdf(i)
        return start, self.cdf(i + 1) - start

    def lookup(self, b: int) -> tuple[int, int, int]:
        """The symbol whose interval contains ``b``, with its ``(start, freq)``."""
        i = bisect.bisect_right(self, b, 0, self.N + 1) - 1
        start = self.cdf(i)
        return i, start, self.cdf(i + 1) - start


def symbol_from_cdf(qcdf: QuantizedCdf, b: int) -> int:
    """Unique ``i`` with ``cdf(i) <= b < cdf(i+1)``."""
    if not 0 <= b < (1 << qcdf.n):
        raise ValueError(f"{b} outside [0, 2**{qcdf.n})")
    return qcdf.lookup(b)[0]


def _grid_window(lo_real: float, hi_real: float, k: int, support: float) -> tuple[int, int]:
    s = math.floor(math.ldexp(support, k))
    lo = max(math.ceil(math.ldexp(lo_real, k)), -s)
    hi = min(math.floor(math.ldexp(hi_real, k)) + 1, s)
    return lo, hi - lo


def _edge_fn(cdf: Callable[[float], float], lo: int, k: int) -> Callable[[int], float]:
    return lambda i: cdf(math.ldexp(lo + i - 0.5, -k))


@dataclass(eq=False)
class MixGaussPrior:
    """Factorized mixture of Gaussians with ``K`` components per dimension.

    Parameters are unconstrained: mixture weights are ``softmax(logits)`` and
    variances are ``exp(log_var)``.
    """

    logits: np.ndarray
    mu: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        self.logits = np.atleast_2d(np.asarray(self.logits, dtype=np.float64))
        self.mu = np.atleast_2d(np.asarray(self.mu, dtype=np.float64))
        self.log_var = np.atleast_2d(np.asarray(self.log_var, dtype=np.float64))
        if not (self.logits.shape == self.mu.shape == self.log_var.shape):
            raise ModelError("mixture parameter shapes differ")
        for a in (self.logits, self.mu, self.log_var):
            if not np.all(np.isfinite(a)):
                raise ModelError("mixture parameters must be finite")
        w = np.exp(self.logits - self.logits.max(axis=1, keepdims=True))
        self.weights = w / w.sum(axis=1, keepdims=True)
        self.sigma = np.exp(0.5 * self.log_var)
        if np.any(self.weights <= 0) or np.any(self.sigma <= 0):
            raise ModelError("mixture weights and scales must be positive")
        self._params = [
            tuple(zip(self.weights[i].tolist(), self.mu[i].tolist(),
                      (self.sigma[i] * _SQRT2).tolist()))
            for i in range(self.dim)
        ]

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    @property
    def n_components(self) -> int:
        return self.mu.shape[1]

    def cdf(self, i: int, x: float) -> float:
        total = 0.0
        for w, m, sc in self._params[i]:
            total += w * _gauss_cdf(x, m, sc)
        return total

    def window(self, i: int, k: int, support: float = DEFAULT_SUPPORT) -> tuple[int, int]:
        """``(lo, N)``: coding window of dimension ``i`` derived from the parameters only."""
        centre = float(self.weights[i] @ self.mu[i])
        half = WINDOW_SIGMAS * float(self.sigma[i].max())
        return _grid_window(centre - half, centre + half, k, support)

    def quantized_cdf(self, i: int, k: int, n: int, support: float = DEFAULT_SUPPORT) -> QuantizedCdf:
        lo, N = self.window(i, k, support)
        return QuantizedCdf(_edge_fn(lambda x: self.cdf(i, x), lo, k), lo, N, n)

    def logpdf(self, z) -> np.ndarray:
        """Natural-log density of each row of ``z`` (shape ``(..., dim)``)."""
        z = np.asarray(z, dtype=np.float64)[..., None]
        comp = (np.log(self.weights) - 0.5 * (_LOG2PI + self.log_var)
                - 0.5 * (z - self.mu) ** 2 / np.exp(self.log_var))
        m = comp.max(axis=-1, keepdims=True)
        per_dim = (m + np.log(np.exp(comp - m).sum(axis=-1, keepdims=True)))[..., 0]
        return per_dim.sum(axis=-1)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.random((n, self.dim, 1))
        comp = (u > np.cumsum(self.weights, axis=1)[None]).sum(axis=-1)
        comp = np.minimum(comp, self.n_components - 1)
        rows = np.arange(self.dim)[None, :]
        return self.mu[rows, comp] + self.sigma[rows, comp] * rng.standard_normal((n, self.dim))


@dataclass(eq=False)
class UniformPrior:
    """Uniform over the grid points in ``[lo, hi)`` (every dimension alike)."""

    dim: int
    lo: float = -0.5
    hi: float = 0.5

    def window(self, i: int, k: int, support: float = DEFAULT_SUPPORT) -> tuple[int, int]:
        s = math.floor(math.ldexp(support, k))
        lo = max(math.ceil(math.ldexp(self.lo, k)), -s)
        hi = min(math.ceil(math.ldexp(self.hi, k)), s)
        return lo, hi - lo

    def quantized_cdf(self, i: int, k: int, n: int, support: float = DEFAULT_SUPPORT) -> QuantizedCdf:
        lo, N = self.window(i, k, support)
        return QuantizedCdf(lambda j: j / N, lo, N, n)

    def cdf(self, i: int, x: float) -> float:
        return min(max((x - self.lo) / (self.hi - self.lo), 0.0), 1.0)


def cond_gauss_cdf(mu: float, log_var: float, k: int, n: int,
                   support: float = DEFAULT_SUPPORT) -> QuantizedCdf:
    """Quantized CDF of ``N(mu, exp(log_var))`` for one factored latent."""
    mu, sigma = float(mu), math.exp(0.5 * float(log_var))
    if not (math.isfinite(mu) and math.isfinite(sigma) and sigma > 0):
        raise ModelError("conditional Gaussian parameters must be finite")
    half = WINDOW_SIGMAS * sigma
    lo, N = _grid_window(mu - half, mu + half, k, support)
    scale = sigma * _SQRT2
    return QuantizedCdf(_edge_fn(lambda x: _gauss_cdf(x, mu, scale), lo, k), lo, N, n)


def bin_mass(prior, i: int, z: QuantScalar) -> float:
    """Probability of the ``2**-k`` bin centred on ``z`` under dimension ``i``."""
    half = math.ldexp(1.0, -z.precision - 1)
    x = math.ldexp(z.mantissa, -z.precision)
    return prior.cdf(i, x + half) - prior.cdf(i, x - half)


def entropy_bits_mc(prior: MixGaussPrior, n_samples: int, rng: np.random.Generator) -> float:
    """Monte-Carlo differential entropy per dimension, in bits."""
    batch = max(1, (1 << 20) // (prior.dim * prior.n_components))
    total, done = 0.0, 0
    while done < n_samples:
        m = min(batch, n_samples - done)
        total += float(prior.logpdf(prior.sample(m, rng)).sum())
        done += m
    return -total / n_samples / math.log(2.0) / prior.dim
