"""Numerically invertible volume-preserving flow layers.

Every layer works on :class:`~ivpf.fixnum.QuantVector` inputs and threads
the MAT auxiliary register ``r``.  ``forward``/``inverse`` are exact inverses
of each other; ``continuous`` evaluates the underlying real-valued layer
without any quantization, for error measurements.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ModelError
from .fixnum import QuantVector, quantize_mantissas
from .mat import (DEFAULT_C, VOLUME_TOL, check_register, compute_moduli, forward_ints,
                  inverse_ints, mat_forward_mantissas, mat_inverse_mantissas)

ACTIVATIONS = ("tanh", "swish")


# --------------------------------------------------------------------------
# coupling network
# --------------------------------------------------------------------------

@dataclass(eq=False)
class DenseNet:
    """A small stack of affine maps with a nonlinearity between them."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ModelError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ModelError("need one bias per weight matrix and at least one layer")
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64).reshape(-1) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or w.shape[0] != b.size:
                raise ModelError(f"net layer {i}: weight {w.shape} does not match bias {b.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ModelError(f"net layer {i}: input width {w.shape[1]} does not chain")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ModelError(f"net layer {i}: non-finite parameters")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.biases[-1].size


def _affine(w: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    # bias + w[:, 0] x[0] + w[:, 1] x[1] + ..., summed strictly left to right
    terms = np.empty((w.shape[0], w.shape[1] + 1))
    terms[:, 0] = b
    np.multiply(w, x[None, :], out=terms[:, 1:])
    return np.add.accumulate(terms, axis=1)[:, -1]


def net_eval(net: DenseNet, x) -> np.ndarray:
    """Evaluate ``net`` on a real vector with a pinned reduction order."""
    h = np.asarray(x, dtype=np.float64).reshape(-1)
    if h.size != net.in_dim:
        raise ValueError(f"net expects {net.in_dim} inputs, got {h.size}")
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = _affine(w, b, h)
        if i < last:
            h = np.tanh(h) if net.activation == "tanh" else h / (1.0 + np.exp(-h))
    if not np.all(np.isfinite(h)):
        raise ModelError("network produced non-finite output")
    return h


def vp_project(s0, t0, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Map raw network outputs to a zero-sum log-scale and a shift."""
    ts = np.tanh(np.asarray(s0, dtype=np.float64))
    s = alpha * (ts - ts.mean())
    t = alpha * np.asarray(t0, dtype=np.float64)
    return s, t


# --------------------------------------------------------------------------
# triangular, diagonal and permutation primitives (operate on mantissas)
# --------------------------------------------------------------------------

def _as_rows(m: np.ndarray, c: int) -> np.ndarray:
    return np.asarray(m, dtype=np.int64).reshape(-1, c)


def _upper_offsets(X: np.ndarray, U: np.ndarray, i: int, k: int) -> np.ndarray:
    c = U.shape[0]
    acc = np.zeros(X.shape[0])
    for j in range(i + 1, c):
        acc = acc + U[i, j] * np.ldexp(X[:, j].astype(np.float64), -k)
    return quantize_mantissas(acc, k)


def _lower_offsets(X: np.ndarray, L: np.ndarray, i: int, k: int) -> np.ndarray:
    acc = np.zeros(X.shape[0])
    for j in range(i):
        acc = acc + L[i, j] * np.ldexp(X[:, j].astype(np.float64), -k)
    return quantize_mantissas(acc, k)


def upper_forward_rows(X: np.ndarray, U: np.ndarray, k: int) -> np.ndarray:
    Z = X.copy()
    for i in range(U.shape[0] - 1):
        Z[:, i] = X[:, i] + _upper_offsets(X, U, i, k)
    return Z


def upper_inverse_rows(Z: np.ndarray, U: np.ndarray, k: int) -> np.ndarray:
    X = Z.copy()
    for i in range(U.shape[0] - 2, -1, -1):
        X[:, i] = Z[:, i] - _upper_offsets(X, U, i, k)
    return X


def lower_forward_rows(X: np.ndarray, L: np.ndarray, k: int) -> np.ndarray:
    Z = X.copy()
    for i in range(1, L.shape[0]):
        Z[:, i] = X[:, i] + _lower_offsets(X, L, i, k)
    return Z


def lower_inverse_rows(Z: np.ndarray, L: np.ndarray, k: int) -> np.ndarray:
    X = Z.copy()
    for i in range(1, L.shape[0]):
        X[:, i] = Z[:, i] - _lower_offsets(X, L, i, k)
    return X


def tri_upper_forward(x: QuantVector, U) -> QuantVector:
    """``z_i = x_i + round(sum_{j>i} u_ij x_j)``; the last element passes through."""
    U = np.asarray(U, dtype=np.float64)
    z = upper_forward_rows(_as_rows(x.mantissas, U.shape[0]), U, x.precision)
    return QuantVector(z.reshape(-1), x.precision)


def tri_upper_inverse(z: QuantVector, U) -> QuantVector:
    U = np.asarray(U, dtype=np.float64)
    x = upper_inverse_rows(_as_rows(z.mantissas, U.shape[0]), U, z.precision)
    return QuantVector(x.reshape(-1), z.precision)


def tri_lower_forward(x: QuantVector, L) -> QuantVector:
    """``z_i = x_i + round(sum_{j<i} l_ij x_j)``; the first element passes through."""
    L = np.asarray(L, dtype=np.float64)
    z = lower_forward_rows(_as_rows(x.mantissas, L.shape[0]), L, x.precision)
    return QuantVector(z.reshape(-1), x.precision)


def tri_lower_inverse(z: QuantVector, L) -> QuantVector:
    L = np.asarray(L, dtype=np.float64)
    x = lower_inverse_rows(_as_rows(z.mantissas, L.shape[0]), L, z.precision)
    return QuantVector(x.reshape(-1), z.precision)


def _diag_rows(X: np.ndarray, lam: np.ndarray, r: int, C: int, inverse: bool):
    # one modulus chain per pixel; m_0 = m_c = 2**C lets r flow between pixels
    moduli = compute_moduli(lam, C).moduli
    step = inverse_ints if inverse else forward_ints
    rows = X.tolist()
    order = range(len(rows) - 1, -1, -1) if inverse else range(len(rows))
    out = [None] * len(rows)
    for p in order:
        out[p], r = step(rows[p], moduli, r)
    return np.asarray(out, dtype=np.int64).reshape(X.shape), r


def diag_forward(x: QuantVector, lam, r: int, C: int = DEFAULT_C) -> tuple[QuantVector, int]:
    """Diagonal scaling through MAT; ``x`` may hold several pixels of ``len(lam)`` channels."""
    lam = np.asarray(lam, dtype=np.float64)
    r = check_register(r, C)
    if np.all(lam == 1.0):
        return x, r
    z, r = _diag_rows(_as_rows(x.mantissas, lam.size), lam, r, C, inverse=False)
    return QuantVector(z.reshape(-1), x.precision), r


def diag_inverse(z: QuantVector, lam, r: int, C: int = DEFAULT_C) -> tuple[QuantVector, int]:
    lam = np.asarray(lam, dtype=np.float64)
    r = check_register(r, C)
    if np.all(lam == 1.0):
        return z, r
    x, r = _diag_rows(_as_rows(z.mantissas, lam.size), lam, r, C, inverse=True)
    return QuantVector(x.reshape(-1), z.precision), r


def permute_forward(x: QuantVector, perm) -> QuantVector:
    """``z[i] = x[perm[i]]``."""
    return QuantVector(x.mantissas[np.asarray(perm)], x.precision)


def permute_inverse(z: QuantVector, perm) -> QuantVector:
    x = np.empty_like(z.mantissas)
    x[np.asarray(perm)] = z.mantissas
    return QuantVector(x, z.precision)


def _check_perm(perm: np.ndarray, n: int, what: str):
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ModelError(f"{what} is not a permutation of {n} elements")


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------

@dataclass(eq=False)
class CouplingLayer:
    """Affine coupling: ``x_b`` (the last ``d_b`` entries) is scaled and shifted
    by functions of ``x_a`` (the leading entries)."""

    dim: int
    d_b: int
    net: DenseNet
    alpha: float = 0.0

    def __post_init__(self):
        self.alpha = float(self.alpha)
        if not 0 < self.d_b <= self.dim:
            raise ModelError(f"coupling split {self.d_b} of {self.dim} is invalid")
        if self.net.in_dim != self.dim - self.d_b or self.net.out_dim != 2 * self.d_b:
            raise ModelError("coupling network dimensions do not match the split")
        if not np.isfinite(self.alpha):
            raise ModelError("coupling alpha must be finite")

    @property
    def d_a(self) -> int:
        return self.dim - self.d_b

    def coefficients(self, xa) -> tuple[np.ndarray, np.ndarray]:
        """Log-scales and shifts for ``x_b`` given the (real) values of ``x_a``."""
        out = net_eval(self.net, xa)
        return vp_project(out[:self.d_b], out[self.d_b:], self.alpha)

    def forward(self, x: QuantVector, r: int, C: int = DEFAULT_C) -> tuple[QuantVector, int]:
        if self.alpha == 0.0:
            return x, check_register(r, C)
        m, k = x.mantissas, x.precision
        s, t = self.coefficients(np.ldexp(m[:self.d_a].astype(np.float64), -k))
        zb, r = mat_forward_mantissas(m[self.d_a:], np.exp(s), t, r, k, C)
        return QuantVector(np.concatenate([m[:self.d_a], zb]), k), r

    def inverse(self, z: QuantVector, r: int, C: int = DEFAULT_C) -> tuple[QuantVector, int]:
        if self.alpha == 0.0:
            return z, check_register(r, C)
        m, k = z.mantissas, z.precision
        s, t = self.coefficients(np.ldexp(m[:self.d_a].astype(np.float64), -k))
        xb, r = mat_inverse_mantissas(m[self.d_a:], np.exp(s), t, r, k, C)
        return QuantVector(np.concatenate([m[:self.d_a], xb]), k), r

    def continuous(self, x: np.ndarray) -> np.ndarray:
        s, t = self.coefficients(x[:self.d_a])
        return np.concatenate([x[:self.d_a], x[self.d_a:] * np.exp(s) + t])


@dataclass(eq=False)
class Conv1x1Layer:
    """Invertible 1x1 convolution ``W = P L diag(lam) U`` applied per pixel.

    ``perm`` gives the channel permutation as an index array
    (``out[:, i] = in[:, perm[i]]``).
    """

    channels: int
    perm: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    lam: np.ndarray = None

    def __post_init__(self):
        c = self.channels
        self.perm = np.asarray(self.perm, dtype=np.int64)
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        self.lam = np.ones(c) if self.lam is None else np.asarray(self.lam, dtype=np.float64)
        _check_perm(self.perm, c, "conv permutation")
        for name, M, mask in (("L", self.lower, np.triu(np.ones((c, c)), 1)),
                              ("U", self.upper, np.tril(np.ones((c, c)), -1))):
            if M.shape != (c, c) or not np.all(np.isfinite(M)):
                raise ModelError(f"{name} must be a finite {c}x{c} matrix")
            if not np.array_equal(np.diag(M), np.ones(c)) or np.any(M[mask > 0] != 0):
                raise ModelError(f"{name} must be unit triangular")
        if self.lam.shape != (c,) or np.any(~np.isfinite(self.lam)) or np.any(self.lam <= 0):
            raise ModelError("lambda must be a positive diagonal")
        if abs(float(np.sum(np.log(self.lam)))) >= VOLUME_TOL:
            raise ModelError("lambda does not have unit product")

    @property
    def inv_perm(self) -> np.ndarray:
        return np.argsort(self.perm)

    def forward(self, x: QuantVector, r: int, C: int = DEFAULT_C) -> tuple[QuantVector, int]:
        c, k = self.channels, x.precision
        if x.dim % c:
            raise ValueError(f"dimension {x.dim} is not a multiple of {c} channels")
        X = upper_forward_rows(_as_rows(x.mantissas, c), self.upper, k)
        y, r = diag_forward(QuantVector(X.reshape(-1), k), self.lam, r, C)
        X = lower_forward_rows(_as_rows(y.mantissas, c), self.lower, k)
        return QuantVector(X[:, self.perm].reshape(-1), k), r

    def inverse(self, z: QuantVector, r: int, C: int = DEFAULT_C) -> tuple[QuantVector, int]:
        c, k = self.channels, z.precision
        if z.dim % c:
            raise ValueError(f"dimension {z.dim} is not a multiple of {c} channels")
        X = _as_rows(z.mantissas, c)[:, self.inv_perm]
        X = lower_inverse_rows(X, self.lower, k)
        y, r = diag_inverse(QuantVector(X.reshape(-1), k), self.lam, r, C)
        X = upper_inverse_rows(_as_rows(y.mantissas, c), self.upper, k)
        return QuantVector(X.reshape(-1), k), r

    def matrix(self) -> np.ndarray:
        P = np.eye(self.channels)[self.perm]
        return P @ self.lower @ np.diag(self.lam) @ self.upper

    def continuous(self, x: np.ndarray) -> np.ndarray:
        X = x.reshape(-1, self.channels)
        return (X @ self.matrix().T).reshape(-1)


@dataclass(eq=False)
class PermutationLayer:
    """Fixed permutation of the whole vector (``z[i] = x[perm[i]]``)."""

    perm: np.ndarray

    def __post_init__(self):
        self.perm = np.asarray(self.perm, dtype=np.int64)
        _check_perm(self.perm, self.perm.size, "permutation layer")

    @property
    def dim(self) -> int:
        return self.perm.size

    def forward(self, x: QuantVector, r: int, C: int = DEFAULT_C) -> tuple[QuantVector, int]:
        return permute_forward(x, self.perm), check_register(r, C)

    def inverse(self, z: QuantVector, r: int, C: int = DEFAULT_C) -> tuple[QuantVector, int]:
        return permute_inverse(z, self.perm), check_register(r, C)

    def continuous(self, x: np.ndarray) -> np.ndarray:
        return x[self.perm]


@dataclass(eq=False)
class FactorOutLayer:
    """Splits off the first ``n_out`` entries (after an optional coupling) as an
    early latent, modelled by a Gaussian conditioned on the remainder ``y``."""

    dim: int
    n_out: int
    head: DenseNet
    coupling: CouplingLayer | None = None

    def __post_init__(self):
        if not 0 < self.n_out < self.dim:
            raise ModelError(f"factor-out of {self.n_out} from {self.dim} is invalid")
        if self.head.in_dim != self.dim - self.n_out or self.head.out_dim != 2 * self.n_out:
            raise ModelError("factor-out head dimensions do not match the split")
        if self.coupling is not None and self.coupling.dim != self.dim:
            raise ModelError("factor-out coupling has the wrong dimension")

    def conditional(self, y: QuantVector) -> tuple[np.ndarray, np.ndarray]:
        """Mean and log-variance of the factored latent given ``y``."""
        out = net_eval(self.head, y.values())
        return out[:self.n_out], out[self.n_out:]

    def forward(self, x: QuantVector, r: int, C: int = DEFAULT_C):
        """Returns ``(z_l, y, r)``."""
        if self.coupling is not None:
            x, r = self.coupling.forward(x, r, C)
        else:
            r = check_register(r, C)
        m, k = x.mantissas, x.precision
        return QuantVector(m[:self.n_out], k), QuantVector(m[self.n_out:], k), r

    def inverse(self, z_l: QuantVector, y: QuantVector, r: int, C: int = DEFAULT_C):
        x = QuantVector(np.concatenate([z_l.mantissas, y.mantissas]), y.precision)
        if self.coupling is not None:
            return self.coupling.inverse(x, r, C)
        return x, check_register(r, C)

    def continuous(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.coupling is not None:
            x = self.coupling.continuous(x)
        return x[:self.n_out], x[self.n_out:]


Layer = CouplingLayer | Conv1x1Layer | PermutationLayer | FactorOutLayer


def layer_dims(layer, dim_in: int) -> int:
    """Dimension of the continuing vector after ``layer`` (validates input size)."""
    if isinstance(layer, (CouplingLayer, PermutationLayer)):
        if layer.dim != dim_in:
            raise ModelError(f"{type(layer).__name__} expects {layer.dim} inputs, got {dim_in}")
        return dim_in
    if isinstance(layer, Conv1x1Layer):
        if dim_in % layer.channels:
            raise ModelError(f"{dim_in} inputs are not divisible into {layer.channels} channels")
        return dim_in
    if isinstance(layer, FactorOutLayer):
        if layer.dim != dim_in:
            raise ModelError(f"factor-out expects {layer.dim} inputs, got {dim_in}")
        return dim_in - layer.n_out
    raise ModelError(f"unknown layer type {type(layer).__name__}")
