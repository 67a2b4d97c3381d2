"""Flow model description, persistence and initialization.

File layout (little-endian)::

    b"IVPM"  version:u8
    rank:u8  dims:u32 * rank
    h:u8 k:u8 C:u8 n:u8 support:f64
    n_layers:u32  { tag:u8 body }*
    prior_kind:u8 body
    sha256 of everything above (32 bytes)

Parameters are stored as float64; trained weights from any framework can be
imported by writing this format.
"""
from __future__ import annotations

import hashlib
import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError
from .fixnum import MAX_PRECISION
from .layers import (Conv1x1Layer, CouplingLayer, DenseNet, FactorOutLayer,
                     PermutationLayer, layer_dims)
from .prior import DEFAULT_SUPPORT, MixGaussPrior, UniformPrior

MAGIC = b"IVPM"
VERSION = 1

TAG_COUPLING, TAG_CONV, TAG_PERM, TAG_FACTOR = 1, 2, 3, 4
PRIOR_MIXTURE, PRIOR_UNIFORM = 0, 1
_ACT = {"tanh": 0, "swish": 1}


@dataclass(eq=False)
class FlowModel:
    """Ordered layer stack plus latent prior and default coding settings."""

    shape: tuple[int, ...]
    layers: list
    prior: MixGaussPrior | UniformPrior
    h: int = 8
    k: int = 14
    C: int = 16
    n: int = 28
    support: float = DEFAULT_SUPPORT
    _hash: bytes | None = field(default=None, repr=False)

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.validate()

    @property
    def dim(self) -> int:
        return math.prod(self.shape)

    @property
    def latent_dim(self) -> int:
        d = self.dim
        for layer in self.layers:
            d = layer_dims(layer, d)
        return d

    @property
    def factor_layers(self) -> list[FactorOutLayer]:
        return [layer for layer in self.layers if isinstance(layer, FactorOutLayer)]

    def validate(self) -> None:
        if not self.shape or any(s <= 0 for s in self.shape):
            raise ModelError(f"invalid shape {self.shape}")
        if not 1 <= self.h <= self.k <= MAX_PRECISION:
            raise ModelError(f"need 1 <= h <= k <= {MAX_PRECISION}")
        if not 1 <= self.C <= 30 or not 1 <= self.n <= 30:
            raise ModelError("C and n must lie in [1, 30]")
        if not (math.isfinite(self.support) and self.support > 0):
            raise ModelError("support must be positive")
        d = self.latent_dim
        if self.prior.dim != d:
            raise ModelError(f"prior covers {self.prior.dim} dims but the flow yields {d}")

    @property
    def hash(self) -> bytes:
        if self._hash is None:
            self._hash = hashlib.sha256(_serialize_body(self)).digest()
        return self._hash

    def save(self) -> bytes:
        return save(self)


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

class _Writer:
    def __init__(self):
        self.buf = io.BytesIO()

    def pack(self, fmt: str, *values):
        self.buf.write(struct.pack("<" + fmt, *values))

    def array(self, a):
        self.buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())

    def index(self, a):
        self.buf.write(np.ascontiguousarray(a, dtype="<u4").tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelError("model file is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, *shape) -> np.ndarray:
        count = math.prod(shape)
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)

    def index(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<u4").astype(np.int64)


def _write_net(w: _Writer, net: DenseNet):
    w.pack("BB", len(net.weights), _ACT[net.activation])
    for W, b in zip(net.weights, net.biases):
        w.pack("II", W.shape[1], W.shape[0])
        w.array(W)
        w.array(b)


def _read_net(r: _Reader) -> DenseNet:
    count, act = r.unpack("BB")
    names = {v: k for k, v in _ACT.items()}
    if act not in names:
        raise ModelError(f"unknown activation code {act}")
    weights, biases = [], []
    for _ in range(count):
        n_in, n_out = r.unpack("II")
        weights.append(r.array(n_out, n_in))
        biases.append(r.array(n_out))
    return DenseNet(weights, biases, names[act])


def _write_coupling(w: _Writer, layer: CouplingLayer):
    w.pack("IId", layer.dim, layer.d_b, layer.alpha)
    _write_net(w, layer.net)


def _read_coupling(r: _Reader) -> CouplingLayer:
    dim, d_b, alpha = r.unpack("IId")
    return CouplingLayer(dim, d_b, _read_net(r), alpha)


def _serialize_body(model: FlowModel) -> bytes:
    w = _Writer()
    w.buf.write(MAGIC)
    w.pack("B", VERSION)
    w.pack("B", len(model.shape))
    w.pack(f"{len(model.shape)}I", *model.shape)
    w.pack("BBBBd", model.h, model.k, model.C, model.n, model.support)
    w.pack("I", len(model.layers))
    for layer in model.layers:
        if isinstance(layer, CouplingLayer):
            w.pack("B", TAG_COUPLING)
            _write_coupling(w, layer)
        elif isinstance(layer, Conv1x1Layer):
            w.pack("BI", TAG_CONV, layer.channels)
            w.index(layer.perm)
            w.array(layer.lower)
            w.array(layer.upper)
            w.array(layer.lam)
        elif isinstance(layer, PermutationLayer):
            w.pack("BI", TAG_PERM, layer.dim)
            w.index(layer.perm)
        elif isinstance(layer, FactorOutLayer):
            w.pack("BIIB", TAG_FACTOR, layer.dim, layer.n_out, layer.coupling is not None)
            if layer.coupling is not None:
                _write_coupling(w, layer.coupling)
            _write_net(w, layer.head)
        else:
            raise ModelError(f"cannot serialize {type(layer).__name__}")
    prior = model.prior
    if isinstance(prior, MixGaussPrior):
        w.pack("BII", PRIOR_MIXTURE, prior.dim, prior.n_components)
        w.array(prior.logits)
        w.array(prior.mu)
        w.array(prior.log_var)
    else:
        w.pack("BIdd", PRIOR_UNIFORM, prior.dim, prior.lo, prior.hi)
    return w.buf.getvalue()


def save(model: FlowModel) -> bytes:
    body = _serialize_body(model)
    return body + hashlib.sha256(body).digest()


def load(data: bytes) -> FlowModel:
    """Parse and fully validate a model file."""
    if len(data) < 32 + len(MAGIC) + 1:
        raise ModelError("model file is truncated")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ModelError("model hash does not match its contents")
    r = _Reader(body)
    if r.take(4) != MAGIC:
        raise ModelError("not a model file (bad magic)")
    (version,) = r.unpack("B")
    if version != VERSION:
        raise ModelError(f"unsupported model version {version}")
    (rank,) = r.unpack("B")
    shape = r.unpack(f"{rank}I")
    h, k, C, n, support = r.unpack("BBBBd")
    (n_layers,) = r.unpack("I")
    layers = []
    for _ in range(n_layers):
        (tag,) = r.unpack("B")
        if tag == TAG_COUPLING:
            layers.append(_read_coupling(r))
        elif tag == TAG_CONV:
            (c,) = r.unpack("I")
            perm = r.index(c)
            layers.append(Conv1x1Layer(c, perm, r.array(c, c), r.array(c, c), r.array(c)))
        elif tag == TAG_PERM:
            (d,) = r.unpack("I")
            layers.append(PermutationLayer(r.index(d)))
        elif tag == TAG_FACTOR:
            d, n_out, has_coupling = r.unpack("IIB")
            coupling = _read_coupling(r) if has_coupling else None
            layers.append(FactorOutLayer(d, n_out, _read_net(r), coupling))
        else:
            raise ModelError(f"unknown layer tag {tag}")
    (kind,) = r.unpack("B")
    if kind == PRIOR_MIXTURE:
        d, K = r.unpack("II")
        prior = MixGaussPrior(r.array(d, K), r.array(d, K), r.array(d, K))
    elif kind == PRIOR_UNIFORM:
        d, lo, hi = r.unpack("Idd")
        prior = UniformPrior(d, lo, hi)
    else:
        raise ModelError(f"unknown prior kind {kind}")
    if r.pos != len(body):
        raise ModelError("trailing bytes in model file")
    model = FlowModel(shape, layers, prior, h, k, C, n, support)
    model._hash = digest
    return model


# --------------------------------------------------------------------------
# initialization
# --------------------------------------------------------------------------

def _random_net(rng, n_in: int, n_out: int, hidden: int, activation: str,
                out_scale: float = 1.0, out_bias=None) -> DenseNet:
    sizes = [n_in, hidden, hidden, n_out]
    weights, biases = [], []
    for i in range(3):
        fan_in = max(sizes[i], 1)
        W = rng.standard_normal((sizes[i + 1], sizes[i])) / math.sqrt(fan_in)
        b = 0.1 * rng.standard_normal(sizes[i + 1])
        if i == 2:
            W *= out_scale
            b = b * out_scale if out_bias is None else b * out_scale + out_bias
        weights.append(W)
        biases.append(b)
    return DenseNet(weights, biases, activation)


def _coupling(rng, d: int, split: tuple[int, int], alpha: float, hidden: int,
              activation: str) -> CouplingLayer:
    a, b = split
    d_b = min(max(1, d * b // (a + b)), d)
    return CouplingLayer(d, d_b, _random_net(rng, d - d_b, 2 * d_b, hidden, activation), alpha)


def _unit_triangular(rng, c: int, scale: float, lower: bool) -> np.ndarray:
    M = np.eye(c)
    if scale:
        noise = scale * rng.standard_normal((c, c))
        M += np.tril(noise, -1) if lower else np.triu(noise, 1)
    return M


def _unit_product(rng, c: int, scale: float) -> np.ndarray:
    if not scale or c == 1:
        return np.ones(c)
    logs = scale * rng.standard_normal(c)
    logs -= logs.mean()
    return np.exp(logs)


def random_init(shape, n_layers: int, n_levels: int = 1, seed: int = 0, *,
                alpha: float = 0.0, lu_scale: float = 0.05, lambda_scale: float = 0.0,
                hidden: int = 16, activation: str = "tanh", split=(3, 1),
                prior: str = "mixture", components: int = 3,
                prior_mu=(-0.25, 0.0, 0.25), prior_sigma: float = 0.2,
                head_scale: float = 0.1, **defaults) -> FlowModel:
    """Reproducible random model that starts as (close to) an identity map.

    Each block is ``permutation -> coupling -> 1x1 conv``.  The ``n_layers``
    blocks are spread over ``n_levels`` levels; every level but the last ends
    with a factor-out of half of the remaining pixels.  With ``alpha=0`` all
    couplings are the identity.
    """
    shape = tuple(int(s) for s in shape)
    if n_layers < 0 or n_levels < 1:
        raise ValueError("need n_layers >= 0 and n_levels >= 1")
    rng = np.random.default_rng(seed)
    c = shape[-1] if len(shape) > 1 else 1
    d = math.prod(shape)
    per_level = [n_layers // n_levels + (i < n_layers % n_levels) for i in range(n_levels)]
    layers = []
    for level, blocks in enumerate(per_level):
        channels = c if d % c == 0 else 1
        for _ in range(blocks):
            layers.append(PermutationLayer(rng.permutation(d)))
            layers.append(_coupling(rng, d, split, alpha, hidden, activation))
            layers.append(Conv1x1Layer(
                channels, rng.permutation(channels),
                _unit_triangular(rng, channels, lu_scale, lower=True),
                _unit_triangular(rng, channels, lu_scale, lower=False),
                _unit_product(rng, channels, lambda_scale)))
        if level == n_levels - 1 or d < 2:
            continue
        n_out = (d // channels // 2) * channels or d // 2
        head = _random_net(rng, d - n_out, 2 * n_out, hidden, activation, out_scale=head_scale,
                           out_bias=np.r_[np.zeros(n_out),
                                          np.full(n_out, 2 * math.log(prior_sigma))])
        layers.append(FactorOutLayer(d, n_out, head,
                                     _coupling(rng, d, split, alpha, hidden, activation)))
        d -= n_out
    if prior == "uniform":
        p = UniformPrior(d)
    elif prior == "mixture":
        mu = np.resize(np.asarray(prior_mu, dtype=np.float64), components)
        p = MixGaussPrior(np.zeros((d, components)), np.tile(mu, (d, 1)),
                          np.full((d, components), 2 * math.log(prior_sigma)))
    else:
        raise ValueError(f"unknown prior {prior!r}")
    return FlowModel(shape, layers, p, **defaults)


# --------------------------------------------------------------------------
# continuous reference
# --------------------------------------------------------------------------

def continuous_eval(model: FlowModel, x) -> np.ndarray:
    """Unquantized binary64 evaluation of the underlying flow.

    Returns all latents concatenated as ``[z_1, ..., z_M]`` (factored parts
    in layer order, then the final latent), matching the codec's layout.
    """
    y = np.asarray(x, dtype=np.float64).reshape(-1)
    if y.size != model.dim:
        raise ValueError(f"expected {model.dim} values, got {y.size}")
    parts = []
    for layer in model.layers:
        if isinstance(layer, FactorOutLayer):
            z_l, y = layer.continuous(y)
            parts.append(z_l)
        else:
            y = layer.continuous(y)
        if not np.all(np.isfinite(y)):
            raise ModelError("continuous flow produced non-finite values")
    return np.concatenate(parts + [y])


def continuous_inverse(model: FlowModel, z) -> np.ndarray:
    """Inverse of :func:`continuous_eval` (used to sample data from the model)."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    sizes = [layer.n_out for layer in model.factor_layers]
    splits = np.cumsum(sizes)
    parts = np.split(z, splits)
    y = parts[-1]
    factored = parts[:-1]
    for layer in reversed(model.layers):
        if isinstance(layer, FactorOutLayer):
            y = np.concatenate([factored.pop(), y])
            if layer.coupling is not None:
                y = _coupling_continuous_inverse(layer.coupling, y)
        elif isinstance(layer, CouplingLayer):
            y = _coupling_continuous_inverse(layer, y)
        elif isinstance(layer, Conv1x1Layer):
            W = layer.matrix()
            y = np.linalg.solve(W, y.reshape(-1, layer.channels).T).T.reshape(-1)
        elif isinstance(layer, PermutationLayer):
            out = np.empty_like(y)
            out[layer.perm] = y
            y = out
    return y


def _coupling_continuous_inverse(layer: CouplingLayer, z: np.ndarray) -> np.ndarray:
    s, t = layer.coefficients(z[:layer.d_a])
    return np.concatenate([z[:layer.d_a], (z[layer.d_a:] - t) * np.exp(-s)])
