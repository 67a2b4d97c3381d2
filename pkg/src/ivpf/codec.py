"""Lossless compression of h-bit tensors with a numerically invertible flow.

Encoding one tensor ``x0``:

1. Map the integers to the centred grid ``x_m = (x0 - 2**(h-1)) * 2**(k-h)``
   and borrow ``k - h`` bits per element from the coder as a uniform
   dequantization offset (bits-back).
2. Run the fixed-point flow forward with the auxiliary register ``r = 0``.
3. Push the factored latents (shallowest first) and then the final latents
   with their priors.  The register ends up in ``[0, 2**C)`` and is stored
   next to the stream.

Decoding pops everything in reverse, runs the flow backwards and returns the
borrowed bits to the coder, which leaves the initial public pool unchanged.

Container layout (big-endian)::

    b"IVPF" version:u8 h:u8 k:u8 C:u8 n:u8 rank:u8 dims:u32*rank
    model_sha256[32] r:u32 pool_kept:u32 n_words:u32 words:u32*n_words
"""
from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .coder import INIT_HEAD, RansState, init_state
from .errors import StreamError
from .fixnum import MAX_PRECISION, QuantVector
from .layers import FactorOutLayer
from .model import FlowModel
from .prior import QuantizedCdf, cond_gauss_cdf

MAGIC = b"IVPF"
ARCHIVE_MAGIC = b"IVPA"
VERSION = 1


@dataclass(frozen=True)
class CodecConfig:
    shape: tuple[int, ...]
    h: int = 8
    k: int = 14
    C: int = 16
    n: int = 28
    support: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if not self.shape or any(s <= 0 for s in self.shape):
            raise ValueError(f"invalid shape {self.shape}")
        if not 1 <= self.h <= 16:
            raise ValueError("h must lie in [1, 16]")
        if not self.h <= self.k <= MAX_PRECISION:
            raise ValueError(f"need h <= k <= {MAX_PRECISION}")
        if not 1 <= self.C <= 30:
            raise ValueError("C must lie in [1, 30]")
        if not 1 <= self.n <= 30:
            raise ValueError("n must lie in [1, 30]")

    @property
    def d(self) -> int:
        return math.prod(self.shape)

    @property
    def pool_words(self) -> int:
        """Public words needed so bits-back never underflows on an empty message."""
        return -(-(self.k - self.h) * self.d // 32) + 2

    @classmethod
    def from_model(cls, model: FlowModel, **overrides) -> "CodecConfig":
        base = dict(shape=model.shape, h=model.h, k=model.k, C=model.C, n=model.n,
                    support=model.support)
        base.update({key: v for key, v in overrides.items() if v is not None})
        return cls(**base)


@dataclass
class FactoredLatent:
    z: QuantVector
    mu: np.ndarray
    log_var: np.ndarray


@dataclass
class FlowResult:
    """Output of :func:`flow_forward`: final latent, factored latents and register."""

    z: QuantVector
    factored: list[FactoredLatent]
    r: int

    def latents(self) -> QuantVector:
        """All latents concatenated as ``[z_1, ..., z_M]``."""
        parts = [f.z.mantissas for f in self.factored] + [self.z.mantissas]
        return QuantVector(np.concatenate(parts), self.z.precision)


@dataclass
class CodelengthReport:
    """Bit accounting for one encoded tensor.

    ``net_bits = bits_latent - bits_uniform_debited + bits_aux_register`` where
    ``bits_latent`` is the growth of the coder while pushing latents,
    ``bits_uniform_debited`` is what the dequantization borrowed and
    ``bits_aux_register`` the cost of storing ``r``.
    """

    d: int
    bits_latent: int
    bits_uniform_debited: int
    bits_aux_register: int
    container_bytes: int | None = None
    latent_breakdown: list[int] = field(default_factory=list)

    @property
    def net_bits(self) -> int:
        return self.bits_latent - self.bits_uniform_debited + self.bits_aux_register

    @property
    def bpd(self) -> float:
        return self.net_bits / self.d

    @property
    def register_bpd(self) -> float:
        return self.bits_aux_register / self.d

    def as_dict(self) -> dict:
        out = asdict(self)
        out.update(net_bits=self.net_bits, bpd=self.bpd, register_bpd=self.register_bpd)
        return out


@dataclass
class EncodeInfo:
    r: int
    report: CodelengthReport


# --------------------------------------------------------------------------
# flow traversal
# --------------------------------------------------------------------------

def flow_forward(x: QuantVector, model: FlowModel, r: int = 0, C: int | None = None) -> FlowResult:
    """Run every layer forward, collecting factored latents and their conditionals."""
    C = model.C if C is None else C
    if x.dim != model.dim:
        raise ValueError(f"model expects {model.dim} values, got {x.dim}")
    factored = []
    for layer in model.layers:
        if isinstance(layer, FactorOutLayer):
            z_l, x, r = layer.forward(x, r, C)
            mu, log_var = layer.conditional(x)
            factored.append(FactoredLatent(z_l, mu, log_var))
        else:
            x, r = layer.forward(x, r, C)
    return FlowResult(x, factored, r)


FactoredSource = Sequence[QuantVector] | Callable[[int, FactorOutLayer, QuantVector], QuantVector]


def flow_inverse(z: QuantVector, factored: FactoredSource, model: FlowModel, r: int,
                 C: int | None = None) -> tuple[QuantVector, int]:
    """Invert :func:`flow_forward`.

    ``factored`` is either the list of factored latents in layer order or a
    callable ``(index, layer, y) -> z_l`` invoked deepest first once the
    conditioning vector ``y`` is known (this is how the decoder pulls them
    from the stream).
    """
    C = model.C if C is None else C
    idx = len(model.factor_layers)
    for layer in reversed(model.layers):
        if isinstance(layer, FactorOutLayer):
            idx -= 1
            z_l = factored(idx, layer, z) if callable(factored) else factored[idx]
            z, r = layer.inverse(z_l, z, r, C)
        else:
            z, r = layer.inverse(z, r, C)
    return z, r


# --------------------------------------------------------------------------
# latent coding
# --------------------------------------------------------------------------

def _prior_cdfs(model: FlowModel, cfg: CodecConfig) -> list[QuantizedCdf]:
    return [model.prior.quantized_cdf(i, cfg.k, cfg.n, cfg.support)
            for i in range(model.prior.dim)]


def _cond_cdfs(mu, log_var, cfg: CodecConfig) -> list[QuantizedCdf]:
    return [cond_gauss_cdf(m, lv, cfg.k, cfg.n, cfg.support) for m, lv in zip(mu, log_var)]


def _push(state: RansState, z: QuantVector, cdfs: list[QuantizedCdf], n: int) -> None:
    m = z.mantissas.tolist()
    for i in range(len(m) - 1, -1, -1):
        q = cdfs[i]
        start, freq = q.interval(q.symbol_of(m[i]))
        state.encode_symbol(start, freq, n)


def _pop(state: RansState, cdfs: list[QuantizedCdf], n: int, k: int) -> QuantVector:
    out = []
    for q in cdfs:
        i = state.decode_symbol(q.lookup, n)
        out.append(q.lo + i)
    return QuantVector(np.asarray(out, dtype=np.int64), k)


def _resolve(model: FlowModel, config: CodecConfig | None) -> CodecConfig:
    cfg = CodecConfig.from_model(model) if config is None else config
    if cfg.d != model.dim:
        raise ValueError(f"config shape {cfg.shape} does not fit model shape {model.shape}")
    return cfg


def _check_input(x0, cfg: CodecConfig) -> np.ndarray:
    x0 = np.asarray(x0)
    if x0.size != cfg.d:
        raise ValueError(f"expected {cfg.d} values, got {x0.size}")
    if not np.issubdtype(x0.dtype, np.integer):
        if not np.all(np.isfinite(x0)) or np.any(x0 != np.round(x0)):
            raise ValueError("input must hold integers")
    x0 = x0.astype(np.int64).reshape(-1)
    if x0.min() < 0 or x0.max() >= (1 << cfg.h):
        raise ValueError(f"input values must lie in [0, {1 << cfg.h})")
    return x0


def encode(x0, model: FlowModel, config: CodecConfig | None = None,
           state: RansState | None = None) -> tuple[RansState, EncodeInfo]:
    """Push one tensor onto ``state`` (a fresh pooled state by default)."""
    cfg = _resolve(model, config)
    x0 = _check_input(x0, cfg)
    state = init_state(INIT_HEAD, cfg.pool_words) if state is None else state
    shift = cfg.k - cfg.h

    bits0 = state.bit_length()
    u = state.decode_uniform(cfg.d, shift)
    bits1 = state.bit_length()
    x_m = ((x0 - (1 << (cfg.h - 1))) << shift) + np.asarray(u, dtype=np.int64)
    result = flow_forward(QuantVector(x_m, cfg.k), model, 0, cfg.C)

    breakdown = []
    for f in result.factored:
        before = state.bit_length()
        _push(state, f.z, _cond_cdfs(f.mu, f.log_var, cfg), cfg.n)
        breakdown.append(state.bit_length() - before)
    before = state.bit_length()
    _push(state, result.z, _prior_cdfs(model, cfg), cfg.n)
    breakdown.append(state.bit_length() - before)

    report = CodelengthReport(d=cfg.d, bits_latent=state.bit_length() - bits1,
                              bits_uniform_debited=bits0 - bits1, bits_aux_register=cfg.C,
                              latent_breakdown=breakdown)
    return state, EncodeInfo(result.r, report)


def decode(state: RansState, model: FlowModel, r: int,
           config: CodecConfig | None = None) -> np.ndarray:
    """Pop one tensor from ``state`` (mutated in place); returns it in the config's shape."""
    cfg = _resolve(model, config)
    shift = cfg.k - cfg.h
    if not 0 <= r < (1 << cfg.C):
        raise StreamError(f"auxiliary register {r} outside [0, 2**{cfg.C})")
    z = _pop(state, _prior_cdfs(model, cfg), cfg.n, cfg.k)

    def pull(_idx: int, layer: FactorOutLayer, y: QuantVector) -> QuantVector:
        mu, log_var = layer.conditional(y)
        return _pop(state, _cond_cdfs(mu, log_var, cfg), cfg.n, cfg.k)

    x, r_end = flow_inverse(z, pull, model, r, cfg.C)
    if r_end != 0:
        raise StreamError("stream is corrupted (auxiliary register did not return to zero)")
    m = x.mantissas
    coarse = m >> shift
    state.encode_uniform((m - (coarse << shift)).tolist(), shift)
    x0 = coarse + (1 << (cfg.h - 1))
    if x0.min() < 0 or x0.max() >= (1 << cfg.h):
        raise StreamError("stream is corrupted (decoded values out of range)")
    return x0.reshape(cfg.shape)


# --------------------------------------------------------------------------
# container
# --------------------------------------------------------------------------

def _header(cfg: CodecConfig, model_hash: bytes) -> bytes:
    rank = len(cfg.shape)
    return (MAGIC + struct.pack(">BBBBBB", VERSION, cfg.h, cfg.k, cfg.C, cfg.n, rank)
            + struct.pack(f">{rank}I", *cfg.shape) + model_hash)


def compress(x0, model: FlowModel, config: CodecConfig | None = None,
             report: bool = False):
    """Encode one tensor into a self-describing container.

    Returns the bytes, or ``(bytes, CodelengthReport)`` when ``report`` is set.
    """
    cfg = _resolve(model, config)
    state, info = encode(x0, model, cfg)
    kept, words = state.flush_elided()
    blob = (_header(cfg, model.hash) + struct.pack(">III", info.r, kept, len(words) // 4)
            + words)
    info.report.container_bytes = len(blob)
    return (blob, info.report) if report else blob


@dataclass(frozen=True)
class ContainerHeader:
    config: CodecConfig
    model_hash: bytes
    r: int
    pool_kept: int
    n_words: int
    offset: int          # where the words start


def read_header(data: bytes, support: float = 2.0) -> ContainerHeader:
    try:
        if data[:4] != MAGIC:
            raise StreamError("not an IVPF container (bad magic)")
        version, h, k, C, n, rank = struct.unpack_from(">BBBBBB", data, 4)
        if version != VERSION:
            raise StreamError(f"unsupported container version {version}")
        pos = 10
        shape = struct.unpack_from(f">{rank}I", data, pos)
        pos += 4 * rank
        model_hash = bytes(data[pos:pos + 32])
        if len(model_hash) != 32:
            raise StreamError("container is truncated")
        pos += 32
        r, kept, n_words = struct.unpack_from(">III", data, pos)
        pos += 12
    except struct.error as exc:
        raise StreamError("container is truncated") from exc
    try:
        cfg = CodecConfig(shape, h, k, C, n, support)
    except ValueError as exc:
        raise StreamError(f"invalid container settings: {exc}") from exc
    return ContainerHeader(cfg, model_hash, r, kept, n_words, pos)


def _decompress_one(data: bytes, model: FlowModel) -> tuple[np.ndarray, int]:
    hdr = read_header(data, model.support)
    if hdr.model_hash != model.hash:
        raise StreamError("container was written with a different model")
    if hdr.config.d != model.dim:
        raise StreamError("container shape does not match the model")
    end = hdr.offset + 4 * hdr.n_words
    if hdr.n_words < 2 or end > len(data):
        raise StreamError("container is truncated")
    cfg = hdr.config
    if hdr.pool_kept > cfg.pool_words:
        raise StreamError("container references more pool words than exist")
    state = RansState.restore(bytes(data[hdr.offset:end]), hdr.pool_kept, INIT_HEAD)
    x0 = decode(state, model, hdr.r, cfg)
    if state != init_state(INIT_HEAD, cfg.pool_words):
        raise StreamError("stream is corrupted (coder did not return to its initial state)")
    return x0, end


def decompress(data: bytes, model: FlowModel) -> np.ndarray:
    x0, end = _decompress_one(data, model)
    if end != len(data):
        raise StreamError("trailing bytes after container")
    return x0


def compress_many(items, model: FlowModel, config: CodecConfig | None = None) -> bytes:
    """Archive of independently decodable containers."""
    blobs = [compress(x, model, config) for x in items]
    return ARCHIVE_MAGIC + struct.pack(">I", len(blobs)) + b"".join(blobs)


def decompress_many(data: bytes, model: FlowModel) -> list[np.ndarray]:
    if data[:4] != ARCHIVE_MAGIC or len(data) < 8:
        raise StreamError("not an IVPF archive")
    (count,) = struct.unpack_from(">I", data, 4)
    out, pos = [], 8
    for _ in range(count):
        x0, used = _decompress_one(data[pos:], model)
        out.append(x0)
        pos += used
    if pos != len(data):
        raise StreamError("trailing bytes after archive")
    return out


def codelength_report(x0, model: FlowModel, config: CodecConfig | None = None) -> CodelengthReport:
    """Bit accounting for ``x0`` without building a container."""
    return encode(x0, model, config)[1].report


def with_precision(model: FlowModel, **settings) -> CodecConfig:
    """Config for ``model`` with some settings overridden (``k=12``, ``C=20`` ...)."""
    return replace(CodecConfig.from_model(model), **settings)
