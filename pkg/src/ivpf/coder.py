"""Streaming rANS with a 64-bit head and 32-bit word renormalization.

The coder is a stack: ``decode_*`` pops what the last ``encode_*`` pushed.
Bits-back coding uses that directly, decoding auxiliary values out of an
initial pool of public pseudo-random words and re-encoding them later.

A state can be read as one big integer: the head followed by the tail words
(newest word directly below the head).  :meth:`RansState.bit_length` is the
bit length of that integer, which makes codelength accounting exact.
"""
from __future__ import annotations

import hashlib
from typing import Callable, Iterable

from .errors import StreamError

HEAD_LOW = 1 << 32           # head stays in [2**32, 2**64)
WORD_BITS = 32
WORD_MASK = (1 << WORD_BITS) - 1
MAX_PRECISION = 32
INIT_HEAD = 0x9E3779B97F4A7C15  # public initial head shared by encoder and decoder


def rans_encode_step(c: int, start: int, freq: int, n: int) -> int:
    """``c' = floor(c / freq) * 2**n + c mod freq + start`` (no renormalization)."""
    q, rem = divmod(c, freq)
    return (q << n) + rem + start


def rans_decode_step(c: int, start: int, freq: int, n: int) -> int:
    """Inverse of :func:`rans_encode_step` for the symbol with ``(start, freq)``."""
    return freq * (c >> n) + (c & ((1 << n) - 1)) - start


def pool_words(seed: int, count: int) -> list[int]:
    """Deterministic public word pool; ``pool_words(s, a)`` is a prefix of ``pool_words(s, b)`` for a <= b."""
    if count <= 0:
        return []
    raw = hashlib.shake_256(seed.to_bytes(8, "big")).digest(4 * count)
    return [int.from_bytes(raw[4 * i:4 * i + 4], "big") for i in range(count)]


class RansState:
    """Mutable rANS message: ``head`` plus a stack ``tail`` of 32-bit words."""

    __slots__ = ("head", "tail", "seed", "floor")

    def __init__(self, head: int = INIT_HEAD, tail: Iterable[int] = (), seed: int = INIT_HEAD):
        if not HEAD_LOW <= head < (1 << 64):
            raise StreamError(f"rANS head {head:#x} outside [2**32, 2**64)")
        self.head = head
        self.tail = list(tail)
        self.seed = seed
        # words below ``floor`` have never been popped since construction
        self.floor = len(self.tail)

    def copy(self) -> "RansState":
        other = RansState(self.head, self.tail, self.seed)
        other.floor = self.floor
        return other

    def __eq__(self, other):
        if not isinstance(other, RansState):
            return NotImplemented
        return self.head == other.head and self.tail == other.tail

    def __repr__(self):
        return f"RansState(head={self.head:#x}, words={len(self.tail)})"

    def bit_length(self) -> int:
        return WORD_BITS * len(self.tail) + self.head.bit_length()

    # -- symbols ----------------------------------------------------------

    def encode_symbol(self, start: int, freq: int, n: int) -> None:
        """Push the symbol occupying ``[start, start + freq)`` out of ``2**n``."""
        if freq <= 0 or start < 0 or start + freq > (1 << n):
            raise ValueError(f"invalid interval start={start} freq={freq} for n={n}")
        if n > MAX_PRECISION:
            raise ValueError(f"precision {n} exceeds {MAX_PRECISION}")
        if self.head >= freq << (64 - n):
            self.tail.append(self.head & WORD_MASK)
            self.head >>= WORD_BITS
        self.head = rans_encode_step(self.head, start, freq, n)

    def peek(self, n: int) -> int:
        return self.head & ((1 << n) - 1)

    def _pull(self) -> None:
        if self.head < HEAD_LOW:
            if not self.tail:
                raise StreamError("rANS stack underflow")
            self.head = (self.head << WORD_BITS) | self.tail.pop()
            if len(self.tail) < self.floor:
                self.floor = len(self.tail)

    def decode_advance(self, start: int, freq: int, n: int) -> None:
        self.head = rans_decode_step(self.head, start, freq, n)
        self._pull()

    def decode_symbol(self, lookup: Callable[[int], tuple[int, int, int]], n: int) -> int:
        """Pop one symbol; ``lookup(b)`` returns ``(symbol, start, freq)`` for the slot ``b``."""
        symbol, start, freq = lookup(self.peek(n))
        self.decode_advance(start, freq, n)
        return symbol

    # -- uniform bits (bits-back) -----------------------------------------

    def decode_uniform(self, count: int, bits: int) -> list[int]:
        """Pop ``count`` values uniform on ``[0, 2**bits)``, consuming exactly ``count * bits`` bits."""
        if bits == 0:
            return [0] * count
        if not 0 < bits <= MAX_PRECISION:
            raise ValueError(f"uniform width {bits} out of range")
        mask = (1 << bits) - 1
        out = []
        for _ in range(count):
            out.append(self.head & mask)
            self.head >>= bits
            self._pull()
        return out

    def encode_uniform(self, values: list[int], bits: int) -> None:
        """Inverse of :meth:`decode_uniform` for the same list of values."""
        if bits == 0:
            if any(values):
                raise ValueError("non-zero value with zero-bit uniform")
            return
        limit = 1 << (64 - bits)
        for u in reversed(values):
            if not 0 <= u < (1 << bits):
                raise ValueError(f"uniform value {u} out of range")
            if self.head >= limit:
                self.tail.append(self.head & WORD_MASK)
                self.head >>= WORD_BITS
            self.head = (self.head << bits) | u

    # -- serialization ----------------------------------------------------

    def _words(self, skip: int) -> list[int]:
        return [self.head >> WORD_BITS, self.head & WORD_MASK] + self.tail[skip:]

    def flush(self) -> bytes:
        """Big-endian 32-bit words: head (2 words) then the tail bottom to top."""
        return b"".join(w.to_bytes(4, "big") for w in self._words(0))

    def flush_elided(self) -> tuple[int, bytes]:
        """Like :meth:`flush` but omit the untouched bottom of the public pool.

        Returns ``(kept, data)`` where ``kept`` pool words must be regenerated
        from the seed by :meth:`restore`.
        """
        kept = self.floor
        return kept, b"".join(w.to_bytes(4, "big") for w in self._words(kept))

    @classmethod
    def restore(cls, data: bytes, kept: int = 0, seed: int = INIT_HEAD) -> "RansState":
        if len(data) % 4 or len(data) < 8:
            raise StreamError("rANS stream length is not a whole number of words")
        words = [int.from_bytes(data[i:i + 4], "big") for i in range(0, len(data), 4)]
        head = (words[0] << WORD_BITS) | words[1]
        state = cls(head, pool_words(seed, kept) + words[2:], seed)
        return state


def init_state(seed: int = INIT_HEAD, pool: int = 0) -> RansState:
    """Fresh state with head ``seed`` and ``pool`` public words to borrow bits from."""
    return RansState(seed, pool_words(seed, pool), seed)
