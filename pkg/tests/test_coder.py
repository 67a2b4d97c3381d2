import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ivpf.coder import (INIT_HEAD, RansState, init_state, pool_words, rans_decode_step,
                        rans_encode_step)
from ivpf.errors import StreamError


def table(freqs):
    starts = [0]
    for f in freqs[:-1]:
        starts.append(starts[-1] + f)
    cum = starts[1:] + [starts[-1] + freqs[-1]]

    def lookup(b):
        i = next(j for j, c in enumerate(cum) if b < c)
        return i, starts[i], freqs[i]

    return starts, lookup


class TestSteps:
    def test_example(self):
        # floor(5 / 2) * 4 + 5 mod 2 + 0
        assert rans_encode_step(5, 0, 2, 2) == 9
        assert rans_decode_step(9, 0, 2, 2) == 5

    @given(st.integers(1, 2 ** 40), st.integers(1, 12), st.data())
    def test_step_inverse(self, c, n, data):
        freq = data.draw(st.integers(1, 2 ** n))
        start = data.draw(st.integers(0, 2 ** n - freq))
        c2 = rans_encode_step(c, start, freq, n)
        assert start <= c2 % 2 ** n < start + freq
        assert rans_decode_step(c2, start, freq, n) == c


class TestState:
    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(1, 50), min_size=2, max_size=6), st.integers(0, 2 ** 31),
           st.integers(1, 400))
    def test_round_trip(self, weights, seed, count):
        n = 12
        total = sum(weights)
        freqs = [max(1, w * (2 ** n - len(weights)) // total) for w in weights]
        freqs[-1] = 2 ** n - sum(freqs[:-1])
        starts, lookup = table(freqs)
        rng = np.random.default_rng(seed)
        symbols = rng.integers(0, len(freqs), count).tolist()
        state = init_state()
        for s in reversed(symbols):
            state.encode_symbol(starts[s], freqs[s], n)
        restored = RansState.restore(state.flush())
        assert [restored.decode_symbol(lookup, n) for _ in symbols] == symbols
        assert restored == init_state()

    def test_power_of_two_accounting_is_exact(self):
        state = init_state()
        before = state.bit_length()
        for i in range(1000):
            state.encode_symbol((i % 8) * 2 ** 13, 2 ** 13, 16)
        assert state.bit_length() - before == 3 * 1000

    @given(st.lists(st.integers(0, 2 ** 11 - 1), max_size=200), st.integers(0, 50))
    def test_uniform_round_trip(self, values, pool):
        state = init_state(pool=pool)
        before = state.copy()
        state.encode_uniform(values, 11)
        assert state.bit_length() - before.bit_length() == 11 * len(values)
        assert state.decode_uniform(len(values), 11) == values
        assert state == before

    def test_bits_back_from_pool(self):
        state = init_state(pool=10)
        start = state.copy()
        u = state.decode_uniform(40, 6)
        assert start.bit_length() - state.bit_length() == 240
        state.encode_uniform(u, 6)
        assert state == start

    def test_underflow(self):
        state = init_state()
        with pytest.raises(StreamError):
            state.decode_uniform(20, 6)

    def test_elided_flush(self):
        state = init_state(pool=50)
        u = state.decode_uniform(30, 5)
        state.encode_symbol(3, 5, 8)
        kept, data = state.flush_elided()
        assert 40 <= kept < 50
        assert len(data) == 4 * (2 + len(state.tail) - kept)
        restored = RansState.restore(data, kept, INIT_HEAD)
        assert restored == state
        assert restored.decode_symbol(lambda b: (0, 3, 5), 8) == 0
        restored.encode_uniform(u, 5)
        assert restored == init_state(pool=50)

    def test_restore_rejects_garbage(self):
        with pytest.raises(StreamError):
            RansState.restore(b"\x00" * 7)
        with pytest.raises(StreamError):
            RansState.restore(b"\x00" * 8)

    def test_pool_prefix_stable(self):
        assert pool_words(7, 5) == pool_words(7, 9)[:5]
        assert pool_words(7, 3) != pool_words(8, 3)

    def test_rejects_bad_interval(self):
        with pytest.raises(ValueError):
            init_state().encode_symbol(10, 0, 8)
        with pytest.raises(ValueError):
            init_state().encode_symbol(250, 10, 8)


class TestEntropy:
    def test_close_to_entropy(self):
        pmf = np.array([0.55, 0.2, 0.15, 0.07, 0.03])
        n = 16
        freqs = np.maximum(1, np.round(pmf * 2 ** n)).astype(int).tolist()
        freqs[0] += 2 ** n - sum(freqs)
        starts, lookup = table(freqs)
        symbols = np.random.default_rng(0).choice(5, 50000, p=pmf).tolist()
        state = init_state()
        before = state.bit_length()
        for s in reversed(symbols):
            state.encode_symbol(starts[s], freqs[s], n)
        ideal = -sum(math.log2(pmf[s]) for s in symbols)
        assert state.bit_length() - before < ideal * 1.001 + 64
