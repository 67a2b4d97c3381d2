"""End-to-end acceptance checks, one class per criterion.

Every class is marked with its criterion number; ``conftest.py`` prints a
pass/fail line per criterion at the end of the run.
"""
import math
import time

import numpy as np
import pytest

from ivpf.codec import (CodecConfig, codelength_report, compress, decode, decompress, encode,
                        read_header)
from ivpf.coder import init_state
from ivpf.fixnum import quantize
from ivpf.layers import CouplingLayer
from ivpf.model import continuous_inverse, random_init
from ivpf.oracle import (bijection_failure_demo, brute_force_mat_check, codelength_gap_demo,
                         error_scaling_probe, max_latent_error, random_admissible_scales)
from ivpf.prior import entropy_bits_mc


@pytest.mark.acceptance(1)
class TestLosslessness:
    SHAPES = [(2, 2, 3), (3, 3, 3), (4, 4, 3), (2, 5), (7,), (4, 4, 2), (1, 1, 3)]
    BIG = (32, 32, 3)

    def models(self):
        out = []
        for seed in range(7):
            for depth in (2, 8, 24):
                big = seed in (0, 1) and depth != 24 or (seed == 2 and depth == 24)
                shape = self.BIG if big else self.SHAPES[(seed + depth) % len(self.SHAPES)]
                rng = np.random.default_rng(1000 + seed)
                # random deep flows drift far from the origin, so the prior and its
                # support are widened to cover the latents they actually produce
                model = random_init(shape, depth, 1 + seed % 3, seed=seed,
                                    alpha=float(rng.uniform(0.1, 0.6)), lu_scale=0.1,
                                    lambda_scale=0.2, prior_sigma=1.0, support=16.0)
                out.append(model)
        return out

    def test_round_trips(self, note):
        start = time.perf_counter()
        models = self.models()
        big = [m for m in models if m.shape == self.BIG]
        small = [m for m in models if m.shape != self.BIG]
        per_big = 5
        per_small = -(-(10_000 - per_big * len(big)) // len(small))
        rng = np.random.default_rng(2024)
        total = failures = 0
        for model in models:
            count = per_big if model.shape == self.BIG else per_small
            for _ in range(count):
                x = rng.integers(0, 256, size=model.shape)
                total += 1
                failures += not np.array_equal(decompress(compress(x, model), model), x)
        elapsed = time.perf_counter() - start
        note(f"{total} tensors, {len(models)} models, {failures} failures, {elapsed:.0f}s")
        depths = {sum(isinstance(layer, CouplingLayer) for layer in m.layers) for m in models}
        assert len(models) >= 20 and depths == {2, 8, 24}
        assert total >= 10_000
        assert failures == 0
        assert elapsed < 600


@pytest.mark.acceptance(2)
class TestMatBijection:
    def test_exhaustive(self, note):
        start = time.perf_counter()
        rng = np.random.default_rng(7)
        cases = 0
        for d_b in (1, 2, 3):
            for k in (0, 2):
                for C in (3, 4):
                    s = random_admissible_scales(d_b, rng)
                    t = rng.normal(size=d_b)
                    rep = brute_force_mat_check(d_b, k, C, s, t, lo=-8, hi=8)
                    assert rep.cases == 16 ** d_b * 2 ** C
                    assert rep.ok, rep.to_text()
                    cases += rep.cases
        elapsed = time.perf_counter() - start
        note(f"{cases} (x_b, r) pairs over 12 configurations, 0 violations, {elapsed:.0f}s")
        assert elapsed < 120


@pytest.mark.acceptance(3)
class TestRegisterAccounting:
    def test_cifar_sized(self, note):
        model = random_init((32, 32, 3), 4, 2, seed=3, alpha=0.3, lambda_scale=0.2)
        x = np.random.default_rng(3).integers(0, 256, model.shape)
        blob, rep = compress(x, model, report=True)
        hdr = read_header(blob)
        assert rep.bits_aux_register == 16
        assert 0 <= hdr.r < 2 ** 16
        assert rep.net_bits - (rep.bits_latent - rep.bits_uniform_debited) == 16
        assert abs(rep.register_bpd - 0.0052) <= 0.0001
        assert np.array_equal(decompress(blob, model), x)
        note(f"register {rep.bits_aux_register} bits = {rep.register_bpd:.5f} bpd at d=3072")

    def test_scales_with_C(self):
        model = random_init((4, 4, 3), 2, seed=1, alpha=0.3)
        x = np.random.default_rng(4).integers(0, 256, model.shape)
        for C in (8, 20, 30):
            rep = codelength_report(x, model, CodecConfig(model.shape, C=C))
            assert rep.bits_aux_register == C


@pytest.mark.acceptance(4)
class TestDequantizationAccounting:
    def test_six_bits_per_dim(self, note):
        for shape, seed in (((32, 32, 3), 0), ((4, 4, 3), 1), ((5,), 2)):
            model = random_init(shape, 4, 2, seed=seed, alpha=0.3)
            x = np.random.default_rng(seed).integers(0, 256, shape)
            state = init_state(pool=CodecConfig(shape).pool_words)
            start = state.copy()
            bits0 = state.bit_length()
            state, info = encode(x, model, state=state)
            assert info.report.bits_uniform_debited == 6 * model.dim
            # decoding returns exactly the borrowed bits: the state is restored
            assert np.array_equal(decode(state, model, info.r), x)
            assert state == start and state.bit_length() == bits0
        state = init_state(pool=600)
        before = state.bit_length()
        state.decode_uniform(3072, 6)
        assert before - state.bit_length() == 6 * 3072
        note("bits-back debit = 6.00 bits/dim exactly")


@pytest.mark.acceptance(5)
class TestPrecisionIndependence:
    def test_k_sweep(self, note):
        model = random_init((8, 8, 3), 8, 2, seed=3, alpha=0.3, lambda_scale=0.1)
        rng = np.random.default_rng(0)
        xs = [rng.integers(0, 256, model.shape) for _ in range(10)]
        d = model.dim * len(xs)
        bpd, excess = [], []
        for k in (8, 10, 12, 14):
            reps = [codelength_report(x, model, CodecConfig(model.shape, k=k)) for x in xs]
            bpd.append(sum(r.net_bits for r in reps) / d)
            excess.append(sum(r.bits_latent for r in reps) - (k - 8) * d)
        note(f"net bpd {min(bpd):.4f}..{max(bpd):.4f}; "
             f"latent - (k-h)d spread {(max(excess) - min(excess)) / d:.4f} bits/dim")
        assert max(bpd) - min(bpd) < 0.02
        assert max(excess) - min(excess) <= 0.02 * d


@pytest.mark.acceptance(6)
class TestIdentityCodelength:
    @pytest.mark.parametrize("shape,h,k,layers", [
        ((32, 32, 3), 8, 14, 0), ((4, 4, 3), 8, 14, 3), ((7,), 8, 8, 2), ((3, 5), 4, 10, 1),
        ((2, 2, 3), 6, 20, 4),
    ])
    def test_exact(self, shape, h, k, layers, note):
        model = random_init(shape, layers, seed=5, lu_scale=0.0, prior="uniform", h=h, k=k)
        rng = np.random.default_rng(6)
        for _ in range(5):
            x = rng.integers(0, 2 ** h, shape)
            blob, rep = compress(x, model, report=True)
            assert rep.net_bits == h * model.dim + 16
            assert rep.bits_latent == k * model.dim
            assert np.array_equal(decompress(blob, model), x)
        if shape == (32, 32, 3):
            note(f"net bits = h*d + C = {rep.net_bits}; container {rep.container_bytes} bytes")


@pytest.mark.acceptance(7)
class TestRansOptimality:
    def test_million_symbols(self, note):
        pmf = np.array([0.4, 0.25, 0.15, 0.1, 0.06, 0.04])
        n = 16
        freqs = np.round(pmf * 2 ** n).astype(int).tolist()
        freqs[0] += 2 ** n - sum(freqs)
        starts = [0] + np.cumsum(freqs)[:-1].tolist()
        symbols = np.random.default_rng(0).choice(len(pmf), 1_000_000, p=pmf).tolist()

        state = init_state()
        bits0 = state.bit_length()
        enc = state.encode_symbol
        for s in reversed(symbols):
            enc(starts[s], freqs[s], n)
        used = state.bit_length() - bits0

        shannon = -len(symbols) * float(np.sum(pmf * np.log2(pmf)))
        counts = np.bincount(symbols, minlength=len(pmf))
        ideal = -float(np.sum(counts * np.log2(pmf)))
        note(f"{used} bits vs entropy {shannon:.0f} ({100 * (used / shannon - 1):+.3f}%)")
        assert abs(used - shannon) <= 0.001 * shannon
        assert abs(used - ideal) <= 0.001 * ideal

        table = []
        for i, f in enumerate(freqs):
            table.extend([i] * f)
        decoded = state.decode_symbol
        lookup = lambda b: (table[b], starts[table[b]], freqs[table[b]])
        out = [decoded(lookup, n) for _ in range(len(symbols))]
        assert out == symbols
        assert state == init_state()


@pytest.mark.acceptance(8)
class TestErrorScaling:
    def test_decay_in_k(self, note):
        model = random_init((4, 4, 3), 4, 1, seed=3, alpha=0.1)
        curve = error_scaling_probe(model, range(6, 13), n_samples=96)
        note("ratios " + ", ".join(f"{r:.2f}" for r in curve.ratios))
        assert all(0.3 <= r <= 0.7 for r in curve.ratios), curve.to_text()

    def test_linear_in_depth(self, note):
        depths = (2, 4, 8, 16, 24)
        errs = [max_latent_error(random_init((4, 4, 3), L, 1, seed=3, alpha=0.1), 10, 64)
                for L in depths]
        note("depth errors " + ", ".join(f"{e:.1e}" for e in errs))
        for L, e in zip(depths, errs):
            assert e <= 2 * (L / depths[0]) * errs[0]


@pytest.mark.acceptance(9)
class TestPropositionDemos:
    def test_contractions_collide(self):
        for scale in (0.5, 0.6, 0.7, 0.8, 0.9):
            for k in (8, 10, 12):
                w = bijection_failure_demo(scale, k)
                assert w is not None
                assert w.x1 != w.x2
                assert quantize(scale * w.x1.value, k) == quantize(scale * w.x2.value, k)

    def test_expansion_gap(self, note):
        for scale in (2.0, 4.0):
            for d in (1, 3):
                rep = codelength_gap_demo(scale, d=d, n_samples=1000)
                assert rep.relative_error < 0.05, rep.to_text()
                if d == 1:
                    note(rep.to_text())


@pytest.mark.acceptance(10)
class TestMatchedPrior:
    def test_entropy(self, note):
        model = random_init((8, 8, 3), 4, 1, seed=5, alpha=0.1, prior_sigma=0.05,
                            prior_mu=(-0.2, 0.0, 0.2))
        rng = np.random.default_rng(5)
        entropy = entropy_bits_mc(model.prior, 20000, np.random.default_rng(1))
        bits = dims = clipped = 0
        for _ in range(150):
            x = continuous_inverse(model, model.prior.sample(1, rng)[0])
            x0 = np.floor((x + 0.5) * 256).astype(np.int64)
            clipped += int(np.sum((x0 < 0) | (x0 > 255)))
            rep = codelength_report(np.clip(x0, 0, 255).reshape(model.shape), model)
            bits += rep.net_bits
            dims += rep.d
        target = entropy + 8 + 16 / model.dim
        note(f"{bits / dims:.4f} bpd vs entropy + h + C/d = {target:.4f}")
        assert clipped == 0
        assert abs(bits / dims - target) < 0.05
