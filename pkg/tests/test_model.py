import hashlib
import math

import numpy as np
import pytest

from ivpf.codec import flow_forward
from ivpf.errors import ModelError
from ivpf.fixnum import quantize_array
from ivpf.layers import (Conv1x1Layer, CouplingLayer, DenseNet, FactorOutLayer,
                         PermutationLayer)
from ivpf.model import FlowModel, continuous_eval, continuous_inverse, load, random_init, save
from ivpf.prior import MixGaussPrior, UniformPrior


@pytest.fixture(scope="module")
def model():
    return random_init((4, 4, 3), 6, 2, seed=11, alpha=0.3, lambda_scale=0.1)


class TestPersistence:
    def test_round_trip(self, model):
        data = save(model)
        again = load(data)
        assert again.hash == model.hash
        assert save(again) == data
        assert len(again.layers) == len(model.layers)

    def test_same_seed_same_hash(self):
        a = random_init((3, 3, 3), 4, 2, seed=5)
        b = random_init((3, 3, 3), 4, 2, seed=5)
        c = random_init((3, 3, 3), 4, 2, seed=6)
        assert a.hash == b.hash != c.hash

    def test_any_flipped_byte_is_detected(self, model):
        data = bytearray(save(model))
        body_hash = hashlib.sha256(bytes(data[:-32])).digest()
        rng = np.random.default_rng(0)
        for pos in rng.choice(len(data) - 32, 25, replace=False):
            mutated = bytearray(data)
            mutated[pos] ^= 0x40
            assert hashlib.sha256(bytes(mutated[:-32])).digest() != body_hash
            with pytest.raises(ModelError):
                load(bytes(mutated))

    def test_rejects_non_unit_diagonal(self, model):
        # bypass the constructor so the file is well-formed apart from the violation
        bad = random_init((2, 2, 3), 1, seed=0)
        conv = next(layer for layer in bad.layers if isinstance(layer, Conv1x1Layer))
        conv.lower[1, 1] = 1.5
        bad._hash = None
        with pytest.raises(ModelError, match="unit triangular"):
            load(save(bad))

    def test_rejects_truncated_and_bad_magic(self, model):
        data = save(model)
        with pytest.raises(ModelError):
            load(data[:20])
        body = b"XXXX" + data[4:-32]
        with pytest.raises(ModelError, match="magic"):
            load(body + hashlib.sha256(body).digest())

    def test_rejects_version(self, model):
        data = save(model)
        body = data[:4] + bytes([9]) + data[5:-32]
        with pytest.raises(ModelError, match="version"):
            load(body + hashlib.sha256(body).digest())

    def test_dimension_mismatch(self):
        with pytest.raises(ModelError):
            FlowModel((2, 3), [PermutationLayer(np.arange(5))], UniformPrior(5))
        with pytest.raises(ModelError):
            FlowModel((2, 3), [], UniformPrior(5))


class TestRandomInit:
    def test_structure(self, model):
        kinds = [type(layer).__name__ for layer in model.layers]
        assert kinds.count("FactorOutLayer") == 1
        assert kinds[:3] == ["PermutationLayer", "CouplingLayer", "Conv1x1Layer"]
        assert model.latent_dim == 24

    def test_alpha_zero_trivial_lu_is_permutation(self):
        m = random_init((2, 2, 3), 3, seed=4, lu_scale=0.0)
        x = quantize_array(np.random.default_rng(0).uniform(-0.5, 0.5, 12), 14)
        z = flow_forward(x, m).z
        assert sorted(z.mantissas.tolist()) == sorted(x.mantissas.tolist())

    def test_tiny_shapes(self):
        for shape in [(1,), (2,), (1, 1, 3), (3, 1)]:
            m = random_init(shape, 2, 3, seed=0, alpha=0.5)
            assert m.latent_dim >= 1


class TestContinuous:
    def test_identity_model_permutes(self):
        m = random_init((5,), 1, seed=2, lu_scale=0.0)
        x = np.arange(5.0)
        np.testing.assert_array_equal(np.sort(continuous_eval(m, x)), x)

    def test_single_coupling_hand_formula(self):
        # x_a = x[0]; net is a single affine map: out = W x_a + b
        W = np.array([[0.8], [-0.4], [1.5], [-2.0]])
        b = np.array([0.1, 0.2, 0.3, 0.4])
        layer = CouplingLayer(3, 2, DenseNet([W], [b]), alpha=0.5)
        m = FlowModel((3,), [layer], UniformPrior(3))
        x = np.array([0.3, -0.2, 0.45])
        out = W[:, 0] * 0.3 + b
        ts = np.tanh(out[:2])
        s = 0.5 * (ts - ts.mean())
        t = 0.5 * out[2:]
        expected = [0.3, -0.2 * math.exp(s[0]) + t[0], 0.45 * math.exp(s[1]) + t[1]]
        np.testing.assert_allclose(continuous_eval(m, x), expected, rtol=0, atol=1e-15)

    def test_inverse(self, model):
        x = np.random.default_rng(3).uniform(-0.5, 0.5, model.dim)
        np.testing.assert_allclose(continuous_inverse(model, continuous_eval(model, x)), x,
                                   atol=1e-12)

    def test_agrees_with_fixed_point(self, model):
        x = quantize_array(np.random.default_rng(4).uniform(-0.5, 0.5, model.dim), 14)
        zq = flow_forward(x, model).latents().values()
        assert np.max(np.abs(zq - continuous_eval(model, x.values()))) < 50 * 2.0 ** -14

    def test_rejects_wrong_size(self, model):
        with pytest.raises(ValueError):
            continuous_eval(model, np.zeros(5))
