"""
Precision, error and codelength
===============================

Raising k shrinks the gap between the fixed-point flow and its real-valued
counterpart, while the net codelength stays put: the extra latent bits are
paid back by the dequantization bits.
"""

import numpy as np

from ivpf.codec import CodecConfig, codelength_report
from ivpf.model import random_init
from ivpf.oracle import error_scaling_probe

model = random_init((4, 4, 3), 4, 1, seed=3, alpha=0.1)
print(error_scaling_probe(model, range(6, 13), n_samples=32).to_text())

rng = np.random.default_rng(0)
x = rng.integers(0, 256, model.shape)
print("\n k  latent bits  bits-back  net bpd")
for k in (8, 10, 12, 14):
    rep = codelength_report(x, model, CodecConfig(model.shape, k=k))
    print(f"{k:>2}  {rep.bits_latent:>11}  {rep.bits_uniform_debited:>9}  {rep.bpd:.4f}")
