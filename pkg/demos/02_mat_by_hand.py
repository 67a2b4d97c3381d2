"""
The modular affine transform by hand
====================================

Scaling by (2, 0.5) with C = 4, step by step, then an exhaustive check
that the map is a bijection on a small domain.
"""

from ivpf.fixnum import QuantVector
from ivpf.mat import compute_moduli, mat_forward, mat_inverse
from ivpf.oracle import brute_force_mat_check

s = [2.0, 0.5]
chain = compute_moduli(s, C=4)
print("moduli:", chain.moduli)          # (16, 8, 16): 16/8 = 2, 8/16 = 0.5

x = QuantVector([3, 5], 0)
z, r = mat_forward(x, s, [0.0, 0.0], r=0, C=4)
# 3 * 16 + 0 = 48 = 6 * 8 + 0   -> z1 = 6, r = 0
# 5 *  8 + 0 = 40 = 2 * 16 + 8  -> z2 = 2, r = 8
print("z =", z.mantissas.tolist(), "r =", r)

# The remainder carries what the rounded division dropped, so nothing is lost.
back, r0 = mat_inverse(z, s, [0.0, 0.0], r, C=4)
print("inverse:", back.mantissas.tolist(), "r =", r0)

# Every (x, r) pair on a 16 x 16 x 8 grid: no collisions, every pair recovered.
report = brute_force_mat_check(2, 2, 3, s, [0.3, -0.7])
print(report.to_text())
