"""
What goes wrong without volume preservation
===========================================

A contraction merges grid points, so it cannot be inverted on the grid.
An expansion can be inverted, but every coded value pays extra bits.
"""

from ivpf.oracle import bijection_failure_demo, codelength_gap_demo

for scale in (0.5, 0.9, 0.99):
    print(f"scale {scale}:", bijection_failure_demo(scale, k=8))

print(bijection_failure_demo(1.0, k=8), "<- no collision when the volume is kept")

for scale in (1.0, 2.0, 4.0, 8.0):
    print(codelength_gap_demo(scale, d=1, n_samples=1000).to_text())
