"""Lorentz norms from decreasing rearrangements.

Indicator functions have closed-form L(2,q) norms, L(2,2) coincides with L2,
and the embedding L(2,q) into L(2,2) holds with an explicit constant. The
two-step brute-force search shows how close the constant is to sharp.
"""

import numpy as np

from mildns.lorentz import (
    brute_force_two_step_ratio,
    corpus_field,
    embedding_bound,
    embedding_ratio_check,
    lorentz_norm,
    product_l1_check,
)
from mildns.spectral import l2_norm

n = 64
f = np.zeros((n, n))
f[: n // 2] = 1.0  # indicator of half the torus
for q in (1.1, 1.5, 1.9):
    exact = (2 / q) ** (1 / q) * np.sqrt(0.5)
    print(f"indicator, q={q}: L(2,q) = {lorentz_norm(f, 2, q):.12f}  closed form {exact:.12f}")

g = corpus_field(0, 1, n)
print(f"\nsmooth field: L(2,2) = {lorentz_norm(g, 2, 2):.15f}, L2 = {l2_norm(g):.15f}")

print("\n   q   bound   two-step max   field ratio")
for q in (1.1, 1.5, 1.9):
    check = embedding_ratio_check(g, q)
    print(f"{q:4.1f} {embedding_bound(q):7.4f} {brute_force_two_step_ratio(q, 50):13.4f} {check.ratio:12.4f}")

p = product_l1_check(corpus_field(0, 0, n), corpus_field(0, 3, n))
print(f"\nproduct estimate: ||wz||_1 / (||w||_(2,q) ||z||_(2,q')) = {p.ratio:.4f} (<= 1)")
