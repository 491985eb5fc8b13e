"""Finite-difference checks of the hand-written layer gradients, and the
frequency-balancing class weights.

Every layer's backward pass is compared against central differences; the
loss weights downweight abundant classes so rare structures keep a
gradient share roughly equal to the background's.
"""

import numpy as np

from cascadeseg import OPS, ClassStats, class_weights, gradcheck_op

print("op              max relative error")
for op in OPS:
    res = gradcheck_op(op, seed=0)
    print(f"{op:15s} {res.max_error:.3e}")

counts = np.array([98_000, 1_500, 500])
lam = class_weights(ClassStats(counts=counts, total=int(counts.sum())))
print("\nvoxel counts :", counts.tolist())
print("class weights:", np.round(lam, 4).tolist(), f"(sum {lam.sum():.12f})")
print("gradient mass per class:", np.round(lam * counts / counts.sum(), 4).tolist())
