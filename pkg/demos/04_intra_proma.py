"""
Projection inside a microbatch
==============================

For a linear layer the microbatch gradient factors through token-level input
activations A and output gradients G. Randomized bases of their dominant
subspaces define a sandwich component Q_g Q_g^T grad Q_a Q_a^T; a scaled copy
is subtracted. No state is shared between microbatches, so they can be
processed in any order.
"""
import numpy as np

from proma import intra as I
from proma.policy import LayerTape

rng = np.random.default_rng(0)
tokens, d_in, d_out = 24, 16, 12
tape = LayerTape("w", rng.standard_normal((tokens, d_in)), rng.standard_normal((tokens, d_out)))
adv = rng.standard_normal(tokens)
grad = I.layer_policy_grad(adv, tape)

for r in (1, 4, 8, 12):
    out = I.proma_intra(adv, tape, I.IntraConfig(r=r), rng=1)
    print(f"r={r:2d}  kept fraction of gradient norm: {np.linalg.norm(out) / np.linalg.norm(grad):.3f}")

# %% Shrinkage interpolates linearly between no projection and full subtraction
for s in (0.0, 0.5, 1.0):
    out = I.proma_intra(adv, tape, I.IntraConfig(r=4, shrinkage=s), rng=1)
    print(f"shrinkage {s}: |out| = {np.linalg.norm(out):.4f}")

# %% The double-sandwich ablation removes both factor subspaces separately
out = I.proma_intra(adv, tape, I.IntraConfig(r=4, variant="double_sandwich"), rng=1)
print("double sandwich |out| =", np.linalg.norm(out))
