"""
The redundancy-reduction objective on a toy encoder
===================================================

Two views of each pixel pass through a linear encoder. The loss pushes the
batch cross-correlation of the two embeddings towards the identity, and a
mix-up term asks that mixed inputs give correspondingly mixed correlations.
"""
import numpy as np

from mycosat.dpixel import synth_bundle, bundle_dpixels
from mycosat.ssl import (SslConfig, ToyEncoder, ViewBatch, barlow_loss, numeric_gradient, total_loss,
                         train_toy_encoder)

print("loss at the identity:", barlow_loss(np.eye(4)))
print("loss at all-ones:", barlow_loss(np.ones((4, 4)), lambda_bt=5e-3))

rng = np.random.default_rng(0)
ya = rng.normal(size=(32, 12))
views = ViewBatch(ya, ya + 0.1 * rng.normal(size=ya.shape))
enc = ToyEncoder.init(12, 4, seed=1)
cfg = SslConfig()

# the analytic gradient agrees with central differences
terms = total_loss(views, enc, cfg, np.random.default_rng(2), with_grad=True)
fd = numeric_gradient(lambda p: total_loss(views, enc.with_params(p), cfg, perm=terms.perm,
                                           alpha=terms.alpha).total, enc.params)
print(f"total {terms.total:.4f} = BT {terms.l_bt:.4f} + mix {terms.l_mix:.4f}")
print("gradient relative error:", np.linalg.norm(terms.grad - fd) / np.linalg.norm(fd))

# a few steps on a real bundle's pixels
pixels = bundle_dpixels(synth_bundle(5)) + bundle_dpixels(synth_bundle(6))
for step, t, _ in train_toy_encoder(pixels, enc, cfg, steps=10, lr=0.05, k2=8, k1=8,
                                    rng=np.random.default_rng(3), gradient="analytic"):
    print(f"step {step:2d}  total {t.total:.4f}")
