"""
Patch bundles, d-pixels and two-view sampling
=============================================

A patch bundle holds the optical and radar time series of a 3x3 pixel
window. Each pixel becomes a pair of d-pixels (one per sensor), and the
self-supervised objective sees two random subsets of its valid timesteps.
"""
import tempfile
from pathlib import Path

import numpy as np

from mycosat.dpixel import bundle_dpixels, make_view_pair, sample_rng, synth_bundle, view_features
from mycosat.tensorio import load_bundle, read_tensor, save_bundle, write_tensor

# a synthetic bundle: cloudy optical series, sparser radar series
bundle = synth_bundle(seed=3)
print(bundle.sample_id, "optical", bundle.s2_bands.shape, "radar", bundle.s1_bands.shape)
print("optical valid share:", bundle.s2_mask.mean().round(3))

# bundles are directories of little-endian tensor files
root = Path(tempfile.mkdtemp())
save_bundle(bundle, root / bundle.sample_id)
again = load_bundle(root / bundle.sample_id)
print("round trip equal:", np.array_equal(again.s2_bands, bundle.s2_bands))

write_tensor(root / "one.tsr", np.zeros(1, dtype=np.uint8))
print("smallest tensor file:", (root / "one.tsr").stat().st_size, "bytes",
      read_tensor(root / "one.tsr").dtype)

# nine pixels, each an (optical, radar) d-pixel pair
pixels = bundle_dpixels(bundle)
s2, s1 = pixels[4]
print("centre pixel valid timesteps:", int(s2.valid.sum()), "optical,", int(s1.valid.sum()), "radar")

# views draw only valid timesteps; the generator is keyed on the sample id
pair = make_view_pair(s2, s1, k2=8, k1=8, rng=sample_rng(0, bundle.sample_id))
print("view A optical steps:", pair.view_a.s2_idx)
print("all drawn steps valid:", bool(s2.valid[pair.view_a.s2_idx].all() and s1.valid[pair.view_b.s1_idx].all()))
print("view feature vector:", view_features(s2, s1, pair.view_a).round(3))
