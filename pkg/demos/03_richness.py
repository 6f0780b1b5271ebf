"""
Richness estimates and the biome outlier filter
===============================================
"""
import numpy as np

from mycosat.richness import AbundanceVector, RichnessSample, biome_filter, biome_thresholds, chao1, extrapolate

# four singletons and two doubletons among ten observed species
av = AbundanceVector(np.array([1, 1, 1, 1, 2, 2, 5, 5, 6, 6]))
print("observed", av.s_obs, "singletons", av.f1, "doubletons", av.f2, "reads", av.n)
print("chao1:", round(chao1(av), 4))

# expected richness as sequencing depth grows, approaching chao1
for m in (0, av.n, 5 * av.n, 100 * av.n):
    print(f"extra reads {m:5d}: {extrapolate(av, m):.3f}")

# a multinomial check of the doubled-depth estimate
even = AbundanceVector(np.full(20, 2))
draws = np.random.default_rng(0).multinomial(2 * even.n, np.full(20, 1 / 20), size=10_000)
print("simulated 99% range of species seen:", np.percentile((draws > 0).sum(axis=1), [0.5, 99.5]),
      "estimate:", extrapolate(even, even.n))

# values above median + 5 IQR in a biome are dropped
samples = [RichnessSample(f"s{k}", 0.0, 0.0, "temperate", float(v))
           for k, v in enumerate([1, 2, 3, 4, 5, 6, 7, 8, 100])]
print("cut-off:", biome_thresholds(samples))
kept, removed = biome_filter(samples)
print("removed:", [(s.sample_id, s.richness_hat) for s in removed])
