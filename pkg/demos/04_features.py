"""
Feature matrices: embeddings, PCA and environmental covariates
==============================================================
"""
import numpy as np

from mycosat.evaluation import prepare, synth_dataset, save_dataset, load_dataset
from mycosat.features import fit_pca, flatten_embeddings, horn_slope_aspect, one_hot, reduce_embeddings
import tempfile

# a 3x3x128 embedding patch flattens to 1152 values
patch = np.arange(3 * 3 * 128, dtype=float).reshape(3, 3, 128)
print("flattened:", flatten_embeddings(patch).shape)

# slope and aspect of a plane rising to the east (row 0 is north)
dem = np.tile(np.arange(5.0), (5, 1)) * 10
slope, aspect = horn_slope_aspect(dem, cellsize=10.0)
print("slope (deg):", slope[2, 2].round(2), "aspect (deg):", aspect[2, 2].round(1))

print(one_hot(["tree", "grass", "tree"], ["tree", "grass", "water"]))

d = tempfile.mkdtemp()
save_dataset(synth_dataset(600, seed=0), d)
ds = load_dataset(d)
fm, y = prepare(ds, ("satellite", "climate", "landcover"))
print("assembled:", fm.values.shape, "sets:", sorted(set(fm.column_sets)))

sat = fm.columns_in("satellite")
reduced, pca = reduce_embeddings(fm.values[:400, sat], fm.values[:, sat], 32)
share = pca.explained_variance / pca.explained_variance.sum()
print("PCA to", reduced.shape[1], "components; first five variance shares:", share[:5].round(3))
print("exact refit reproduces components:",
      np.allclose(np.abs(fit_pca(fm.values[:400, sat], 32).components), np.abs(pca.components)))
