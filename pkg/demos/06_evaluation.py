"""
Repeated-split evaluation, ablations and error analysis
=======================================================

Each run draws its own 70/10/20 split, refits PCA on the training rows and
trains a model. The ablation table reports mean and standard deviation
over runs.
"""
import numpy as np

from mycosat.evaluation import (RunSpec, load_dataset, pca_env_correlation, prepare, run_ablation, run_once,
                                save_dataset, sensitivity_curve, synth_dataset)
from mycosat.features import reduce_embeddings
from mycosat.model import GbdtConfig
import tempfile

d = tempfile.mkdtemp()
save_dataset(synth_dataset(1500, seed=0), d)
ds = load_dataset(d)

fast = GbdtConfig(n_estimators=300)
specs = [RunSpec(("satellite",), n_runs=5, pca_k=32, gbdt=fast),
         RunSpec(("climate",), n_runs=5, gbdt=fast),
         RunSpec(("satellite", "climate", "soil", "topography", "landcover", "geo"), n_runs=5, pca_k=32, gbdt=fast)]
for rep in run_ablation(ds, specs):
    print(" | ".join(rep.table_row()), " shares:", {k: round(v, 2) for k, v in rep.shares.items()})

# dropping the worst-predicted samples
fm, y = prepare(ds, ("satellite",))
res = run_once(fm, y, specs[0], run=0, keep_predictions=True)
for p, m in sensitivity_curve(res.y_test, res.pred_test, [1.0, 0.99, 0.98, 0.95, 0.9]):
    print(f"keep {p:.2f}: R2 {m.r2:.3f} RMSE {m.rmse:.3f}")

# how embedding components line up with climate variables
sat = fm.columns_in("satellite")
pcs, _ = reduce_embeddings(fm.values[:, sat], fm.values[:, sat], 3)
r, _ = pca_env_correlation(pcs, ds.tables["climate"].values)
print("largest |r| per component:", np.abs(r).max(axis=1).round(3))
