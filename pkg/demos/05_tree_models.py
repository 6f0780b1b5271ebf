"""
Boosted and bagged regression trees
===================================

Both ensembles share one histogram split engine. Boosting fits residuals
with shrinkage and stops on validation RMSE; the forest averages fully
grown trees on bootstrap resamples.
"""
import tempfile
from pathlib import Path

import numpy as np

from mycosat.model import GbdtConfig, RfConfig, TreeEnsemble, gbdt_fit, importance, rf_fit

rng = np.random.default_rng(0)
x = rng.uniform(size=(2000, 10))
y = (10 * np.sin(np.pi * x[:, 0] * x[:, 1]) + 20 * (x[:, 2] - 0.5) ** 2 + 10 * x[:, 3] + 5 * x[:, 4]
     + rng.normal(size=2000))
tr, va, te = slice(0, 1400), slice(1400, 1600), slice(1600, None)


def r2(t, p):
    return 1 - np.sum((t - p) ** 2) / np.sum((t - t.mean()) ** 2)


gb = gbdt_fit(x[tr], y[tr], x[va], y[va], GbdtConfig())
print("boosting kept", gb.n_trees_used, "of", gb.val_history.size, "trees; best val RMSE",
      gb.val_history.min().round(3))
print("boosting test R2:", r2(y[te], gb.predict(x[te])).round(3))
print("split-count shares:", (importance(gb) / importance(gb).sum()).round(3))

level = gbdt_fit(x[tr], y[tr], x[va], y[va], GbdtConfig(growth="level_wise"))
print("level-wise test R2:", r2(y[te], level.predict(x[te])).round(3))

rf = rf_fit(x[tr], y[tr], RfConfig(n_estimators=50))
print("forest test R2:", r2(y[te], rf.predict(x[te])).round(3))
print("impurity shares:", importance(rf, "mdi").round(3))

path = Path(tempfile.mkdtemp()) / "model.msm"
gb.save(path)
print("reloaded predictions identical:", np.array_equal(TreeEnsemble.load(path).predict(x[te]), gb.predict(x[te])))
