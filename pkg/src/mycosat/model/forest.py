"""Bootstrap-bagged regression forest with impurity-based importances."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .binning import fit_bins
from .ensemble import EnsembleBuilder, TreeEnsemble
from .gbdt import check_xy


@dataclass(frozen=True)
class RfConfig:
    n_estimators: int = 100
    bootstrap: bool = True
    min_samples_leaf: int = 1
    max_depth: int = -1
    max_bins: int = 255
    exact: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def rf_fit(x, y, cfg: RfConfig = RfConfig()) -> TreeEnsemble:
    """Average of fully grown trees, each on a bootstrap resample when enabled.

    Every feature is a split candidate at every node. Tree ``t`` draws its
    resample from ``default_rng([seed, t])`` so the forest does not depend on
    build order.
    """
    x, y = check_xy(x, y)
    binner = fit_bins(x, cfg.max_bins, cfg.exact)
    codes = binner.transform(x)
    n_bins = binner.n_bins
    builder = EnsembleBuilder(x.shape[1], binner.edge_table)
    n = y.size
    for t in range(cfg.n_estimators):
        if cfg.bootstrap:
            rows = np.sort(np.random.default_rng([cfg.seed, t]).integers(0, n, size=n))
        else:
            rows = np.arange(n, dtype=np.int64)
        grown = _kernels.grow_tree(codes, y, rows.astype(np.int64), n_bins, cfg.max_depth, -1,
                                   cfg.min_samples_leaf, _kernels.DEPTH_FIRST)
        builder.add(grown)
    return builder.build("rf", 0.0, 1.0 / cfg.n_estimators, config=cfg.to_dict())


def rf_predict(model: TreeEnsemble, x) -> np.ndarray:
    return model.predict(x)
