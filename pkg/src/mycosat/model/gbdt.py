"""Gradient-boosted regression trees (squared error) with validation early stopping."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .binning import fit_bins
from .ensemble import EnsembleBuilder, TreeEnsemble

GROWTH_MODES = {"leaf_wise": _kernels.BEST_FIRST, "level_wise": _kernels.BREADTH_FIRST}


@dataclass(frozen=True)
class GbdtConfig:
    n_estimators: int = 1000
    learning_rate: float = 0.05
    early_stopping_rounds: int = 15
    max_depth: int = 6
    min_samples_leaf: int = 20
    max_bins: int = 255
    growth: str = "leaf_wise"
    max_leaves: int = 31
    exact: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.early_stopping_rounds < 1:
            raise ValueError("early_stopping_rounds must be >= 1")
        if self.n_estimators < 0:
            raise ValueError("n_estimators must be >= 0")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.growth not in GROWTH_MODES:
            raise ValueError(f"growth must be one of {sorted(GROWTH_MODES)}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def check_xy(x, y, name="training") -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError(f"{name} data: need X [N x F] and y [N], got {x.shape} and {y.shape}")
    if x.shape[0] == 0 or x.shape[1] == 0:
        raise ValueError(f"{name} data is empty")
    if not np.isfinite(x).all():
        raise ValueError(f"{name} features contain NaN or infinite values")
    if not np.isfinite(y).all():
        raise ValueError(f"{name} targets contain NaN or infinite values")
    return np.ascontiguousarray(x), y


def rmse(y, f) -> float:
    return float(np.sqrt(np.mean((y - f) ** 2)))


def gbdt_fit(x_train, y_train, x_val, y_val, cfg: GbdtConfig = GbdtConfig(),
             train_history: list | None = None) -> TreeEnsemble:
    """Boost squared-error trees on residuals, keeping the best validation iteration.

    Training stops once validation RMSE has not strictly improved for
    ``early_stopping_rounds`` consecutive trees; the returned model holds the
    first ``argmin(val_history) + 1`` trees. When ``train_history`` is a
    list, training RMSE after each tree is appended to it.
    """
    x, y = check_xy(x_train, y_train)
    xv, yv = check_xy(x_val, y_val, "validation")
    if xv.shape[1] != x.shape[1]:
        raise ValueError("validation features have a different width")
    if x.shape[0] < 2 * cfg.min_samples_leaf:
        raise ValueError(f"need at least {2 * cfg.min_samples_leaf} training rows")

    binner = fit_bins(x, cfg.max_bins, cfg.exact)
    codes = binner.transform(x)
    n_bins = binner.n_bins
    builder = EnsembleBuilder(x.shape[1], binner.edge_table)
    mode = GROWTH_MODES[cfg.growth]
    max_leaves = cfg.max_leaves if cfg.growth == "leaf_wise" else -1

    base = float(np.mean(y))
    f_train = np.full(y.shape, base)
    f_val = np.full(yv.shape, base)
    history = []
    best, best_k = np.inf, 0
    for k in range(cfg.n_estimators):
        resid = y - f_train
        rows = np.arange(y.size, dtype=np.int64)
        grown = _kernels.grow_tree(codes, resid, rows, n_bins, cfg.max_depth, max_leaves,
                                   cfg.min_samples_leaf, mode)
        feature, threshold, left, right, value = builder.add(grown)[:5]
        _kernels.apply_leaves(rows, grown[7], grown[8], left, value, cfg.learning_rate, f_train)
        _kernels.add_tree(xv, feature, threshold, left, right, value, cfg.learning_rate, f_val)
        score = rmse(yv, f_val)
        history.append(score)
        if train_history is not None:
            train_history.append(rmse(y, f_train))
        if score < best:
            best, best_k = score, k + 1
        elif k + 1 - best_k >= cfg.early_stopping_rounds:
            break
    return builder.build("gbdt", base, cfg.learning_rate, n_keep=best_k, val_history=history,
                         config=cfg.to_dict())


def gbdt_predict(model: TreeEnsemble, x) -> np.ndarray:
    return model.predict(x)
