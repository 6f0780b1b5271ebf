"""Feature discretisation shared by the boosted and bagged tree builders.

Feature ``f`` is cut by increasing ``edges[f]``; a value goes to bin ``b``
when ``edges[f][b-1] < x <= edges[f][b]``. Splitting after bin ``b`` is the
same as the raw-value rule ``x <= edges[f][b]``, so trees grown on codes
predict identically on raw features.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Binner:
    edges: list[np.ndarray]

    @property
    def n_features(self) -> int:
        return len(self.edges)

    @property
    def n_bins(self) -> np.ndarray:
        return np.array([e.size + 1 for e in self.edges], dtype=np.int64)

    @property
    def edge_table(self) -> np.ndarray:
        """``[F, max_bins]`` float table of thresholds, padded with +inf."""
        width = int(self.n_bins.max())
        table = np.full((self.n_features, width), np.inf)
        for f, e in enumerate(self.edges):
            table[f, :e.size] = e
        return table

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} feature columns, got shape {x.shape}")
        dtype = np.uint8 if self.n_bins.max() <= 256 else np.uint16 if self.n_bins.max() <= 65536 else np.int32
        codes = np.empty(x.shape, dtype=dtype)
        for f, e in enumerate(self.edges):
            codes[:, f] = np.searchsorted(e, x[:, f], side="left")
        return codes


def fit_bins(x, max_bins: int = 255, exact: bool = False) -> Binner:
    """Quantile bins per feature.

    With ``exact=True``, or when a feature has at most ``max_bins`` distinct
    values, every distinct value gets its own bin and edges sit at midpoints,
    which makes split search exhaustive over the data.
    """
    x = np.asarray(x, dtype=np.float64)
    if max_bins < 2:
        raise ValueError("max_bins must be >= 2")
    edges = []
    for col in x.T:
        u = np.unique(col)
        if exact or u.size <= max_bins:
            e = (u[:-1] + u[1:]) / 2.0
        else:
            qs = np.quantile(col, np.arange(1, max_bins) / max_bins)
            e = np.unique(qs)
            # the top edge must leave a non-empty last bin
            e = e[e < u[-1]]
        edges.append(e.astype(np.float64))
    return Binner(edges)
