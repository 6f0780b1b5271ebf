"""Fitted tree ensembles: prediction, importances and the model file format.

Model file layout::

    b"MSM1"  u32 format version  u64 header length  JSON header (UTF-8)
    then one tensor record per name listed in header["tensors"]

Tensor records use the plain tensor-file encoding from :mod:`mycosat.tensorio`.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..tensorio import FormatError, atomic_write_bytes, decode_tensor, encode_tensor
from . import _kernels

MODEL_MAGIC = b"MSM1"
MODEL_FORMAT_VERSION = 1

_TENSORS = ("feature", "threshold", "left", "right", "value", "gain", "n_samples",
            "offsets", "split_count", "impurity_reduction", "val_history")


_STORED_DTYPES = {"feature": np.int32, "left": np.int32, "right": np.int32, "n_samples": np.int32,
                  "offsets": np.int32, "split_count": np.int32}
_LOADED_DTYPES = {"feature": np.int32, "left": np.int32, "right": np.int32, "n_samples": np.int64,
                  "offsets": np.int64, "split_count": np.int64}


class CapabilityError(RuntimeError):
    pass


@dataclass
class TreeEnsemble:
    """Trees stored flat; tree ``t`` owns nodes ``offsets[t]:offsets[t+1]``.

    Prediction is ``base_prediction + sum_t tree_weight * tree_t(x)``. Child
    indices are local to their tree; ``left == -1`` marks a leaf and a row
    goes left iff ``x[feature] <= threshold``.
    """

    kind: str
    n_features: int
    base_prediction: float
    tree_weight: float
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    n_samples: np.ndarray
    offsets: np.ndarray
    split_count: np.ndarray
    impurity_reduction: np.ndarray
    val_history: np.ndarray = field(default_factory=lambda: np.zeros(0))
    config: dict = field(default_factory=dict)
    track_impurity: bool = True

    @property
    def n_trees_used(self) -> int:
        return int(self.offsets.size - 1)

    @property
    def n_internal_nodes(self) -> int:
        return int(np.count_nonzero(self.left >= 0))

    def tree_nodes(self, t: int) -> slice:
        return slice(int(self.offsets[t]), int(self.offsets[t + 1]))

    def predict(self, x) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ValueError(f"model expects {self.n_features} features, got shape {x.shape}")
        if not np.isfinite(x).all():
            raise ValueError("features contain NaN or infinite values")
        return _kernels.predict_ensemble(x, self.feature, self.threshold, self.left, self.right,
                                         self.value, self.offsets, float(self.base_prediction),
                                         float(self.tree_weight))

    def importance(self, mode: str = "split_count") -> np.ndarray:
        """Raw split counts, or impurity reductions normalised to sum to 1 (``mdi``)."""
        if mode == "split_count":
            return self.split_count.astype(np.float64)
        if mode == "mdi":
            if not self.track_impurity:
                raise CapabilityError("impurity reductions were not tracked for this model")
            total = self.impurity_reduction.sum()
            if total <= 0:
                return np.zeros(self.n_features)
            return self.impurity_reduction / total
        raise ValueError(f"unknown importance mode {mode!r}")

    def default_importance(self) -> np.ndarray:
        return self.importance("mdi" if self.kind == "rf" else "split_count")

    # ---------------------------------------------------------- file format

    def to_bytes(self) -> bytes:
        stored = [name for name in _TENSORS if np.asarray(getattr(self, name)).size > 0]
        header = {
            "format": "mycosat-model",
            "kind": self.kind,
            "n_features": int(self.n_features),
            "base_prediction": float(self.base_prediction),
            "tree_weight": float(self.tree_weight),
            "n_trees_used": self.n_trees_used,
            "track_impurity": bool(self.track_impurity),
            "config": self.config,
            "tensors": stored,
        }
        hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        parts = [MODEL_MAGIC, struct.pack("<IQ", MODEL_FORMAT_VERSION, len(hbytes)), hbytes]
        for name in stored:
            parts.append(encode_tensor(np.asarray(getattr(self, name), dtype=_STORED_DTYPES.get(name, np.float64))))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "TreeEnsemble":
        if len(buf) < 16 or buf[:4] != MODEL_MAGIC:
            raise FormatError("not a model file (bad magic or truncated header)")
        version, hlen = struct.unpack_from("<IQ", buf, 4)
        if version != MODEL_FORMAT_VERSION:
            raise FormatError(f"unsupported model format version {version}")
        try:
            header = json.loads(bytes(buf[16:16 + hlen]).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"corrupt model header: {exc}") from None
        pos = 16 + hlen
        arrays = {name: np.zeros(0, dtype=_LOADED_DTYPES.get(name, np.float64)) for name in _TENSORS}
        for name in header["tensors"]:
            arr, pos = decode_tensor(buf, pos)
            arrays[name] = arr.astype(_LOADED_DTYPES.get(name, np.float64))
        if pos != len(buf):
            raise FormatError("trailing bytes in model file")
        return cls(kind=header["kind"], n_features=header["n_features"],
                   base_prediction=header["base_prediction"], tree_weight=header["tree_weight"],
                   config=header["config"], track_impurity=header["track_impurity"], **arrays)

    def save(self, path) -> None:
        atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "TreeEnsemble":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


class EnsembleBuilder:
    """Accumulates grown trees into the flat layout."""

    def __init__(self, n_features: int, edge_table: np.ndarray):
        self.n_features = n_features
        self.edge_table = edge_table
        self.trees: list[tuple] = []

    def add(self, grown) -> tuple:
        feature, split_bin, left, right, value, gain, count = grown[:7]
        internal = left >= 0
        threshold = np.zeros(feature.size)
        threshold[internal] = self.edge_table[feature[internal], split_bin[internal]]
        tree = (feature.copy(), threshold, left.copy(), right.copy(), value.copy(), gain.copy(),
                count.copy())
        self.trees.append(tree)
        return tree

    def build(self, kind: str, base: float, weight: float, n_keep: int | None = None,
              val_history=None, config=None) -> TreeEnsemble:
        trees = self.trees if n_keep is None else self.trees[:n_keep]
        split_count = np.zeros(self.n_features, dtype=np.int64)
        impurity = np.zeros(self.n_features)
        for t in trees:
            internal = t[2] >= 0
            np.add.at(split_count, t[0][internal], 1)
            np.add.at(impurity, t[0][internal], t[5][internal])
        sizes = [t[0].size for t in trees]
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)

        def cat(k, dtype):
            return np.concatenate([t[k] for t in trees]).astype(dtype) if trees else np.zeros(0, dtype)

        return TreeEnsemble(
            kind=kind, n_features=self.n_features, base_prediction=float(base),
            tree_weight=float(weight),
            feature=cat(0, np.int32), threshold=cat(1, np.float64), left=cat(2, np.int32),
            right=cat(3, np.int32), value=cat(4, np.float64), gain=cat(5, np.float64),
            n_samples=cat(6, np.int64), offsets=offsets, split_count=split_count,
            impurity_reduction=impurity,
            val_history=np.zeros(0) if val_history is None else np.asarray(val_history, dtype=np.float64),
            config=dict(config or {}),
        )
