"""Feature assembly: embedding flattening, PCA reduction, terrain derivatives,
one-hot categoricals, and the named/tagged feature matrix."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .tensorio import ValidationError, read_csv

log = logging.getLogger(__name__)

FEATURE_SETS = ("satellite", "climate", "soil", "topography", "landcover", "geo")

WORLDCOVER_CLASSES = (
    "tree cover",
    "shrubland",
    "grassland",
    "cropland",
    "built-up",
    "bare/sparse vegetation",
    "snow and ice",
    "permanent water bodies",
    "herbaceous wetland",
    "mangroves",
    "moss and lichen",
)

EMBEDDING_SHAPE = (3, 3, 128)
DEFAULT_PCA_K = 256


class AlignmentError(ValueError):
    pass


# ------------------------------------------------------------- embeddings

def flatten_embeddings(patch_embeddings) -> np.ndarray:
    """``[3, 3, 128]`` patch -> ``[1152]`` vector ordered (row, col, channel)."""
    arr = np.asarray(patch_embeddings)
    if arr.shape != EMBEDDING_SHAPE:
        raise ValueError(f"expected embedding shape {EMBEDDING_SHAPE}, got {arr.shape}")
    return arr.reshape(-1).copy()


def flatten_embedding_stack(stack) -> np.ndarray:
    """``[N, 3, 3, 128]`` -> ``[N, 1152]``."""
    arr = np.asarray(stack)
    if arr.shape[1:] != EMBEDDING_SHAPE:
        raise ValueError(f"expected [N x 3 x 3 x 128] embeddings, got {arr.shape}")
    return arr.reshape(arr.shape[0], -1)


# -------------------------------------------------------------------- PCA

@dataclass
class PcaModel:
    mean: np.ndarray                # [F]
    components: np.ndarray          # [F, K], orthonormal columns
    explained_variance: np.ndarray  # [K], descending

    @property
    def k(self) -> int:
        return self.components.shape[1]

    def inverse_transform(self, scores: np.ndarray) -> np.ndarray:
        return scores @ self.components.T + self.mean


def fit_pca(x, k: int) -> PcaModel:
    """Top-``k`` principal axes of ``x`` (rows are samples).

    Each component is sign-fixed so that its largest-magnitude loading is
    positive. Variances use the ``N - 1`` denominator.
    """
    x = np.asarray(x, dtype=np.float64)
    n, f = x.shape
    if n < 2:
        raise ValueError("PCA needs at least 2 rows")
    if not 1 <= k <= min(n - 1, f):
        raise ValueError(f"k={k} outside [1, min(N-1, F)] = [1, {min(n - 1, f)}]")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    comps = vt[:k].T.copy()
    pivot = np.argmax(np.abs(comps), axis=0)
    signs = np.sign(comps[pivot, np.arange(k)])
    signs[signs == 0] = 1.0
    comps *= signs
    return PcaModel(mean=mean, components=comps, explained_variance=s[:k] ** 2 / (n - 1))


def transform_pca(model: PcaModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != model.mean.shape[0]:
        raise ValueError(f"expected {model.mean.shape[0]} columns, got {x.shape[1]}")
    return (x - model.mean) @ model.components


def clamp_k(k: int, n: int, f: int) -> int:
    limit = min(n - 1, f)
    if k > limit:
        log.warning("PCA dimension %d clamped to %d (N=%d, F=%d)", k, limit, n, f)
        return limit
    return k


def reduce_embeddings(train_x, all_x, k: int = DEFAULT_PCA_K) -> tuple[np.ndarray, PcaModel]:
    """Fit PCA on ``train_x`` (dimension clamped if needed) and project ``all_x``."""
    train_x = np.asarray(train_x, dtype=np.float64)
    model = fit_pca(train_x, clamp_k(k, *train_x.shape))
    return transform_pca(model, all_x), model


# ------------------------------------------------------------- topography

def horn_slope_aspect(dem, cellsize: float) -> tuple[np.ndarray, np.ndarray]:
    """Slope and aspect in degrees from a 3x3 Horn gradient.

    Row 0 is north, column 0 is west. Aspect is the downslope direction,
    clockwise from north in ``[0, 360)``; flat cells get ``-1``. Border
    cells, which lack a full neighbourhood, are NaN in both outputs.
    """
    z = np.asarray(dem, dtype=np.float64)
    if z.ndim != 2 or min(z.shape) < 3:
        raise ValueError("DEM must be 2-D with at least 3 rows and columns")
    a, b, c = z[:-2, :-2], z[:-2, 1:-1], z[:-2, 2:]
    d, f = z[1:-1, :-2], z[1:-1, 2:]
    g, h, i = z[2:, :-2], z[2:, 1:-1], z[2:, 2:]
    dz_east = ((c + 2 * f + i) - (a + 2 * d + g)) / (8.0 * cellsize)
    dz_north = ((a + 2 * b + c) - (g + 2 * h + i)) / (8.0 * cellsize)

    slope = np.full(z.shape, np.nan)
    aspect = np.full(z.shape, np.nan)
    inner = (slice(1, -1), slice(1, -1))
    slope[inner] = np.degrees(np.arctan(np.hypot(dz_east, dz_north)))
    asp = np.degrees(np.arctan2(-dz_east, -dz_north)) % 360.0
    asp[(dz_east == 0) & (dz_north == 0)] = -1.0
    aspect[inner] = asp
    return slope, aspect


# ------------------------------------------------------------ categoricals

def one_hot(labels, classes) -> np.ndarray:
    classes = list(classes)
    index = {c: k for k, c in enumerate(classes)}
    out = np.zeros((len(labels), len(classes)), dtype=np.float64)
    for row, lab in enumerate(labels):
        if lab not in index:
            raise ValidationError(f"unknown category {lab!r}", str(lab))
        out[row, index[lab]] = 1.0
    return out


# ---------------------------------------------------------------- tables

@dataclass
class Table:
    """Feature columns keyed by sample id; NaN marks a missing value."""

    ids: list[str]
    columns: list[str]
    values: np.ndarray  # [N, k]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(len(self.ids), len(self.columns))
        if len(set(self.ids)) != len(self.ids):
            raise AlignmentError("duplicate sample ids in table")

    def aligned(self, ids) -> np.ndarray:
        pos = {sid: k for k, sid in enumerate(self.ids)}
        missing = [sid for sid in ids if sid not in pos]
        if missing:
            raise AlignmentError(f"{len(missing)} ids absent from table, e.g. {missing[0]!r}")
        return self.values[[pos[sid] for sid in ids]]


_MISSING = {"", "na", "nan", "null", "none"}


def load_table(path, categorical: dict[str, list[str] | None] | None = None) -> Table:
    """Read a ``sample_id``-keyed CSV; one-hot encode the named categorical columns.

    ``categorical`` maps a column to its ordered class list, or to None to use
    the sorted distinct values. A missing categorical sets all its indicator
    columns to NaN so the row is dropped on assembly.
    """
    header, rows = read_csv(path)
    if "sample_id" not in header:
        raise ValidationError(f"{path}: no sample_id column", "sample_id")
    categorical = categorical or {}
    key = header.index("sample_id")
    ids = [r[key] for r in rows]
    cols: list[str] = []
    blocks = []
    for ci, name in enumerate(header):
        if ci == key:
            continue
        raw = [r[ci].strip() for r in rows]
        if name in categorical:
            present = [v for v in raw if v.lower() not in _MISSING]
            classes = categorical[name] or sorted(set(present))
            block = np.full((len(raw), len(classes)), np.nan)
            ok = [k for k, v in enumerate(raw) if v.lower() not in _MISSING]
            block[ok] = one_hot([raw[k] for k in ok], classes)
            cols += [f"{name}={c}" for c in classes]
            blocks.append(block)
        else:
            try:
                vals = [np.nan if v.lower() in _MISSING else float(v) for v in raw]
            except ValueError as exc:
                raise ValidationError(f"{path}: non-numeric value in column {name!r}: {exc}", name) from None
            cols.append(name)
            blocks.append(np.asarray(vals, dtype=np.float64)[:, None])
    values = np.hstack(blocks) if blocks else np.zeros((len(ids), 0))
    return Table(ids, cols, values)


@dataclass
class FeatureMatrix:
    ids: list[str]
    values: np.ndarray
    column_names: list[str]
    column_sets: list[str]
    dropped: dict[str, int] = field(default_factory=dict)

    def columns_in(self, set_name: str) -> np.ndarray:
        return np.array([k for k, s in enumerate(self.column_sets) if s == set_name], dtype=np.int64)


def parse_selection(text: str) -> tuple[str, ...]:
    """``"all"`` or ``"satellite+climate"`` -> ordered tuple of set names."""
    if text == "all":
        return FEATURE_SETS
    parts = [p.strip() for p in text.split("+") if p.strip()]
    bad = [p for p in parts if p not in FEATURE_SETS]
    if bad or not parts:
        raise ValidationError(f"unknown feature set(s) {bad or text!r}; choose from {FEATURE_SETS}")
    return tuple(s for s in FEATURE_SETS if s in parts)


def assemble(ids, tables: dict[str, Table], selection) -> FeatureMatrix:
    """Concatenate the selected sets in canonical order, aligned to ``ids``.

    Rows with any missing value in a selected set are dropped; ``dropped``
    counts, per set, the rows that set was first to disqualify.
    """
    ids = list(ids)
    selection = tuple(s for s in FEATURE_SETS if s in set(selection))
    if not selection:
        raise ValidationError("empty feature-set selection")
    blocks, names, tags = [], [], []
    for set_name in selection:
        if set_name not in tables:
            raise ValidationError(f"feature set {set_name!r} not available", set_name)
        t = tables[set_name]
        blocks.append(t.aligned(ids))
        names += t.columns
        tags += [set_name] * len(t.columns)
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise ValidationError(f"duplicate column names across sets: {dup}")

    keep = np.ones(len(ids), dtype=bool)
    dropped = {}
    for set_name, block in zip(selection, blocks):
        bad = ~np.isfinite(block).all(axis=1) & keep
        dropped[set_name] = int(bad.sum())
        keep &= ~bad
    values = np.hstack(blocks)[keep]
    return FeatureMatrix(
        ids=[sid for sid, k in zip(ids, keep) if k],
        values=values,
        column_names=names,
        column_sets=tags,
        dropped=dropped,
    )
