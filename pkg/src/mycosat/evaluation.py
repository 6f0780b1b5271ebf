"""Experiment harness: metrics, seeded splits, multi-run ablations, importance
shares, error-sensitivity curves and PCA-environment correlations."""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .features import (DEFAULT_PCA_K, FEATURE_SETS, WORLDCOVER_CLASSES, AlignmentError, FeatureMatrix,
                       Table, assemble, flatten_embedding_stack, load_table, reduce_embeddings)
from .model import GbdtConfig, RfConfig, gbdt_fit, rf_fit
from .tensorio import ValidationError, fmt_float, read_csv, read_tensor, write_csv, write_tensor

log = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.70, 0.10, 0.20)
MODEL_KINDS = ("gbdt", "rf")


class DimensionError(ValueError):
    pass


# ---------------------------------------------------------------- metrics

@dataclass(frozen=True)
class MetricsReport:
    r2: float
    rmse: float
    mae: float
    me: float
    n: int

    def as_dict(self) -> dict:
        return {"r2": self.r2, "rmse": self.rmse, "mae": self.mae, "me": self.me, "n": self.n}


def compute_metrics(y_true, y_pred) -> MetricsReport:
    """R², RMSE, MAE and ME (mean of predicted minus observed).

    A constant ``y_true`` has no variance to explain; R² is then reported as
    0 and a warning is issued.
    """
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    if y_true.size != y_pred.size:
        raise DimensionError(f"length mismatch: {y_true.size} observed vs {y_pred.size} predicted")
    if y_true.size == 0:
        raise DimensionError("metrics need at least one sample")
    d = y_pred - y_true
    sse = float(np.sum(d * d))
    sst = float(np.sum((y_true - y_true.mean()) ** 2))
    if sst == 0.0:
        warnings.warn("observed values are constant; R² reported as 0", RuntimeWarning, stacklevel=2)
        r2 = 0.0
    else:
        r2 = 1.0 - sse / sst
    n = y_true.size
    return MetricsReport(r2=r2, rmse=math.sqrt(sse / n), mae=float(np.sum(np.abs(d)) / n),
                         me=float(np.sum(d) / n), n=n)


def split_indices(n: int, fractions=DEFAULT_FRACTIONS, seed: int = 0):
    """Disjoint train/val/test index arrays covering ``range(n)``.

    Validation and test sizes are ``floor(f * n)``; train takes the rest.
    """
    if n < 10:
        raise ValueError(f"need at least 10 samples to split, got {n}")
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or (fr < 0).any() or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    n_val = int(math.floor(fr[1] * n + 1e-9))
    n_test = int(math.floor(fr[2] * n + 1e-9))
    perm = np.random.default_rng(seed).permutation(n)
    n_train = n - n_val - n_test
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def mean_std(values) -> tuple[float, float]:
    """Mean and sample (n - 1) standard deviation; the std of one value is 0."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values")
    mean = float(v.mean())
    if v.size == 1:
        return mean, 0.0
    return mean, float(np.sqrt(np.sum((v - mean) ** 2) / (v.size - 1)))


def format_pm(mean: float, std: float, decimals: int) -> str:
    # + 0.0 turns a rounded -0.0 into 0.0
    return f"{round(mean, decimals) + 0.0:.{decimals}f} ± {round(std, decimals) + 0.0:.{decimals}f}"


# ------------------------------------------------------------- importance

def importance_by_category(scores, tags) -> dict[str, float]:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size != len(tags):
        raise DimensionError(f"{scores.size} scores for {len(tags)} column tags")
    untagged = [k for k, t in enumerate(tags) if not t]
    if untagged:
        raise ValidationError(f"column {untagged[0]} has no category tag")
    cats = [c for c in FEATURE_SETS if c in set(tags)] + sorted(set(tags) - set(FEATURE_SETS))
    sums = {c: 0.0 for c in cats}
    for s, t in zip(scores, tags):
        sums[t] += float(s)
    total = sum(sums.values())
    if total <= 0:
        return {c: 1.0 / len(cats) for c in cats}
    return {c: v / total for c, v in sums.items()}


# ------------------------------------------------------------ sensitivity

def sensitivity_curve(y_true, y_pred, steps) -> list[tuple[float, MetricsReport]]:
    """Metrics after dropping the ``ceil((1 - p) * n)`` largest absolute errors.

    Equal errors are dropped lowest index first; the kept points stay in
    their original order.
    """
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    if y_true.size != y_pred.size:
        raise DimensionError("length mismatch")
    n = y_true.size
    order = np.argsort(-np.abs(y_pred - y_true), kind="stable")
    out = []
    for p in steps:
        p = float(p)
        if not 0.0 < p <= 1.0:
            raise ValueError(f"retained fraction must be in (0, 1], got {p}")
        n_drop = min(n - 1, max(0, int(math.ceil((1.0 - p) * n - 1e-9))))
        keep = np.ones(n, dtype=bool)
        keep[order[:n_drop]] = False
        out.append((p, compute_metrics(y_true[keep], y_pred[keep])))
    return out


# ------------------------------------------------------------ correlation

def pca_env_correlation(components, env) -> tuple[np.ndarray, np.ndarray]:
    """Pearson r for every (component, variable) pair, as ``[K, V]``.

    Returns ``(r, constant)``; pairs involving a constant column get r = 0
    and ``constant = True``.
    """
    a = np.asarray(components, dtype=np.float64)
    b = np.asarray(env, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise AlignmentError(f"row mismatch: components {a.shape} vs environment {b.shape}")
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    na = np.sqrt(np.sum(a * a, axis=0))
    nb = np.sqrt(np.sum(b * b, axis=0))
    const = (na == 0)[:, None] | (nb == 0)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (a.T @ b) / np.outer(na, nb)
    r[const] = 0.0
    return np.clip(r, -1.0, 1.0), const


# ---------------------------------------------------------------- dataset

@dataclass
class Dataset:
    """Per-sample targets plus named feature tables.

    The ``satellite`` table holds raw flattened embeddings; it is reduced by
    PCA inside each run, fitted on that run's training rows only.
    """

    ids: list[str]
    y: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    tables: dict[str, Table]

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.shape != (len(self.ids),):
            raise AlignmentError("target length differs from the id list")


SAMPLES_FILE = "samples.csv"
EMBEDDINGS_FILE = "embeddings.tsr"
EMBEDDING_IDS_FILE = "embedding_ids.csv"
_CATEGORICAL = {"landcover": {"landcover": list(WORLDCOVER_CLASSES)}}


def load_dataset(directory) -> Dataset:
    """Read ``samples.csv``, optional embeddings (tensor plus id list) and ``<set>.csv`` tables."""
    directory = Path(directory)
    header, rows = read_csv(directory / SAMPLES_FILE)
    need = ["sample_id", "lat", "lon", "richness"]
    missing = [c for c in need if c not in header]
    if missing:
        raise ValidationError(f"{SAMPLES_FILE}: missing columns {missing}", missing[0])
    col = {c: header.index(c) for c in need}
    ids = [r[col["sample_id"]] for r in rows]
    num = {c: np.array([float(r[col[c]]) for r in rows]) for c in ("lat", "lon", "richness")}
    tables = {}
    emb = directory / EMBEDDINGS_FILE
    if emb.exists():
        stack = read_tensor(emb)
        _, id_rows = read_csv(directory / EMBEDDING_IDS_FILE)
        emb_ids = [r[0] for r in id_rows]
        if stack.shape[0] != len(emb_ids):
            raise AlignmentError(f"{EMBEDDINGS_FILE} has {stack.shape[0]} rows for {len(emb_ids)} listed ids")
        flat = flatten_embedding_stack(stack)
        tables["satellite"] = Table(emb_ids, [f"emb{k}" for k in range(flat.shape[1])], flat)
    for name in FEATURE_SETS:
        path = directory / f"{name}.csv"
        if name != "satellite" and path.exists():
            tables[name] = load_table(path, _CATEGORICAL.get(name))
    return Dataset(ids, num["richness"], num["lat"], num["lon"], tables)


def synth_dataset(n: int = 12000, seed: int = 0, latent: int = 6, noise: float = 1.0) -> dict:
    """Planted-signal dataset: richness depends on the embeddings alone.

    A few latent factors are mixed linearly into every embedding pixel (with
    per-pixel noise) and drive richness nonlinearly. Climate, soil,
    topography, land cover and coordinates are drawn independently of them.
    Returns the arrays and tables that :func:`save_dataset` writes.
    """
    rng = np.random.default_rng(seed)
    z = rng.uniform(-1.0, 1.0, size=(n, latent))
    mix = rng.normal(size=(latent, 128)) / np.sqrt(latent)
    emb = (z @ mix)[:, None, None, :] + 0.3 * rng.normal(size=(n, 3, 3, 128))
    signal = 6.0 * np.sin(np.pi * z[:, 0] * z[:, 1]) + 4.0 * z[:, 2] ** 2 + 3.0 * z[:, 3] + 2.0 * z[:, 4]
    y = 20.0 + signal + noise * rng.normal(size=n)
    ids = [f"S{k:06d}" for k in range(n)]
    lat = rng.uniform(-50.0, 70.0, size=n)
    lon = rng.uniform(-180.0, 180.0, size=n)
    tables = {
        "climate": ([f"bio{k}" for k in range(1, 20)], rng.normal(size=(n, 19))),
        "soil": (["ph", "soc", "clay", "sand", "nitrogen"], rng.normal(size=(n, 5))),
        "topography": (["elevation", "slope", "aspect"],
                       np.column_stack([rng.uniform(0, 3000, n), rng.uniform(0, 45, n), rng.uniform(0, 360, n)])),
        "geo": (["lat", "lon"], np.column_stack([lat, lon])),
    }
    landcover = [WORLDCOVER_CLASSES[k] for k in rng.integers(0, 5, size=n)]
    return {"ids": ids, "y": y, "lat": lat, "lon": lon, "embeddings": emb.astype(np.float32),
            "tables": tables, "landcover": landcover}


def save_dataset(data: dict, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ids = data["ids"]
    write_csv(directory / SAMPLES_FILE, ["sample_id", "lat", "lon", "richness"],
              [[sid, fmt_float(a), fmt_float(b), fmt_float(v)]
               for sid, a, b, v in zip(ids, data["lat"], data["lon"], data["y"])])
    write_tensor(directory / EMBEDDINGS_FILE, data["embeddings"])
    write_csv(directory / EMBEDDING_IDS_FILE, ["sample_id"], [[sid] for sid in ids])
    for name, (cols, values) in data["tables"].items():
        write_csv(directory / f"{name}.csv", ["sample_id", *cols],
                  [[sid, *map(fmt_float, row)] for sid, row in zip(ids, values)])
    write_csv(directory / "landcover.csv", ["sample_id", "landcover"],
              [[sid, lc] for sid, lc in zip(ids, data["landcover"])])


# ---------------------------------------------------------------- ablation

@dataclass(frozen=True)
class RunSpec:
    selection: tuple[str, ...]
    model: str = "gbdt"
    base_seed: int = 0
    n_runs: int = 50
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS
    pca_k: int = DEFAULT_PCA_K
    gbdt: GbdtConfig = GbdtConfig()
    rf: RfConfig = RfConfig()

    def __post_init__(self):
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if self.model not in MODEL_KINDS:
            raise ValueError(f"model must be one of {MODEL_KINDS}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        if not self.selection:
            raise ValueError("empty feature-set selection")

    @property
    def label(self) -> str:
        return "all" if tuple(self.selection) == FEATURE_SETS else "+".join(self.selection)


@dataclass
class RunResult:
    run: int
    seed: int
    metrics: MetricsReport
    n_train: int
    n_val: int
    n_test: int
    n_trees: int
    shares: dict[str, float]
    test_ids: list[str] = field(default_factory=list)
    y_test: np.ndarray | None = None
    pred_test: np.ndarray | None = None
    val_history: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class AggregateReport:
    spec: RunSpec
    runs: list[RunResult]
    mean: dict[str, float]
    std: dict[str, float]
    shares: dict[str, float]

    def table_row(self) -> list[str]:
        return [self.spec.label, self.spec.model,
                format_pm(self.mean["r2"], self.std["r2"], 3),
                *(format_pm(self.mean[m], self.std[m], 2) for m in ("rmse", "mae", "me"))]


TABLE_HEADER = ["data_sources", "model", "r2", "rmse", "mae", "me"]


def prepare(dataset: Dataset, selection) -> tuple[FeatureMatrix, np.ndarray]:
    fm = assemble(dataset.ids, dataset.tables, selection)
    pos = {sid: k for k, sid in enumerate(dataset.ids)}
    y = dataset.y[[pos[s] for s in fm.ids]]
    return fm, y


def run_once(fm: FeatureMatrix, y: np.ndarray, spec: RunSpec, run: int, keep_predictions=False) -> RunResult:
    """One seeded split, PCA on the training satellite rows, fit, test metrics."""
    seed = spec.base_seed + run
    tr, va, te = split_indices(len(fm.ids), spec.fractions, seed)
    x = fm.values
    tags = list(fm.column_sets)
    sat = fm.columns_in("satellite")
    if sat.size:
        reduced, _ = reduce_embeddings(x[tr][:, sat], x[:, sat], spec.pca_k)
        other = np.setdiff1d(np.arange(x.shape[1]), sat)
        x = np.hstack([reduced, x[:, other]])
        tags = ["satellite"] * reduced.shape[1] + [tags[k] for k in other]
    if spec.model == "gbdt":
        model = gbdt_fit(x[tr], y[tr], x[va], y[va], GbdtConfig(**{**spec.gbdt.to_dict(), "seed": seed}))
        scores = model.importance("split_count")
    else:
        model = rf_fit(x[tr], y[tr], RfConfig(**{**spec.rf.to_dict(), "seed": seed}))
        scores = model.importance("mdi")
    pred = model.predict(x[te])
    res = RunResult(run=run, seed=seed, metrics=compute_metrics(y[te], pred), n_train=tr.size,
                    n_val=va.size, n_test=te.size, n_trees=model.n_trees_used,
                    shares=importance_by_category(scores, tags), val_history=model.val_history)
    if keep_predictions:
        res.test_ids = [fm.ids[k] for k in te]
        res.y_test = y[te]
        res.pred_test = pred
    return res


def aggregate(spec: RunSpec, runs: list[RunResult]) -> AggregateReport:
    mean, std = {}, {}
    for m in ("r2", "rmse", "mae", "me"):
        mean[m], std[m] = mean_std([getattr(r.metrics, m) for r in runs])
    cats = list(runs[0].shares)
    shares = {c: float(np.mean([r.shares.get(c, 0.0) for r in runs])) for c in cats}
    return AggregateReport(spec, runs, mean, std, shares)


def run_ablation(dataset: Dataset, specs: list[RunSpec], threads: int = 1) -> list[AggregateReport]:
    """Run every spec ``n_runs`` times; results are independent of ``threads``.

    BLAS is held to one thread so each run's floating-point path is fixed;
    runs execute concurrently on a pool and are collected in index order.
    """
    reports = []
    prepared = {}
    with threadpool_limits(limits=1), ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for spec in specs:
            key = tuple(spec.selection)
            if key not in prepared:
                prepared[key] = prepare(dataset, key)
            fm, y = prepared[key]
            log.info("ablation %s/%s: %d rows, %d columns, %d runs", spec.label, spec.model,
                     len(fm.ids), fm.values.shape[1], spec.n_runs)
            runs = list(pool.map(lambda i: run_once(fm, y, spec, i), range(spec.n_runs)))
            reports.append(aggregate(spec, runs))
    return reports


def write_reports(reports: list[AggregateReport], directory) -> dict[str, str]:
    """Write the summary table, per-run metrics and importance shares as CSV."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"table": directory / "table1.csv", "runs": directory / "runs.csv",
             "importance": directory / "importance.csv"}
    write_csv(paths["table"], TABLE_HEADER, [r.table_row() for r in reports])
    write_csv(paths["runs"],
              ["data_sources", "model", "run", "seed", "n_train", "n_val", "n_test", "n_trees",
               "r2", "rmse", "mae", "me"],
              [[r.spec.label, r.spec.model, x.run, x.seed, x.n_train, x.n_val, x.n_test, x.n_trees,
                *(fmt_float(getattr(x.metrics, m)) for m in ("r2", "rmse", "mae", "me"))]
               for r in reports for x in r.runs])
    write_csv(paths["importance"], ["data_sources", "model", "category", "share"],
              [[r.spec.label, r.spec.model, c, fmt_float(s)] for r in reports for c, s in r.shares.items()])
    return {k: str(v) for k, v in paths.items()}
