"""``mycosat`` command line: one subcommand per pipeline stage.

Every subcommand writes its outputs plus ``run_manifest.json`` into ``--out``.
The manifest holds the resolved configuration (seed included, thread count
and output path excluded), so passing it back through ``--config``
reproduces the run byte for byte.

Exit codes: 0 success, 1 invalid input, 2 file-system error, 64 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .tensorio import FORMAT_VERSION, ValidationError, atomic_write_text, dump_json, fmt_float

log = logging.getLogger("mycosat")

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_USAGE = 0, 1, 2, 64
MANIFEST_FILE = "run_manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# Each option: (flag, type, default, help). A default of None means required
# unless supplied by --config.
def _csv_list(text):
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _floats(text):
    return [float(t) for t in _csv_list(text)]


COMMANDS: dict[str, tuple[str, list[tuple]]] = {
    "synth": ("write synthetic inputs (bundle, dataset or raster stack)", [
        ("--kind", str, "dataset", "bundle | dataset | stack"),
        ("--n", int, 12000, "samples (dataset) or bundles (bundle)"),
        ("--size", int, 64, "raster height and width (stack)"),
        ("--missing", float, 0.0, "final-year missing share of forest pixels (stack)"),
    ]),
    "ingest": ("validate patch bundles and summarise their d-pixels", [
        ("--input", str, None, "directory searched for bundle directories"),
        ("--k2", int, 40, "optical timesteps per view"),
        ("--k1", int, 40, "radar timesteps per view"),
    ]),
    "ssl-demo": ("train the toy encoder on one bundle and log the loss per step", [
        ("--input", str, None, "bundle directory"),
        ("--steps", int, 20, "gradient steps"),
        ("--dz", int, 4, "embedding width"),
        ("--lr", float, 0.05, "step size"),
        ("--k2", int, 8, "optical timesteps per view"),
        ("--k1", int, 8, "radar timesteps per view"),
        ("--gradient", str, "analytic", "analytic | numeric"),
        ("--lambda-bt", float, 5e-3, "off-diagonal weight"),
        ("--lambda-mix", float, 1.0, "mix-up weight"),
    ]),
    "richness": ("estimate per-sample richness and apply the biome outlier filter", [
        ("--input", str, None, "CSV with sample_id, lat, lon, biome_id and counts or richness"),
        ("--method", str, "chao1", "chao1 | double_depth"),
        ("--k-iqr", float, 5.0, "filter width in IQRs above the biome median"),
    ]),
    "features": ("assemble a feature matrix with PCA-reduced embeddings", [
        ("--dataset", str, None, "dataset directory"),
        ("--sets", str, "all", "feature sets, '+'-joined, or 'all'"),
        ("--pca-k", int, 256, "embedding PCA dimension"),
    ]),
    "train": ("fit a model on a feature matrix (seeded train/val/test split)", [
        ("--features", str, None, "features.csv from the features command"),
        ("--model", str, "gbdt", "gbdt | rf"),
        ("--growth", str, "leaf_wise", "leaf_wise | level_wise (gbdt)"),
        ("--n-estimators", int, 0, "trees; 0 means 1000 for gbdt, 100 for rf"),
        ("--learning-rate", float, 0.05, "shrinkage (gbdt)"),
        ("--patience", int, 15, "early-stopping rounds (gbdt)"),
    ]),
    "predict": ("apply a saved model to a feature matrix", [
        ("--model-file", str, None, "model file from train"),
        ("--features", str, None, "features.csv with the training columns"),
    ]),
    "evaluate": ("one seeded run: metrics and per-sample test errors", [
        ("--dataset", str, None, "dataset directory"),
        ("--sets", str, "all", "feature sets, '+'-joined, or 'all'"),
        ("--model", str, "gbdt", "gbdt | rf"),
        ("--pca-k", int, 256, "embedding PCA dimension"),
        ("--run", int, 0, "run index (split seed = seed + run)"),
    ]),
    "ablate": ("repeated runs over feature-set selections and models", [
        ("--dataset", str, None, "dataset directory"),
        ("--sets", str, "satellite,climate,all", "comma list of selections"),
        ("--models", str, "gbdt", "comma list of gbdt, rf"),
        ("--runs", int, 50, "runs per selection"),
        ("--pca-k", int, 256, "embedding PCA dimension"),
    ]),
    "sensitivity": ("metrics after dropping the largest errors", [
        ("--predictions", str, None, "predictions.csv with observed and predicted columns"),
        ("--steps", str, "1,0.99,0.98,0.95,0.9", "retained fractions"),
    ]),
    "correlate": ("Pearson correlation of embedding PCs with environmental variables", [
        ("--dataset", str, None, "dataset directory"),
        ("--pca-k", int, 10, "components to correlate"),
        ("--vars", str, "climate,soil,topography", "variable sets"),
    ]),
    "trend": ("per-pixel OLS slopes, with optional gap filling", [
        ("--stack", str, None, "stack directory (stack.tsr, forest_mask.tsr)"),
        ("--fill", str, "", "TARGET:SOURCE years to gap-fill, e.g. 2024:2023"),
    ]),
    "triage": ("baseline percentiles, slopes and conservation zones", [
        ("--stack", str, None, "stack directory"),
        ("--baseline", str, "2017,2018,2019", "baseline years"),
        ("--fill", str, "", "TARGET:SOURCE years to gap-fill first"),
    ]),
    "zonal": ("zone areas per forest class", [
        ("--zones", str, None, "zone raster from triage"),
        ("--mask", str, None, "forest-class raster"),
        ("--pixel-area", float, 0.01, "hectares per pixel"),
    ]),
    "trajectories": ("per-zone yearly means with 95% intervals", [
        ("--stack", str, None, "stack directory"),
        ("--zones", str, None, "zone raster from triage"),
        ("--per-zone", int, 500, "pixels sampled per zone"),
    ]),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mycosat", description="Soil fungal richness from satellite embeddings.")
    parser.add_argument("--version", action="store_true", help="print version and file-format versions")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, (helptext, options) in COMMANDS.items():
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--seed", type=int, default=None, help="base random seed (default 0)")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
        p.add_argument("--config", type=str, default=None, help="JSON config or manifest")
        p.add_argument("--out", type=str, default=None, help="output directory (default .)")
        for flag, typ, _default, h in options:
            p.add_argument(flag, type=typ, default=None, help=h)
    return parser


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Flags over config file over defaults. Returns the reproducible config."""
    cfg = {"seed": 0}
    cfg.update({flag[2:].replace("-", "_"): default for flag, _, default, _ in COMMANDS[command][1]})
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        loaded = loaded.get("config", loaded)
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise ValidationError(f"unknown config keys for {command}: {unknown}")
        cfg.update(loaded)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    missing = [k for k, v in cfg.items() if v is None]
    if missing:
        raise UsageError(f"mycosat {command}: missing required option(s): "
                         + ", ".join("--" + m.replace("_", "-") for m in missing))
    return cfg


def write_manifest(out: Path, command: str, cfg: dict, outputs: dict | None = None) -> None:
    manifest = {
        "command": command,
        "version": f"v{__version__}",
        "formats": {"tensor": FORMAT_VERSION, "model": _model_format()},
        "config": cfg,
        "outputs": sorted(outputs or []),
    }
    atomic_write_text(out / MANIFEST_FILE, dump_json(manifest))


def _model_format() -> int:
    from .model.ensemble import MODEL_FORMAT_VERSION
    return MODEL_FORMAT_VERSION


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(2, "no such file or directory", str(p))
    return p


def _fill_spec(text: str):
    if not text:
        return None
    try:
        target, source = (int(t) for t in text.split(":"))
    except ValueError:
        raise ValidationError(f"--fill expects TARGET:SOURCE years, got {text!r}", "fill") from None
    return target, source


# ------------------------------------------------------------ subcommands

def cmd_synth(cfg, out: Path, threads: int) -> dict:
    from .tensorio import save_bundle
    kind = cfg["kind"]
    if kind == "bundle":
        from .dpixel import synth_bundle
        names = []
        for k in range(cfg["n"]):
            b = synth_bundle(cfg["seed"] + k)
            save_bundle(b, out / b.sample_id)
            names.append(b.sample_id)
        return {n: str(out / n) for n in names}
    if kind == "dataset":
        from .evaluation import save_dataset, synth_dataset
        save_dataset(synth_dataset(cfg["n"], cfg["seed"]), out)
        return {"dataset": str(out)}
    if kind == "stack":
        from .trend import GeoInfo, synth_stack, write_raster
        stack, mask = synth_stack(cfg["size"], cfg["size"], seed=cfg["seed"], missing_fraction=cfg["missing"])
        years = stack.years.tolist()
        write_raster(out / "stack.tsr", stack.rasters, GeoInfo(years=years))
        write_raster(out / "forest_mask.tsr", mask.classes, GeoInfo())
        return {"stack": str(out / "stack.tsr"), "mask": str(out / "forest_mask.tsr")}
    raise ValidationError(f"unknown synth kind {kind!r}", "kind")


def cmd_ingest(cfg, out: Path, threads: int) -> dict:
    from .dpixel import bundle_dpixels, make_view_pair, sample_rng
    from .tensorio import find_bundles, load_bundle, write_csv
    root = _require(cfg["input"])
    rows = []
    for path in find_bundles(root):
        b = load_bundle(path)
        rng = sample_rng(cfg["seed"], b.sample_id)
        for k, (s2, s1) in enumerate(bundle_dpixels(b)):
            status = "ok"
            try:
                make_view_pair(s2, s1, cfg["k2"], cfg["k1"], rng)
            except ValueError as exc:
                status = f"skipped: {exc}"
            rows.append([b.sample_id, k, int(s2.valid.sum()), int(s1.valid.sum()), status])
    if not rows:
        raise ValidationError(f"no patch bundles found under {root}", "input")
    write_csv(out / "ingest.csv", ["sample_id", "pixel", "s2_valid", "s1_valid", "status"], rows)
    return {"ingest": str(out / "ingest.csv")}


def cmd_ssl_demo(cfg, out: Path, threads: int) -> dict:
    from .dpixel import bundle_dpixels
    from .ssl import SslConfig, ToyEncoder, train_toy_encoder
    from .tensorio import load_bundle, write_csv
    bundle = load_bundle(_require(cfg["input"]))
    pixels = bundle_dpixels(bundle)
    enc = ToyEncoder.init(12, cfg["dz"], seed=cfg["seed"])
    rng = np.random.default_rng([cfg["seed"], 1])
    sslcfg = SslConfig(lambda_bt=cfg["lambda_bt"], lambda_mix=cfg["lambda_mix"])
    rows = []
    for step, terms, _ in train_toy_encoder(pixels, enc, sslcfg, cfg["steps"], cfg["lr"], cfg["k2"], cfg["k1"],
                                            rng, gradient=cfg["gradient"]):
        rows.append([step, fmt_float(terms.l_bt), fmt_float(terms.l_mix), fmt_float(terms.total)])
    write_csv(out / "ssl_loss.csv", ["step", "l_bt", "l_mix", "total"], rows)
    return {"loss": str(out / "ssl_loss.csv")}


def cmd_richness(cfg, out: Path, threads: int) -> dict:
    from .richness import RichnessSample, biome_filter, estimate_richness, parse_counts
    from .tensorio import read_csv, write_csv
    header, rows = read_csv(_require(cfg["input"]))
    need = ["sample_id", "lat", "lon", "biome_id"]
    missing = [c for c in need if c not in header]
    if missing or not ({"counts", "richness"} & set(header)):
        raise ValidationError(f"richness input needs {need} and counts or richness; missing {missing}")
    col = {c: header.index(c) for c in header}
    samples = []
    for r in rows:
        if "counts" in col and r[col["counts"]].strip():
            counts = parse_counts(r[col["counts"]])
            counts = counts[counts > 0]
            value = estimate_richness(counts, cfg["method"]) if counts.size else 0.0
        else:
            value = float(r[col["richness"]])
        samples.append(RichnessSample(r[col["sample_id"]], float(r[col["lat"]]), float(r[col["lon"]]),
                                      r[col["biome_id"]], value))
    _, removed = biome_filter(samples, cfg["k_iqr"])
    dropped = {id(s) for s in removed}
    write_csv(out / "richness.csv", ["sample_id", "lat", "lon", "biome_id", "richness_hat", "kept"],
              [[s.sample_id, fmt_float(s.lat), fmt_float(s.lon), s.biome_id, fmt_float(s.richness_hat),
                int(id(s) not in dropped)] for s in samples])
    return {"richness": str(out / "richness.csv")}


FEATURES_FILE = "features.csv"
COLUMNS_FILE = "feature_columns.csv"


def cmd_features(cfg, out: Path, threads: int) -> dict:
    """Feature matrix with embeddings reduced by a PCA fitted on every row.

    The evaluate and ablate commands refit PCA per training split instead.
    """
    from .evaluation import load_dataset, prepare
    from .features import parse_selection, reduce_embeddings
    from .tensorio import write_csv
    ds = load_dataset(_require(cfg["dataset"]))
    fm, y = prepare(ds, parse_selection(cfg["sets"]))
    x, names, tags = fm.values, list(fm.column_names), list(fm.column_sets)
    sat = fm.columns_in("satellite")
    if sat.size:
        reduced, _ = reduce_embeddings(x[:, sat], x[:, sat], cfg["pca_k"])
        other = np.setdiff1d(np.arange(x.shape[1]), sat)
        x = np.hstack([reduced, x[:, other]])
        names = [f"pc{k + 1}" for k in range(reduced.shape[1])] + [names[k] for k in other]
        tags = ["satellite"] * reduced.shape[1] + [tags[k] for k in other]
    write_csv(out / FEATURES_FILE, ["sample_id", "richness", *names],
              [[sid, fmt_float(t), *map(fmt_float, row)] for sid, t, row in zip(fm.ids, y, x)])
    write_csv(out / COLUMNS_FILE, ["column", "set"], [[n, t] for n, t in zip(names, tags)])
    write_csv(out / "dropped.csv", ["set", "rows_dropped"], [[k, v] for k, v in fm.dropped.items()])
    return {"features": str(out / FEATURES_FILE), "columns": str(out / COLUMNS_FILE)}


def _read_features(path):
    from .tensorio import read_csv
    path = _require(path)
    header, rows = read_csv(path)
    if not header or header[0] != "sample_id":
        raise ValidationError(f"{path}: first column must be sample_id", "sample_id")
    has_y = len(header) > 1 and header[1] == "richness"
    first = 2 if has_y else 1
    ids = [r[0] for r in rows]
    try:
        x = np.array([[float(v) for v in r[first:]] for r in rows], dtype=np.float64).reshape(len(rows), -1)
        y = np.array([float(r[1]) for r in rows]) if has_y else None
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    tags = None
    cols_path = Path(path).with_name(COLUMNS_FILE)
    if cols_path.exists():
        _, crow = read_csv(cols_path)
        tags = [r[1] for r in crow]
    return ids, x, y, header[first:], tags


def cmd_train(cfg, out: Path, threads: int) -> dict:
    from .evaluation import compute_metrics, importance_by_category, split_indices
    from .model import GbdtConfig, RfConfig, gbdt_fit, rf_fit
    from .tensorio import write_csv
    ids, x, y, names, tags = _read_features(cfg["features"])
    if y is None:
        raise ValidationError("training features need a richness column", "richness")
    tr, va, te = split_indices(len(ids), seed=cfg["seed"])
    if cfg["model"] == "gbdt":
        mcfg = GbdtConfig(n_estimators=cfg["n_estimators"] or 1000, learning_rate=cfg["learning_rate"],
                          early_stopping_rounds=cfg["patience"], growth=cfg["growth"], seed=cfg["seed"])
        model = gbdt_fit(x[tr], y[tr], x[va], y[va], mcfg)
    elif cfg["model"] == "rf":
        model = rf_fit(x[tr], y[tr], RfConfig(n_estimators=cfg["n_estimators"] or 100, seed=cfg["seed"]))
    else:
        raise ValidationError(f"unknown model {cfg['model']!r}", "model")
    model.save(out / "model.msm")
    m = compute_metrics(y[te], model.predict(x[te]))
    write_csv(out / "metrics.csv", ["fold", "n", "r2", "rmse", "mae", "me"],
              [["test", m.n, *(fmt_float(v) for v in (m.r2, m.rmse, m.mae, m.me))]])
    scores = model.default_importance()
    write_csv(out / "importance.csv", ["column", "score"], [[n, fmt_float(s)] for n, s in zip(names, scores)])
    outputs = {"model": str(out / "model.msm"), "metrics": str(out / "metrics.csv")}
    if tags is not None and len(tags) == len(names):
        shares = importance_by_category(scores, tags)
        write_csv(out / "importance_by_category.csv", ["category", "share"],
                  [[c, fmt_float(s)] for c, s in shares.items()])
        outputs["importance_by_category"] = str(out / "importance_by_category.csv")
    return outputs


def cmd_predict(cfg, out: Path, threads: int) -> dict:
    from .model import TreeEnsemble
    from .tensorio import write_csv
    model = TreeEnsemble.load(_require(cfg["model_file"]))
    ids, x, _, _, _ = _read_features(cfg["features"])
    pred = model.predict(x)
    write_csv(out / "predictions.csv", ["sample_id", "predicted"], [[s, fmt_float(p)] for s, p in zip(ids, pred)])
    return {"predictions": str(out / "predictions.csv")}


def cmd_evaluate(cfg, out: Path, threads: int) -> dict:
    from threadpoolctl import threadpool_limits

    from .evaluation import RunSpec, load_dataset, prepare, run_once
    from .features import parse_selection
    from .tensorio import write_csv
    ds = load_dataset(_require(cfg["dataset"]))
    sel = parse_selection(cfg["sets"])
    spec = RunSpec(sel, cfg["model"], base_seed=cfg["seed"], n_runs=1, pca_k=cfg["pca_k"])
    fm, y = prepare(ds, sel)
    with threadpool_limits(limits=1):
        res = run_once(fm, y, spec, cfg["run"], keep_predictions=True)
    m = res.metrics
    write_csv(out / "metrics.csv", ["data_sources", "model", "run", "seed", "n", "r2", "rmse", "mae", "me"],
              [[spec.label, spec.model, res.run, res.seed, m.n,
                *(fmt_float(v) for v in (m.r2, m.rmse, m.mae, m.me))]])
    pos = {sid: k for k, sid in enumerate(ds.ids)}
    write_csv(out / "predictions.csv", ["sample_id", "lat", "lon", "observed", "predicted", "error"],
              [[sid, fmt_float(ds.lat[pos[sid]]), fmt_float(ds.lon[pos[sid]]), fmt_float(o), fmt_float(p),
                fmt_float(p - o)] for sid, o, p in zip(res.test_ids, res.y_test, res.pred_test)])
    return {"metrics": str(out / "metrics.csv"), "predictions": str(out / "predictions.csv")}


def cmd_ablate(cfg, out: Path, threads: int) -> dict:
    from .evaluation import RunSpec, load_dataset, run_ablation, write_reports
    from .features import parse_selection
    ds = load_dataset(_require(cfg["dataset"]))
    specs = [RunSpec(parse_selection(sel), model, base_seed=cfg["seed"], n_runs=cfg["runs"], pca_k=cfg["pca_k"])
             for sel in _csv_list(cfg["sets"]) for model in _csv_list(cfg["models"])]
    if not specs:
        raise ValidationError("no selections or models given", "sets")
    return write_reports(run_ablation(ds, specs, threads), out)


def cmd_sensitivity(cfg, out: Path, threads: int) -> dict:
    from .evaluation import sensitivity_curve
    from .tensorio import read_csv, write_csv
    header, rows = read_csv(_require(cfg["predictions"]))
    if "observed" not in header or "predicted" not in header:
        raise ValidationError("predictions need observed and predicted columns", "observed")
    o = np.array([float(r[header.index("observed")]) for r in rows])
    p = np.array([float(r[header.index("predicted")]) for r in rows])
    curve = sensitivity_curve(o, p, _floats(cfg["steps"]))
    write_csv(out / "sensitivity.csv", ["retained", "n", "r2", "rmse", "mae", "me"],
              [[fmt_float(f), m.n, *(fmt_float(v) for v in (m.r2, m.rmse, m.mae, m.me))] for f, m in curve])
    return {"sensitivity": str(out / "sensitivity.csv")}


def cmd_correlate(cfg, out: Path, threads: int) -> dict:
    from threadpoolctl import threadpool_limits

    from .evaluation import load_dataset, pca_env_correlation
    from .features import assemble, reduce_embeddings
    from .tensorio import write_csv
    ds = load_dataset(_require(cfg["dataset"]))
    sets = ["satellite", *_csv_list(cfg["vars"])]
    fm = assemble(ds.ids, ds.tables, sets)
    sat = fm.columns_in("satellite")
    env = np.setdiff1d(np.arange(fm.values.shape[1]), sat)
    with threadpool_limits(limits=1):
        pcs, _ = reduce_embeddings(fm.values[:, sat], fm.values[:, sat], cfg["pca_k"])
    r, const = pca_env_correlation(pcs, fm.values[:, env])
    names = [fm.column_names[k] for k in env]
    write_csv(out / "correlation.csv", ["component", "variable", "set", "r", "constant"],
              [[f"pc{i + 1}", names[j], fm.column_sets[env[j]], fmt_float(r[i, j]), int(const[i, j])]
               for i in range(r.shape[0]) for j in range(r.shape[1])])
    return {"correlation": str(out / "correlation.csv")}


def _load_stack(directory):
    from .trend import ForestMask, YearStack, read_raster
    directory = _require(directory)
    data, geo = read_raster(_require(Path(directory) / "stack.tsr"))
    if not geo.years:
        raise ValidationError("stack sidecar lists no years", "years")
    classes, _ = read_raster(_require(Path(directory) / "forest_mask.tsr"))
    return YearStack(geo.years, data), ForestMask(classes), geo


def cmd_trend(cfg, out: Path, threads: int) -> dict:
    from .tensorio import write_csv
    from .trend import GeoInfo, gap_fill, pixel_slopes, write_raster
    stack, mask, geo = _load_stack(cfg["stack"])
    outputs = {}
    fill = _fill_spec(cfg["fill"])
    if fill:
        stack, fraction, unfilled = gap_fill(stack, *fill, mask)
        write_raster(out / "stack.tsr", stack.rasters, geo)
        write_raster(out / "forest_mask.tsr", mask.classes, GeoInfo(geo.origin, geo.cellsize, geo.crs))
        write_csv(out / "gap_fill.csv", ["target_year", "source_year", "filled_fraction", "still_missing"],
                  [[fill[0], fill[1], fmt_float(fraction), unfilled]])
        outputs["gap_fill"] = str(out / "gap_fill.csv")
    slope = pixel_slopes(stack)
    slope[~mask.forested] = np.nan
    write_raster(out / "slope.tsr", slope, GeoInfo(geo.origin, geo.cellsize, geo.crs))
    outputs["slope"] = str(out / "slope.tsr")
    return outputs


def cmd_triage(cfg, out: Path, threads: int) -> dict:
    from .tensorio import write_csv
    from .trend import ZONES, GeoInfo, gap_fill, triage, write_raster
    stack, mask, geo = _load_stack(cfg["stack"])
    fill = _fill_spec(cfg["fill"])
    if fill:
        stack, _, _ = gap_fill(stack, *fill, mask)
    tri = triage(stack, mask, [int(v) for v in _floats(cfg["baseline"])])
    grid = GeoInfo(geo.origin, geo.cellsize, geo.crs)
    write_raster(out / "zones.tsr", tri.zone, grid)
    write_raster(out / "baseline_pct.tsr", tri.baseline_pct, grid)
    write_raster(out / "slope.tsr", tri.slope, grid)
    th = tri.diagnostics["thresholds"]
    write_csv(out / "triage_summary.csv", ["key", "value"],
              [["p25", fmt_float(th["p25"])], ["p50", fmt_float(th["p50"])], ["p75", fmt_float(th["p75"])],
               ["missing", tri.diagnostics["missing"]], ["rule_gap_count", tri.diagnostics["rule_gap_count"]]]
              + [[f"pixels_{z}", int((tri.zone == k).sum())] for k, z in enumerate(ZONES)])
    return {"zones": str(out / "zones.tsr"), "summary": str(out / "triage_summary.csv")}


def cmd_zonal(cfg, out: Path, threads: int) -> dict:
    from .tensorio import write_csv
    from .trend import ForestMask, read_raster, zonal_stats
    zones, _ = read_raster(_require(cfg["zones"]))
    classes, _ = read_raster(_require(cfg["mask"]))
    rows = zonal_stats(zones, ForestMask(classes), cfg["pixel_area"])
    write_csv(out / "zonal.csv", ["forest_class", "zone", "pixels", "hectares", "share"],
              [[r["forest_class"], r["zone"], r["pixels"], fmt_float(r["hectares"]), fmt_float(r["share"])]
               for r in rows])
    return {"zonal": str(out / "zonal.csv")}


def cmd_trajectories(cfg, out: Path, threads: int) -> dict:
    from .tensorio import write_csv
    from .trend import read_raster, sample_trajectories
    stack, _, _ = _load_stack(cfg["stack"])
    zones, _ = read_raster(_require(cfg["zones"]))
    rows, notes = sample_trajectories(stack, zones, cfg["per_zone"], cfg["seed"])
    for note in notes:
        log.info(note)
    write_csv(out / "trajectories.csv", ["zone", "year", "n", "mean", "ci95_low", "ci95_high"],
              [[r["zone"], r["year"], r["n"], fmt_float(r["mean"]), fmt_float(r["ci95_low"]),
                fmt_float(r["ci95_high"])] for r in rows])
    return {"trajectories": str(out / "trajectories.csv")}


HANDLERS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "ssl-demo": cmd_ssl_demo, "richness": cmd_richness,
    "features": cmd_features, "train": cmd_train, "predict": cmd_predict, "evaluate": cmd_evaluate,
    "ablate": cmd_ablate, "sensitivity": cmd_sensitivity, "correlate": cmd_correlate, "trend": cmd_trend,
    "triage": cmd_triage, "zonal": cmd_zonal, "trajectories": cmd_trajectories,
}


def dispatch(argv) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.version:
            print(json.dumps({"mycosat": __version__, "tensor_format": FORMAT_VERSION,
                              "model_format": _model_format()}, sort_keys=True))
            return EXIT_OK
        if not args.command:
            raise UsageError(build_parser().format_usage() + "mycosat: error: a subcommand is required")
        cfg = resolve(args.command, args)
        threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
        if threads < 1:
            raise UsageError("--threads must be >= 1")
        out = Path(args.out or ".")
        out.mkdir(parents=True, exist_ok=True)
        outputs = HANDLERS[args.command](cfg, out, threads)
        write_manifest(out, args.command, cfg, outputs)
        return EXIT_OK
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        name = exc.filename or ""
        print(f"mycosat: I/O error: {exc.strerror or exc} {name}".rstrip(), file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"mycosat: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main(argv=None) -> None:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(dispatch(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
