import json

import numpy as np
import pytest

from mycosat.cli import COMMANDS, MANIFEST_FILE, dispatch
from mycosat.tensorio import read_csv, read_tensor, write_csv
from mycosat.trend import ZONES


def run(*argv):
    return dispatch([str(a) for a in argv])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("dataset")
    assert run("synth", "--kind", "dataset", "--n", 300, "--seed", 5, "--out", d) == 0
    return d


@pytest.fixture(scope="module")
def stack(tmp_path_factory):
    d = tmp_path_factory.mktemp("stack")
    assert run("synth", "--kind", "stack", "--size", 24, "--missing", 0.1, "--seed", 2, "--out", d) == 0
    return d


def test_subcommand_set():
    assert set(COMMANDS) == {"synth", "ingest", "ssl-demo", "richness", "features", "train", "predict", "evaluate",
                             "ablate", "sensitivity", "correlate", "trend", "triage", "zonal", "trajectories"}


def test_version(capsys):
    assert run("--version") == 0
    info = json.loads(capsys.readouterr().out)
    assert set(info) == {"mycosat", "tensor_format", "model_format"}


def test_exit_codes(tmp_path, capsys):
    assert run("evaluate", "--bogus", 1) == 64
    assert run() == 64
    assert run("evaluate") == 64
    missing = tmp_path / "nowhere"
    assert run("evaluate", "--dataset", missing, "--out", tmp_path) == 2
    assert str(missing) in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("synth", "--config", bad, "--out", tmp_path) == 1
    assert run("synth", "--kind", "nonsense", "--out", tmp_path) == 1


def test_bundle_ingest_and_ssl_demo(tmp_path):
    bundles = tmp_path / "bundles"
    assert run("synth", "--kind", "bundle", "--n", 2, "--out", bundles) == 0
    out = tmp_path / "ingest"
    assert run("ingest", "--input", bundles, "--k2", 10, "--k1", 10, "--out", out) == 0
    header, rows = read_csv(out / "ingest.csv")
    assert header[0] == "sample_id" and len(rows) == 18
    sample = sorted(p for p in bundles.iterdir() if p.is_dir())[0]
    ssl_out = tmp_path / "ssl"
    assert run("ssl-demo", "--input", sample, "--steps", 3, "--out", ssl_out) == 0
    _, rows = read_csv(ssl_out / "ssl_loss.csv")
    assert len(rows) == 3 and all(np.isfinite(float(r[3])) for r in rows)


def test_richness_command(tmp_path):
    rows = [[f"s{k}", 50.0, 0.0, "b1", "", v] for k, v in enumerate([1, 2, 3, 4, 5, 6, 7, 8, 100])]
    rows.append(["c", 50.0, 0.0, "b1", "3;2;1;1", ""])
    write_csv(tmp_path / "in.csv", ["sample_id", "lat", "lon", "biome_id", "counts", "richness"], rows)
    assert run("richness", "--input", tmp_path / "in.csv", "--out", tmp_path) == 0
    header, out = read_csv(tmp_path / "richness.csv")
    kept = {r[0]: r[-1] for r in out}
    assert kept["s8"] == "0" and sum(v == "0" for v in kept.values()) == 1


def test_features_train_predict(dataset, tmp_path):
    assert run("features", "--dataset", dataset, "--sets", "satellite+climate", "--pca-k", 6,
               "--out", tmp_path) == 0
    header, rows = read_csv(tmp_path / "features.csv")
    assert header[:3] == ["sample_id", "richness", "pc1"] and len(rows) == 300
    assert run("train", "--features", tmp_path / "features.csv", "--n-estimators", 50,
               "--out", tmp_path / "m") == 0
    _, shares = read_csv(tmp_path / "m" / "importance_by_category.csv")
    assert abs(sum(float(s) for _, s in shares) - 1) < 1e-9
    assert run("predict", "--model-file", tmp_path / "m" / "model.msm", "--features", tmp_path / "features.csv",
               "--out", tmp_path / "p") == 0
    assert len(read_csv(tmp_path / "p" / "predictions.csv")[1]) == 300
    assert run("train", "--features", tmp_path / "features.csv", "--model", "rf", "--n-estimators", 5,
               "--out", tmp_path / "rf") == 0


def _evaluate(dataset, out, *extra):
    return run("evaluate", "--dataset", dataset, "--sets", "satellite", "--pca-k", 8, "--seed", 42,
               "--out", out, *extra)


def test_evaluate_deterministic_and_sensitivity(dataset, tmp_path):
    assert _evaluate(dataset, tmp_path / "a") == 0
    assert _evaluate(dataset, tmp_path / "b", "--threads", 4) == 0
    for name in ("metrics.csv", "predictions.csv", MANIFEST_FILE):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    _, rows = read_csv(tmp_path / "a" / "predictions.csv")
    assert len(rows) == 60
    assert run("sensitivity", "--predictions", tmp_path / "a" / "predictions.csv", "--out", tmp_path / "s") == 0
    _, curve = read_csv(tmp_path / "s" / "sensitivity.csv")
    rmse = [float(r[3]) for r in curve]
    assert rmse == sorted(rmse, reverse=True)


def test_manifest_reproduces_run(dataset, tmp_path):
    assert _evaluate(dataset, tmp_path / "a") == 0
    manifest = tmp_path / "a" / MANIFEST_FILE
    assert json.loads(manifest.read_text())["config"]["seed"] == 42
    assert run("evaluate", "--config", manifest, "--out", tmp_path / "b") == 0
    for name in ("metrics.csv", "predictions.csv", MANIFEST_FILE):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_flags_override_config(dataset, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dataset": str(dataset), "sets": "climate", "seed": 1}))
    assert run("evaluate", "--config", cfg, "--seed", 3, "--out", tmp_path) == 0
    resolved = json.loads((tmp_path / MANIFEST_FILE).read_text())["config"]
    assert resolved["seed"] == 3 and resolved["sets"] == "climate" and resolved["pca_k"] == 256
    cfg.write_text(json.dumps({"nonsense": 1}))
    assert run("evaluate", "--config", cfg, "--out", tmp_path) == 1


def test_ablate_table_shape(dataset, tmp_path):
    assert run("ablate", "--dataset", dataset, "--sets", "satellite,climate", "--runs", 2, "--pca-k", 4,
               "--out", tmp_path) == 0
    header, rows = read_csv(tmp_path / "table1.csv")
    assert header == ["data_sources", "model", "r2", "rmse", "mae", "me"]
    assert [r[0] for r in rows] == ["satellite", "climate"]


def test_correlate(dataset, tmp_path):
    assert run("correlate", "--dataset", dataset, "--pca-k", 3, "--out", tmp_path) == 0
    header, rows = read_csv(tmp_path / "correlation.csv")
    assert len(rows) == 3 * (19 + 5 + 3)
    assert all(abs(float(r[3])) <= 1 for r in rows)


def test_raster_pipeline(stack, tmp_path):
    assert run("trend", "--stack", stack, "--fill", "2024:2023", "--out", tmp_path / "t") == 0
    _, fill = read_csv(tmp_path / "t" / "gap_fill.csv")
    assert abs(float(fill[0][2]) - 0.1) < 0.02
    assert read_tensor(tmp_path / "t" / "slope.tsr").shape == (24, 24)
    assert run("triage", "--stack", stack, "--fill", "2024:2023", "--out", tmp_path / "z") == 0
    zones = read_tensor(tmp_path / "z" / "zones.tsr")
    assert set(np.unique(zones)) <= set(range(len(ZONES)))
    assert run("zonal", "--zones", tmp_path / "z" / "zones.tsr", "--mask", stack / "forest_mask.tsr",
               "--out", tmp_path / "a") == 0
    _, rows = read_csv(tmp_path / "a" / "zonal.csv")
    for cls in ("ASNW", "PAWS", "non_ancient"):
        shares = [float(r[4]) for r in rows if r[0] == cls]
        assert len(shares) == 6 and abs(sum(shares) - 1) < 1e-9
    assert run("trajectories", "--stack", tmp_path / "t", "--zones", tmp_path / "z" / "zones.tsr",
               "--per-zone", 20, "--out", tmp_path / "j") == 0
    _, traj = read_csv(tmp_path / "j" / "trajectories.csv")
    assert traj and all(int(r[2]) <= 20 for r in traj)


def test_bad_fill_spec(stack, tmp_path):
    assert run("trend", "--stack", stack, "--fill", "2024-2023", "--out", tmp_path) == 1
