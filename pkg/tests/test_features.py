import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mycosat.features import (FEATURE_SETS, WORLDCOVER_CLASSES, AlignmentError, Table, assemble, clamp_k,
                              fit_pca, flatten_embeddings, horn_slope_aspect, load_table, one_hot,
                              parse_selection, reduce_embeddings, transform_pca)
from mycosat.tensorio import ValidationError, write_csv


def test_flatten_zero_and_index():
    assert not flatten_embeddings(np.zeros((3, 3, 128))).any()
    t = np.zeros((3, 3, 128))
    t[1, 2, 5] = 1
    v = flatten_embeddings(t)
    assert v.shape == (1152,) and np.flatnonzero(v).tolist() == [645]


def test_flatten_bijection_and_shape_check():
    t = np.random.default_rng(0).normal(size=(3, 3, 128))
    assert np.array_equal(flatten_embeddings(t).reshape(3, 3, 128), t)
    with pytest.raises(ValueError):
        flatten_embeddings(np.zeros((3, 3, 127)))


def test_pca_line():
    x = np.repeat(np.linspace(-1, 1, 11)[:, None], 2, axis=1)
    m = fit_pca(x, 2)
    assert np.allclose(m.components[:, 0], [2 ** -0.5, 2 ** -0.5])
    assert m.explained_variance[1] < 1e-20


def test_pca_anisotropic_ratio():
    x = np.random.default_rng(0).normal(size=(20_000, 2)) * [3.0, 1.0]
    m = fit_pca(x, 2)
    assert m.explained_variance[0] / m.explained_variance[1] == pytest.approx(9.0, rel=0.05)
    assert abs(m.components[0, 0]) > 0.999


@given(st.integers(0, 10_000), st.integers(2, 6))
def test_pca_orthonormal_full_rank_reconstruction(seed, f):
    x = np.random.default_rng(seed).normal(size=(f + 5, f))
    m = fit_pca(x, f)
    assert np.allclose(m.components.T @ m.components, np.eye(f), atol=1e-8)
    assert (np.diff(m.explained_variance) <= 1e-12).all()
    assert np.abs(m.inverse_transform(transform_pca(m, x)) - x).max() < 1e-8
    assert m.explained_variance.sum() == pytest.approx(np.trace(np.cov(x.T)), rel=1e-8)
    pivot = np.argmax(np.abs(m.components), axis=0)
    assert (m.components[pivot, np.arange(f)] > 0).all()


def test_pca_k_too_large_and_clamp(caplog):
    x = np.zeros((5, 10))
    with pytest.raises(ValueError):
        fit_pca(x, 5)
    assert clamp_k(256, 5, 10) == 4
    scores, model = reduce_embeddings(np.random.default_rng(0).normal(size=(5, 10)),
                                      np.zeros((2, 10)), 256)
    assert scores.shape == (2, 4) and model.k == 4


def test_horn_flat():
    s, a = horn_slope_aspect(np.full((5, 5), 12.0), 10.0)
    assert (s[1:-1, 1:-1] == 0).all() and (a[1:-1, 1:-1] == -1).all()
    assert np.isnan(s[0]).all() and np.isnan(a[:, -1]).all()


def test_horn_east_rising_plane_faces_west():
    cols = np.arange(6) * 10.0
    dem = np.tile(0.1 * cols, (6, 1))
    s, a = horn_slope_aspect(dem, 10.0)
    assert np.allclose(s[1:-1, 1:-1], np.degrees(np.arctan(0.1)))
    assert np.allclose(a[1:-1, 1:-1], 270.0)


def test_horn_north_rising_plane_faces_south():
    rows = np.arange(6)[::-1] * 10.0  # row 0 is northernmost and highest
    dem = np.tile(0.2 * rows[:, None], (1, 6))
    _, a = horn_slope_aspect(dem, 10.0)
    assert np.allclose(a[1:-1, 1:-1], 180.0)


def test_one_hot():
    v = one_hot(["tree cover"], WORLDCOVER_CLASSES)
    assert v.shape == (1, 11) and v.sum() == 1 and v[0, 0] == 1
    assert one_hot([], WORLDCOVER_CLASSES).shape == (0, 11)
    labels = ["grassland", "mangroves", "tree cover"]
    m = one_hot(labels, WORLDCOVER_CLASSES)
    assert (m.sum(axis=1) == 1).all()
    assert [WORLDCOVER_CLASSES[k] for k in m.argmax(axis=1)] == labels
    with pytest.raises(ValidationError) as exc:
        one_hot(["lava"], WORLDCOVER_CLASSES)
    assert "lava" in str(exc.value)


def _tables():
    ids = ["a", "b", "c"]
    return ids, {
        "satellite": Table(ids, ["pc1", "pc2"], [[1, 2], [3, 4], [5, 6]]),
        "climate": Table(ids, ["bio1"], [[10], [11], [12]]),
        "soil": Table(ids, ["ph", "soc"], [[5, 1], [np.nan, 2], [6, 3]]),
    }


def test_assemble_single_set():
    ids, t = _tables()
    fm = assemble(ids, t, {"satellite"})
    assert fm.values.shape == (3, 2) and set(fm.column_sets) == {"satellite"}


def test_assemble_canonical_order_and_width():
    ids, t = _tables()
    fm = assemble(ids, t, ["soil", "satellite", "climate"])
    assert fm.column_names == ["pc1", "pc2", "bio1", "ph", "soc"]
    assert fm.ids == ["a", "c"] and fm.dropped == {"satellite": 0, "climate": 0, "soil": 1}
    assert np.isfinite(fm.values).all()


def test_assemble_independent_of_table_row_order():
    ids, t = _tables()
    shuffled = Table(["c", "a", "b"], ["bio1"], [[12], [10], [11]])
    a = assemble(ids, t, ["satellite", "climate"])
    b = assemble(ids, {**t, "climate": shuffled}, ["satellite", "climate"])
    assert np.array_equal(a.values, b.values)


def test_assemble_misaligned_ids():
    ids, t = _tables()
    with pytest.raises(AlignmentError):
        assemble(ids + ["zz"], t, ["climate"])


def test_load_table_one_hot_and_missing(tmp_path):
    write_csv(tmp_path / "landcover.csv", ["sample_id", "landcover", "ndvi"],
              [["a", "grassland", "0.5"], ["b", "", "0.4"], ["c", "tree cover", "NA"]])
    t = load_table(tmp_path / "landcover.csv", {"landcover": list(WORLDCOVER_CLASSES)})
    assert t.columns[0] == "landcover=tree cover" and t.values.shape == (3, 12)
    assert t.values[0, 2] == 1 and np.isnan(t.values[1, :11]).all() and np.isnan(t.values[2, 11])


def test_parse_selection():
    assert parse_selection("all") == FEATURE_SETS
    assert parse_selection("climate+satellite") == ("satellite", "climate")
    with pytest.raises(ValidationError):
        parse_selection("weather")
