import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fuelmap.datamodel import FeatureSchema, FuelClass, RasterBand, RasterStack
from fuelmap.ensemble import train_stack
from fuelmap.learners import LearnerSpec
from fuelmap.postprocess import (NODATA, FuelMap, apply_nonburnable_mask, class_color,
                                 classify_raster, export_fuel_map, load_fuel_map,
                                 mask_index_bands)

from conftest import blobs

NB = int(FuelClass.NB)


@pytest.fixture(scope="module")
def ens():
    train, val = blobs(30, 3, separation=3.0, seed=0), blobs(10, 3, separation=3.0, seed=1)
    return train_stack([LearnerSpec("mlp", {"epochs": 10, "hidden": 8}),
                        LearnerSpec("random_forest_gini", {"n_trees": 5})],
                       [LearnerSpec("knn_distance", {"k": 3}), LearnerSpec("decision_tree")],
                       train, val, folds=3, seed=0)


def _stack(arr, names=("f0", "f1")):
    return RasterStack.from_bands([RasterBand(n, arr[..., j]) for j, n in enumerate(names)])


def test_tiling_invariance_and_nodata(ens):
    rng = np.random.default_rng(0)
    arr = rng.normal(0, 4, (23, 19, 2))
    arr[3, 4, 1] = NODATA
    arr[10:12, :, 0] = NODATA
    s = _stack(arr)
    big = classify_raster(ens, s, tile=256)
    for tile in (1, 7, 13):
        small = classify_raster(ens, s, tile=tile)
        assert small.labels.values.tobytes() == big.labels.values.tobytes()
        assert small.probabilities.values.tobytes() == big.probabilities.values.tobytes()
    lab = big.labels.values
    assert lab[3, 4] == NODATA and (lab[10:12] == NODATA).all()
    valid = big.labels.valid
    assert valid.sum() == 23 * 19 - 1 - 2 * 19
    p = big.probabilities.values[valid]
    assert ((p >= 1 / 3 - 1e-12) & (p <= 1)).all()
    assert set(np.unique(lab[valid])) <= set(ens.classes)


def test_map_matches_direct_prediction(ens):
    arr = np.random.default_rng(1).normal(0, 3, (5, 6, 2))
    fmap = classify_raster(ens, _stack(arr), tile=4)
    flat = arr.reshape(-1, 2)
    assert np.array_equal(fmap.labels.values.ravel(), ens.predict(flat).astype(float))


def test_constant_raster_single_class(ens):
    fmap = classify_raster(ens, _stack(np.full((6, 6, 2), 0.1)))
    assert np.unique(fmap.labels.values).size == 1
    assert NB in fmap.legend


def test_missing_band_and_bad_tile(ens):
    with pytest.raises(Exception, match="f1"):
        classify_raster(ens, _stack(np.zeros((2, 2, 1)), names=("f0",)))
    with pytest.raises(ValueError):
        classify_raster(ens, _stack(np.zeros((2, 2, 2))), tile=0)


def _map(labels):
    labels = np.asarray(labels, dtype=float)
    return FuelMap(RasterBand("fuel_class", labels, NODATA),
                   RasterBand("probability", np.full(labels.shape, 0.7), NODATA))


def test_mask_thresholds_strict():
    tu = float(FuelClass.TU1)
    fmap = _map([[tu, tu, tu, tu, tu]])
    ndvi = np.array([[-0.1, 0.0, 0.4, 0.4, 0.4]])
    ndwi = np.array([[0.0, 0.0, 0.5, 0.6, 0.0]])
    bui = np.array([[0.0, 0.0, 0.0, 0.0, 0.51]])
    out = apply_nonburnable_mask(fmap, ndvi, ndwi, bui)
    assert out.labels.values.tolist() == [[NB, tu, tu, NB, NB]]
    assert out.probabilities.values.tobytes() == fmap.probabilities.values.tobytes()
    assert out.legend[NB] == "NB"


def test_mask_skips_nodata_and_checks_shape():
    fmap = _map([[NODATA, float(FuelClass.GR2)]])
    out = apply_nonburnable_mask(fmap, [[-1.0, -1.0]], [[0.0, 0.0]], [[0.0, 0.0]])
    assert out.labels.values.tolist() == [[NODATA, NB]]
    nan_idx = apply_nonburnable_mask(fmap, [[0.5, np.nan]], [[0.0, 0.0]], [[0.0, 0.0]])
    assert nan_idx.labels.values[0, 1] == float(FuelClass.GR2)
    with pytest.raises(Exception):
        apply_nonburnable_mask(fmap, np.zeros((2, 2)), np.zeros((1, 2)), np.zeros((1, 2)))


grid = arrays(np.float64, (4, 5), elements=st.floats(-1, 1))


@settings(max_examples=50)
@given(grid, grid, grid, arrays(np.int64, (4, 5), elements=st.sampled_from([101, 102, 161, 91])))
def test_mask_idempotent_and_never_unmasks(v, w, b, labels):
    fmap = _map(labels)
    once = apply_nonburnable_mask(fmap, v, w, b)
    twice = apply_nonburnable_mask(once, v, w, b)
    assert once.labels.values.tobytes() == twice.labels.values.tobytes()
    was_nb = labels == NB
    assert (once.labels.values[was_nb] == NB).all()
    changed = once.labels.values != labels
    assert (once.labels.values[changed] == NB).all()


def test_mask_index_bands():
    s = RasterStack.from_bands([RasterBand("G", np.array([[0.3]])), RasterBand("R", np.array([[0.1]])),
                                RasterBand("NIR", np.array([[0.5]])), RasterBand("MIR", np.array([[0.2]]))])
    ndvi, ndwi, bui = mask_index_bands(s)
    assert ndvi.values[0, 0] == pytest.approx(0.4 / 0.6, abs=1e-12)
    assert ndwi.values[0, 0] == pytest.approx(-0.2 / 0.8, abs=1e-12)
    assert bui.values[0, 0] == pytest.approx(0.4 / 0.6 - (-0.3 / 0.7), abs=1e-12)  # NDVI - NDBI
    with pytest.raises(Exception, match="MIR"):
        mask_index_bands(RasterStack.from_bands([RasterBand("G", np.ones((1, 1))),
                                                 RasterBand("NIR", np.ones((1, 1)))]))


def test_export_round_trip(ens, tmp_path):
    arr = np.random.default_rng(2).normal(0, 3, (7, 8, 2))
    arr[0, 0, 0] = NODATA
    fmap = classify_raster(ens, _stack(arr))
    paths = export_fuel_map(fmap, tmp_path / "map")
    assert [p.name for p in paths] == ["map_labels.fvr", "map_prob.fvr", "map_legend.csv"]
    back = load_fuel_map(tmp_path / "map")
    assert back.labels.values.tobytes() == fmap.labels.values.tobytes()
    assert back.probabilities.values.tobytes() == fmap.probabilities.values.tobytes()
    assert back.legend == fmap.legend
    rows = paths[2].read_text().splitlines()
    assert rows[0] == "id,code,color"
    assert all(r.split(",")[2].startswith("#") for r in rows[1:])


def test_class_colors_distinct():
    ids = [int(c) for c in FuelClass]
    colors = [class_color(i) for i in ids]
    assert len(set(colors)) >= len(ids) - 5
    assert all(len(c) == 7 for c in colors)
