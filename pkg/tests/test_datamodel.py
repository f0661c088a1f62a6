import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fuelmap.datamodel import (TRAINABLE_CLASSES, DimensionMismatchError, FeatureSchema,
                               FuelClass, Geotransform, Provenance, RasterBand, RasterStack,
                               SampleTable, SchemaMismatchError, UnknownLabelError,
                               class_histogram, default_schema, load_raster_stack,
                               load_sample_table, read_fvr, stratified_split, write_fvr,
                               write_raster_stack, write_sample_table)

from conftest import make_table

SB40 = ([f"GR{i}" for i in range(1, 10)] + [f"GS{i}" for i in range(1, 5)]
        + [f"SH{i}" for i in range(1, 10)] + [f"TU{i}" for i in range(1, 6)]
        + [f"TL{i}" for i in range(1, 10)] + [f"SB{i}" for i in range(1, 5)])


def test_fuel_codes_cover_scott_burgan_and_round_trip():
    for code in SB40 + ["NB1", "NB2", "NB3", "NB8", "NB9", "NB"]:
        cls = FuelClass.from_code(code)
        assert cls.code == code
        assert FuelClass(int(cls)) is cls
    assert len(set(int(FuelClass.from_code(c)) for c in SB40)) == 40


def test_trainable_subset_excludes_nb():
    assert len(TRAINABLE_CLASSES) == 24
    assert not any(c.is_nonburnable for c in TRAINABLE_CLASSES)
    assert FuelClass.NB.is_nonburnable


def test_unknown_code():
    with pytest.raises(UnknownLabelError, match="XX9"):
        FuelClass.from_code("XX9")


def test_default_schema_order_and_units():
    s = default_schema()
    assert len(s) == 24
    assert s.names[:2] == ("Elevation", "NDVI_1") and s.names[-1] == "S1_RVI"
    assert s.unit("Elevation") == "meters" and s.unit("Slope") == "degrees"
    assert s.unit("S1_VV") == "dB"
    with pytest.raises(ValueError):
        FeatureSchema(("a", "a"))
    with pytest.raises(ValueError):
        FeatureSchema(())


def _write_csv(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")


def test_load_three_valid_rows(tmp_path):
    s = default_schema()
    rng = np.random.default_rng(0)
    rows = [list(rng.random(24)) + [lab] for lab in ("TU1", "GR2", "")]
    _write_csv(tmp_path / "a.csv", [*s.names, "label"], rows)
    t, rep = load_sample_table(tmp_path / "a.csv", s)
    assert len(t) == 3 and rep.dropped == 0
    assert t.labels[2] == -1
    assert list(t.provenance) == ["field_plot"] * 3


def test_missing_column_is_schema_mismatch(tmp_path):
    s = default_schema()
    names = [n for n in s.names if n != "Slope"]
    _write_csv(tmp_path / "a.csv", [*names, "label"], [[0.0] * 23 + ["TU1"]])
    with pytest.raises(SchemaMismatchError, match="Slope"):
        load_sample_table(tmp_path / "a.csv", s)


def test_duplicate_header_rejected(tmp_path):
    s = FeatureSchema(("a", "b"))
    _write_csv(tmp_path / "a.csv", ["a", "a", "b", "label"], [[1, 1, 2, "TU1"]])
    with pytest.raises(SchemaMismatchError, match="duplicate"):
        load_sample_table(tmp_path / "a.csv", s)


def test_blank_cell_drops_row(tmp_path):
    s = default_schema()
    good = [0.5] * 24 + ["TU1"]
    bad = list(good)
    bad[s.index("NDVI_2")] = ""
    _write_csv(tmp_path / "a.csv", [*s.names, "label"], [good, bad, good])
    t, rep = load_sample_table(tmp_path / "a.csv", s)
    assert len(t) == 2 and rep.dropped == 1 and rep.nan_dropped == 1


def test_unparseable_cell_logged(tmp_path):
    s = FeatureSchema(("a", "b"))
    _write_csv(tmp_path / "a.csv", ["a", "b", "label"], [[1, 2, "TU1"], [1, "x", "TU1"]])
    t, rep = load_sample_table(tmp_path / "a.csv", s)
    assert len(t) == 1 and rep.dropped == 1 and rep.errors[0][0] == 3


def test_unknown_label_names_code(tmp_path):
    s = FeatureSchema(("a",))
    _write_csv(tmp_path / "a.csv", ["a", "label"], [[1, "ZZ1"]])
    with pytest.raises(UnknownLabelError, match="ZZ1"):
        load_sample_table(tmp_path / "a.csv", s)


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 4)), elements=finite))
def test_csv_round_trip_bit_exact(tmp_path_factory, X):
    path = tmp_path_factory.mktemp("csv") / "t.csv"
    labels = [int(FuelClass.TU1)] * X.shape[0]
    t = make_table(X, labels)
    write_sample_table(t, path)
    back, rep = load_sample_table(path, t.schema)
    assert rep.dropped == 0
    assert back.X.tobytes() == t.X.tobytes()
    assert (back.labels == t.labels).all()


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.one_of(finite, st.just(-9999.0))))
def test_fvr_round_trip(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("fvr") / "b.fvr"
    band = RasterBand("b", values, -9999.0)
    gt = Geotransform(10.5, 20.25, 30.0, -30.0)
    write_fvr(band, path, gt)
    back, gt2 = read_fvr(path)
    assert back.values.tobytes() == band.values.tobytes()
    assert (back.valid == band.valid).all()
    assert gt2 == gt


def test_manifest_two_bands(tmp_path):
    a = RasterBand("A", np.arange(16.0).reshape(4, 4))
    b = RasterBand("B", np.ones((4, 4)))
    m = write_raster_stack(RasterStack.from_bands([a, b]), tmp_path)
    s = load_raster_stack(m)
    assert s.names == ["A", "B"] and s.width == s.height == 4
    assert s.resolution == 30.0


def test_manifest_dimension_mismatch(tmp_path):
    write_fvr(RasterBand("A", np.zeros((4, 4))), tmp_path / "A.fvr")
    write_fvr(RasterBand("B", np.zeros((4, 5))), tmp_path / "B.fvr")
    (tmp_path / "m.txt").write_text("A\tA.fvr\nB\tB.fvr\n")
    with pytest.raises(DimensionMismatchError, match="'B'.*'A'"):
        load_raster_stack(tmp_path / "m.txt")


def test_manifest_missing_file(tmp_path):
    (tmp_path / "m.txt").write_text("A\tnope.fvr\n")
    with pytest.raises(FileNotFoundError):
        load_raster_stack(tmp_path / "m.txt")


def test_split_sizes_and_determinism():
    t = make_table(np.arange(100.0), [int(FuelClass.TU1)] * 100)
    a = stratified_split(t, (0.8, 0.1, 0.1), 7)
    assert [len(p) for p in a] == [80, 10, 10]
    b = stratified_split(t, (0.8, 0.1, 0.1), 7)
    for p, q in zip(a, b):
        assert (p.X == q.X).all()


def test_split_preserves_ratio():
    y = [int(FuelClass.TU1)] * 90 + [int(FuelClass.GR1)] * 10
    t = make_table(np.arange(100.0), y)
    for part, frac in zip(stratified_split(t, (0.8, 0.1, 0.1), 1), (0.8, 0.1, 0.1)):
        h = class_histogram(part)
        assert abs(h[FuelClass.TU1] - 90 * frac) <= 1
        assert abs(h.get(FuelClass.GR1, 0) - 10 * frac) <= 1


def test_split_rejects_bad_fractions():
    t = make_table(np.arange(4.0), [int(FuelClass.TU1)] * 4)
    with pytest.raises(ValueError):
        stratified_split(t, (0.5, 0.3, 0.1))


def test_split_flags_tiny_class():
    t = make_table(np.arange(12.0), [int(FuelClass.TU1)] * 10 + [int(FuelClass.GR1)] * 2)
    assert stratified_split(t, (0.8, 0.1, 0.1), 0).flagged == [int(FuelClass.GR1)]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from([101, 102, 161, 165]), min_size=0, max_size=60),
       st.integers(0, 2**31 - 1),
       st.sampled_from([(0.8, 0.1, 0.1), (0.5, 0.5, 0.0), (1 / 3, 1 / 3, 1 / 3)]))
def test_split_is_partition(labels, seed, fractions):
    t = make_table(np.arange(float(len(labels))), labels)
    parts = stratified_split(t, fractions, seed)
    ids = np.concatenate([p.X[:, 0] for p in parts])
    assert sorted(ids.tolist()) == list(map(float, range(len(labels))))
    for cls in set(labels):
        n = labels.count(cls)
        for part, f in zip(parts, fractions):
            assert abs(int(np.sum(part.labels == cls)) - n * f) <= 1 + 1e-9


def test_histogram_cases():
    assert dict(class_histogram(make_table(np.empty(0), []))) == {}
    t = make_table(np.arange(8.0), [161] * 5 + [101] * 2 + [-1])
    h = class_histogram(t)
    assert h == {FuelClass.TU1: 5, FuelClass.GR1: 2}
    assert h.unlabeled == 1
    assert sum(h.values()) == int(t.labeled.sum())


def test_sample_table_rejects_nan_and_bad_provenance():
    with pytest.raises(ValueError):
        make_table([math.nan], [161])
    with pytest.raises(ValueError):
        make_table([1.0], [161], provenance="guess")
    t = make_table([1.0], [161], provenance=Provenance.SYNTHETIC)
    assert t.row(0).provenance is Provenance.SYNTHETIC
