import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fuelmap.datamodel import FuelClass, Geotransform, RasterBand, RasterStack
from fuelmap.labelprop import (VAR_FLOOR, PlotDistribution, estimate_distribution,
                               jm_distance, jmsam_similarity, propagate_labels,
                               spectral_angle, standardize_stack)

TU1, GR2 = FuelClass.TU1, FuelClass.GR2


def _stack(arr, pixel=30.0):
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 2:
        arr = arr[..., None]
    return RasterStack.from_bands([RasterBand(f"b{j}", arr[..., j]) for j in range(arr.shape[-1])],
                                  Geotransform(pixel_size_x=pixel, pixel_size_y=pixel))


def test_jm_one_dimensional_closed_form():
    # Bhattacharyya distance for equal unit variances reduces to (mu_a - mu_b)^2 / 8
    expected = 2.0 * (1.0 - math.exp(-1.0 / 8.0))
    got = jm_distance(PlotDistribution([0.0], [1.0]), PlotDistribution([1.0], [1.0]))
    assert abs(got - expected) <= 1e-12
    assert abs(got - 0.23501) < 1e-5


def test_jm_unequal_variances_closed_form():
    va, vb = 1.0, 4.0
    b = 0.25 * 9.0 / (va + vb) + 0.5 * math.log((va + vb) / (2 * math.sqrt(va * vb)))
    got = jm_distance(PlotDistribution([0.0], [va]), PlotDistribution([3.0], [vb]))
    assert abs(got - 2 * (1 - math.exp(-b))) <= 1e-12


def test_jm_saturates():
    a = PlotDistribution([0.0], [1.0])
    b = PlotDistribution([1e6], [1.0])
    assert abs(jm_distance(a, b) - 2.0) <= 1e-12


def test_jm_dimension_mismatch():
    with pytest.raises(ValueError):
        jm_distance(PlotDistribution([0.0], [1.0]), PlotDistribution([0.0, 1.0], [1.0, 1.0]))


def test_spectral_angle_cases():
    assert abs(spectral_angle([1, 0], [1, 1]) - math.pi / 4) <= 1e-12
    assert spectral_angle([2, 3], [2, 3]) == 0.0
    assert abs(spectral_angle([1, 0], [0, 5]) - math.pi / 2) <= 1e-12
    with pytest.raises(ValueError):
        spectral_angle([0, 0], [1, 1])


def test_combined_example():
    # JM of the 1-D example with an angle of pi/4 between the means
    a = PlotDistribution([0.0, 1.0], [1.0, VAR_FLOOR])
    b = PlotDistribution([1.0, 1.0], [1.0, VAR_FLOOR])
    s = jmsam_similarity(a, b)
    assert abs(s.sam - math.pi / 4) <= 1e-12
    assert abs(s.value - (1 - s.jm / 2) * 0.5) <= 1e-15
    assert abs(s.value - 0.44125) < 1e-5


def test_similarity_extremes():
    a = PlotDistribution([1.0, 2.0], [0.5, 0.5])
    assert jmsam_similarity(a, a).value == 1.0
    far = PlotDistribution([1e6, 2e6], [0.5, 0.5])
    assert jmsam_similarity(a, far).value == 0.0


vec = arrays(np.float64, 3, elements=st.floats(-5, 5))
var = arrays(np.float64, 3, elements=st.floats(1e-3, 5))


@settings(max_examples=60)
@given(vec, var, vec, var, st.permutations(range(3)))
def test_jm_and_similarity_properties(ma, va, mb, vb, perm):
    a, b = PlotDistribution(ma, va), PlotDistribution(mb, vb)
    jm = jm_distance(a, b)
    assert 0.0 <= jm <= 2.0
    assert jm == pytest.approx(jm_distance(b, a), abs=1e-15)
    if not (np.any(ma) and np.any(mb)):
        return
    s = jmsam_similarity(a, b)
    assert 0.0 <= s.value <= 1.0
    assert s.value == pytest.approx(jmsam_similarity(b, a).value, abs=1e-12)
    p = list(perm)
    sp = jmsam_similarity(PlotDistribution(ma[p], va[p]), PlotDistribution(mb[p], vb[p]))
    assert sp.value == pytest.approx(s.value, abs=1e-12)


def test_estimate_distribution_examples():
    s = _stack(np.full((5, 5), 3.0))
    d = estimate_distribution(s, (2, 2))
    assert d.mean.tolist() == [3.0] and d.var.tolist() == [VAR_FLOOR]

    g = np.zeros((5, 5))
    g[1:4, 1:4] = np.arange(9.0).reshape(3, 3)
    d = estimate_distribution(_stack(g), (2, 2))
    assert d.mean[0] == 4.0 and abs(d.var[0] - 60.0 / 9.0) < 1e-12

    h = np.arange(9.0).reshape(3, 3)
    h[:, 2] = -9999.0
    d = estimate_distribution(_stack(h), (1, 1))
    kept = np.array([0, 1, 3, 4, 6, 7], float)
    assert d.mean[0] == kept.mean() and abs(d.var[0] - kept.var()) < 1e-12

    with pytest.raises(ValueError):
        estimate_distribution(_stack(np.full((3, 3), -9999.0)), (1, 1))


def test_uniform_raster_labels_whole_disc():
    s = _stack(np.ones((11, 11, 2)))
    res = propagate_labels(s, [((5, 5), TU1)], radius_m=90.0)
    rr, cc = np.mgrid[:11, :11]
    disc = np.hypot(rr - 5, cc - 5) * 30 <= 90
    assert len(res.table) == disc.sum() - 1
    assert (res.table.labels == int(TU1)).all()
    assert set(res.table.provenance) == {"pseudo_label"}
    assert res.growth_factor == (1 + disc.sum() - 1) / 1


def test_threshold_one_gives_nothing():
    rng = np.random.default_rng(0)
    s = _stack(rng.standard_normal((9, 9, 3)))
    assert len(propagate_labels(s, [((4, 4), TU1)], 300.0, threshold=1.0).table) == 0


def test_empty_plots_rejected():
    with pytest.raises(ValueError):
        propagate_labels(_stack(np.ones((3, 3))), [])


def _brute_force(stack, plots, radius, threshold):
    """Scalar re-implementation: best (score, -distance, -index) per pixel."""
    z = standardize_stack(stack)
    zs = _stack(z, stack.resolution)
    h, w = stack.shape
    best = {}
    for k, ((r0, c0), lab) in enumerate(plots):
        pd0 = estimate_distribution(zs, (r0, c0))
        for r in range(h):
            for c in range(w):
                d = math.hypot(r - r0, c - c0) * stack.resolution
                if d > radius or (r, c) in {p[0] for p in plots}:
                    continue
                s = jmsam_similarity(pd0, estimate_distribution(zs, (r, c))).value
                if s <= threshold:
                    continue
                key = (s, -d, -k)
                if (r, c) not in best or key > best[(r, c)][0]:
                    best[(r, c)] = (key, int(lab))
    return best


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    base = rng.standard_normal((2, 2))
    arr = np.repeat(np.repeat(base, 4, axis=0), 4, axis=1)[..., None] * [1.0, 0.5]
    arr = arr + 0.05 * rng.standard_normal((8, 8, 2))
    s = _stack(arr)
    plots = [((1, 1), TU1), ((6, 6), GR2), ((2, 5), GR2)]
    res = propagate_labels(s, plots, 150.0, 0.9)
    ref = _brute_force(s, plots, 150.0, 0.9)
    got = {tuple(p): int(l) for p, l in zip(res.table.pixels, res.table.labels)}
    assert set(got) == set(ref)
    for px, (key, lab) in ref.items():
        assert got[px] == lab


def test_arbitration_prefers_higher_score():
    # left plot matches the disputed pixel more closely than the right plot
    arr = np.ones((3, 7, 2))
    arr[:, :3] = [1.0, 1.0]
    arr[:, 4:] = [1.0, 1.2]
    arr[:, 3] = [1.0, 1.02]
    s = _stack(arr)
    plots = [((1, 1), TU1), ((1, 5), GR2)]
    res = propagate_labels(s, plots, 200.0, 0.0)
    lab = {tuple(p): int(l) for p, l in zip(res.table.pixels, res.table.labels)}
    scores = {tuple(p): v for p, v in zip(res.table.pixels, res.scores)}
    zs = _stack(standardize_stack(s))
    d = estimate_distribution(zs, (1, 3))
    left = jmsam_similarity(estimate_distribution(zs, (1, 1)), d).value
    right = jmsam_similarity(estimate_distribution(zs, (1, 5)), d).value
    assert left != right
    assert lab[(1, 3)] == int(TU1 if left > right else GR2)
    assert scores[(1, 3)] == pytest.approx(max(left, right), abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.99), st.floats(0.0, 0.99))
def test_threshold_monotone(seed, t1, t2):
    rng = np.random.default_rng(seed)
    s = _stack(rng.standard_normal((8, 8, 2)))
    plots = [((2, 2), TU1), ((5, 5), GR2)]
    lo, hi = sorted((t1, t2))
    n_lo = len(propagate_labels(s, plots, 120.0, lo).table)
    n_hi = len(propagate_labels(s, plots, 120.0, hi).table)
    assert n_hi <= n_lo


def test_fixture_pseudo_labels_match_truth(world):
    from fuelmap.indices import build_feature_stack
    from fuelmap.datamodel import default_schema
    feats = build_feature_stack(world.stack, default_schema())
    res = propagate_labels(feats, world.plots, world.spec.propagation_radius, 0.99,
                           schema=default_schema())
    assert res.growth_factor > 1
    truth = world.truth.values[res.table.pixels[:, 0], res.table.pixels[:, 1]]
    assert (truth == res.table.labels).mean() == 1.0
