import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fuelmap.datamodel import FuelClass
from fuelmap.ensemble import (StackEnsemble, bagged_oof_train, blend, evaluate,
                              greedy_weighted_ensemble, leaderboard, leaderboard_csv,
                              load_ensemble, predict_proba, save_ensemble, stratified_folds,
                              train_base_learner, train_stack)
from fuelmap.ensemble import evaluate_predictions
from fuelmap.learners import ConstantModel, LearnerSpec

from conftest import blobs, make_table

KNN1 = LearnerSpec("knn_uniform", {"k": 1})
TREE = LearnerSpec("decision_tree")
TU1, GR2, SH5 = int(FuelClass.TU1), int(FuelClass.GR2), int(FuelClass.SH5)


def test_oof_ignores_corrupted_fold_model():
    t = blobs(30, 3, separation=2.0, seed=1)
    bag = bagged_oof_train(TREE, t, folds=5, seed=4)
    before = bag.oof.copy()
    assert np.array_equal(bag.compute_oof(t.X), before)
    for f in range(bag.n_folds):
        saved = bag.fold_models[f]
        bag.fold_models[f] = ConstantModel(3, (f + 1) % 3)
        after = bag.compute_oof(t.X)
        mine = bag.folds == f
        # negative control: the held-out rows of fold f do change
        assert not np.array_equal(after[mine], before[mine])
        bag.fold_models[f] = saved
    # and corrupting every *other* fold leaves a row's OOF bit-identical
    for f in range(bag.n_folds):
        saved = list(bag.fold_models)
        for g in range(bag.n_folds):
            if g != f:
                bag.fold_models[g] = ConstantModel(3, 0)
        rows = bag.folds == f
        assert bag.compute_oof(t.X)[rows].tobytes() == before[rows].tobytes()
        bag.fold_models[:] = saved


def test_oof_of_memorizer_is_honest():
    # a 1-NN memorizer scores 1.0 in-sample, so perfect OOF on random labels would mean leakage
    rng = np.random.default_rng(0)
    t = make_table(rng.standard_normal((200, 3)), rng.choice([TU1, GR2], 200))
    bag = bagged_oof_train(KNN1, t, folds=5, seed=0)
    y = (t.labels == TU1).astype(int)  # classes sort to (GR2, TU1)
    assert (bag.predict_proba(t.X).argmax(1) == y).mean() > 0.75
    assert abs((bag.oof.argmax(1) == y).mean() - 0.5) < 0.15


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=2, max_size=80), st.integers(2, 6),
       st.integers(0, 10_000))
def test_folds_deterministic_and_stratified(y, k, seed):
    y = np.array(y)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a, notes = stratified_folds(y, k, seed)
        b, _ = stratified_folds(y, k, seed)
    assert np.array_equal(a, b)
    for c in np.unique(y):
        counts = np.bincount(a[y == c], minlength=k)
        if (y == c).sum() >= k:
            assert counts.max() - counts.min() <= 1
        else:
            assert (counts > 0).sum() == 1
            assert any(f"index {c} " in n for n in notes)


def test_pinned_class_warns():
    t = make_table(np.arange(23.0), [TU1] * 20 + [GR2] * 3)
    with pytest.warns(UserWarning, match="pinned"):
        bag = bagged_oof_train(TREE, t, folds=5, seed=0)
    assert bag.oof.shape == (23, 2)


def test_stack_layer_widths_and_separable_accuracy():
    train, val = blobs(40, 3, seed=0), blobs(15, 3, seed=1)
    ens = train_stack([TREE, KNN1], [TREE], train, val, folds=3, seed=2, test=blobs(10, 3, seed=5))
    d = len(train.schema)
    # L2 sees raw features plus K probabilities per L1 model
    Z = np.hstack([train.X] + [b.oof for b in ens.l1])
    assert Z.shape[1] == d + 3 * len(ens.l1)
    assert ens.l2[0].predict_proba(Z).shape == (120, 3)
    assert ens.val_acc["WeightedEnsemble_L3"] == 1.0
    assert ens.names[-1] == "WeightedEnsemble_L3"
    assert len(set(ens.names)) == len(ens.names)
    assert abs(ens.l3_weights.sum() - 1) < 1e-12 and (ens.l3_weights >= 0).all()


def test_batch_equals_row_by_row():
    train, val = blobs(30, 3, separation=2.0, seed=0), blobs(10, 3, seed=1)
    ens = train_stack([LearnerSpec("random_forest_gini", {"n_trees": 5}),
                       LearnerSpec("mlp", {"epochs": 5, "hidden": 8})],
                      [LearnerSpec("knn_distance", {"k": 3})], train, val, folds=3, seed=0)
    X = blobs(20, 3, separation=2.0, seed=9).X
    P = ens.predict_proba(X)
    rows = np.vstack([predict_proba(ens, x) for x in X])
    assert P.tobytes() == rows.tobytes()
    assert np.allclose(P.sum(1), 1)


def test_fven_round_trip(tmp_path):
    train, val = blobs(30, 3, separation=2.0, seed=0), blobs(10, 3, seed=1)
    ens = train_stack([LearnerSpec("gradient_boosted_trees", {"n_trees": 5}), KNN1],
                      [LearnerSpec("extra_trees_entropy", {"n_trees": 4})], train, val,
                      folds=3, seed=0, test=val)
    path = save_ensemble(ens, tmp_path / "m.fven")
    assert path.read_bytes()[:4] == b"FVEN"
    back = load_ensemble(path)
    X = blobs(20, 3, separation=2.0, seed=7).X
    assert back.predict_proba(X).tobytes() == ens.predict_proba(X).tobytes()
    assert back.names == ens.names and back.classes == ens.classes
    (tmp_path / "bad.fven").write_bytes(b"NOPE" + path.read_bytes()[4:])
    with pytest.raises(ValueError):
        load_ensemble(tmp_path / "bad.fven")


def test_predict_rejects_wrong_width_and_nan():
    train = blobs(20, 2, seed=0)
    ens = train_stack([TREE], [TREE], train, blobs(5, 2, seed=1), folds=2)
    with pytest.raises(ValueError):
        ens.predict_proba(np.zeros((1, 5)))
    with pytest.raises(ValueError):
        ens.predict_proba([[np.nan, 0.0]])


def test_greedy_single_model():
    P = np.array([[0.9, 0.1], [0.2, 0.8]])
    assert greedy_weighted_ensemble([P], [0, 1]).tolist() == [1.0]


def test_greedy_dominant_model_wins():
    good = np.eye(2)[[0, 1, 0, 1]]
    bad = np.eye(2)[[1, 0, 1, 0]]
    assert greedy_weighted_ensemble([bad, good], [0, 1, 0, 1]).tolist() == [0.0, 1.0]


def test_greedy_complementary_halves():
    y = np.array([0, 0, 1, 1])
    a = np.array([[0.9, 0.1], [0.9, 0.1], [0.6, 0.4], [0.6, 0.4]])  # right on first half
    b = np.array([[0.4, 0.6], [0.4, 0.6], [0.1, 0.9], [0.1, 0.9]])  # right on second half
    w, hist = greedy_weighted_ensemble([a, b], y, 10, return_history=True)
    assert (blend([a, b], w).argmax(1) == y).all()
    assert hist[0] == 0.5 and max(hist) == 1.0
    assert (w > 0).all()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 30))
def test_greedy_weights_on_simplex_and_not_worse(seed, m, iters):
    rng = np.random.default_rng(seed)
    probs = [rng.dirichlet(np.ones(3), 25) for _ in range(m)]
    y = rng.integers(0, 3, 25)
    w = greedy_weighted_ensemble(probs, y, iters)
    assert (w >= 0).all() and abs(w.sum() - 1) < 1e-12
    best = max((P.argmax(1) == y).mean() for P in probs)
    assert (blend(probs, w).argmax(1) == y).mean() >= best


def test_greedy_rejects_bad_input():
    with pytest.raises(ValueError):
        greedy_weighted_ensemble([], [0])
    with pytest.raises(ValueError):
        greedy_weighted_ensemble([np.eye(2)], [0, 1], iterations=0)


def test_l3_weights_validated():
    with pytest.raises(ValueError):
        StackEnsemble(None, [], [], [object()], np.array([0.5]))


def test_evaluate_cases():
    r = evaluate_predictions([TU1, GR2, GR2], [TU1, GR2, GR2])
    assert r.accuracy == 1.0 and r.macro_f1 == 1.0
    r = evaluate_predictions([TU1, GR2], [GR2, TU1])
    assert r.accuracy == 0.0 and r.macro_f1 == 0.0
    r = evaluate_predictions([TU1, TU1, GR2, GR2], [TU1, GR2, GR2, GR2], classes=[SH5])
    assert r.classes == sorted([TU1, GR2, SH5])
    assert r.flagged == [SH5]
    i = r.classes.index(GR2)
    assert r.precision[i] == pytest.approx(2 / 3) and r.recall[i] == 1.0
    f_gr, f_tu = 0.8, 2 / 3
    assert r.macro_f1 == pytest.approx((f_gr + f_tu) / 2)
    assert r.confusion.sum() == 4
    rows = r.parse_csv(r.to_csv())
    assert set(rows) >= {"GR2", "TU1", "SH5", "accuracy", "macro avg", "weighted avg"}
    assert rows["accuracy"][2] == 0.75


def test_evaluate_and_leaderboard_from_stack():
    train, val, test = blobs(30, 2, seed=0), blobs(10, 2, seed=1), blobs(10, 2, seed=2)
    ens = train_stack([TREE, KNN1], [TREE, KNN1], train, val, folds=3, test=test)
    assert evaluate(ens, test).accuracy == 1.0
    rows = leaderboard(ens)
    assert len(rows) == 5
    accs = [r.test_acc for r in rows]
    assert accs == sorted(accs, reverse=True)
    text = leaderboard_csv(rows).splitlines()
    assert text[0] == "model,test_acc,val_acc,gap" and len(text) == 6
    assert all(r.gap == abs(r.test_acc - r.val_acc) for r in rows)


def test_train_base_learner_single_class():
    f = train_base_learner(TREE, make_table(np.arange(4.0), [TU1] * 4))
    assert f.constant and f.predict([[9.0]]).tolist() == [TU1]
    with pytest.raises(ValueError):
        train_base_learner(TREE, make_table(np.empty((0, 1)), []))
