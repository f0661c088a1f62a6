"""Three-layer stacked ensemble.

Layer 1 bags every roster learner over stratified folds and keeps the
out-of-fold (OOF) probabilities.  Layer 2 learners see the raw features next
to all layer-1 OOF probabilities.  Layer 3 is a nonnegative blend of the
layer-2 models chosen by greedy forward selection on the validation split.

Models work on class *indices* ``0..K-1`` into ``classes`` (sorted fuel ids),
so argmax ties resolve to the lowest class id.
"""
from __future__ import annotations

import io
import json
import os
import struct
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .datamodel import FeatureSchema, FuelClass, SampleTable
from .learners import ConstantModel, LearnerSpec, make_model, model_from_state

__all__ = [
    "FittedLearner", "BaggedModel", "StackEnsemble", "EvalReport", "LeaderboardRow",
    "stratified_folds", "train_base_learner", "bagged_oof_train", "train_stack",
    "greedy_weighted_ensemble", "blend", "predict_proba", "predict", "evaluate",
    "leaderboard", "leaderboard_csv", "save_ensemble", "load_ensemble", "FVEN_MAGIC",
]

FVEN_MAGIC = b"FVEN"
FVEN_VERSION = 1


def _sub_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _check_X(X, d: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != d:
        raise ValueError(f"expected {d} features per row, got shape {X.shape}")
    if np.isnan(X).any():
        raise ValueError("NaN in features; mask nodata before predicting")
    return X


def _encode(table: SampleTable, classes: Sequence[int]) -> np.ndarray:
    if not table.labeled.all():
        raise ValueError("training table contains unlabeled rows")
    lut = {c: i for i, c in enumerate(classes)}
    try:
        return np.array([lut[int(v)] for v in table.labels], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]} not in class list {list(classes)}") from None


# -- base learners ----------------------------------------------------------------

def _fit(spec: LearnerSpec, X, y, n_classes):
    """Fit one model on index labels; a single-class input gets a constant model."""
    if X.shape[0] == 0:
        raise ValueError("cannot train on an empty table")
    present = np.unique(y)
    if present.size == 1:
        return ConstantModel(n_classes, int(present[0])), True
    return make_model(spec, n_classes).fit(X, y), False


@dataclass
class FittedLearner:
    spec: LearnerSpec
    classes: list
    model: object
    constant: bool = False

    def predict_proba(self, X) -> np.ndarray:
        return self.model.predict_proba(np.asarray(X, dtype=np.float64))

    def predict(self, X) -> np.ndarray:
        return np.asarray(self.classes)[np.argmax(self.predict_proba(X), axis=1)]


def train_base_learner(spec: LearnerSpec, train: SampleTable,
                       classes: Sequence[int] | None = None) -> FittedLearner:
    """Fit ``spec`` on a labelled table.  ``constant`` flags the single-class fallback."""
    if len(train) == 0:
        raise ValueError("cannot train on an empty table")
    classes = list(classes) if classes is not None else train.class_ids()
    y = _encode(train, classes)
    model, constant = _fit(spec, train.X, y, len(classes))
    return FittedLearner(spec, classes, model, constant)


# -- bagging ----------------------------------------------------------------------

def stratified_folds(y: np.ndarray, folds: int = 5, seed: int = 0):
    """Seeded stratified fold ids plus warnings for classes rarer than ``folds``.

    Within a class rows are shuffled and dealt round-robin; the starting fold
    rotates from class to class so small classes do not pile onto fold 0.
    A class with fewer rows than folds is pinned to a single fold.
    """
    if folds < 2:
        raise ValueError("folds must be >= 2")
    y = np.asarray(y)
    fold = np.empty(y.size, dtype=np.int64)
    notes = []
    start = 0
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[np.random.default_rng(_sub_seed(seed, int(cls) + 1)).permutation(idx.size)]
        if idx.size < folds:
            fold[idx] = start % folds
            notes.append(f"class index {int(cls)} has {idx.size} rows < {folds} folds; pinned to fold {start % folds}")
            start += 1
        else:
            fold[idx] = (start + np.arange(idx.size)) % folds
            start += idx.size
    return fold, notes


def _fit_fold(args):
    spec, X, y, n_classes = args
    return _fit(spec, X, y, n_classes)


def _jobs(jobs: int | None) -> int:
    if jobs is None:
        jobs = int(os.environ.get("FV_JOBS", "1") or 1)
    return max(1, int(jobs))


@dataclass
class BaggedModel:
    spec: LearnerSpec
    classes: list
    fold_models: list
    folds: np.ndarray
    oof: np.ndarray
    warnings: list = field(default_factory=list)
    constant: list = field(default_factory=list)
    layer: int = 1

    @property
    def n_folds(self) -> int:
        return len(self.fold_models)

    @property
    def name(self) -> str:
        return f"{self.spec.display_name}_BAG_L{self.layer}"

    def predict_proba(self, X) -> np.ndarray:
        """Mean of the fold models' probabilities, accumulated in fold order."""
        X = np.asarray(X, dtype=np.float64)
        acc = np.zeros((X.shape[0], len(self.classes)))
        for m in self.fold_models:
            acc += m.predict_proba(X)
        return acc / acc.sum(axis=1, keepdims=True)

    def compute_oof(self, X) -> np.ndarray:
        """Recompute OOF rows, each only from the model that held that row out."""
        X = np.asarray(X, dtype=np.float64)
        out = np.zeros((X.shape[0], len(self.classes)))
        for f, m in enumerate(self.fold_models):
            rows = self.folds == f
            if rows.any():
                out[rows] = m.predict_proba(X[rows])
        return out


def _bag(spec, X, y, classes, folds, seed, jobs=None, layer=1) -> BaggedModel:
    n_classes = len(classes)
    if X.shape[0] == 0:
        raise ValueError("cannot train on an empty table")
    fold, notes = stratified_folds(y, folds, seed)
    tasks = []
    for f in range(folds):
        tr = fold != f
        tasks.append((spec.with_seed(_sub_seed(spec.seed, seed, f)), X[tr], y[tr], n_classes))
    n_jobs = min(_jobs(jobs), folds)
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            fitted = list(pool.map(_fit_fold, tasks))
    else:
        fitted = [_fit_fold(t) for t in tasks]
    models = [m for m, _ in fitted]
    flags = [c for _, c in fitted]
    for f, (m, c) in enumerate(fitted):
        if tasks[f][1].shape[0] == 0:
            raise ValueError(f"fold {f} left no training rows")
        if c:
            notes.append(f"fold {f} trained on a single class; constant model used")
    bag = BaggedModel(spec, list(classes), models, fold, np.zeros((X.shape[0], n_classes)),
                      notes, flags, layer)
    bag.oof = bag.compute_oof(X)
    for msg in notes:
        warnings.warn(f"{bag.name}: {msg}", stacklevel=3)
    return bag


def bagged_oof_train(spec: LearnerSpec, train: SampleTable, folds: int = 5, seed: int = 0,
                     classes: Sequence[int] | None = None, jobs: int | None = None) -> BaggedModel:
    """k-fold bagging with out-of-fold probabilities for every training row."""
    if len(train) == 0:
        raise ValueError("cannot train on an empty table")
    classes = list(classes) if classes is not None else train.class_ids()
    return _bag(spec, train.X, _encode(train, classes), classes, folds, seed, jobs)


# -- greedy blending ----------------------------------------------------------------

def blend(probs: Sequence[np.ndarray], weights) -> np.ndarray:
    """Weighted average of probability matrices, summed in model order (zero weights skipped)."""
    weights = np.asarray(weights, dtype=np.float64)
    out = np.zeros_like(np.asarray(probs[0], dtype=np.float64))
    for w, P in zip(weights, probs):
        if w != 0.0:
            out += w * P
    return out / out.sum(axis=1, keepdims=True)


def _accuracy(P, y) -> float:
    return float(np.mean(np.argmax(P, axis=1) == y))


def greedy_weighted_ensemble(val_probs: Sequence[np.ndarray], labels, iterations: int = 100,
                             return_history: bool = False):
    """Forward selection with replacement, scored by validation accuracy.

    Starts from the best single model.  Each round adds the model whose
    inclusion gives the most accurate blend (lowest index on ties).  The
    returned weights are the selection counts of the best-scoring prefix, so
    the blend can never score below the best single model.
    """
    if len(val_probs) == 0:
        raise ValueError("no models to ensemble")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    probs = [np.asarray(P, dtype=np.float64) for P in val_probs]
    shape = probs[0].shape
    if any(P.shape != shape for P in probs):
        raise ValueError("probability matrices must share a shape")
    y = np.asarray(labels)
    m = len(probs)
    single = [_accuracy(P, y) for P in probs]
    counts = np.zeros(m)
    counts[int(np.argmax(single))] = 1
    best_counts, best_acc = counts.copy(), max(single)
    history = [best_acc]
    for _ in range(iterations - 1):
        scores = []
        for j in range(m):
            trial = counts.copy()
            trial[j] += 1
            scores.append(_accuracy(blend(probs, trial / trial.sum()), y))
        j = int(np.argmax(scores))
        counts[j] += 1
        history.append(scores[j])
        if scores[j] > best_acc:
            best_acc, best_counts = scores[j], counts.copy()
    weights = best_counts / best_counts.sum()
    return (weights, history) if return_history else weights


# -- the stack ----------------------------------------------------------------------

@dataclass
class StackEnsemble:
    schema: FeatureSchema
    classes: list
    l1: list
    l2: list
    l3_weights: np.ndarray
    val_acc: dict = field(default_factory=dict)
    test_acc: dict = field(default_factory=dict)
    log: list = field(default_factory=list)

    def __post_init__(self):
        w = np.asarray(self.l3_weights, dtype=np.float64)
        if w.shape != (len(self.l2),) or (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("L3 weights must be nonnegative, one per L2 model, summing to 1")
        self.l3_weights = w

    @property
    def names(self) -> list[str]:
        return [b.name for b in self.l1] + [b.name for b in self.l2] + ["WeightedEnsemble_L3"]

    def layer_probas(self, X) -> dict:
        """Probabilities of every L1 and L2 model plus the L3 blend, keyed by model name."""
        X = _check_X(X, len(self.schema))
        p1 = [b.predict_proba(X) for b in self.l1]
        Z = np.hstack([X] + p1)
        p2 = [b.predict_proba(Z) for b in self.l2]
        out = {b.name: p for b, p in zip(self.l1, p1)}
        out.update({b.name: p for b, p in zip(self.l2, p2)})
        out["WeightedEnsemble_L3"] = blend(p2, self.l3_weights)
        return out

    def predict_proba(self, X) -> np.ndarray:
        X = _check_X(X, len(self.schema))
        Z = np.hstack([X] + [b.predict_proba(X) for b in self.l1])
        return blend([b.predict_proba(Z) for b in self.l2], self.l3_weights)

    def predict(self, X) -> np.ndarray:
        return np.asarray(self.classes)[np.argmax(self.predict_proba(X), axis=1)]


def predict_proba(ens, features) -> np.ndarray:
    """Probabilities for one feature vector (1-D result) or a batch."""
    single = np.ndim(features) == 1
    P = ens.predict_proba(features)
    return P[0] if single else P


def predict(ens, features) -> np.ndarray:
    return ens.predict(features)


def _unique_names(bags):
    seen: dict[str, int] = {}
    for b in bags:
        n = seen.get(b.name, 0) + 1
        seen[b.name] = n
        if n > 1:
            b.spec = LearnerSpec(b.spec.family, dict(b.spec.hyperparameters), b.spec.seed,
                                 f"{b.spec.display_name}{n}")


def train_stack(roster_l1: Sequence[LearnerSpec], roster_l2: Sequence[LearnerSpec],
                train: SampleTable, val: SampleTable, folds: int = 5, seed: int = 0,
                test: SampleTable | None = None, iterations: int = 100,
                jobs: int | None = None, log=None) -> StackEnsemble:
    """Fit L1 and L2 bags on ``train``, then L3 weights on ``val``.

    When ``test`` is given every model's test accuracy is recorded too, for
    the leaderboard.  ``log`` is an optional callable receiving progress lines.
    """
    if not roster_l1 or not roster_l2:
        raise ValueError("both rosters must be non-empty")
    if len(val) == 0:
        raise ValueError("validation table is empty")
    if len(train) == 0:
        raise ValueError("training table is empty")
    say = log or (lambda msg: None)
    classes = train.class_ids()
    y = _encode(train, classes)
    lines = []

    def note(msg):
        lines.append(msg)
        say(msg)

    l1 = []
    for i, spec in enumerate(roster_l1):
        bag = _bag(spec, train.X, y, classes, folds, _sub_seed(seed, 1, i), jobs, layer=1)
        l1.append(bag)
        note(f"L1 {bag.name}: oof_acc={_accuracy(bag.oof, y):.6f}")
    _unique_names(l1)
    Z = np.hstack([train.X] + [b.oof for b in l1])
    l2 = []
    for i, spec in enumerate(roster_l2):
        bag = _bag(spec, Z, y, classes, folds, _sub_seed(seed, 2, i), jobs, layer=2)
        l2.append(bag)
        note(f"L2 {bag.name}: oof_acc={_accuracy(bag.oof, y):.6f}")
    _unique_names(l2)

    ens = StackEnsemble(train.schema, classes, l1, l2, np.full(len(l2), 1.0 / len(l2)))
    yv = _encode_known(val, classes)
    val_p = ens.layer_probas(val.X)
    ens.l3_weights = greedy_weighted_ensemble([val_p[b.name] for b in l2], yv, iterations)
    val_p["WeightedEnsemble_L3"] = blend([val_p[b.name] for b in l2], ens.l3_weights)
    ens.val_acc = {name: _accuracy(P, yv) for name, P in val_p.items()}
    note("L3 weights: " + ", ".join(f"{b.name}={w:.4f}" for b, w in zip(l2, ens.l3_weights) if w > 0))
    if test is not None and len(test):
        yt = _encode_known(test, classes)
        ens.test_acc = {name: _accuracy(P, yt) for name, P in ens.layer_probas(test.X).items()}
    ens.log = lines
    return ens


def _encode_known(table: SampleTable, classes) -> np.ndarray:
    """Index labels; classes unseen in training map to -1 and always count as wrong."""
    if not table.labeled.all():
        raise ValueError("evaluation table contains unlabeled rows")
    lut = {c: i for i, c in enumerate(classes)}
    return np.array([lut.get(int(v), -1) for v in table.labels], dtype=np.int64)


# -- leaderboard ----------------------------------------------------------------------

@dataclass(frozen=True)
class LeaderboardRow:
    model: str
    test_acc: float
    val_acc: float

    @property
    def gap(self) -> float:
        return abs(self.test_acc - self.val_acc)


def leaderboard(ens: StackEnsemble) -> list[LeaderboardRow]:
    """Every model with test and validation accuracy, best test accuracy first."""
    rows = [LeaderboardRow(n, ens.test_acc.get(n, float("nan")), ens.val_acc.get(n, float("nan")))
            for n in ens.names]
    order = {n: i for i, n in enumerate(ens.names)}
    return sorted(rows, key=lambda r: (-np.nan_to_num(r.test_acc, nan=-1.0),
                                       -np.nan_to_num(r.val_acc, nan=-1.0), order[r.model]))


def leaderboard_csv(rows: Sequence[LeaderboardRow]) -> str:
    out = ["model,test_acc,val_acc,gap"]
    out += [f"{r.model},{r.test_acc:.6f},{r.val_acc:.6f},{r.gap:.6f}" for r in rows]
    return "\n".join(out) + "\n"


# -- evaluation -------------------------------------------------------------------------

@dataclass
class EvalReport:
    classes: list
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float
    macro: tuple
    weighted: tuple
    confusion: np.ndarray
    flagged: list = field(default_factory=list)

    @property
    def macro_f1(self) -> float:
        return self.macro[2]

    def to_csv(self) -> str:
        """Per-class precision/recall/f1/support, then accuracy and the two averages."""
        lines = ["class,precision,recall,f1_score,support"]
        for i, c in enumerate(self.classes):
            lines.append(f"{FuelClass(c).code},{self.precision[i]:.6f},{self.recall[i]:.6f},"
                         f"{self.f1[i]:.6f},{int(self.support[i])}")
        total = int(self.support.sum())
        lines.append(f"accuracy,,,{self.accuracy:.6f},{total}")
        lines.append("macro avg," + ",".join(f"{v:.6f}" for v in self.macro) + f",{total}")
        lines.append("weighted avg," + ",".join(f"{v:.6f}" for v in self.weighted) + f",{total}")
        return "\n".join(lines) + "\n"

    def confusion_csv(self) -> str:
        codes = [FuelClass(c).code for c in self.classes]
        lines = ["true\\pred," + ",".join(codes)]
        for code, row in zip(codes, self.confusion):
            lines.append(code + "," + ",".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse_csv(text: str) -> dict:
        """Rows of :meth:`to_csv` keyed by their first cell."""
        out = {}
        for line in text.strip().splitlines()[1:]:
            cells = line.split(",")
            out[cells[0]] = [float(c) if c else None for c in cells[1:]]
        return out


def evaluate(ens, test: SampleTable) -> EvalReport:
    """Argmax predictions of ``ens`` scored against ``test`` labels.

    Rows and columns of the confusion matrix follow class id order over the
    union of model and test classes.  Classes without test support get
    F1 = 0, are flagged, and stay out of the macro average.
    """
    if len(test) == 0:
        raise ValueError("test table is empty")
    if not test.labeled.all():
        raise ValueError("test table contains unlabeled rows")
    pred = np.asarray(ens.predict(test.X))
    return evaluate_predictions(test.labels, pred, ens.classes)


def evaluate_predictions(truth, pred, classes=()) -> EvalReport:
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.size == 0:
        raise ValueError("nothing to evaluate")
    labels = sorted(set(int(c) for c in classes) | set(truth.tolist()) | set(pred.tolist()))
    lut = {c: i for i, c in enumerate(labels)}
    k = len(labels)
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (np.array([lut[v] for v in truth]), np.array([lut[v] for v in pred])), 1)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    has = support > 0
    macro = tuple(float(v[has].mean()) for v in (precision, recall, f1))
    w = support / support.sum()
    weighted = tuple(float((v * w).sum()) for v in (precision, recall, f1))
    flagged = [c for c, s in zip(labels, support) if s == 0]
    return EvalReport(labels, precision, recall, f1, support, float(tp.sum() / truth.size),
                      macro, weighted, cm, flagged)


# -- persistence ------------------------------------------------------------------------

def _pack(obj, arrays: dict):
    """Split nested state into JSON-able structure plus named arrays."""
    if isinstance(obj, dict):
        return {k: _pack(v, arrays) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_pack(v, arrays) for v in obj]
    if isinstance(obj, np.ndarray):
        key = f"a{len(arrays)}"
        arrays[key] = obj
        return {"__nd__": key}
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _unpack(obj, arrays):
    if isinstance(obj, dict):
        if set(obj) == {"__nd__"}:
            return arrays[obj["__nd__"]]
        return {k: _unpack(v, arrays) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_unpack(v, arrays) for v in obj]
    return obj


def _bag_state(bag: BaggedModel) -> dict:
    return {
        "family": bag.spec.family, "hyperparameters": bag.spec.hyperparameters,
        "seed": bag.spec.seed, "name": bag.spec.name, "layer": bag.layer,
        "folds": bag.folds, "oof": bag.oof, "warnings": bag.warnings,
        "constant": [bool(c) for c in bag.constant],
        "models": [{"family": m.family, "state": m.state()} for m in bag.fold_models],
    }


def _bag_from_state(st: dict, classes) -> BaggedModel:
    spec = LearnerSpec(st["family"], dict(st["hyperparameters"]), int(st["seed"]), st["name"])
    models = [model_from_state(m["family"], m["state"]) for m in st["models"]]
    return BaggedModel(spec, list(classes), models, np.asarray(st["folds"]),
                       np.asarray(st["oof"]), list(st["warnings"]), list(st["constant"]),
                       int(st["layer"]))


def save_ensemble(ens: StackEnsemble, path) -> Path:
    """Write the versioned ``FVEN`` container: magic, version, JSON header, npz payload."""
    arrays: dict = {}
    meta = _pack({
        "schema": {"names": list(ens.schema.names), "units": list(ens.schema.units)},
        "classes": [FuelClass(c).code for c in ens.classes],
        "l1": [_bag_state(b) for b in ens.l1],
        "l2": [_bag_state(b) for b in ens.l2],
        "l3_weights": ens.l3_weights,
        "val_acc": ens.val_acc, "test_acc": ens.test_acc, "log": ens.log,
    }, arrays)
    header = json.dumps(meta, sort_keys=True).encode()
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(FVEN_MAGIC)
        fh.write(struct.pack("<HQ", FVEN_VERSION, len(header)))
        fh.write(header)
        fh.write(buf.getvalue())
    return path


def load_ensemble(path) -> StackEnsemble:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != FVEN_MAGIC:
        raise ValueError(f"{path}: not an FVEN model file")
    version, hlen = struct.unpack_from("<HQ", raw, 4)
    if version != FVEN_VERSION:
        raise ValueError(f"{path}: unsupported FVEN version {version}")
    start = 4 + struct.calcsize("<HQ")
    meta = json.loads(raw[start:start + hlen])
    with np.load(io.BytesIO(raw[start + hlen:]), allow_pickle=False) as npz:
        arrays = {k: npz[k] for k in npz.files}
    meta = _unpack(meta, arrays)
    schema = FeatureSchema(tuple(meta["schema"]["names"]), tuple(meta["schema"]["units"]))
    classes = [int(FuelClass.from_code(c)) for c in meta["classes"]]
    ens = StackEnsemble(schema, classes,
                        [_bag_from_state(b, classes) for b in meta["l1"]],
                        [_bag_from_state(b, classes) for b in meta["l2"]],
                        np.asarray(meta["l3_weights"]), dict(meta["val_acc"]),
                        dict(meta["test_acc"]), list(meta["log"]))
    return ens
