"""Base learner families.

Every model is fitted on integer class indices ``0..n_classes-1`` and returns
an ``(n, n_classes)`` probability matrix whose rows sum to one.  Prediction
is row-independent: a batch gives bit-identical rows to one-at-a-time calls,
which is what makes tiled raster classification reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tree import Tree, build_tree

__all__ = [
    "FAMILIES", "LearnerSpec", "ConstantModel", "DecisionTreeModel", "ForestModel",
    "GradientBoostedTrees", "KNNModel", "MLPModel", "make_model", "model_from_state",
    "rowwise_matmul",
]


def rowwise_matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``A @ B`` accumulated column by column so each output row is batch-independent."""
    out = np.zeros((A.shape[0], B.shape[1]))
    for j in range(A.shape[1]):
        out += A[:, j, None] * B[j]
    return out


def _normalise(P: np.ndarray) -> np.ndarray:
    return P / P.sum(axis=1, keepdims=True)


class _Scaler:
    def __init__(self, mean=None, std=None):
        self.mean, self.std = mean, std

    def fit(self, X):
        self.mean = X.mean(axis=0)
        std = X.std(axis=0)
        self.std = np.where(std > 0, std, 1.0)
        return self

    def __call__(self, X):
        return (X - self.mean) / self.std


class ConstantModel:
    family = "constant"

    def __init__(self, n_classes: int, class_index: int = 0):
        self.n_classes = n_classes
        self.class_index = class_index

    def fit(self, X, y):
        self.class_index = int(y[0])
        return self

    def predict_proba(self, X):
        P = np.zeros((np.asarray(X).shape[0], self.n_classes))
        P[:, self.class_index] = 1.0
        return P

    def state(self):
        return {"n_classes": self.n_classes, "class_index": self.class_index}

    @classmethod
    def from_state(cls, st):
        return cls(int(st["n_classes"]), int(st["class_index"]))


class DecisionTreeModel:
    family = "decision_tree"

    def __init__(self, n_classes, seed=0, criterion="gini", max_depth=None, min_samples_leaf=1):
        self.n_classes = n_classes
        self.seed = seed
        self.criterion = criterion
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.tree: Tree | None = None

    def fit(self, X, y):
        self.tree = build_tree(X, y, n_classes=self.n_classes, criterion=self.criterion,
                               max_depth=self.max_depth, min_samples_leaf=self.min_samples_leaf,
                               rng=np.random.default_rng(self.seed))
        return self

    def predict_proba(self, X):
        return _normalise(self.tree.predict_value(X))

    def state(self):
        return {"n_classes": self.n_classes, "tree": self.tree.state()}

    @classmethod
    def from_state(cls, st):
        m = cls(int(st["n_classes"]))
        m.tree = Tree.from_state(st["tree"])
        return m


class ForestModel:
    """Bagged random forest or (unbootstrapped) extremely randomised trees."""

    def __init__(self, n_classes, seed=0, n_trees=50, criterion="gini", extra=False,
                 max_features="sqrt", max_depth=None, min_samples_leaf=1, bootstrap=None):
        self.n_classes = n_classes
        self.seed = seed
        self.n_trees = n_trees
        self.criterion = criterion
        self.extra = extra
        self.max_features = max_features
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.bootstrap = (not extra) if bootstrap is None else bootstrap
        self.trees: list[Tree] = []

    @property
    def family(self):
        return f"{'extra_trees' if self.extra else 'random_forest'}_{self.criterion}"

    def fit(self, X, y):
        rng = np.random.default_rng(self.seed)
        n = X.shape[0]
        self.trees = []
        for _ in range(self.n_trees):
            idx = rng.integers(0, n, n) if self.bootstrap else None
            self.trees.append(build_tree(
                X, y, n_classes=self.n_classes, criterion=self.criterion,
                max_depth=self.max_depth, min_samples_leaf=self.min_samples_leaf,
                max_features=self.max_features, splitter="random" if self.extra else "best",
                sample_idx=idx, rng=rng))
        return self

    def predict_proba(self, X):
        P = np.zeros((np.asarray(X).shape[0], self.n_classes))
        for t in self.trees:
            P += t.predict_value(X)
        return _normalise(P / len(self.trees))

    def state(self):
        return {"n_classes": self.n_classes, "criterion": self.criterion, "extra": int(self.extra),
                "trees": [t.state() for t in self.trees]}

    @classmethod
    def from_state(cls, st):
        m = cls(int(st["n_classes"]), criterion=str(st["criterion"]), extra=bool(int(st["extra"])))
        m.trees = [Tree.from_state(t) for t in st["trees"]]
        m.n_trees = len(m.trees)
        return m


def _sigmoid(F):
    return 0.5 * (1.0 + np.tanh(0.5 * F))


class GradientBoostedTrees:
    """One-vs-rest logistic boosting with Newton-step leaf values."""

    family = "gradient_boosted_trees"

    def __init__(self, n_classes, seed=0, n_trees=100, max_depth=4, learning_rate=0.1,
                 min_samples_leaf=1, max_features=None):
        self.n_classes = n_classes
        self.seed = seed
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.init = np.zeros(n_classes)
        self.present = np.zeros(n_classes, dtype=bool)
        self.trees: list[list[Tree]] = [[] for _ in range(n_classes)]

    def fit(self, X, y):
        rng = np.random.default_rng(self.seed)
        n = X.shape[0]
        counts = np.bincount(y, minlength=self.n_classes)
        self.present = counts > 0
        self.trees = [[] for _ in range(self.n_classes)]
        order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
        for k in np.flatnonzero(self.present):
            target = (y == k).astype(np.float64)
            prior = np.clip(counts[k] / n, 1e-6, 1 - 1e-6)
            self.init[k] = np.log(prior / (1 - prior))
            F = np.full(n, self.init[k])
            for _ in range(self.n_trees):
                p = _sigmoid(F)
                resid = target - p
                if np.abs(resid).max() < 1e-12:
                    break
                tree = build_tree(X, resid, criterion="mse", max_depth=self.max_depth,
                                  min_samples_leaf=self.min_samples_leaf,
                                  max_features=self.max_features, rng=rng, order=order)
                leaves = tree.apply(X)
                num = np.bincount(leaves, weights=resid, minlength=tree.n_nodes)
                den = np.bincount(leaves, weights=p * (1 - p), minlength=tree.n_nodes)
                tree.value = (self.learning_rate * num / np.maximum(den, 1e-12))[:, None]
                F = F + tree.value[leaves, 0]
                self.trees[k].append(tree)
        return self

    def decision_function(self, X):
        X = np.asarray(X, dtype=np.float64)
        F = np.full((X.shape[0], self.n_classes), -np.inf)
        for k in np.flatnonzero(self.present):
            f = np.full(X.shape[0], self.init[k])
            for t in self.trees[k]:
                f = f + t.predict_value(X)[:, 0]
            F[:, k] = f
        return F

    def predict_proba(self, X):
        F = self.decision_function(X)
        P = np.where(np.isfinite(F), _sigmoid(np.where(np.isfinite(F), F, 0.0)), 0.0)
        return _normalise(P)

    def state(self):
        return {"n_classes": self.n_classes, "init": self.init, "present": self.present.astype(np.int8),
                "trees": [[t.state() for t in ts] for ts in self.trees]}

    @classmethod
    def from_state(cls, st):
        m = cls(int(st["n_classes"]))
        m.init = np.asarray(st["init"], dtype=np.float64)
        m.present = np.asarray(st["present"]).astype(bool)
        m.trees = [[Tree.from_state(t) for t in ts] for ts in st["trees"]]
        return m


class KNNModel:
    """Brute-force k nearest neighbours on standardised features."""

    def __init__(self, n_classes, seed=0, k=5, weights="uniform", chunk_elems=1 << 22):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.n_classes = n_classes
        self.k = k
        self.weights = weights
        self.chunk_elems = chunk_elems
        self.scaler = _Scaler()
        self.Z = None
        self.y = None

    @property
    def family(self):
        return f"knn_{self.weights}"

    def fit(self, X, y):
        self.scaler.fit(X)
        self.Z = self.scaler(X)
        self.y = np.asarray(y, dtype=np.int64)
        return self

    def kneighbors(self, X):
        """Indices and distances of the k nearest training rows (ties: lower index first)."""
        Q = self.scaler(np.asarray(X, dtype=np.float64))
        k = min(self.k, self.Z.shape[0])
        idx = np.empty((Q.shape[0], k), dtype=np.int64)
        dist = np.empty((Q.shape[0], k))
        Z = self.Z
        zz = np.einsum("ij,ij->i", Z, Z)
        step = max(1, self.chunk_elems // max(1, Z.shape[0]))
        for s in range(0, Q.shape[0], step):
            q = Q[s:s + step]
            qq = np.einsum("ij,ij->i", q, q)
            # expanded distances are fast but inexact; a margin well above their
            # rounding error keeps every true neighbour among the candidates
            approx = qq[:, None] - 2.0 * (q @ Z.T) + zz[None, :]
            tol = 1e-9 * (qq + zz.max()) + 1e-300
            kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
            rows, cols = np.nonzero(approx <= (kth + 2.0 * tol)[:, None])
            d2 = ((q[rows] - Z[cols]) ** 2).sum(axis=-1)
            order = np.lexsort((cols, d2, rows))
            starts = np.searchsorted(rows[order], np.arange(q.shape[0]))
            pick = order[starts[:, None] + np.arange(k)[None, :]]
            idx[s:s + step] = cols[pick]
            dist[s:s + step] = np.sqrt(d2[pick])
        return idx, dist

    def predict_proba(self, X):
        idx, dist = self.kneighbors(X)
        labels = self.y[idx]
        if self.weights == "distance":
            exact = dist == 0
            with np.errstate(divide="ignore"):
                w = np.where(exact.any(axis=1, keepdims=True), exact.astype(float), 1.0 / dist)
        else:
            w = np.ones_like(dist)
        P = np.zeros((idx.shape[0], self.n_classes))
        for j in range(idx.shape[1]):
            P[np.arange(idx.shape[0]), labels[:, j]] += w[:, j]
        return _normalise(P)

    def state(self):
        return {"n_classes": self.n_classes, "k": self.k, "weights": self.weights,
                "mean": self.scaler.mean, "std": self.scaler.std, "Z": self.Z, "y": self.y}

    @classmethod
    def from_state(cls, st):
        m = cls(int(st["n_classes"]), k=int(st["k"]), weights=str(st["weights"]))
        m.scaler = _Scaler(np.asarray(st["mean"]), np.asarray(st["std"]))
        m.Z = np.asarray(st["Z"], dtype=np.float64)
        m.y = np.asarray(st["y"], dtype=np.int64)
        return m


class MLPModel:
    """One hidden ReLU layer, softmax output, cross-entropy, plain mini-batch SGD."""

    family = "mlp"

    def __init__(self, n_classes, seed=0, hidden=64, epochs=100, batch_size=32,
                 learning_rate=0.05, weight_decay=0.0):
        self.n_classes = n_classes
        self.seed = seed
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.scaler = _Scaler()
        self.params: dict[str, np.ndarray] = {}

    def init_params(self, d, rng):
        h, k = self.hidden, self.n_classes
        return {"W1": rng.standard_normal((d, h)) * np.sqrt(2.0 / d), "b1": np.zeros(h),
                "W2": rng.standard_normal((h, k)) * np.sqrt(2.0 / h), "b2": np.zeros(k)}

    def loss_and_grad(self, params, Z, y):
        """Mean cross-entropy (plus L2 on weights) and its exact gradient."""
        n = Z.shape[0]
        a1 = Z @ params["W1"] + params["b1"]
        h1 = np.maximum(a1, 0.0)
        logits = h1 @ params["W2"] + params["b2"]
        logits = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        P = e / e.sum(axis=1, keepdims=True)
        loss = -np.mean(np.log(np.maximum(P[np.arange(n), y], 1e-300)))
        wd = self.weight_decay
        loss += 0.5 * wd * (np.sum(params["W1"] ** 2) + np.sum(params["W2"] ** 2))
        g = P.copy()
        g[np.arange(n), y] -= 1.0
        g /= n
        grads = {"W2": h1.T @ g + wd * params["W2"], "b2": g.sum(axis=0)}
        gh = (g @ params["W2"].T) * (a1 > 0)
        grads["W1"] = Z.T @ gh + wd * params["W1"]
        grads["b1"] = gh.sum(axis=0)
        return loss, grads

    def fit(self, X, y):
        rng = np.random.default_rng(self.seed)
        Z = self.scaler.fit(X)(X)
        y = np.asarray(y, dtype=np.int64)
        self.params = self.init_params(Z.shape[1], rng)
        n = Z.shape[0]
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for s in range(0, n, self.batch_size):
                b = order[s:s + self.batch_size]
                _, grads = self.loss_and_grad(self.params, Z[b], y[b])
                for key in self.params:
                    self.params[key] -= self.learning_rate * grads[key]
        return self

    def predict_proba(self, X):
        Z = self.scaler(np.asarray(X, dtype=np.float64))
        p = self.params
        h1 = np.maximum(rowwise_matmul(Z, p["W1"]) + p["b1"], 0.0)
        logits = rowwise_matmul(h1, p["W2"]) + p["b2"]
        logits = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    def state(self):
        return {"n_classes": self.n_classes, "hidden": self.hidden, "mean": self.scaler.mean,
                "std": self.scaler.std, **self.params}

    @classmethod
    def from_state(cls, st):
        m = cls(int(st["n_classes"]), hidden=int(st["hidden"]))
        m.scaler = _Scaler(np.asarray(st["mean"]), np.asarray(st["std"]))
        m.params = {k: np.asarray(st[k], dtype=np.float64) for k in ("W1", "b1", "W2", "b2")}
        return m


# -- registry -------------------------------------------------------------------------

FAMILIES = (
    "decision_tree", "random_forest_gini", "random_forest_entropy", "extra_trees_gini",
    "extra_trees_entropy", "gradient_boosted_trees", "knn_uniform", "knn_distance", "mlp",
)

_DEFAULTS = {
    "decision_tree": {"max_depth": None, "min_samples_leaf": 1},
    "random_forest_gini": {"n_trees": 50, "max_depth": None, "min_samples_leaf": 1},
    "random_forest_entropy": {"n_trees": 50, "max_depth": None, "min_samples_leaf": 1},
    "extra_trees_gini": {"n_trees": 50, "max_depth": None, "min_samples_leaf": 1},
    "extra_trees_entropy": {"n_trees": 50, "max_depth": None, "min_samples_leaf": 1},
    "gradient_boosted_trees": {"n_trees": 100, "max_depth": 4, "learning_rate": 0.1,
                               "min_samples_leaf": 1},
    "knn_uniform": {"k": 5},
    "knn_distance": {"k": 5},
    "mlp": {"hidden": 64, "epochs": 100, "batch_size": 32, "learning_rate": 0.05,
            "weight_decay": 0.0},
}

_INT_PARAMS = {"n_trees", "max_depth", "min_samples_leaf", "k", "hidden", "epochs", "batch_size"}
_POSITIVE = {"n_trees", "k", "hidden", "epochs", "batch_size", "learning_rate", "min_samples_leaf",
             "max_depth"}


@dataclass(frozen=True)
class LearnerSpec:
    family: str
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown learner family {self.family!r}; choose from {FAMILIES}")
        params = dict(_DEFAULTS[self.family])
        unknown = set(self.hyperparameters) - set(params)
        if unknown:
            raise ValueError(f"{self.family}: unknown hyperparameters {sorted(unknown)}")
        params.update(self.hyperparameters)
        for key, val in params.items():
            if val is None:
                continue
            if key in _INT_PARAMS:
                if float(val) != int(float(val)):
                    raise ValueError(f"{self.family}: {key} must be an integer, got {val}")
                val = int(float(val))
            else:
                val = float(val)
            if key in _POSITIVE and not val > 0:
                raise ValueError(f"{self.family}: {key} must be > 0, got {val}")
            if key == "weight_decay" and val < 0:
                raise ValueError(f"{self.family}: weight_decay must be >= 0")
            params[key] = val
        object.__setattr__(self, "hyperparameters", params)

    @property
    def display_name(self) -> str:
        return self.name or _DISPLAY[self.family]

    def with_seed(self, seed: int) -> "LearnerSpec":
        return LearnerSpec(self.family, dict(self.hyperparameters), seed, self.name)


_DISPLAY = {
    "decision_tree": "DecisionTree", "random_forest_gini": "RandomForestGini",
    "random_forest_entropy": "RandomForestEntr", "extra_trees_gini": "ExtraTreesGini",
    "extra_trees_entropy": "ExtraTreesEntr", "gradient_boosted_trees": "GradientBoosting",
    "knn_uniform": "KNeighborsUnif", "knn_distance": "KNeighborsDist", "mlp": "NeuralNet",
}


def make_model(spec: LearnerSpec, n_classes: int):
    hp, seed = spec.hyperparameters, spec.seed
    fam = spec.family
    if fam == "decision_tree":
        return DecisionTreeModel(n_classes, seed, **hp)
    if fam.startswith(("random_forest", "extra_trees")):
        return ForestModel(n_classes, seed, criterion=fam.rsplit("_", 1)[1],
                           extra=fam.startswith("extra"), **hp)
    if fam == "gradient_boosted_trees":
        return GradientBoostedTrees(n_classes, seed, **hp)
    if fam.startswith("knn"):
        return KNNModel(n_classes, seed, weights=fam.split("_")[1], **hp)
    return MLPModel(n_classes, seed, **hp)


_BY_FAMILY = {
    "constant": ConstantModel, "decision_tree": DecisionTreeModel,
    "random_forest_gini": ForestModel, "random_forest_entropy": ForestModel,
    "extra_trees_gini": ForestModel, "extra_trees_entropy": ForestModel,
    "gradient_boosted_trees": GradientBoostedTrees, "knn_uniform": KNNModel,
    "knn_distance": KNNModel, "mlp": MLPModel,
}


def model_from_state(family: str, st: dict):
    return _BY_FAMILY[family].from_state(st)
