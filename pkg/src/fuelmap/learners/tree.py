"""CART trees on flat node arrays.

A fitted tree is five parallel arrays (feature, threshold, left, right,
value); prediction walks all rows down level by level, so it is vectorised
and row-independent.  Splits go left on ``x <= threshold``.
"""
from __future__ import annotations

import numpy as np

__all__ = ["Tree", "build_tree"]

LEAF = -1


class Tree:
    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)
        self.depth = _depth(self.left, self.right)

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row."""
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        feat = np.maximum(self.feature, 0)
        for _ in range(self.depth):
            internal = self.left[node] != LEAF
            if not internal.any():
                break
            go_left = X[rows, feat[node]] <= self.threshold[node]
            nxt = np.where(go_left, self.left[node], self.right[node])
            node = np.where(internal, nxt, node)
        return node

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def state(self) -> dict:
        return {"feature": self.feature, "threshold": self.threshold, "left": self.left,
                "right": self.right, "value": self.value}

    @classmethod
    def from_state(cls, st: dict) -> "Tree":
        return cls(st["feature"], st["threshold"], st["left"], st["right"], st["value"])


def _depth(left, right) -> int:
    if left.size == 0:
        return 0
    depth = np.zeros(left.size, dtype=np.int64)
    for i in range(left.size):  # children always follow parents
        if left[i] != LEAF:
            depth[left[i]] = depth[i] + 1
            depth[right[i]] = depth[i] + 1
    return int(depth.max())


def _max_features(spec, d: int) -> int:
    if spec is None or spec == "all":
        return d
    if spec == "sqrt":
        return max(1, int(np.sqrt(d)))
    if spec == "log2":
        return max(1, int(np.log2(d)))
    if isinstance(spec, float):
        return max(1, min(d, int(round(spec * d))))
    return max(1, min(d, int(spec)))


def _class_gain(cl, cr, nl, nr, criterion):
    """Negated weighted child impurity (larger is better), shapes (..., K) -> (...)."""
    if criterion == "gini":
        return (cl * cl).sum(-1) / nl + (cr * cr).sum(-1) / nr
    with np.errstate(divide="ignore", invalid="ignore"):
        tl = np.where(cl > 0, cl * np.log(cl), 0.0).sum(-1) - nl * np.log(nl)
        tr = np.where(cr > 0, cr * np.log(cr), 0.0).sum(-1) - nr * np.log(nr)
    return tl + tr


def _best_split_sorted(xs, ts, criterion, min_leaf):
    """Exhaustive threshold search over pre-sorted columns.

    ``xs`` is (m, f) with each column ascending; ``ts`` the matching (m, f, K)
    targets: one-hot rows for classification, ``[y, y^2]`` for regression.
    """
    m, f = xs.shape
    cum = np.cumsum(ts, axis=0)[:-1]                 # left stats for split after row i
    total = cum[-1] + ts[-1] if m > 1 else ts[0]
    nl = np.arange(1, m, dtype=np.float64)[:, None]
    nr = m - nl
    valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (nr >= min_leaf)
    if not valid.any():
        return None
    if criterion == "mse":
        sl, s2l = cum[..., 0], cum[..., 1]
        sr = total[..., 0] - sl
        s2r = total[..., 1] - s2l
        gain = -((s2l - sl * sl / nl) + (s2r - sr * sr / nr))
    else:
        gain = _class_gain(cum, total[None] - cum, nl, nr, criterion)
    gain = np.where(valid, gain, -np.inf)
    i, j = np.unravel_index(np.argmax(gain), gain.shape)
    thr = 0.5 * (xs[i, j] + xs[i + 1, j])
    if thr >= xs[i + 1, j]:  # midpoint rounding onto the upper value
        thr = xs[i, j]
    return j, thr, gain[i, j]


def _best_split_random(Xn, target, criterion, min_leaf, rng):
    """One uniform threshold per feature, best feature wins (extremely randomised trees)."""
    lo, hi = Xn.min(axis=0), Xn.max(axis=0)
    live = hi > lo
    if not live.any():
        return None
    thr = np.where(live, lo + rng.random(lo.size) * (hi - lo), lo)
    left = Xn <= thr                                   # (m, f)
    nl = left.sum(axis=0).astype(np.float64)
    m = Xn.shape[0]
    nr = m - nl
    valid = live & (nl >= min_leaf) & (nr >= min_leaf)
    if not valid.any():
        return None
    total = target.sum(axis=0)
    cl = left.T.astype(np.float64) @ target            # (f, K)
    cr = total[None] - cl
    nlc, nrc = np.maximum(nl, 1)[:, None], np.maximum(nr, 1)[:, None]
    if criterion == "mse":
        gain = -((cl[:, 1] - cl[:, 0] ** 2 / nlc[:, 0]) + (cr[:, 1] - cr[:, 0] ** 2 / nrc[:, 0]))
    else:
        gain = _class_gain(cl, cr, nlc[:, 0], nrc[:, 0], criterion)
    gain = np.where(valid, gain, -np.inf)
    j = int(np.argmax(gain))
    return j, float(thr[j]), gain[j]


def build_tree(X, y, *, n_classes: int | None = None, criterion: str = "gini",
               max_depth: int | None = None, min_samples_leaf: int = 1,
               min_samples_split: int = 2, max_features=None, splitter: str = "best",
               sample_idx=None, rng: np.random.Generator | None = None,
               presort: bool = True, order: np.ndarray | None = None) -> Tree:
    """Grow a tree.

    Classification (``gini``/``entropy``) stores class frequencies in each
    leaf; ``mse`` regression stores the leaf mean.  ``sample_idx`` lets
    bootstrap callers pass row indices (repeats allowed) instead of copies.
    ``order`` may carry a precomputed ``argsort(X, axis=0).T`` so repeated
    fits on the same matrix (boosting) skip the global sort.
    """
    rng = rng or np.random.default_rng(0)
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    idx0 = np.arange(n) if sample_idx is None else np.asarray(sample_idx)
    if criterion == "mse":
        y = np.asarray(y, dtype=np.float64)
        target = np.stack([y, y * y], axis=1)
    else:
        y = np.asarray(y, dtype=np.int64)
        k = int(n_classes if n_classes is not None else y.max() + 1)
        target = np.zeros((n, k))
        target[np.arange(n), y] = 1.0
    k_feat = _max_features(max_features, d)
    # one global argsort reused by large nodes; only valid without duplicate rows
    if not (presort and sample_idx is None and splitter == "best"):
        order = None
    elif order is None:
        order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    in_node = np.zeros(n, dtype=bool)
    max_depth = np.inf if max_depth is None else max_depth

    feature, threshold, left, right, value = [], [], [], [], []

    def leaf_value(t):
        if criterion == "mse":
            return np.array([t[:, 0].mean()])
        return t.sum(axis=0) / t.shape[0]

    def new_node(t):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(leaf_value(t))
        return len(feature) - 1

    stack = [(new_node(target[idx0]), idx0, 0)]
    while stack:
        node, idx, depth = stack.pop()
        m = idx.size
        t = target[idx]
        if depth >= max_depth or m < max(min_samples_split, 2 * min_samples_leaf):
            continue
        if criterion == "mse":
            if np.ptp(t[:, 0]) == 0:
                continue
        elif np.count_nonzero(t.sum(axis=0)) <= 1:
            continue
        feats = np.arange(d) if k_feat >= d else np.sort(rng.choice(d, k_feat, replace=False))
        if splitter == "random":
            found = _best_split_random(X[idx][:, feats], t, criterion, min_samples_leaf, rng)
        else:
            if order is not None and 8 * m >= n:
                in_node[idx] = True
                g = order if feats.size == d else order[feats]
                rows = g[in_node[g]].reshape(feats.size, m).T
                in_node[idx] = False
            else:
                sub = np.argsort(X[idx][:, feats], axis=0, kind="stable")
                rows = idx[sub]
            xs = X[rows, feats[None, :]]
            found = _best_split_sorted(xs, target[rows], criterion, min_samples_leaf)
        if found is None:
            continue
        j, thr, _ = found
        f = int(feats[j])
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        if li.size == 0 or ri.size == 0:
            continue
        feature[node], threshold[node] = f, float(thr)
        left[node] = new_node(target[li])
        right[node] = new_node(target[ri])
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(feature, threshold, left, right, np.array(value))
