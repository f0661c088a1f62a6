"""Minority-class synthesis (SMOTE, Gaussian copula) and synthetic-data fidelity scores."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import rankdata

from .datamodel import FuelClass, Provenance, SampleTable, SchemaMismatchError

__all__ = [
    "SynthesizerModel", "FidelityReport", "fit_smote", "smote_oversample",
    "fit_gaussian_copula", "sample_synthesizer", "ks_statistic",
    "column_shapes_score", "column_pair_trends_score", "correlation_diff_matrix",
    "proximity_level", "evaluate_fidelity", "balance_dataset", "select_synthesizer",
    "repair_correlation",
]

log = logging.getLogger(__name__)

SYNTHESIZERS = ("smote", "gaussian_copula")
COPULA_MIN_ROWS = 10


def _class_rng(seed: int, cls: int) -> np.random.Generator:
    # per-class streams so one class's draws never depend on which others exist
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(cls) + 1]))


@dataclass
class _CopulaState:
    sorted_values: np.ndarray   # (n, d) each column sorted ascending
    constant: np.ndarray        # bool (d,)
    corr: np.ndarray            # over non-constant columns
    n_rows: int


@dataclass
class SynthesizerModel:
    kind: str
    schema: object
    classes: dict = field(default_factory=dict)   # class id -> per-kind state
    k: int = 5
    scale: np.ndarray | None = None                # SMOTE distance scaling
    skipped: dict = field(default_factory=dict)    # class id -> reason

    def fitted_for(self, cls) -> bool:
        return int(cls) in self.classes


# -- SMOTE ---------------------------------------------------------------------------

def _standard_scale(X: np.ndarray) -> np.ndarray:
    std = X.std(axis=0) if len(X) else np.ones(X.shape[1])
    return np.where(std > 0, std, 1.0)


def fit_smote(table: SampleTable, k: int = 5) -> SynthesizerModel:
    if k < 1:
        raise ValueError("k must be >= 1")
    model = SynthesizerModel("smote", table.schema, k=k, scale=_standard_scale(table.X))
    for cls in np.unique(table.labels):
        model.classes[int(cls)] = table.X[table.labels == cls].copy()
    return model


def _smote_draw(points: np.ndarray, n: int, k: int, scale: np.ndarray,
                rng: np.random.Generator) -> np.ndarray:
    m = points.shape[0]
    k = min(k, m - 1)
    z = points / scale
    sq = (z * z).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)
    np.fill_diagonal(d2, np.inf)
    neighbours = np.argsort(d2, axis=1, kind="stable")[:, :k]
    base = rng.integers(0, m, size=n)
    pick = neighbours[base, rng.integers(0, k, size=n)]
    u = rng.random(n)[:, None]
    x = points[base]
    return x + u * (points[pick] - x)


def smote_oversample(table: SampleTable, target: Mapping, k: int = 5, seed: int = 0) -> SampleTable:
    """Generate ``target[cls]`` synthetic rows per class by neighbour interpolation.

    Neighbours are found in per-feature standardised space; interpolation
    happens in the original units so every synthetic row lies on a segment
    between two real rows of its class.
    """
    model = fit_smote(table, k)
    parts = [sample_synthesizer(model, cls, n, seed) for cls, n in sorted(
        ((int(c), int(n)) for c, n in target.items())) if n > 0]
    return SampleTable.concat(parts) if parts else SampleTable.empty(table.schema)


# -- Gaussian copula ------------------------------------------------------------------

def repair_correlation(corr: np.ndarray, floor: float = 1e-9) -> np.ndarray:
    """Clip eigenvalues at ``floor`` and renormalise to a unit diagonal."""
    corr = 0.5 * (corr + corr.T)
    vals, vecs = np.linalg.eigh(corr)
    vals = np.maximum(vals, floor)
    fixed = (vecs * vals) @ vecs.T
    d = np.sqrt(np.diag(fixed))
    fixed = fixed / np.outer(d, d)
    fixed = 0.5 * (fixed + fixed.T)
    np.fill_diagonal(fixed, 1.0)
    return fixed


def normal_scores(X: np.ndarray) -> np.ndarray:
    """Probit of midpoint empirical-CDF ranks, column by column."""
    n = X.shape[0]
    u = (rankdata(X, method="average", axis=0) - 0.5) / n
    return ndtri(u)


def _fit_copula_state(X: np.ndarray) -> _CopulaState:
    constant = np.all(X == X[0], axis=0)
    var_cols = ~constant
    if var_cols.sum() >= 2:
        z = normal_scores(X[:, var_cols])
        corr = repair_correlation(np.corrcoef(z, rowvar=False))
    else:
        corr = np.eye(int(var_cols.sum()))
    return _CopulaState(np.sort(X, axis=0), constant, corr, X.shape[0])


def fit_gaussian_copula(table: SampleTable, min_rows: int = COPULA_MIN_ROWS) -> SynthesizerModel:
    """One copula per class.  Classes with fewer than ``min_rows`` rows are skipped."""
    if len(table) < min_rows:
        raise ValueError(f"copula fitting needs at least {min_rows} rows, got {len(table)}")
    model = SynthesizerModel("gaussian_copula", table.schema)
    for cls in np.unique(table.labels):
        X = table.X[table.labels == cls]
        if X.shape[0] < min_rows:
            model.skipped[int(cls)] = f"{X.shape[0]} rows < {min_rows}"
            continue
        model.classes[int(cls)] = _fit_copula_state(X)
    return model


def _copula_draw(state: _CopulaState, n: int, rng: np.random.Generator) -> np.ndarray:
    d = state.constant.size
    out = np.empty((n, d))
    out[:, state.constant] = state.sorted_values[0, state.constant]
    var_cols = np.flatnonzero(~state.constant)
    if var_cols.size:
        vals, vecs = np.linalg.eigh(state.corr)
        root = vecs * np.sqrt(np.maximum(vals, 0.0))
        z = rng.standard_normal((n, var_cols.size)) @ root.T
        u = ndtr(z)
        pos = u * state.n_rows - 0.5
        grid = np.arange(state.n_rows, dtype=np.float64)
        for j, col in enumerate(var_cols):
            out[:, col] = np.interp(pos[:, j], grid, state.sorted_values[:, col])
    return out


def sample_synthesizer(model: SynthesizerModel, cls, n: int, seed: int = 0) -> SampleTable:
    cls_id = int(cls)
    if n < 0:
        raise ValueError("n must be >= 0")
    if not model.fitted_for(cls_id):
        name = FuelClass(cls_id).name if cls_id >= 0 else "unlabeled"
        raise KeyError(f"synthesizer has no fitted state for class {name}"
                       + (f" ({model.skipped[cls_id]})" if cls_id in model.skipped else ""))
    rng = _class_rng(seed, cls_id)
    state = model.classes[cls_id]
    if n == 0:
        X = np.empty((0, len(model.schema)))
    elif model.kind == "smote":
        if state.shape[0] < 2:
            raise ValueError(f"SMOTE needs >= 2 samples of class {FuelClass(cls_id).name}, "
                             f"got {state.shape[0]}")
        X = _smote_draw(state, n, model.k, model.scale, rng)
    else:
        X = _copula_draw(state, n, rng)
    return SampleTable.from_arrays(model.schema, X, [cls_id] * n, Provenance.SYNTHETIC)


# -- fidelity --------------------------------------------------------------------------

def ks_statistic(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample Kolmogorov-Smirnov sup distance between empirical CDFs."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def _check_pair(real: SampleTable, synth: SampleTable):
    if real.schema.names != synth.schema.names:
        raise SchemaMismatchError("real and synthetic tables have different schemas")
    if len(real) == 0 or len(synth) == 0:
        raise ValueError("fidelity metrics need non-empty tables")


def column_shapes_score(real: SampleTable, synth: SampleTable) -> float:
    _check_pair(real, synth)
    ks = [ks_statistic(real.X[:, j], synth.X[:, j]) for j in range(real.X.shape[1])]
    return float(np.mean([100.0 * (1.0 - v) for v in ks]))


def _pearson(X: np.ndarray) -> np.ndarray:
    """Pearson matrix; constant columns correlate 0 with everything but themselves."""
    d = X.shape[1]
    const = np.all(X == X[0], axis=0) if len(X) else np.ones(d, bool)
    corr = np.zeros((d, d))
    live = np.flatnonzero(~const)
    if live.size >= 2:
        corr[np.ix_(live, live)] = np.corrcoef(X[:, live], rowvar=False)
    np.fill_diagonal(corr, 1.0)
    return np.clip(corr, -1.0, 1.0), const


def column_pair_trends_score(real: SampleTable, synth: SampleTable, return_skipped: bool = False):
    _check_pair(real, synth)
    cr, const_r = _pearson(real.X)
    cs, const_s = _pearson(synth.X)
    usable = np.flatnonzero(~(const_r | const_s))
    skipped = [real.schema.names[j] for j in np.flatnonzero(const_r | const_s)]
    if usable.size < 2:
        raise ValueError("column pair trends need at least two non-constant columns")
    iu = np.triu_indices(usable.size, k=1)
    a = cr[np.ix_(usable, usable)][iu]
    b = cs[np.ix_(usable, usable)][iu]
    score = float(np.mean(100.0 * (1.0 - np.abs(a - b) / 2.0)))
    return (score, skipped) if return_skipped else score


def correlation_diff_matrix(real: SampleTable, synth: SampleTable) -> np.ndarray:
    """``corr(real) - corr(synth)`` with an exactly-zero diagonal."""
    _check_pair(real, synth)
    if real.X.shape[1] < 2:
        raise ValueError("need at least two columns")
    diff = _pearson(real.X)[0] - _pearson(synth.X)[0]
    np.fill_diagonal(diff, 0.0)
    return diff


def proximity_level(diff: np.ndarray) -> float:
    """Signed mean of the strictly upper-triangular entries."""
    diff = np.asarray(diff, dtype=np.float64)
    if diff.ndim != 2 or diff.shape[0] != diff.shape[1]:
        raise ValueError("proximity needs a square matrix")
    if diff.shape[0] < 2:
        raise ValueError("proximity needs at least one column pair")
    return float(np.mean(diff[np.triu_indices(diff.shape[0], k=1)]))


@dataclass
class FidelityReport:
    overall_quality: float
    column_shapes: float
    column_pair_trends: float
    proximity: float
    diff_matrix: np.ndarray
    names: tuple = ()
    model: str = ""

    def to_text(self) -> str:
        lines = [f"model={self.model}"] if self.model else []
        lines += [f"overall_quality={self.overall_quality!r}",
                  f"column_shapes={self.column_shapes!r}",
                  f"column_pair_trends={self.column_pair_trends!r}",
                  f"proximity={self.proximity!r}"]
        return "\n".join(lines) + "\n"

    def diff_csv(self) -> str:
        names = list(self.names) or [f"c{j}" for j in range(self.diff_matrix.shape[0])]
        rows = ["," + ",".join(names)]
        for name, row in zip(names, self.diff_matrix):
            rows.append(name + "," + ",".join(format(v, ".17g") for v in row))
        return "\n".join(rows) + "\n"

    @staticmethod
    def parse_text(text: str) -> dict:
        out = {}
        for line in text.splitlines():
            if "=" in line:
                k, _, v = line.partition("=")
                try:
                    out[k.strip()] = float(v)
                except ValueError:
                    out[k.strip()] = v.strip()
        return out


def evaluate_fidelity(real: SampleTable, synth: SampleTable, per_class: bool = False,
                      model: str = "") -> FidelityReport:
    """All four scores.  ``per_class`` averages scores over classes present in both."""
    if not per_class:
        shapes = column_shapes_score(real, synth)
        trends = column_pair_trends_score(real, synth)
        diff = correlation_diff_matrix(real, synth)
    else:
        common = sorted(set(real.class_ids()) & set(synth.class_ids()))
        if not common:
            raise ValueError("no class present in both tables")
        sub = [(real.subset(real.labels == c), synth.subset(synth.labels == c)) for c in common]
        shapes = float(np.mean([column_shapes_score(r, s) for r, s in sub]))
        trends = float(np.mean([column_pair_trends_score(r, s) for r, s in sub]))
        diff = np.mean([correlation_diff_matrix(r, s) for r, s in sub], axis=0)
    return FidelityReport((shapes + trends) / 2.0, shapes, trends, proximity_level(diff),
                          diff, real.schema.names, model)


# -- balancing ---------------------------------------------------------------------

def _targets(table: SampleTable, target) -> dict[int, int]:
    ids, counts = np.unique(table.labels[table.labels >= 0], return_counts=True)
    have = {int(i): int(c) for i, c in zip(ids, counts) if not FuelClass(int(i)).is_nonburnable}
    if not have:
        return {}
    if target is None:
        goal = {c: max(have.values()) for c in have}
    elif isinstance(target, Mapping):
        goal = {int(c): int(v) for c, v in target.items()}
    else:
        goal = {c: int(target) for c in have}
    return {c: max(goal.get(c, 0) - have.get(c, 0), 0) for c in have}


def balance_dataset(table: SampleTable, model_kind: str = "smote", seed: int = 0,
                    target=None, k: int = 5) -> SampleTable:
    """Top every class up to ``target`` rows (default: the majority count).

    Copula synthesis falls back to SMOTE for classes too small to fit a copula.
    Returns the original rows followed by the synthetic ones.
    """
    if model_kind not in SYNTHESIZERS:
        raise ValueError(f"unknown synthesizer {model_kind!r}; choose from {SYNTHESIZERS}")
    if np.any(table.labels < 0):
        raise ValueError("balancing needs a fully labeled table")
    need = _targets(table, target)
    if not any(need.values()):
        return table
    smote = fit_smote(table, k)
    copula = None
    if model_kind == "gaussian_copula" and len(table) >= COPULA_MIN_ROWS:
        copula = fit_gaussian_copula(table)
    parts = [table]
    for cls, n in sorted(need.items()):
        if n == 0:
            continue
        model = copula if copula is not None and copula.fitted_for(cls) else smote
        if model is smote and model_kind == "gaussian_copula":
            log.info("class %s: copula unavailable, using SMOTE", FuelClass(cls).name)
        parts.append(sample_synthesizer(model, cls, n, seed))
    return SampleTable.concat(parts)


def select_synthesizer(table: SampleTable, seed: int = 0, kinds: Sequence[str] = SYNTHESIZERS,
                       per_class: bool = False):
    """Balance with every synthesizer, score each, and pick the best.

    Ranking is by overall quality, then by proximity closest to zero.
    Returns ``(best_kind, {kind: FidelityReport}, {kind: balanced_table})``.
    """
    reports, tables = {}, {}
    for kind in kinds:
        balanced = balance_dataset(table, kind, seed)
        synth = balanced.subset(balanced.provenance == Provenance.SYNTHETIC.value)
        tables[kind] = balanced
        if len(synth) == 0:
            continue
        reports[kind] = evaluate_fidelity(table, synth, per_class=per_class, model=kind)
    if not reports:
        return kinds[0], reports, tables
    best = max(reports, key=lambda k: (reports[k].overall_quality, -abs(reports[k].proximity)))
    return best, reports, tables
