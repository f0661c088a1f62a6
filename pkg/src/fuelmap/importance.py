"""Permutation feature importance with t-based significance.

Each feature column of a held-out table is shuffled ``repeats`` times and the
drop in overall accuracy recorded.  The table must be disjoint from the
model's training data; nothing here can check that.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .datamodel import SampleTable

__all__ = ["ImportanceRecord", "permutation_importance", "importance_csv", "read_importance_csv",
           "DEFAULT_REPEATS"]

# Five repeats reproduce the bounds and p-values of the reference importance table.
DEFAULT_REPEATS = 5

COLUMNS = ("feature", "importance", "stddev", "p_value", "p99_high", "p99_low")


@dataclass(frozen=True)
class ImportanceRecord:
    feature: str
    importance: float
    stddev: float
    p_value: float
    p99_high: float
    p99_low: float
    n: int = DEFAULT_REPEATS

    @classmethod
    def from_drops(cls, feature: str, drops) -> "ImportanceRecord":
        drops = np.asarray(drops, dtype=np.float64)
        n = drops.size
        mean = float(drops.mean())
        sd = float(drops.std(ddof=1))
        se = sd / np.sqrt(n)
        if se > 0:
            p = float(stats.t.sf(mean / se, df=n - 1))
        else:
            p = 0.0 if mean > 0 else 1.0 if mean < 0 else 0.5
        half = float(stats.t.ppf(0.995, df=n - 1) * se)
        return cls(feature, mean, sd, p, mean + half, mean - half, n)


def _accuracy(model, X, y) -> float:
    return float(np.mean(np.asarray(model.predict(X)) == y))


def permutation_importance(model, table: SampleTable, repeats: int = DEFAULT_REPEATS,
                           seed: int = 0) -> list[ImportanceRecord]:
    """Accuracy drop per shuffled feature, most important first.

    ``model`` needs ``predict(X)`` returning class ids comparable with
    ``table.labels``.  The stddev is the sample standard deviation over
    repeats; the p-value is one-sided for importance > 0 with
    ``repeats - 1`` degrees of freedom.
    """
    if repeats < 2:
        raise ValueError("repeats must be >= 2")
    if len(table) == 0:
        raise ValueError("importance needs a non-empty table")
    X, y = table.X, table.labels
    base = _accuracy(model, X, y)
    rng = np.random.default_rng(seed)
    work = X.copy()
    records = []
    for j, name in enumerate(table.schema.names):
        drops = []
        for _ in range(repeats):
            work[:, j] = X[rng.permutation(len(table)), j]
            drops.append(base - _accuracy(model, work, y))
        work[:, j] = X[:, j]
        records.append(ImportanceRecord.from_drops(name, drops))
    order = sorted(range(len(records)), key=lambda i: (-records[i].importance, i))
    return [records[i] for i in order]


def importance_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in records:
        w.writerow([r.feature] + [f"{getattr(r, c):.6g}" for c in COLUMNS[1:]])
    return buf.getvalue()


def read_importance_csv(text: str) -> list[ImportanceRecord]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and tuple(rows[0].keys()) != COLUMNS:
        raise ValueError(f"expected columns {COLUMNS}")
    return [ImportanceRecord(r["feature"], *(float(r[c]) for c in COLUMNS[1:])) for r in rows]
