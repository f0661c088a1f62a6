"""Pseudo-label propagation around field plots by JM/SAM spectral similarity.

A pixel's spectral signature is summarised as a diagonal Gaussian over its
3x3 neighbourhood.  Two signatures are compared with the Jeffries-Matusita
distance of the Gaussians and the spectral angle between their means; the
two are folded into a single score in [0, 1] by :func:`combine_scores`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datamodel import FuelClass, Provenance, RasterStack, SampleTable, FeatureSchema

__all__ = [
    "VAR_FLOOR", "PlotDistribution", "SimilarityScore", "estimate_distribution",
    "jm_distance", "spectral_angle", "combine_scores", "jmsam_similarity",
    "propagate_labels", "PropagationResult", "window_statistics", "standardize_stack",
    "plot_table",
]

VAR_FLOOR = 1e-6
HALF_PI = math.pi / 2


@dataclass(frozen=True, eq=False)
class PlotDistribution:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).ravel()
        var = np.maximum(np.asarray(self.var, dtype=np.float64).ravel(), VAR_FLOOR)
        if mean.shape != var.shape:
            raise ValueError("mean and variance must have equal length")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    def __len__(self):
        return self.mean.size


@dataclass(frozen=True)
class SimilarityScore:
    value: float
    jm: float
    sam: float


def estimate_distribution(stack: RasterStack, center, window: int = 3,
                          names: Sequence[str] | None = None) -> PlotDistribution:
    """Mean and population variance over the valid pixels of a square window."""
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd integer")
    r, c = center
    h, w = stack.shape
    if not (0 <= r < h and 0 <= c < w):
        raise IndexError(f"center {center} outside {h}x{w} grid")
    half = window // 2
    arr = stack.as_array(names)[max(r - half, 0):r + half + 1, max(c - half, 0):c + half + 1]
    arr = arr.reshape(-1, arr.shape[-1])
    arr = arr[~np.isnan(arr).any(axis=1)]
    if arr.shape[0] == 0:
        raise ValueError(f"every pixel in the {window}x{window} window at {center} is nodata")
    return PlotDistribution(arr.mean(axis=0), arr.var(axis=0))


def _bhattacharyya(mu_a, var_a, mu_b, var_b):
    s = var_a + var_b
    term_mean = np.sum((mu_a - mu_b) ** 2 / (4.0 * s), axis=-1)
    term_var = 0.5 * np.sum(np.log(s / (2.0 * np.sqrt(var_a * var_b))), axis=-1)
    return term_mean + term_var


def _jm(mu_a, var_a, mu_b, var_b):
    b = _bhattacharyya(mu_a, var_a, mu_b, var_b)
    return -2.0 * np.expm1(-b)


def jm_distance(a: PlotDistribution, b: PlotDistribution) -> float:
    """Jeffries-Matusita distance ``2(1 - exp(-B))`` between diagonal Gaussians."""
    if len(a) != len(b):
        raise ValueError(f"dimension mismatch: {len(a)} vs {len(b)}")
    return float(_jm(a.mean, a.var, b.mean, b.var))


def _angle(a, b):
    # 2*atan2(|a^ - b^|, |a^ + b^|) stays accurate near 0 and pi, unlike arccos
    ua = a / np.linalg.norm(a, axis=-1, keepdims=True)
    ub = b / np.linalg.norm(b, axis=-1, keepdims=True)
    return 2.0 * np.arctan2(np.linalg.norm(ua - ub, axis=-1), np.linalg.norm(ua + ub, axis=-1))


def spectral_angle(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if not np.linalg.norm(a) > 0 or not np.linalg.norm(b) > 0:
        raise ValueError("spectral angle is undefined for a zero vector")
    return float(_angle(a, b))


def combine_scores(jm, sam):
    """Fold JM in [0, 2] and an angle in radians into a similarity in [0, 1]."""
    return (1.0 - np.asarray(jm) / 2.0) * (1.0 - np.minimum(sam, HALF_PI) / HALF_PI)


def jmsam_similarity(a: PlotDistribution, b: PlotDistribution) -> SimilarityScore:
    jm = jm_distance(a, b)
    sam = spectral_angle(a.mean, b.mean)
    return SimilarityScore(float(combine_scores(jm, sam)), jm, sam)


# -- raster-wide machinery --------------------------------------------------------

def standardize_stack(stack: RasterStack, names: Sequence[str] | None = None) -> np.ndarray:
    """Per-band z-scores over valid pixels; NaN at nodata.  Constant bands centre to 0."""
    arr = stack.as_array(names)
    mean = np.nanmean(arr, axis=(0, 1))
    std = np.nanstd(arr, axis=(0, 1))
    std = np.where(std > 0, std, 1.0)
    return (arr - mean) / std


def window_statistics(arr: np.ndarray, window: int = 3):
    """Window mean, floored variance and valid-count for every pixel of ``arr`` (H, W, D).

    Windows ignore cells with any NaN band.  Pixels whose window has no valid
    cell get NaN statistics.
    """
    h, w, d = arr.shape
    half = window // 2
    valid = ~np.isnan(arr).any(axis=-1)
    filled = np.where(valid[..., None], arr, 0.0)
    pad_v = np.pad(valid, half)
    pad_x = np.pad(filled, ((half, half), (half, half), (0, 0)))
    count = np.zeros((h, w))
    s1 = np.zeros((h, w, d))
    s2 = np.zeros((h, w, d))
    for dr in range(window):
        for dc in range(window):
            v = pad_v[dr:dr + h, dc:dc + w]
            x = pad_x[dr:dr + h, dc:dc + w]
            count += v
            s1 += x
            s2 += x * x
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = s1 / count[..., None]
        var = s2 / count[..., None] - mean * mean
    var = np.maximum(var, VAR_FLOOR)
    empty = count == 0
    mean[empty] = np.nan
    var[empty] = np.nan
    return mean, var, count.astype(int)


def _pairwise_angle(center_mean, means):
    """Angle per candidate; two zero vectors coincide, one zero vector is maximally far."""
    zc = not np.linalg.norm(center_mean) > 0
    zm = ~(np.linalg.norm(means, axis=-1) > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        ang = _angle(means, center_mean[None, :])
    ang = np.where(zm, HALF_PI, ang)
    if zc:
        ang = np.where(zm, 0.0, HALF_PI)
    return ang


@dataclass
class PropagationResult:
    table: SampleTable
    scores: np.ndarray       # winning score per pseudo-labelled row
    plot_index: np.ndarray   # index of the plot that won each row
    n_plots: int

    @property
    def growth_factor(self) -> float:
        """(plots + pseudo-labels) / plots."""
        return (self.n_plots + len(self.table)) / self.n_plots


def propagate_labels(stack: RasterStack, plots, radius_m: float = 1000.0,
                     threshold: float = 0.99, window: int = 3,
                     schema: FeatureSchema | None = None) -> PropagationResult:
    """Label in-radius pixels whose similarity to a plot strictly exceeds ``threshold``.

    ``plots`` is a sequence of ``((row, col), FuelClass)``.  Competing claims on
    a pixel go to the highest score, then the nearest plot centre, then the
    lowest plot index.  Plot centres themselves are never pseudo-labelled.
    Feature values of the emitted samples are the raw (unstandardised) bands.
    """
    plots = [((int(rc[0]), int(rc[1])), FuelClass(lab)) for rc, lab in plots]
    if not plots:
        raise ValueError("no plots to propagate from")
    names = list(schema.names) if schema is not None else stack.names
    schema = schema or FeatureSchema(tuple(names))
    h, w = stack.shape
    raw = stack.as_array(names)
    z = standardize_stack(stack, names)
    mean, var, count = window_statistics(z, window)
    pixel_ok = ~np.isnan(raw).any(axis=-1) & (count > 0)

    psx = abs(stack.geotransform.pixel_size_x)
    psy = abs(stack.geotransform.pixel_size_y)
    rr = int(math.floor(radius_m / psy))
    rc_ = int(math.floor(radius_m / psx))
    dr, dc = np.mgrid[-rr:rr + 1, -rc_:rc_ + 1]
    dist = np.hypot(dr * psy, dc * psx)
    in_disc = dist <= radius_m
    dr, dc, dist = dr[in_disc], dc[in_disc], dist[in_disc]

    centers = {p[0] for p in plots}
    best_score = np.full((h, w), -np.inf)
    best_dist = np.full((h, w), np.inf)
    best_plot = np.full((h, w), -1, dtype=np.int64)

    for k, ((r0, c0), _lab) in enumerate(plots):
        if not (0 <= r0 < h and 0 <= c0 < w):
            raise IndexError(f"plot {k} at {(r0, c0)} is outside the {h}x{w} grid")
        if count[r0, c0] == 0:
            continue
        rows, cols = r0 + dr, c0 + dc
        keep = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
        rows, cols, d = rows[keep], cols[keep], dist[keep]
        keep = pixel_ok[rows, cols]
        rows, cols, d = rows[keep], cols[keep], d[keep]
        if rows.size == 0:
            continue
        mu0, var0 = mean[r0, c0], var[r0, c0]
        mus, vars_ = mean[rows, cols], var[rows, cols]
        jm = _jm(mus, vars_, mu0[None, :], var0[None, :])
        sam = _pairwise_angle(mu0, mus)
        score = combine_scores(jm, sam)
        hit = score > threshold
        rows, cols, d, score = rows[hit], cols[hit], d[hit], score[hit]
        # sequential reduction in plot order keeps ties on the lowest index
        cur_s = best_score[rows, cols]
        cur_d = best_dist[rows, cols]
        better = (score > cur_s) | ((score == cur_s) & (d < cur_d))
        rows, cols = rows[better], cols[better]
        best_score[rows, cols] = score[better]
        best_dist[rows, cols] = d[better]
        best_plot[rows, cols] = k

    for (r0, c0) in centers:
        best_plot[r0, c0] = -1
    rows, cols = np.nonzero(best_plot >= 0)
    winners = best_plot[rows, cols]
    labels = np.array([int(plots[k][1]) for k in winners], dtype=np.int64)
    table = SampleTable.from_arrays(
        schema, raw[rows, cols], labels, Provenance.PSEUDO_LABEL,
        np.stack([rows, cols], axis=1) if rows.size else np.empty((0, 2), np.int64))
    return PropagationResult(table, best_score[rows, cols], winners, len(plots))


def plot_table(stack: RasterStack, plots, schema: FeatureSchema | None = None,
               provenance: Provenance = Provenance.FIELD_PLOT) -> SampleTable:
    """Samples read off the stack at plot pixels; plots over nodata are skipped."""
    names = list(schema.names) if schema is not None else stack.names
    schema = schema or FeatureSchema(tuple(names))
    raw = stack.as_array(names)
    rows, X, labels = [], [], []
    for (r, c), lab in plots:
        v = raw[int(r), int(c)]
        if np.isnan(v).any():
            continue
        rows.append((int(r), int(c)))
        X.append(v)
        labels.append(int(FuelClass(lab)))
    return SampleTable.from_arrays(schema, np.array(X).reshape(-1, len(schema)), labels,
                                   provenance, np.array(rows, dtype=np.int64).reshape(-1, 2))
