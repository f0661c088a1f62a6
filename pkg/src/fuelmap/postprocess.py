"""Pixel-wise fuel classification, non-burnable masking and map export."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .datamodel import (DimensionMismatchError, FuelClass, Geotransform, RasterBand, RasterStack,
                        read_fvr, write_fvr)
from .indices import INDICES, MissingBandError, compute_index

__all__ = [
    "FuelMap", "classify_raster", "apply_nonburnable_mask", "mask_index_bands",
    "export_fuel_map", "load_fuel_map", "class_color", "NODATA",
]

NODATA = -9999.0

_FAMILY_COLORS = {  # base hue per fuel family, shaded by model number
    "GR": (0xE6, 0xD2, 0x5A), "GS": (0xC8, 0xB4, 0x3C), "SH": (0x9B, 0x6E, 0x32),
    "TU": (0x32, 0x82, 0x3C), "TL": (0x1E, 0x5A, 0x28), "SB": (0x8C, 0x28, 0x28),
    "NB": (0x8C, 0x8C, 0x96),
}


def class_color(cls) -> str:
    code = FuelClass(cls).code
    r, g, b = _FAMILY_COLORS[code[:2]]
    shade = 1.0 - 0.07 * (int(cls) % 10)
    return "#{:02x}{:02x}{:02x}".format(*(int(round(v * shade)) for v in (r, g, b)))


@dataclass
class FuelMap:
    labels: RasterBand
    probabilities: RasterBand
    legend: dict = field(default_factory=dict)
    geotransform: Geotransform = field(default_factory=Geotransform)

    def __post_init__(self):
        if self.labels.values.shape != self.probabilities.values.shape:
            raise DimensionMismatchError("label and probability grids differ in shape")

    @property
    def shape(self):
        return self.labels.values.shape


def _legend(ids) -> dict:
    ids = sorted({int(v) for v in ids} | {int(FuelClass.NB)})
    return {i: FuelClass(i).code for i in ids}


def classify_raster(ens, features: RasterStack, tile: int = 256) -> FuelMap:
    """Argmax label and its probability for every pixel, tile by tile.

    Pixels with nodata in any schema band stay nodata in both outputs.
    Prediction is row-independent, so the tile size never changes results.
    """
    if tile < 1:
        raise ValueError("tile must be >= 1")
    names = list(ens.schema.names)
    missing = [n for n in names if n not in features]
    if missing:
        raise MissingBandError(f"stack lacks schema bands {missing}")
    h, w = features.shape
    labels = np.full((h, w), NODATA)
    prob = np.full((h, w), NODATA)
    classes = np.asarray(ens.classes, dtype=np.float64)
    arr = features.as_array(names)
    for r0 in range(0, h, tile):
        for c0 in range(0, w, tile):
            block = arr[r0:r0 + tile, c0:c0 + tile]
            ok = ~np.isnan(block).any(axis=-1)
            if not ok.any():
                continue
            P = ens.predict_proba(block[ok])
            k = np.argmax(P, axis=1)
            lab = labels[r0:r0 + tile, c0:c0 + tile]
            pr = prob[r0:r0 + tile, c0:c0 + tile]
            lab[ok] = classes[k]
            pr[ok] = P[np.arange(k.size), k]
    present = np.unique(labels[labels != NODATA])
    return FuelMap(RasterBand("fuel_class", labels, NODATA), RasterBand("probability", prob, NODATA),
                   _legend(present), features.geotransform)


def _grid(band, shape, name):
    vals = band.masked() if isinstance(band, RasterBand) else np.asarray(band, dtype=np.float64)
    if vals.shape != shape:
        raise DimensionMismatchError(f"{name} grid {vals.shape} does not match map {shape}")
    return vals


def apply_nonburnable_mask(fmap: FuelMap, ndvi, ndwi, bui, ndvi_thresh: float = 0.0,
                           ndwi_thresh: float = 0.5, bui_thresh: float = 0.5) -> FuelMap:
    """Relabel as NB every pixel with NDVI below, or NDWI or BUI above, its threshold.

    Inequalities are strict.  Probabilities are left as the classifier gave
    them; nodata pixels (in the map or in any index) are untouched.
    """
    shape = fmap.shape
    v, wi, bu = (_grid(b, shape, n) for b, n in ((ndvi, "NDVI"), (ndwi, "NDWI"), (bui, "BUI")))
    with np.errstate(invalid="ignore"):
        flip = (v < ndvi_thresh) | (wi > ndwi_thresh) | (bu > bui_thresh)
    flip &= fmap.labels.valid
    labels = np.where(flip, float(FuelClass.NB), fmap.labels.values)
    legend = dict(fmap.legend)
    legend[int(FuelClass.NB)] = FuelClass.NB.code
    return replace(fmap, labels=RasterBand(fmap.labels.name, labels, fmap.labels.nodata),
                   legend=dict(sorted(legend.items())))


def mask_index_bands(stack: RasterStack):
    """NDVI, NDWI and BUI from ``G``/``R``/``NIR``/``MIR`` bands (an ``NDVI`` band wins)."""
    def need(*names):
        for n in names:
            if n not in stack:
                raise MissingBandError(f"mask needs band {n!r}; stack has {stack.names}")
    need("G", "NIR", "MIR")
    if "NDVI" in stack:
        ndvi = stack["NDVI"]
    else:
        need("R")
        ndvi = compute_index(INDICES["NDVI"], stack["NIR"], stack["R"])
    ndwi = compute_index(INDICES["NDWI"], stack["G"], stack["NIR"])
    ndbi = compute_index(INDICES["NDBI"], stack["MIR"], stack["NIR"])
    bui = compute_index(INDICES["BUI"], ndvi, ndbi)
    return ndvi, ndwi, bui


def export_fuel_map(fmap: FuelMap, out_prefix) -> list[Path]:
    """Write ``<prefix>_labels.fvr``, ``<prefix>_prob.fvr`` and ``<prefix>_legend.csv``."""
    prefix = Path(out_prefix)
    paths = [Path(f"{prefix}_labels.fvr"), Path(f"{prefix}_prob.fvr"), Path(f"{prefix}_legend.csv")]
    write_fvr(fmap.labels, paths[0], fmap.geotransform)
    write_fvr(fmap.probabilities, paths[1], fmap.geotransform)
    with open(paths[2], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "code", "color"])
        for i, code in sorted(fmap.legend.items()):
            w.writerow([i, code, class_color(i)])
    return paths


def load_fuel_map(out_prefix) -> FuelMap:
    labels, gt = read_fvr(f"{out_prefix}_labels.fvr", "fuel_class")
    prob, _ = read_fvr(f"{out_prefix}_prob.fvr", "probability")
    with open(f"{out_prefix}_legend.csv", newline="") as fh:
        legend = {int(r["id"]): r["code"] for r in csv.DictReader(fh)}
    return FuelMap(labels, prob, legend, gt)
