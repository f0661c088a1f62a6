"""Spectral and polarimetric indices, DN -> gamma-naught, and feature-stack assembly.

Every formula is element-wise.  Scalars in, scalar out; arrays or
:class:`RasterBand` objects in, the same kind out.  Cells where an input is
nodata or a denominator vanishes come back as nodata (NaN for plain arrays
and scalars) instead of +-inf.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .datamodel import FeatureSchema, RasterBand, RasterStack

__all__ = [
    "IndexDefinition", "INDICES", "dn_to_gamma_naught", "to_db", "from_db",
    "compute_index", "build_feature_stack", "MissingBandError",
]


class MissingBandError(KeyError):
    def __str__(self):
        return str(self.args[0])


def _ratio(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.divide(num, den)
    return np.where(den == 0, np.nan, out)


def _nd(a, b):
    return _ratio(a - b, a + b)


@dataclass(frozen=True)
class IndexDefinition:
    name: str
    inputs: tuple[str, ...]
    formula: Callable[..., np.ndarray]
    bounded: bool = False  # output confined to [-1, 1] where defined

    def __call__(self, *args):
        return compute_index(self, *args)


INDICES: dict[str, IndexDefinition] = {d.name: d for d in (
    IndexDefinition("NDVI", ("NIR", "R"), _nd, bounded=True),
    IndexDefinition("SR1", ("VV", "VH"), lambda vv, vh: _ratio(vh, vv)),
    IndexDefinition("SR2", ("VV", "VH"), lambda vv, vh: _ratio(vv, vh)),
    # squared dB magnitudes, taken literally
    IndexDefinition("PR", ("VV_dB", "VH_dB"), lambda vv, vh: _ratio(vv * vv, vh * vh)),
    IndexDefinition("SPAN", ("VV", "VH"), lambda vv, vh: 0.5 * (vv * vv + vh * vh)),
    IndexDefinition("DI", ("VV", "VH"), lambda vv, vh: 0.5 * (vv * vv - vh * vh)),
    IndexDefinition("RVI", ("VV", "VH"), lambda vv, vh: _ratio(4.0 * vh, vv + vh)),
    IndexDefinition("C_NPDI", ("VV", "VH"), _nd, bounded=True),
    IndexDefinition("L_NPDI", ("HH", "HV"), _nd, bounded=True),
    IndexDefinition("ESPRIT", ("HH", "HV"), lambda hh, hv: 0.5 * (hh + hv)),
    IndexDefinition("L_DIFF", ("HH", "HV"), lambda hh, hv: hh - hv),
    IndexDefinition("C_RATIO", ("HH", "HV"), lambda hh, hv: _ratio(hh, hv)),
    IndexDefinition("NDWI", ("G", "NIR"), _nd, bounded=True),
    IndexDefinition("NDBI", ("MIR", "NIR"), _nd, bounded=True),
    IndexDefinition("BUI", ("NDVI", "NDBI"), lambda ndvi, ndbi: ndvi - ndbi),
)}


def _is_scalar(x) -> bool:
    return np.ndim(x) == 0 and not isinstance(x, RasterBand)


def dn_to_gamma_naught(dn):
    """Convert PALSAR digital numbers to gamma-naught backscatter in dB.

    ``10 * log10(dn**2) - 83``.  A non-positive scalar raises ``ValueError``;
    in arrays and bands such cells become nodata.
    """
    if isinstance(dn, RasterBand):
        out = dn_to_gamma_naught(dn.masked())
        return RasterBand.from_masked(dn.name, out, dn.nodata)
    if _is_scalar(dn):
        dn = float(dn)
        if not dn > 0:
            raise ValueError(f"digital number must be positive, got {dn}")
        return 10.0 * math.log10(dn * dn) - 83.0
    dn = np.asarray(dn, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 10.0 * np.log10(dn * dn) - 83.0
    return np.where(dn > 0, out, np.nan)


def to_db(power):
    power = np.asarray(power, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 10.0 * np.log10(power)
    return np.where(power > 0, out, np.nan)


def from_db(db):
    return np.power(10.0, np.asarray(db, dtype=np.float64) / 10.0)


def compute_index(defn: IndexDefinition | str, *inputs, name: str | None = None):
    """Evaluate one index on scalars, arrays or co-registered bands."""
    if isinstance(defn, str):
        try:
            defn = INDICES[defn.upper()]
        except KeyError:
            raise KeyError(f"unknown index {defn!r}; known: {sorted(INDICES)}") from None
    if len(inputs) != len(defn.inputs):
        raise TypeError(f"{defn.name} takes {len(defn.inputs)} inputs "
                        f"({', '.join(defn.inputs)}), got {len(inputs)}")
    bands = [b for b in inputs if isinstance(b, RasterBand)]
    if bands:
        shape = bands[0].values.shape
        for b in bands:
            if b.values.shape != shape:
                raise ValueError(f"{defn.name}: band {b.name!r} has shape {b.values.shape}, "
                                 f"expected {shape}")
        arrays = [b.masked() if isinstance(b, RasterBand) else np.asarray(b, np.float64)
                  for b in inputs]
        out = np.asarray(defn.formula(*arrays), dtype=np.float64)
        return RasterBand.from_masked(name or defn.name, out, bands[0].nodata)
    if all(_is_scalar(x) for x in inputs):
        with np.errstate(all="ignore"):
            val = float(defn.formula(*(np.float64(x) for x in inputs)))
        return val if math.isfinite(val) else math.nan
    arrays = [np.asarray(x, dtype=np.float64) for x in inputs]
    with np.errstate(all="ignore"):
        out = np.asarray(defn.formula(*arrays), dtype=np.float64)
    return np.where(np.isfinite(out), out, np.nan)


# -- feature stack ----------------------------------------------------------------

def _sar_linear(stack: RasterStack, pol: str, feature: str) -> np.ndarray:
    """Linear backscatter for a polarisation; PALSAR may arrive as digital numbers."""
    if pol in stack:
        return stack[pol].masked()
    if f"{pol}_DN" in stack:
        return from_db(dn_to_gamma_naught(stack[f"{pol}_DN"].masked()))
    raise MissingBandError(f"feature {feature!r} needs band {pol!r} (or {pol + '_DN'!r}), "
                           f"not present in stack {stack.names}")


def _sar_db(stack: RasterStack, pol: str, feature: str) -> np.ndarray:
    if f"{pol}_DN" in stack and pol not in stack:
        return dn_to_gamma_naught(stack[f"{pol}_DN"].masked())
    return to_db(_sar_linear(stack, pol, feature))


def _idx(name: str, *pols: str):
    def recipe(stack, feature):
        return compute_index(INDICES[name], *(_sar_linear(stack, p, feature) for p in pols))
    return recipe


def _pr(stack, feature):
    return compute_index(INDICES["PR"], _sar_db(stack, "VV", feature), _sar_db(stack, "VH", feature))


_RECIPES: Mapping[str, Callable[[RasterStack, str], np.ndarray]] = {
    "S1_VV": lambda s, f: _sar_db(s, "VV", f),
    "S1_VH": lambda s, f: _sar_db(s, "VH", f),
    "PL_HH": lambda s, f: _sar_db(s, "HH", f),
    "PL_HV": lambda s, f: _sar_db(s, "HV", f),
    "S1_SPAN": _idx("SPAN", "VV", "VH"),
    "S1_D1": _idx("DI", "VV", "VH"),
    "S1_VHVV": _idx("SR1", "VV", "VH"),
    "S1_VVVH": _idx("SR2", "VV", "VH"),
    "S1_RVI": _idx("RVI", "VV", "VH"),
    "S1_NPDI": _idx("C_NPDI", "VV", "VH"),
    "S1_PRatio": _pr,
    "PL_ESPRIT": _idx("ESPRIT", "HH", "HV"),
    "PL_DIFF": _idx("L_DIFF", "HH", "HV"),
    "PL_Ratio": _idx("C_RATIO", "HH", "HV"),
    "PL_NPDI": _idx("L_NPDI", "HH", "HV"),
}

_DOMAIN = {"S1_VV": "dB", "S1_VH": "dB", "PL_HH": "dB", "PL_HV": "dB"}


def build_feature_stack(stack: RasterStack, schema: FeatureSchema) -> RasterStack:
    """One band per schema feature, computed from raw bands where needed.

    A band already named like the feature is taken as-is (NDVI composites,
    terrain).  SAR-derived features come from ``VV``/``VH`` (linear power) and
    ``HH``/``HV`` (linear) or ``HH_DN``/``HV_DN`` (PALSAR digital numbers).
    """
    out, domains = [], {}
    nodata = next(iter(stack.bands.values())).nodata
    for feature in schema.names:
        if feature in stack:
            band = stack[feature]
            out.append(RasterBand(feature, band.values, band.nodata))
            domains[feature] = stack.domains.get(feature, "ingested")
            continue
        recipe = _RECIPES.get(feature)
        if recipe is None:
            raise MissingBandError(f"feature {feature!r} has no band in the stack "
                                   f"and no derivation recipe")
        values = np.asarray(recipe(stack, feature), dtype=np.float64)
        out.append(RasterBand.from_masked(feature, values, nodata))
        domains[feature] = _DOMAIN.get(feature, "linear")
    return RasterStack.from_bands(out, stack.geotransform, domains)
