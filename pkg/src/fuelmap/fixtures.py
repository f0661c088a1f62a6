"""Deterministic synthetic landscapes for desk-scale pipeline runs.

The raster is a grid of square patches.  Every patch belongs to one fuel
class and draws its spectra as

    class mean + patch offset + 3x3 texture tile + faint noise

in a 14-band raw space (terrain, eight NDVI composites, four SAR
polarisations in dB).  SAR bands are written the way they would arrive:
linear ``VV``/``VH`` power and PALSAR digital numbers ``HH_DN``/``HV_DN``.
Each patch draws its own 3x3 texture tile and repeats it with period 3, so
every 3x3 window fully inside a patch sees the same mean and variance: the
pixels differ, but their neighbourhood statistics match under the JM/SAM
comparison, while windows from other patches do not.

Patch roles:

* plot patches carry one field plot at their centre; plot counts per class
  follow ``samples_per_class`` (one dominant class, the rest rare);
* validation and test patches are never near a plot; each of their pixels
  is an independent draw (its own offset), standing in for scattered survey
  plots, and together they give per-class balanced held-out tables;
* non-burnable patches (water, barren, built-up) get ambiguous spectra
  midway between the class means plus optical bands that trip exactly one
  family of the non-burnable mask;
* filler patches complete the grid with random classes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datamodel import (TRAINABLE_CLASSES, FeatureSchema, FuelClass, Geotransform, Provenance,
                        RasterBand, RasterStack, SampleTable, default_schema, write_raster_stack,
                        write_sample_table)
from .indices import build_feature_stack

__all__ = ["WorldSpec", "World", "generate_world", "write_world", "CLASS_ORDER", "RAW_BANDS",
           "NB_KINDS", "write_plots_csv", "read_plots_csv", "FIXTURE_ROSTER_L1", "FIXTURE_ROSTER_L2",
           "ACCEPTANCE_WORLD"]

NODATA = -9999.0

# Dominant class first, the way timber-understory dominates the plot record.
CLASS_ORDER = tuple(FuelClass[c] for c in (
    "TU1", "GR2", "SH5", "TL3", "GS2", "TL8", "SH2", "TU5", "GR1", "TL1", "SH7", "TL6",
))

RAW_BANDS = ("Elevation", *(f"NDVI_{k}" for k in range(1, 9)), "Slope",
             "VV_dB", "VH_dB", "HH_dB", "HV_dB")
_BASE = np.array([1500.0, *([0.45] * 8), 15.0, -10.0, -17.0, -9.0, -16.0])
_SCALE = np.array([250.0, *([0.06] * 8), 5.0, 1.5, 1.5, 1.5, 1.5])

# Optical reflectances (G, R, NIR, MIR).  Vegetation keeps NDVI > 0, NDWI < 0.5
# and BUI = NDVI - NDBI < 0.5; each planted kind breaks exactly one family.
_OPTICAL = {
    "vegetation": (0.08, 0.15, 0.30, 0.25),
    "water": (0.30, 0.04, 0.05, 0.045),
    "barren": (0.10, 0.25, 0.20, 0.22),
    "built_up": (0.10, 0.20, 0.25, 0.10),
}
NB_KINDS = ("water", "barren", "built_up")


@dataclass(frozen=True)
class WorldSpec:
    n_classes: int = 3
    samples_per_class: tuple = (150, 5, 5)   # 30:1 majority to minority
    feature_dim: int = 24
    separation: float = 4.0
    within_std: float = 1.0
    patch_size: int = 5
    test_patches_per_class: int = 10
    val_patches_per_class: int = 10
    nb_patches: int = 1                 # per non-burnable kind
    pixel_size: float = 30.0
    texture: float = 1.0                # pixel texture sd relative to within_std
    latent_dim: int | None = 3          # patch offsets vary along this many gradients
    class_spread: tuple | None = None   # per-class multiplier on within_std
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1:
            raise ValueError("a world needs at least one class")
        if self.n_classes > len(CLASS_ORDER):
            raise ValueError(f"at most {len(CLASS_ORDER)} classes are supported")
        if len(self.samples_per_class) != self.n_classes:
            raise ValueError("samples_per_class needs one count per class")
        if min(self.samples_per_class) < 1:
            raise ValueError("every class needs at least one plot")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be positive")
        if self.patch_size < 5 or self.patch_size % 2 == 0:
            raise ValueError("patch_size must be an odd integer >= 5")
        if self.class_spread is not None and len(self.class_spread) != self.n_classes:
            raise ValueError("class_spread needs one multiplier per class")
        if self.separation <= 0 or self.within_std <= 0:
            raise ValueError("separation and within_std must be positive")

    @property
    def classes(self) -> list[FuelClass]:
        return list(CLASS_ORDER[:self.n_classes])

    @property
    def n_plots(self) -> int:
        return int(sum(self.samples_per_class))

    @property
    def propagation_radius(self) -> float:
        """Covers a plot's whole patch and no further than its edge."""
        return (self.patch_size // 2) * self.pixel_size * np.sqrt(2.0) + 1e-6


@dataclass
class World:
    spec: WorldSpec
    stack: RasterStack            # raw bands, index inputs and nothing derived
    features: RasterStack         # the feature schema, derived from ``stack``
    plots: list                   # ((row, col), FuelClass)
    test: SampleTable
    val: SampleTable
    truth: RasterBand             # class id per pixel, NB on planted pixels
    planted: np.ndarray           # bool grid of non-burnable pixels
    patch_role: np.ndarray        # role per patch: plot / test / nb / filler
    schema: FeatureSchema = field(default_factory=default_schema)

    def __iter__(self):
        return iter((self.stack, self.plots, self.test))


def _texture_tile(rng, d):
    tile = rng.standard_normal((3, 3, d))
    tile -= tile.mean(axis=(0, 1))
    return tile / tile.std(axis=(0, 1))


def generate_world(spec: WorldSpec) -> World:
    rng = np.random.default_rng(spec.seed)
    realistic = spec.feature_dim == 24
    d = len(RAW_BANDS) if realistic else spec.feature_dim
    base = _BASE if realistic else np.zeros(d)
    scale = _SCALE if realistic else np.ones(d)
    k = spec.n_classes

    # class means at pairwise distance `separation` (in within-class sd units);
    # with a latent space at least as wide as the class count the means sit on
    # the gradients themselves, so classes overlap along them
    latent = d if spec.latent_dim is None else min(spec.latent_dim, d)
    basis, _ = np.linalg.qr(rng.standard_normal((d, d)))
    gradients = basis[:, :latent]
    if latent >= k:
        dirs = gradients[:, :k]
    elif k <= d:
        dirs = basis[:, :k]
    else:
        dirs = rng.standard_normal((d, k))
        dirs /= np.linalg.norm(dirs, axis=0)
    means = (spec.separation / np.sqrt(2.0)) * dirs.T
    centroid = means.mean(axis=0)

    held = {"val": spec.val_patches_per_class, "test": spec.test_patches_per_class}
    roles = ["plot"] * spec.n_plots
    patch_cls = [c for c, n in enumerate(spec.samples_per_class) for _ in range(n)]
    for role, n in held.items():
        roles += [role] * (n * k)
        patch_cls += [c for c in range(k) for _ in range(n)]
    nb_kind = [None] * len(roles) + [kind for kind in NB_KINDS for _ in range(spec.nb_patches)]
    roles += ["nb"] * (spec.nb_patches * len(NB_KINDS))
    patch_cls += [-1] * (spec.nb_patches * len(NB_KINDS))
    side = int(np.ceil(np.sqrt(len(roles))))
    fill = side * side - len(roles)
    roles += ["filler"] * fill
    nb_kind += [None] * fill
    patch_cls += list(rng.integers(0, k, fill))
    perm = rng.permutation(side * side)
    roles = np.array(roles, dtype=object)[perm]
    patch_cls = np.array(patch_cls)[perm]
    nb_kind = np.array(nb_kind, dtype=object)[perm]
    spread = np.ones(k) if spec.class_spread is None else np.asarray(spec.class_spread, float)

    p = spec.patch_size
    h = w = side * p
    raw = np.empty((h, w, d))
    optical = np.empty((h, w, 4))
    truth = np.empty((h, w))
    planted = np.zeros((h, w), dtype=bool)
    classes = spec.classes
    plots = []
    for i in range(side * side):
        r0, c0 = (i // side) * p, (i % side) * p
        if roles[i] in ("val", "test"):  # independent survey pixels, one draw each
            offset = (rng.standard_normal((p, p, latent)) @ gradients.T) * spec.within_std
        else:
            offset = gradients @ rng.standard_normal(latent) * spec.within_std
        if roles[i] != "nb":
            offset = offset * spread[patch_cls[i]]
        amp = spec.texture * spec.within_std
        noise = rng.standard_normal((p, p, d)) * 0.01 * amp
        if roles[i] == "nb":
            mu = centroid
            truth[r0:r0 + p, c0:c0 + p] = int(FuelClass.NB)
            planted[r0:r0 + p, c0:c0 + p] = True
            opt = _OPTICAL[nb_kind[i]]
        else:
            mu = means[patch_cls[i]]
            truth[r0:r0 + p, c0:c0 + p] = int(classes[patch_cls[i]])
            opt = _OPTICAL["vegetation"]
        if roles[i] in ("val", "test"):
            tex = rng.standard_normal((p, p, d))
        else:
            tiled = np.tile(_texture_tile(rng, d), (p // 3 + 2, p // 3 + 2, 1))
            tex = tiled[(r0 % 3):(r0 % 3) + p, (c0 % 3):(c0 % 3) + p]
        raw[r0:r0 + p, c0:c0 + p] = mu + offset + amp * tex + noise
        jitter = 1.0 + 0.02 * rng.uniform(-1, 1, (p, p, 4))
        optical[r0:r0 + p, c0:c0 + p] = np.asarray(opt) * jitter
        if roles[i] == "plot":
            plots.append(((r0 + p // 2, c0 + p // 2), classes[patch_cls[i]]))
    raw = base + scale * raw

    gt = Geotransform(0.0, 0.0, spec.pixel_size, spec.pixel_size)
    bands = []
    if realistic:
        named = dict(zip(RAW_BANDS, np.moveaxis(raw, -1, 0)))
        for name in RAW_BANDS[:10]:
            bands.append(RasterBand(name, named[name], NODATA))
        bands.append(RasterBand("VV", 10.0 ** (named["VV_dB"] / 10.0), NODATA))
        bands.append(RasterBand("VH", 10.0 ** (named["VH_dB"] / 10.0), NODATA))
        for pol in ("HH", "HV"):  # invert gamma0 = 10 log10(dn^2) - 83
            bands.append(RasterBand(f"{pol}_DN", np.sqrt(10.0 ** ((named[f"{pol}_dB"] + 83.0) / 10.0)),
                                    NODATA))
        schema = default_schema()
    else:
        names = tuple(f"F{j + 1}" for j in range(d))
        bands += [RasterBand(n, raw[..., j], NODATA) for j, n in enumerate(names)]
        schema = FeatureSchema(names)
    for j, name in enumerate(("G", "R", "NIR", "MIR")):
        bands.append(RasterBand(name, optical[..., j], NODATA))
    stack = RasterStack.from_bands(bands, gt)
    features = build_feature_stack(stack, schema)

    # held-out tables: every pixel of the validation / test patches
    feat = features.as_array(list(schema.names))

    def held_out(role):
        rows, cols = [], []
        for i in np.flatnonzero(roles == role):
            r0, c0 = (i // side) * p, (i % side) * p
            rr, cc = np.mgrid[r0:r0 + p, c0:c0 + p]
            rows.append(rr.ravel())
            cols.append(cc.ravel())
        if not rows:
            return SampleTable.empty(schema)
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        return SampleTable.from_arrays(schema, feat[rows, cols], truth[rows, cols].astype(np.int64),
                                       Provenance.FIELD_PLOT, np.stack([rows, cols], axis=1))

    plots.sort(key=lambda pl: pl[0])
    return World(spec, stack, features, plots, held_out("test"), held_out("val"),
                 RasterBand("truth", truth, NODATA), planted, roles.reshape(side, side), schema)


# The bundled imbalanced world: moderate separation, 30:1 class ratio.
ACCEPTANCE_WORLD = WorldSpec()


def write_plots_csv(plots, path) -> None:
    with open(path, "w") as fh:
        fh.write("row,col,label\n")
        for (r, c), lab in plots:
            fh.write(f"{r},{c},{FuelClass(lab).code}\n")


def read_plots_csv(path) -> list:
    import csv
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"row", "col", "label"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: plot CSV needs row, col and label columns")
        return [((int(r["row"]), int(r["col"])), FuelClass.from_code(r["label"])) for r in reader]


FIXTURE_ROSTER_L1 = (
    "random_forest_gini:n_trees=20",
    "extra_trees_entropy:n_trees=20",
    "gradient_boosted_trees:n_trees=30,max_depth=3",
    "knn_distance:k=5",
    "mlp:hidden=32,epochs=40",
)
FIXTURE_ROSTER_L2 = (
    "gradient_boosted_trees:n_trees=20,max_depth=3",
    "random_forest_gini:n_trees=20",
    "mlp:hidden=32,epochs=40",
)


def write_world(world: World, directory, seed: int | None = None) -> Path:
    """Manifest, plots, held-out table, truth band and a ready-to-run config.

    Returns the path of the config file.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    write_raster_stack(world.stack, out / "raster", "manifest.txt")
    write_plots_csv(world.plots, out / "plots.csv")
    write_sample_table(world.test, out / "test.csv")
    write_sample_table(world.val, out / "val.csv")
    from .datamodel import write_fvr
    write_fvr(world.truth, out / "truth.fvr", world.stack.geotransform)
    planted = RasterBand("planted", world.planted.astype(np.float64), NODATA)
    write_fvr(planted, out / "planted.fvr", world.stack.geotransform)
    lines = [
        "# synthetic fixture world",
        f"seed = {world.spec.seed if seed is None else seed}",
        "manifest = raster/manifest.txt",
        "plots = plots.csv",
        "test = test.csv",
        "val = val.csv",
        "out = run",
        f"radius_m = {world.spec.propagation_radius:.6f}",
        "threshold = 0.99",
        "folds = 3",
        "synthesizer = gaussian_copula",
        "importance_repeats = 5",
        "roster_l1 = " + "; ".join(FIXTURE_ROSTER_L1),
        "roster_l2 = " + "; ".join(FIXTURE_ROSTER_L2),
    ]
    cfg = out / "fixture.cfg"
    cfg.write_text("\n".join(lines) + "\n")
    return cfg
