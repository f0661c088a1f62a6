"""Domain types, sample tables, rasters and their file formats.

Everything numeric is float64.  Tables and rasters are immutable after
construction: the underlying arrays are flagged read-only and every
transformation returns a new object.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "FuelClass", "TRAINABLE_CLASSES", "Provenance", "FeatureSchema",
    "default_schema", "Sample", "SampleTable", "IngestReport",
    "Geotransform", "RasterBand", "RasterStack", "SplitResult",
    "SchemaMismatchError", "UnknownLabelError", "DimensionMismatchError",
    "load_sample_table", "write_sample_table", "read_fvr", "write_fvr",
    "load_raster_stack", "write_raster_stack", "stratified_split",
    "class_histogram",
]


class SchemaMismatchError(ValueError):
    pass


class UnknownLabelError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


class FuelClass(enum.IntEnum):
    """Scott & Burgan fuel models keyed by their standard numeric codes."""

    NB = 90  # collapsed non-burnable, assigned only by post-processing
    NB1 = 91
    NB2 = 92
    NB3 = 93
    NB8 = 98
    NB9 = 99
    GR1 = 101
    GR2 = 102
    GR3 = 103
    GR4 = 104
    GR5 = 105
    GR6 = 106
    GR7 = 107
    GR8 = 108
    GR9 = 109
    GS1 = 121
    GS2 = 122
    GS3 = 123
    GS4 = 124
    SH1 = 141
    SH2 = 142
    SH3 = 143
    SH4 = 144
    SH5 = 145
    SH6 = 146
    SH7 = 147
    SH8 = 148
    SH9 = 149
    TU1 = 161
    TU2 = 162
    TU3 = 163
    TU4 = 164
    TU5 = 165
    TL1 = 181
    TL2 = 182
    TL3 = 183
    TL4 = 184
    TL5 = 185
    TL6 = 186
    TL7 = 187
    TL8 = 188
    TL9 = 189
    SB1 = 201
    SB2 = 202
    SB3 = 203
    SB4 = 204

    @property
    def code(self) -> str:
        return self.name

    @classmethod
    def from_code(cls, code: str) -> "FuelClass":
        try:
            return cls[code.strip().upper()]
        except KeyError:
            raise UnknownLabelError(f"unknown fuel model code {code!r}") from None

    @property
    def is_nonburnable(self) -> bool:
        return self.name.startswith("NB")


# Classes with field-plot support in the reference study; everything else is
# representable but only trained if it shows up in the data.
TRAINABLE_CLASSES: tuple[FuelClass, ...] = tuple(FuelClass[c] for c in (
    "GR1", "GR2", "GR4", "GR7", "GS1", "GS2", "SB1", "SB2", "SH1", "SH2",
    "SH5", "SH7", "TL1", "TL2", "TL3", "TL4", "TL5", "TL6", "TL7", "TL8",
    "TL9", "TU1", "TU4", "TU5",
))


class Provenance(str, enum.Enum):
    FIELD_PLOT = "field_plot"
    PSEUDO_LABEL = "pseudo_label"
    SYNTHETIC = "synthetic"


_DEFAULT_FEATURES = (
    ("Elevation", "meters"),
    *((f"NDVI_{k}", "unitless") for k in range(1, 9)),
    ("Slope", "degrees"),
    ("PL_ESPRIT", "unitless"),
    ("PL_HV", "dB"),
    ("S1_VH", "dB"),
    ("PL_HH", "dB"),
    ("S1_SPAN", "unitless"),
    ("S1_VV", "dB"),
    ("PL_NPDI", "unitless"),
    ("PL_DIFF", "unitless"),
    ("PL_Ratio", "unitless"),
    ("S1_PRatio", "unitless"),
    ("S1_D1", "unitless"),
    ("S1_VHVV", "unitless"),
    ("S1_VVVH", "unitless"),
    ("S1_RVI", "unitless"),
)


@dataclass(frozen=True)
class FeatureSchema:
    names: tuple[str, ...]
    units: tuple[str, ...] = ()

    def __post_init__(self):
        names = tuple(self.names)
        if not names:
            raise ValueError("schema needs at least one feature")
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate feature names: {dup}")
        units = tuple(self.units) or ("unitless",) * len(names)
        if len(units) != len(names):
            raise ValueError("units must align with names")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "units", units)

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def unit(self, name: str) -> str:
        return self.units[self.index(name)]

    def subset(self, names: Sequence[str]) -> "FeatureSchema":
        return FeatureSchema(tuple(names), tuple(self.unit(n) for n in names))


def default_schema() -> FeatureSchema:
    """The 24-feature optical + SAR + terrain roster."""
    names, units = zip(*_DEFAULT_FEATURES)
    return FeatureSchema(names, units)


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: FuelClass | None = None
    provenance: Provenance = Provenance.FIELD_PLOT
    pixel: tuple[int, int] | None = None


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SampleTable:
    """Column-oriented store of samples sharing one schema.

    ``labels`` holds :class:`FuelClass` integer ids, ``-1`` for unlabeled rows;
    ``pixels`` holds ``(row, col)`` pairs, ``-1`` where unknown.
    """

    schema: FeatureSchema
    X: np.ndarray
    labels: np.ndarray
    provenance: np.ndarray
    pixels: np.ndarray

    def __post_init__(self):
        d = len(self.schema)
        X = np.asarray(self.X, dtype=np.float64).reshape(-1, d)
        n = X.shape[0]
        labels = np.asarray(self.labels, dtype=np.int64).reshape(n)
        prov = np.asarray(self.provenance, dtype="<U12").reshape(n)
        pixels = np.asarray(self.pixels, dtype=np.int64).reshape(n, 2)
        if np.isnan(X).any():
            raise ValueError("stored samples must be NaN-free")
        bad = set(np.unique(prov)) - {p.value for p in Provenance}
        if bad:
            raise ValueError(f"unknown provenance values {sorted(bad)}")
        for name, arr in (("X", X), ("labels", labels), ("provenance", prov),
                          ("pixels", pixels)):
            object.__setattr__(self, name, _frozen(arr))

    @classmethod
    def empty(cls, schema: FeatureSchema) -> "SampleTable":
        return cls.from_arrays(schema, np.empty((0, len(schema))))

    @classmethod
    def from_arrays(cls, schema, X, labels=None, provenance=Provenance.FIELD_PLOT,
                    pixels=None) -> "SampleTable":
        X = np.asarray(X, dtype=np.float64).reshape(-1, len(schema))
        n = X.shape[0]
        if labels is None:
            labels = np.full(n, -1)
        labels = np.array([int(v) for v in labels], dtype=np.int64) if n else np.empty(0, np.int64)
        if isinstance(provenance, (str, Provenance)):
            provenance = np.full(n, Provenance(provenance).value)
        if pixels is None:
            pixels = np.full((n, 2), -1)
        return cls(schema, X, labels, provenance, pixels)

    @classmethod
    def from_samples(cls, schema: FeatureSchema, samples: Iterable[Sample]) -> "SampleTable":
        samples = list(samples)
        d = len(schema)
        for s in samples:
            if len(s.features) != d:
                raise SchemaMismatchError(f"sample has {len(s.features)} features, schema has {d}")
        X = np.array([s.features for s in samples], dtype=np.float64).reshape(-1, d)
        labels = [-1 if s.label is None else int(s.label) for s in samples]
        prov = [Provenance(s.provenance).value for s in samples]
        pix = [(-1, -1) if s.pixel is None else s.pixel for s in samples]
        return cls(schema, X, np.array(labels, dtype=np.int64), np.array(prov, dtype="<U12"),
                   np.array(pix, dtype=np.int64).reshape(-1, 2))

    def __len__(self) -> int:
        return self.X.shape[0]

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self.row(i)

    @property
    def rows(self) -> list[Sample]:
        return list(self)

    def row(self, i: int) -> Sample:
        lab = int(self.labels[i])
        pix = tuple(int(v) for v in self.pixels[i])
        return Sample(self.X[i].copy(), None if lab < 0 else FuelClass(lab),
                      Provenance(str(self.provenance[i])), None if pix[0] < 0 else pix)

    @property
    def labeled(self) -> np.ndarray:
        return self.labels >= 0

    def subset(self, idx) -> "SampleTable":
        idx = np.asarray(idx)
        return SampleTable(self.schema, self.X[idx], self.labels[idx],
                           self.provenance[idx], self.pixels[idx])

    def select_features(self, names: Sequence[str]) -> "SampleTable":
        cols = [self.schema.index(n) for n in names]
        return SampleTable(self.schema.subset(names), self.X[:, cols], self.labels,
                           self.provenance, self.pixels)

    def shuffled(self, seed: int) -> "SampleTable":
        return self.subset(np.random.default_rng(seed).permutation(len(self)))

    def with_provenance(self, provenance: Provenance | str) -> "SampleTable":
        return SampleTable(self.schema, self.X, self.labels,
                           np.full(len(self), Provenance(provenance).value), self.pixels)

    @staticmethod
    def concat(tables: Sequence["SampleTable"]) -> "SampleTable":
        if not tables:
            raise ValueError("nothing to concatenate")
        schema = tables[0].schema
        for t in tables[1:]:
            if t.schema.names != schema.names:
                raise SchemaMismatchError("cannot concatenate tables with different schemas")
        return SampleTable(
            schema,
            np.concatenate([t.X for t in tables]),
            np.concatenate([t.labels for t in tables]),
            np.concatenate([t.provenance for t in tables]),
            np.concatenate([t.pixels for t in tables]),
        )

    def class_ids(self) -> list[int]:
        """Sorted distinct labels present (unlabeled excluded)."""
        return sorted(int(v) for v in np.unique(self.labels[self.labels >= 0]))


# -- sample CSV ---------------------------------------------------------------

_OPTIONAL_COLUMNS = ("provenance", "row", "col")


@dataclass
class IngestReport:
    rows_read: int = 0
    rows_kept: int = 0
    dropped: int = 0
    nan_dropped: int = 0
    errors: list[tuple[int, str]] = field(default_factory=list)

    def summary(self) -> str:
        return (f"rows_read={self.rows_read} kept={self.rows_kept} dropped={self.dropped} "
                f"nan_dropped={self.nan_dropped} parse_errors={len(self.errors)}")


def load_sample_table(path, schema: FeatureSchema) -> tuple[SampleTable, IngestReport]:
    """Read a sample CSV.

    Rows with an empty or NaN feature cell are dropped silently (counted in
    ``nan_dropped``); rows with an unparseable cell are dropped and logged in
    ``errors``.  Unknown label codes raise :class:`UnknownLabelError`.
    """
    report = IngestReport()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaMismatchError(f"{path}: empty file, no header") from None
        dups = sorted({h for h in header if header.count(h) > 1})
        if dups:
            raise SchemaMismatchError(f"{path}: duplicate header columns {dups}")
        missing = [n for n in (*schema.names, "label") if n not in header]
        if missing:
            raise SchemaMismatchError(f"{path}: header is missing columns {missing}")
        extra = [h for h in header if h not in schema.names and h != "label"
                 and h not in _OPTIONAL_COLUMNS]
        if extra:
            raise SchemaMismatchError(f"{path}: unexpected header columns {extra}")
        feat_cols = [header.index(n) for n in schema.names]
        lab_col = header.index("label")
        prov_col = header.index("provenance") if "provenance" in header else None
        row_col = header.index("row") if "row" in header else None
        col_col = header.index("col") if "col" in header else None

        X, labels, prov, pix = [], [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            report.rows_read += 1
            if len(rec) != len(header):
                report.errors.append((lineno, f"expected {len(header)} cells, got {len(rec)}"))
                report.dropped += 1
                continue
            try:
                values = [float(rec[c]) if rec[c].strip() else math.nan for c in feat_cols]
            except ValueError as exc:
                report.errors.append((lineno, str(exc)))
                report.dropped += 1
                continue
            if any(math.isnan(v) for v in values):
                report.nan_dropped += 1
                report.dropped += 1
                continue
            code = rec[lab_col].strip()
            labels.append(int(FuelClass.from_code(code)) if code else -1)
            X.append(values)
            prov.append(Provenance(rec[prov_col].strip()).value
                        if prov_col is not None and rec[prov_col].strip()
                        else Provenance.FIELD_PLOT.value)
            r = rec[row_col].strip() if row_col is not None else ""
            c = rec[col_col].strip() if col_col is not None else ""
            pix.append((int(r) if r else -1, int(c) if c else -1))
    report.rows_kept = len(X)
    table = SampleTable(schema, np.array(X, dtype=np.float64).reshape(-1, len(schema)),
                        np.array(labels, dtype=np.int64), np.array(prov, dtype="<U12"),
                        np.array(pix, dtype=np.int64).reshape(-1, 2))
    return table, report


def write_sample_table(table: SampleTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*table.schema.names, "label", "provenance", "row", "col"])
        for i in range(len(table)):
            lab = int(table.labels[i])
            r, c = (int(v) for v in table.pixels[i])
            w.writerow([*(format(v, ".17g") for v in table.X[i]),
                        FuelClass(lab).name if lab >= 0 else "",
                        table.provenance[i],
                        r if r >= 0 else "", c if c >= 0 else ""])


# -- rasters ------------------------------------------------------------------

@dataclass(frozen=True)
class Geotransform:
    origin_x: float = 0.0
    origin_y: float = 0.0
    pixel_size_x: float = 30.0
    pixel_size_y: float = 30.0

    def pixel_center(self, row, col):
        """Projected coordinates of pixel centres; rows run southwards."""
        x = self.origin_x + (np.asarray(col) + 0.5) * self.pixel_size_x
        y = self.origin_y - (np.asarray(row) + 0.5) * abs(self.pixel_size_y)
        return x, y


@dataclass(frozen=True, eq=False)
class RasterBand:
    name: str
    values: np.ndarray
    nodata: float = -9999.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.size == 0:
            raise ValueError(f"band {self.name!r}: values must be a non-empty 2-D grid")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "nodata", float(self.nodata))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        v = self.values
        bad = ~np.isfinite(v)
        if not math.isnan(self.nodata):
            bad |= v == self.nodata
        return ~bad

    def masked(self) -> np.ndarray:
        """Values as float with NaN where nodata."""
        return np.where(self.valid, self.values, np.nan)

    @classmethod
    def from_masked(cls, name: str, arr: np.ndarray, nodata: float = -9999.0) -> "RasterBand":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(name, np.where(np.isfinite(arr), arr, nodata), nodata)


@dataclass(frozen=True, eq=False)
class RasterStack:
    bands: dict
    geotransform: Geotransform = Geotransform()
    domains: dict = field(default_factory=dict)

    def __post_init__(self):
        bands = dict(self.bands)
        if not bands:
            raise ValueError("raster stack needs at least one band")
        items = list(bands.items())
        first_name, first = items[0]
        for name, b in items:
            if b.name != name:
                raise ValueError(f"band keyed {name!r} is named {b.name!r}")
            if b.values.shape != first.values.shape:
                raise DimensionMismatchError(
                    f"band {name!r} is {b.width}x{b.height} but band {first_name!r} "
                    f"is {first.width}x{first.height}")
        object.__setattr__(self, "bands", bands)
        object.__setattr__(self, "domains", dict(self.domains))

    @classmethod
    def from_bands(cls, bands: Iterable[RasterBand], geotransform=None, domains=None):
        return cls({b.name: b for b in bands}, geotransform or Geotransform(), domains or {})

    @property
    def names(self) -> list[str]:
        return list(self.bands)

    @property
    def shape(self) -> tuple[int, int]:
        return next(iter(self.bands.values())).values.shape

    @property
    def height(self) -> int:
        return self.shape[0]

    @property
    def width(self) -> int:
        return self.shape[1]

    @property
    def resolution(self) -> float:
        return abs(self.geotransform.pixel_size_x)

    def __getitem__(self, name: str) -> RasterBand:
        return self.bands[name]

    def __contains__(self, name: str) -> bool:
        return name in self.bands

    def as_array(self, names: Sequence[str] | None = None) -> np.ndarray:
        """``(height, width, n_bands)`` float array, NaN at nodata cells."""
        names = self.names if names is None else list(names)
        return np.stack([self.bands[n].masked() for n in names], axis=-1)

    def valid_mask(self, names: Sequence[str] | None = None) -> np.ndarray:
        names = self.names if names is None else list(names)
        mask = np.ones(self.shape, dtype=bool)
        for n in names:
            mask &= self.bands[n].valid
        return mask

    def with_bands(self, bands: Iterable[RasterBand]) -> "RasterStack":
        merged = dict(self.bands)
        merged.update({b.name: b for b in bands})
        return RasterStack(merged, self.geotransform, self.domains)


_FVR_KEYS = ("width", "height", "nodata", "origin_x", "origin_y", "pixel_size_x", "pixel_size_y")


def write_fvr(band: RasterBand, path, geotransform: Geotransform = Geotransform()) -> None:
    gt = geotransform
    header = (f"width={band.width}\nheight={band.height}\nnodata={band.nodata!r}\n"
              f"origin_x={gt.origin_x!r}\norigin_y={gt.origin_y!r}\n"
              f"pixel_size_x={gt.pixel_size_x!r}\npixel_size_y={gt.pixel_size_y!r}\n\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(band.values, dtype="<f8").tobytes())


def read_fvr(path, name: str | None = None) -> tuple[RasterBand, Geotransform]:
    """Load a flat raster; returns the band and the geotransform in its header."""
    with open(path, "rb") as fh:
        blob = fh.read()
    sep = blob.find(b"\n\n")
    if sep < 0:
        raise ValueError(f"{path}: missing header terminator")
    meta = {}
    for line in blob[:sep].decode("ascii").splitlines():
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    missing = [k for k in _FVR_KEYS if k not in meta]
    if missing:
        raise ValueError(f"{path}: header lacks {missing}")
    w, h = int(meta["width"]), int(meta["height"])
    payload = blob[sep + 2:]
    if len(payload) != 8 * w * h:
        raise ValueError(f"{path}: expected {8 * w * h} data bytes, found {len(payload)}")
    values = np.frombuffer(payload, dtype="<f8").reshape(h, w).astype(np.float64)
    gt = Geotransform(float(meta["origin_x"]), float(meta["origin_y"]),
                      float(meta["pixel_size_x"]), float(meta["pixel_size_y"]))
    band = RasterBand(name or Path(path).stem, values, float(meta["nodata"]))
    return band, gt


def load_raster_stack(manifest_path) -> RasterStack:
    """Read a manifest of ``band<TAB>path[<TAB>domain]`` lines plus geotransform keys."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    meta, entries = {}, []
    for raw in manifest_path.read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "\t" in raw:
            parts = raw.rstrip("\n").split("\t")
            entries.append((parts[0].strip(), parts[1].strip(),
                            parts[2].strip() if len(parts) > 2 else None))
        else:
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    if not entries:
        raise ValueError(f"{manifest_path}: no bands listed")
    nodata = float(meta["nodata"]) if "nodata" in meta else None
    bands, domains, file_gt = {}, {}, None
    first = None
    for name, rel, domain in entries:
        p = Path(rel)
        if not p.is_absolute():
            p = base / p
        if not p.exists():
            raise FileNotFoundError(f"band {name!r}: file {p} not found")
        band, gt = read_fvr(p, name)
        file_gt = file_gt or gt
        if nodata is not None and band.nodata != nodata:
            band = RasterBand(name, np.where(band.valid, band.values, nodata), nodata)
        if first is not None and band.values.shape != first.values.shape:
            raise DimensionMismatchError(
                f"band {name!r} is {band.width}x{band.height} but band {first.name!r} "
                f"is {first.width}x{first.height}")
        first = first or band
        if name in bands:
            raise ValueError(f"band {name!r} listed twice")
        bands[name] = band
        if domain:
            domains[name] = domain
    gt_keys = ("origin_x", "origin_y", "pixel_size_x", "pixel_size_y")
    if all(k in meta for k in gt_keys):
        gt = Geotransform(*(float(meta[k]) for k in gt_keys))
    else:
        gt = file_gt
    return RasterStack(bands, gt, domains)


def write_raster_stack(stack: RasterStack, directory, manifest_name: str = "manifest.txt") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    gt = stack.geotransform
    nodatas = {b.nodata for b in stack.bands.values()}
    lines = [f"origin_x={gt.origin_x!r}", f"origin_y={gt.origin_y!r}",
             f"pixel_size_x={gt.pixel_size_x!r}", f"pixel_size_y={gt.pixel_size_y!r}"]
    if len(nodatas) == 1:
        lines.append(f"nodata={nodatas.pop()!r}")
    for name, band in stack.bands.items():
        fname = f"{name}.fvr"
        write_fvr(band, directory / fname, gt)
        dom = stack.domains.get(name)
        lines.append(f"{name}\t{fname}" + (f"\t{dom}" if dom else ""))
    path = directory / manifest_name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# -- splitting and accounting -------------------------------------------------

@dataclass
class SplitResult:
    train: SampleTable
    val: SampleTable
    test: SampleTable
    flagged: list[int] = field(default_factory=list)  # class ids with < 3 samples

    def __iter__(self):
        return iter((self.train, self.val, self.test))


def _allocate(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``n`` items; each share within 1 of exact."""
    exact = [n * f for f in fractions]
    counts = [math.floor(e) for e in exact]
    order = sorted(range(len(exact)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def stratified_split(table: SampleTable, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> SplitResult:
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"split fractions must be three non-negatives summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[], [], []]
    flagged = []
    for cls in sorted(int(c) for c in np.unique(table.labels)):
        idx = np.flatnonzero(table.labels == cls)
        if cls >= 0 and idx.size < 3:
            flagged.append(cls)
        idx = rng.permutation(idx)
        counts = _allocate(idx.size, fractions)
        start = 0
        for k, c in enumerate(counts):
            parts[k].append(idx[start:start + c])
            start += c
    out = [table.subset(np.sort(np.concatenate(p)) if p else np.empty(0, np.int64))
           for p in parts]
    return SplitResult(*out, flagged=flagged)


class ClassHistogram(dict):
    """Mapping FuelClass -> count; ``unlabeled`` counts rows without a label."""

    unlabeled: int = 0


def class_histogram(table: SampleTable) -> ClassHistogram:
    hist = ClassHistogram()
    ids, counts = np.unique(table.labels[table.labels >= 0], return_counts=True)
    for i, c in zip(ids, counts):
        hist[FuelClass(int(i))] = int(c)
    hist.unlabeled = int(np.count_nonzero(table.labels < 0))
    return hist
