"""End-to-end map generation driven by a flat ``key = value`` config.

Config grammar: one ``key = value`` per line; ``#`` starts a comment; blank
lines are ignored; keys are case-sensitive and may appear once.  Relative
paths resolve against the config file's directory.  ``seed`` is mandatory.

Recognised keys (defaults in brackets):

    seed                  integer, required
    manifest              raster manifest (raw bands and index inputs), required
    plots                 CSV with row, col, label, required
    test                  held-out sample CSV [split off the plots instead]
    val                   validation sample CSV [split off the plots instead]
    out                   output directory [out]
    features              comma-separated schema [the 24-feature default]
    radius_m              propagation radius in metres [1000]
    threshold             JM/SAM similarity threshold [0.99]
    window                similarity window size [3]
    split                 train,val,test fractions by plot [0.8,0.1,0.1]
    pseudolabel           true/false [true]
    synthesizer           auto | smote | gaussian_copula | none [auto]
    smote_k               SMOTE neighbours [5]
    folds                 bagging folds [5]
    iterations            greedy ensemble rounds [100]
    roster_l1, roster_l2  ``family:key=val,key=val; family ...``
    importance_repeats    permutation repeats [5]
    ndvi_thresh, ndwi_thresh, bui_thresh   mask thresholds [0, 0.5, 0.5]
    tile                  map tile size [256]
    jobs                  worker processes [FV_JOBS or 1]
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import ensemble as ens_mod
from .datamodel import (FeatureSchema, SampleTable, class_histogram, default_schema,
                        load_raster_stack, load_sample_table, stratified_split, write_sample_table)
from .fixtures import read_plots_csv
from .importance import importance_csv, permutation_importance
from .indices import build_feature_stack
from .labelprop import plot_table, propagate_labels
from .learners import LearnerSpec
from .postprocess import apply_nonburnable_mask, classify_raster, export_fuel_map, mask_index_bands
from .synth import (SYNTHESIZERS, balance_dataset, evaluate_fidelity, select_synthesizer)

__all__ = [
    "ConfigError", "PipelineError", "PipelineConfig", "parse_config", "load_config",
    "parse_roster", "run_pipeline", "run_ablation", "AblationResult", "DEFAULT_ROSTER_L1",
    "DEFAULT_ROSTER_L2", "fidelity_table_csv", "STAGES",
]

log = logging.getLogger("fuelmap")

STAGES = ("ingest", "indices", "pseudolabel", "augment", "train", "evaluate", "importance", "map")

DEFAULT_ROSTER_L1 = (
    "random_forest_gini; random_forest_entropy; extra_trees_gini; extra_trees_entropy; "
    "gradient_boosted_trees; knn_uniform; knn_distance; mlp"
)
DEFAULT_ROSTER_L2 = (
    "random_forest_gini; extra_trees_gini; gradient_boosted_trees; mlp"
)


class ConfigError(ValueError):
    pass


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def parse_roster(text: str) -> list[LearnerSpec]:
    """``family:key=val,key=val; family`` into learner specs."""
    specs = []
    for item in text.split(";"):
        item = item.strip()
        if not item:
            continue
        fam, _, params = item.partition(":")
        hp = {}
        for kv in params.split(","):
            kv = kv.strip()
            if not kv:
                continue
            key, sep, val = kv.partition("=")
            if not sep:
                raise ConfigError(f"roster entry {item!r}: expected key=value, got {kv!r}")
            hp[key.strip()] = None if val.strip().lower() == "none" else float(val)
        try:
            specs.append(LearnerSpec(fam.strip(), hp))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if not specs:
        raise ConfigError("empty roster")
    return specs


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


_KEYS = {
    "seed": int, "manifest": str, "plots": str, "test": str, "val": str, "out": str,
    "features": str, "radius_m": float, "threshold": float, "window": int, "split": str,
    "pseudolabel": _bool, "synthesizer": str, "smote_k": int, "folds": int, "iterations": int,
    "roster_l1": str, "roster_l2": str, "importance_repeats": int, "ndvi_thresh": float,
    "ndwi_thresh": float, "bui_thresh": float, "tile": int, "jobs": int,
}


@dataclass
class PipelineConfig:
    seed: int
    manifest: Path
    plots: Path
    base: Path = Path(".")
    out: Path = Path("out")
    test: Path | None = None
    val: Path | None = None
    schema: FeatureSchema = field(default_factory=default_schema)
    radius_m: float = 1000.0
    threshold: float = 0.99
    window: int = 3
    split: tuple = (0.8, 0.1, 0.1)
    pseudolabel: bool = True
    synthesizer: str = "auto"
    smote_k: int = 5
    folds: int = 5
    iterations: int = 100
    roster_l1: list = field(default_factory=lambda: parse_roster(DEFAULT_ROSTER_L1))
    roster_l2: list = field(default_factory=lambda: parse_roster(DEFAULT_ROSTER_L2))
    importance_repeats: int = 5
    ndvi_thresh: float = 0.0
    ndwi_thresh: float = 0.5
    bui_thresh: float = 0.5
    tile: int = 256
    jobs: int | None = None

    def with_(self, **kw) -> "PipelineConfig":
        from dataclasses import replace
        return replace(self, **kw)


def parse_config(text: str, base: Path | str = ".") -> PipelineConfig:
    base = Path(base)
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = val
    for req in ("seed", "manifest", "plots"):
        if req not in raw:
            raise ConfigError(f"config is missing required key {req!r}")
    kw: dict = {}
    for key, val in raw.items():
        try:
            kw[key] = _KEYS[key](val)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    for key in ("manifest", "plots", "test", "val", "out"):
        if key in kw:
            kw[key] = (base / kw[key]).resolve()
    if "features" in kw:
        names = tuple(n.strip() for n in kw.pop("features").split(",") if n.strip())
        dflt = default_schema()
        kw["schema"] = (dflt.subset(names) if set(names) <= set(dflt.names) else FeatureSchema(names))
    if "split" in kw:
        parts = tuple(float(v) for v in kw["split"].split(","))
        if len(parts) != 3 or abs(sum(parts) - 1) > 1e-9 or min(parts) < 0:
            raise ConfigError("split needs three non-negative fractions summing to 1")
        kw["split"] = parts
    for key in ("roster_l1", "roster_l2"):
        if key in kw:
            kw[key] = parse_roster(kw[key])
    if "synthesizer" in kw and kw["synthesizer"] not in ("auto", "none", *SYNTHESIZERS):
        raise ConfigError(f"unknown synthesizer {kw['synthesizer']!r}")
    kw.setdefault("out", (base / "out").resolve())
    return PipelineConfig(base=base.resolve(), **kw)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    return parse_config(path.read_text(), path.parent)


# -- data preparation ---------------------------------------------------------------------

@dataclass
class PreparedData:
    """Everything up to (not including) training."""
    features: object                # RasterStack
    stack: object                   # RasterStack, raw
    plots: list
    plot_rows: SampleTable
    train_plots: SampleTable
    train_pseudo: SampleTable
    val: SampleTable
    test: SampleTable
    growth_factor: float
    n_pseudo: int


def _split_plots(plots: SampleTable, fractions, seed):
    """Stratified plot-level split; returns a boolean mask per part."""
    tag = SampleTable.from_arrays(FeatureSchema(("plot",)), np.arange(len(plots), dtype=float)[:, None],
                                  plots.labels)
    masks = []
    for part in stratified_split(tag, fractions, seed):
        m = np.zeros(len(plots), dtype=bool)
        m[part.X[:, 0].astype(int)] = True
        masks.append(m)
    return masks


def prepare(cfg: PipelineConfig, note: Callable[[str], None] = lambda s: None,
            stage: Callable | None = None) -> PreparedData:
    stage = stage or _plain_stage
    with stage("ingest"):
        stack = load_raster_stack(cfg.manifest)
        plots = read_plots_csv(cfg.plots)
        test = val = None
        if cfg.test is not None:
            test, rep = load_sample_table(cfg.test, cfg.schema)
            note(f"ingest test {rep.summary()}")
        if cfg.val is not None:
            val, rep = load_sample_table(cfg.val, cfg.schema)
            note(f"ingest val {rep.summary()}")
        note(f"ingest raster bands={len(stack.names)} shape={stack.shape[0]}x{stack.shape[1]} "
             f"plots={len(plots)}")
    with stage("indices"):
        features = build_feature_stack(stack, cfg.schema)
        note(f"indices features={len(cfg.schema)}")
    with stage("pseudolabel"):
        rows = plot_table(features, plots, cfg.schema)
        if len(rows) == 0:
            raise ValueError("no plot falls on valid raster pixels")
        fractions = list(cfg.split)
        if test is not None:
            fractions[2] = 0.0
        if val is not None:
            fractions[1] = 0.0
        total = sum(fractions)
        fractions = [f / total for f in fractions]
        tr_m, va_m, te_m = _split_plots(rows, fractions, cfg.seed)
        arr = features.as_array(list(cfg.schema.names))
        kept = [p for p in plots if not np.isnan(arr[p[0]]).any()]
        if cfg.pseudolabel:
            res = propagate_labels(features, kept, cfg.radius_m, cfg.threshold, cfg.window,
                                   cfg.schema)
            pseudo, owner = res.table, res.plot_index
            growth = res.growth_factor
        else:
            pseudo, owner, growth = SampleTable.empty(cfg.schema), np.empty(0, int), 1.0
        note(f"pseudolabel plots={len(rows)} pseudo={len(pseudo)} growth_factor={growth:.6f}")

        def part(mask):
            return SampleTable.concat([rows.subset(np.flatnonzero(mask)),
                                       pseudo.subset(np.flatnonzero(mask[owner]))])
        train_plots = rows.subset(np.flatnonzero(tr_m))
        train_pseudo = part(tr_m)
        if val is None:
            val = part(va_m)
        if test is None:
            test = part(te_m)
        if len(val) == 0:
            raise ValueError("validation set is empty; give a val table or a larger val split")
        if len(test) == 0:
            raise ValueError("test set is empty; give a test table or a larger test split")
        note("split train=%d val=%d test=%d" % (len(train_pseudo), len(val), len(test)))
    return PreparedData(features, stack, plots, rows, train_plots, train_pseudo, val, test,
                        growth, len(pseudo))


class _plain_stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, et, ev, tb):
        if ev is not None and not isinstance(ev, PipelineError):
            raise PipelineError(self.name, ev) from ev
        return False


def _augment(table: SampleTable, cfg: PipelineConfig, note, seed: int):
    """Returns (augmented table, chosen synthesizer, fidelity reports by kind)."""
    kind = cfg.synthesizer
    reports = {}
    if kind == "none":
        return table, "none", reports
    if kind == "auto":
        kind, reports, _ = select_synthesizer(table, seed)
    out = balance_dataset(table, kind, seed, k=cfg.smote_k)
    if not reports and len(out) > len(table):
        synth = out.subset(np.arange(len(table), len(out)))
        reports[kind] = evaluate_fidelity(table, synth, model=kind)
    note(f"augment synthesizer={kind} rows={len(table)}->{len(out)} "
         f"growth_factor={len(out) / max(len(table), 1):.6f}")
    return out, kind, reports


def fidelity_table_csv(reports: dict) -> str:
    """One row per synthesizer with the four fidelity scores."""
    lines = ["synthesizer,column_shapes,column_pair_trends,overall_quality,proximity"]
    for kind, r in reports.items():
        lines.append(f"{kind},{r.column_shapes:.6f},{r.column_pair_trends:.6f},"
                     f"{r.overall_quality:.6f},{r.proximity:.6f}")
    return "\n".join(lines) + "\n"


# -- full run -------------------------------------------------------------------------------

def run_pipeline(config, verbose: bool = False) -> dict:
    """Run every stage and write the artifact set into ``cfg.out``.

    Returns a dict of headline numbers.  On failure the output directory keeps
    whatever was written plus an ``INCOMPLETE`` marker, and a
    :class:`PipelineError` naming the stage is raised.
    """
    cfg = config if isinstance(config, PipelineConfig) else load_config(config)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "INCOMPLETE"
    marker.write_text("run in progress or failed\n")
    run_log: list[str] = [f"seed={cfg.seed}", f"folds={cfg.folds}", f"radius_m={cfg.radius_m}",
                          f"threshold={cfg.threshold}", f"synthesizer={cfg.synthesizer}"]
    for layer, roster in (("l1", cfg.roster_l1), ("l2", cfg.roster_l2)):
        run_log.append(f"roster_{layer}=" + "; ".join(
            f"{s.family}:" + ",".join(f"{k}={v}" for k, v in s.hyperparameters.items())
            for s in roster))

    def note(msg):
        log.info(msg)
        if verbose:
            print(msg, flush=True)

    current = {"stage": None}

    class stage(_plain_stage):
        def __enter__(self):
            current["stage"] = self.name
            self.t0 = time.perf_counter()
            return self

        def __exit__(self, et, ev, tb):
            if ev is None:
                log.info("stage %s done in %.1fs", self.name, time.perf_counter() - self.t0)
                run_log.append(f"stage_{self.name}=ok")
            else:
                run_log.append(f"stage_{self.name}=failed")
                run_log.append("status=incomplete")
                (out / "run_log.txt").write_text("\n".join(run_log) + "\n")
            return super().__exit__(et, ev, tb)

    data = prepare(cfg, note, stage)
    run_log.append(f"plots={len(data.plot_rows)}")
    run_log.append(f"pseudo_labels={data.n_pseudo}")
    run_log.append(f"growth_factor_pseudolabel={data.growth_factor:.6f}")
    hist = class_histogram(data.train_pseudo)
    run_log.append("train_classes=" + ",".join(f"{c.code}:{n}" for c, n in sorted(hist.items())))

    with stage("augment"):
        train, kind, reports = _augment(data.train_pseudo, cfg, note, cfg.seed)
        run_log.append(f"synthesizer_used={kind}")
        run_log.append(f"growth_factor_synthetic={len(train) / len(data.train_pseudo):.6f}")
        run_log.append(f"growth_factor_total={len(train) / len(data.train_plots):.6f}")
        (out / "fidelity.csv").write_text(fidelity_table_csv(reports))
        for k, r in reports.items():
            (out / f"fidelity_{k}.txt").write_text(r.to_text())
        write_sample_table(train, out / "train_augmented.csv")
    with stage("train"):
        ens = ens_mod.train_stack(cfg.roster_l1, cfg.roster_l2, train, data.val, cfg.folds,
                                  cfg.seed, data.test, cfg.iterations, cfg.jobs, note)
        ens_mod.save_ensemble(ens, out / "model.fven")
        board = ens_mod.leaderboard(ens)
        (out / "leaderboard.csv").write_text(ens_mod.leaderboard_csv(board))
        run_log.append(f"max_overfit_gap={max(r.gap for r in board):.6f}")
    with stage("evaluate"):
        report = ens_mod.evaluate(ens, data.test)
        (out / "eval_report.csv").write_text(report.to_csv())
        (out / "confusion.csv").write_text(report.confusion_csv())
        run_log.append(f"test_accuracy={report.accuracy:.6f}")
        run_log.append(f"test_macro_f1={report.macro_f1:.6f}")
    with stage("importance"):
        recs = permutation_importance(ens, data.test, cfg.importance_repeats, cfg.seed)
        (out / "importance.csv").write_text(importance_csv(recs))
    with stage("map"):
        fmap = classify_raster(ens, data.features, cfg.tile)
        masked = False
        try:
            ndvi, ndwi, bui = mask_index_bands(data.stack)
        except KeyError as exc:
            note(f"map: non-burnable mask skipped ({exc})")
        else:
            fmap = apply_nonburnable_mask(fmap, ndvi, ndwi, bui, cfg.ndvi_thresh,
                                          cfg.ndwi_thresh, cfg.bui_thresh)
            masked = True
        export_fuel_map(fmap, out / "fuelmap")
        run_log.append(f"map_masked={str(masked).lower()}")
    run_log.append("status=complete")
    (out / "run_log.txt").write_text("\n".join(run_log) + "\n")
    marker.unlink()
    return {"accuracy": report.accuracy, "macro_f1": report.macro_f1,
            "growth_factor": data.growth_factor, "synthesizer": kind,
            "max_gap": max(r.gap for r in board), "out": str(out)}


# -- ablation -----------------------------------------------------------------------------

@dataclass
class AblationResult:
    macro_f1: dict
    accuracy: dict
    rows: dict
    growth_factor: float
    synthesizer: str

    def to_csv(self) -> str:
        lines = ["stage,rows,accuracy,macro_f1"]
        for k in self.macro_f1:
            lines.append(f"{k},{self.rows[k]},{self.accuracy[k]:.6f},{self.macro_f1[k]:.6f}")
        return "\n".join(lines) + "\n"


def run_ablation(config, verbose: bool = False) -> AblationResult:
    """Train the same stack on raw plots, plus pseudo-labels, plus synthetic balancing."""
    cfg = config if isinstance(config, PipelineConfig) else load_config(config)
    note = (lambda m: print(m, flush=True)) if verbose else (lambda m: None)
    data = prepare(cfg, note)
    synth_cfg = cfg if cfg.synthesizer != "none" else cfg.with_(synthesizer="auto")
    augmented, kind, _ = _augment(data.train_pseudo, synth_cfg, note, cfg.seed)
    stages = {"raw": data.train_plots, "pseudo": data.train_pseudo, "synthetic": augmented}
    f1, acc, rows = {}, {}, {}
    for name, table in stages.items():
        ens = ens_mod.train_stack(cfg.roster_l1, cfg.roster_l2, table, data.val, cfg.folds,
                                  cfg.seed, None, cfg.iterations, cfg.jobs)
        rep = ens_mod.evaluate(ens, data.test)
        f1[name], acc[name], rows[name] = rep.macro_f1, rep.accuracy, len(table)
        note(f"ablation {name}: rows={len(table)} acc={rep.accuracy:.4f} macro_f1={rep.macro_f1:.4f}")
    return AblationResult(f1, acc, rows, data.growth_factor, kind)
