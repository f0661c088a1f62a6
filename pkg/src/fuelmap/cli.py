"""``fuelmap`` command-line tool.

Every subcommand accepts ``--seed`` and ``--out`` and ends by printing one
JSON summary line on stdout.  Stochastic subcommands (augment, train,
importance, fixture) require ``--seed``; the rest accept it for uniformity.
Usage errors exit with 2, failures inside a stage with 1.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import ensemble as ens_mod
from .datamodel import (FeatureSchema, RasterStack, class_histogram, default_schema,
                        load_raster_stack, load_sample_table, write_raster_stack, write_sample_table)
from .fixtures import WorldSpec, generate_world, read_plots_csv, write_world
from .importance import DEFAULT_REPEATS, importance_csv, permutation_importance
from .indices import INDICES, build_feature_stack, compute_index
from .labelprop import propagate_labels
from .pipeline import (DEFAULT_ROSTER_L1, DEFAULT_ROSTER_L2, PipelineError, load_config,
                       parse_roster, run_ablation, run_pipeline)
from .postprocess import (apply_nonburnable_mask, classify_raster, export_fuel_map,
                          mask_index_bands)
from .synth import SYNTHESIZERS, balance_dataset, evaluate_fidelity

_META_COLUMNS = ("label", "provenance", "row", "col")


def schema_from_csv(path) -> FeatureSchema:
    """Feature columns of a sample CSV, in header order.

    Names from the default schema keep their units.
    """
    with open(path, encoding="utf-8") as fh:
        header = [h.strip() for h in fh.readline().strip().split(",")]
    names = tuple(h for h in header if h and h not in _META_COLUMNS)
    if not names:
        raise ValueError(f"{path}: no feature columns in header")
    dflt = default_schema()
    if set(names) <= set(dflt.names):
        return dflt.subset(names)
    return FeatureSchema(names)


def _schema_arg(text: str | None) -> FeatureSchema:
    if not text:
        return default_schema()
    names = tuple(n.strip() for n in text.split(",") if n.strip())
    dflt = default_schema()
    return dflt.subset(names) if set(names) <= set(dflt.names) else FeatureSchema(names)


def _summary(command: str, **fields) -> None:
    print(json.dumps({"command": command, **fields}, sort_keys=True, default=str), flush=True)


def _table(path, schema=None):
    schema = schema or schema_from_csv(path)
    table, report = load_sample_table(path, schema)
    return table, report


# -- subcommands -----------------------------------------------------------------------------

def cmd_ingest(a):
    table, report = _table(a.csv, _schema_arg(a.features) if a.features else None)
    if a.out:
        write_sample_table(table, a.out)
    hist = class_histogram(table)
    _summary("ingest", rows_read=report.rows_read, rows_kept=report.rows_kept,
             dropped=report.dropped, nan_dropped=report.nan_dropped,
             parse_errors=len(report.errors),
             classes={c.code: n for c, n in sorted(hist.items())}, unlabeled=hist.unlabeled,
             out=a.out)
    for lineno, msg in report.errors:
        print(f"line {lineno}: {msg}", file=sys.stderr)


def cmd_indices(a):
    stack = load_raster_stack(a.manifest)
    if a.index:
        bands = []
        for name in a.index:
            defn = INDICES.get(name)
            if defn is None:
                raise ValueError(f"unknown index {name!r}; choose from {sorted(INDICES)}")
            band = compute_index(defn, *(stack[b] for b in defn.inputs), name=name)
            bands.append(band)
        out_stack = RasterStack.from_bands(bands, stack.geotransform)
    else:
        out_stack = build_feature_stack(stack, _schema_arg(a.features))
    manifest = write_raster_stack(out_stack, a.out)
    _summary("indices", bands=out_stack.names, shape=list(out_stack.shape), out=str(manifest))


def cmd_pseudolabel(a):
    stack = load_raster_stack(a.manifest)
    schema = _schema_arg(a.features)
    features = build_feature_stack(stack, schema)
    plots = read_plots_csv(a.plots)
    res = propagate_labels(features, plots, a.radius, a.threshold, a.window, schema)
    write_sample_table(res.table, a.out)
    _summary("pseudolabel", plots=len(plots), pseudo_labels=len(res.table),
             growth_factor=round(res.growth_factor, 6), out=a.out)


def cmd_synth_eval(a):
    real, _ = _table(a.real)
    synth, _ = _table(a.synth, real.schema)
    rep = evaluate_fidelity(real, synth, per_class=a.per_class, model=a.model or "")
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{out}.txt").write_text(rep.to_text())
    Path(f"{out}_diff.csv").write_text(rep.diff_csv())
    _summary("synth-eval", overall_quality=rep.overall_quality, column_shapes=rep.column_shapes,
             column_pair_trends=rep.column_pair_trends, proximity=rep.proximity,
             out=f"{out}.txt")


def cmd_augment(a):
    table, _ = _table(a.csv)
    out = balance_dataset(table, a.synthesizer, a.seed, target=a.target, k=a.k)
    write_sample_table(out, a.out)
    _summary("augment", synthesizer=a.synthesizer, rows_in=len(table), rows_out=len(out),
             growth_factor=round(len(out) / max(len(table), 1), 6), seed=a.seed, out=a.out)


def cmd_train(a):
    train, _ = _table(a.train)
    val, _ = _table(a.val, train.schema)
    test = _table(a.test, train.schema)[0] if a.test else None
    ens = ens_mod.train_stack(parse_roster(a.roster_l1), parse_roster(a.roster_l2), train, val,
                              a.folds, a.seed, test, a.iterations, a.jobs)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    ens_mod.save_ensemble(ens, out / "model.fven")
    fields = {"models": len(ens.names), "seed": a.seed, "out": str(out / "model.fven"),
              "val_acc": round(ens.val_acc["WeightedEnsemble_L3"], 6)}
    if test is not None:
        board = ens_mod.leaderboard(ens)
        (out / "leaderboard.csv").write_text(ens_mod.leaderboard_csv(board))
        fields["max_gap"] = round(max(r.gap for r in board), 6)
    _summary("train", **fields)


def cmd_evaluate(a):
    ens = ens_mod.load_ensemble(a.model)
    test, _ = load_sample_table(a.test, ens.schema)
    rep = ens_mod.evaluate(ens, test)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_report.csv").write_text(rep.to_csv())
    (out / "confusion.csv").write_text(rep.confusion_csv())
    _summary("evaluate", accuracy=rep.accuracy, macro_f1=rep.macro_f1, rows=len(test),
             out=str(out / "eval_report.csv"))


def cmd_importance(a):
    ens = ens_mod.load_ensemble(a.model)
    test, _ = load_sample_table(a.test, ens.schema)
    recs = permutation_importance(ens, test, a.repeats, a.seed)
    Path(a.out).write_text(importance_csv(recs))
    _summary("importance", features=len(recs), repeats=a.repeats, top=recs[0].feature,
             seed=a.seed, out=a.out)


def cmd_map(a):
    ens = ens_mod.load_ensemble(a.model)
    stack = load_raster_stack(a.manifest)
    features = build_feature_stack(stack, ens.schema)
    fmap = classify_raster(ens, features, a.tile)
    masked = 0
    if not a.no_mask:
        ndvi, ndwi, bui = mask_index_bands(stack)
        before = fmap.labels.values.copy()
        fmap = apply_nonburnable_mask(fmap, ndvi, ndwi, bui, a.ndvi_thresh, a.ndwi_thresh,
                                      a.bui_thresh)
        masked = int(np.count_nonzero(before != fmap.labels.values))
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    paths = export_fuel_map(fmap, a.out)
    _summary("map", shape=list(fmap.shape), valid=int(fmap.labels.valid.sum()),
             masked=masked, legend={str(k): v for k, v in fmap.legend.items()},
             out=[str(p) for p in paths])


def cmd_fixture(a):
    kw = {"seed": a.seed, "separation": a.separation, "feature_dim": a.feature_dim}
    if a.samples:
        kw.update(samples_per_class=tuple(a.samples), n_classes=len(a.samples))
    world = generate_world(WorldSpec(**kw))
    cfg = write_world(world, a.out)
    _summary("fixture", shape=list(world.stack.shape), plots=len(world.plots),
             test_rows=len(world.test), val_rows=len(world.val), seed=a.seed, config=str(cfg))


def cmd_run(a):
    cfg = load_config(a.config)
    if a.seed is not None:
        cfg = cfg.with_(seed=a.seed)
    if a.out:
        cfg = cfg.with_(out=Path(a.out).resolve())
    if a.jobs is not None:
        cfg = cfg.with_(jobs=a.jobs)
    res = run_pipeline(cfg, verbose=a.verbose)
    _summary("run", **{k: (round(v, 6) if isinstance(v, float) else v) for k, v in res.items()})


def cmd_ablation(a):
    cfg = load_config(a.config)
    if a.seed is not None:
        cfg = cfg.with_(seed=a.seed)
    if a.jobs is not None:
        cfg = cfg.with_(jobs=a.jobs)
    res = run_ablation(cfg, verbose=a.verbose)
    if a.out:
        Path(a.out).write_text(res.to_csv())
    _summary("ablation", macro_f1={k: round(v, 6) for k, v in res.macro_f1.items()},
             growth_factor=round(res.growth_factor, 6), synthesizer=res.synthesizer, out=a.out)


# -- parser ----------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fuelmap", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--log-level", default="WARNING",
                   choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_, seed_required=False, out_required=True, out_help="output path",
            seed_help="accepted for uniformity; this step is deterministic"):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("--seed", type=int, required=seed_required,
                        help="random seed" if seed_required else seed_help)
        sp.add_argument("--out", required=out_required, help=out_help)
        sp.set_defaults(func=func)
        return sp

    sp = add("ingest", cmd_ingest, "validate a sample CSV and report row accounting",
             out_required=False, out_help="write the cleaned table here")
    sp.add_argument("csv")
    sp.add_argument("--features", help="comma-separated schema (default: CSV header)")

    sp = add("indices", cmd_indices, "compute feature or index bands from a raster manifest",
             out_help="output directory for the derived raster stack")
    sp.add_argument("manifest")
    sp.add_argument("--index", action="append", metavar="NAME",
                    help=f"compute only this index (repeatable): {', '.join(INDICES)}")
    sp.add_argument("--features", help="comma-separated schema (default: 24-feature schema)")

    sp = add("pseudolabel", cmd_pseudolabel, "propagate plot labels to similar nearby pixels",
             out_help="pseudo-label sample CSV")
    sp.add_argument("manifest")
    sp.add_argument("plots", help="CSV with row, col, label")
    sp.add_argument("--radius", type=float, default=1000.0, help="metres (default 1000)")
    sp.add_argument("--threshold", type=float, default=0.99)
    sp.add_argument("--window", type=int, default=3)
    sp.add_argument("--features", help="comma-separated schema (default: 24-feature schema)")

    sp = add("synth-eval", cmd_synth_eval, "fidelity scores of a synthetic table against a real one",
             out_help="report prefix; writes <prefix>.txt and <prefix>_diff.csv")
    sp.add_argument("real")
    sp.add_argument("synth")
    sp.add_argument("--per-class", action="store_true")
    sp.add_argument("--model", help="synthesizer name recorded in the report")

    sp = add("augment", cmd_augment, "balance classes with synthetic rows", seed_required=True,
             out_help="augmented sample CSV")
    sp.add_argument("csv")
    sp.add_argument("--synthesizer", choices=SYNTHESIZERS, default="smote")
    sp.add_argument("--target", type=int, help="rows per class (default: majority count)")
    sp.add_argument("--k", type=int, default=5, help="SMOTE neighbours")

    sp = add("train", cmd_train, "train the stacked ensemble", seed_required=True,
             out_help="output directory for model.fven and leaderboard.csv")
    sp.add_argument("train")
    sp.add_argument("val")
    sp.add_argument("--test", help="held-out CSV; enables the leaderboard")
    sp.add_argument("--roster-l1", default=DEFAULT_ROSTER_L1)
    sp.add_argument("--roster-l2", default=DEFAULT_ROSTER_L2)
    sp.add_argument("--folds", type=int, default=5)
    sp.add_argument("--iterations", type=int, default=100)
    sp.add_argument("--jobs", type=int, help="worker processes (default: FV_JOBS or 1)")

    sp = add("evaluate", cmd_evaluate, "per-class report and confusion matrix",
             out_help="output directory")
    sp.add_argument("model")
    sp.add_argument("test")

    sp = add("importance", cmd_importance, "permutation feature importance", seed_required=True,
             out_help="importance CSV")
    sp.add_argument("model")
    sp.add_argument("test")
    sp.add_argument("--repeats", type=int, default=DEFAULT_REPEATS)

    sp = add("map", cmd_map, "classify a raster and mask non-burnable pixels",
             out_help="output prefix; writes _labels.fvr, _prob.fvr, _legend.csv")
    sp.add_argument("model")
    sp.add_argument("manifest")
    sp.add_argument("--ndvi-thresh", type=float, default=0.0)
    sp.add_argument("--ndwi-thresh", type=float, default=0.5)
    sp.add_argument("--bui-thresh", type=float, default=0.5)
    sp.add_argument("--tile", type=int, default=256)
    sp.add_argument("--no-mask", action="store_true", help="skip non-burnable masking")

    sp = add("fixture", cmd_fixture, "write a synthetic world and a ready-to-run config",
             seed_required=True, out_help="output directory")
    sp.add_argument("--separation", type=float, default=WorldSpec.separation)
    sp.add_argument("--samples", type=int, nargs="+", metavar="N",
                    help="plots per class (default: 150 5 5)")
    sp.add_argument("--feature-dim", type=int, default=WorldSpec.feature_dim)

    for name, func, help_ in (("run", cmd_run, "run every stage from a config file"),
                              ("ablation", cmd_ablation,
                               "macro-F1 of raw, pseudo-labelled and synthetic training sets")):
        sp = add(name, func, help_, out_required=False,
                 out_help="output directory (run) or CSV (ablation); overrides the config",
                 seed_help="overrides the config seed")
        sp.add_argument("config")
        sp.add_argument("--jobs", type=int, help="worker processes (default: FV_JOBS or 1)")
        sp.add_argument("--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except PipelineError as exc:
        print(f"fuelmap {args.command}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, IndexError, RuntimeError) as exc:
        print(f"fuelmap {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
