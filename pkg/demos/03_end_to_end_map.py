"""
From rasters and plots to a masked fuel map
===========================================

Writes the bundled imbalanced fixture to a scratch directory, runs every
stage from its config, then reads back the leaderboard and the map.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from fuelmap.datamodel import read_fvr
from fuelmap.fixtures import ACCEPTANCE_WORLD, generate_world, write_world
from fuelmap.pipeline import load_config, run_pipeline

work = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="fuelmap_"))
cfg_path = write_world(generate_world(ACCEPTANCE_WORLD), work)
print("config:", cfg_path)
print(cfg_path.read_text())

summary = run_pipeline(load_config(cfg_path), verbose=False)
out = Path(summary["out"])
print(f"test accuracy {summary['accuracy']:.3f}, macro-F1 {summary['macro_f1']:.3f}, "
      f"synthesizer {summary['synthesizer']}")

print((out / "leaderboard.csv").read_text())
print((out / "eval_report.csv").read_text())

labels, _ = read_fvr(out / "fuelmap_labels.fvr")
codes, counts = np.unique(labels.values[labels.valid], return_counts=True)
print("map pixels per class id:", dict(zip(codes.astype(int).tolist(), counts.tolist())))
