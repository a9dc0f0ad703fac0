#!/usr/bin/env python3
"""Run the 2x3 method matrix and print the evaluation table.

Builds a deviated scene from a config file, simulates stationary trial
sequences, localizes every scan under each (icp x scan) combination, and
reports repeatability, accuracy, and failure rate per method, averaged over
executions. This is the same path the `planloc run-matrix` command takes.
"""

import json
import tempfile
from pathlib import Path

from planloc.experiment import load_config, run_matrix

root = Path(tempfile.mkdtemp(prefix="planloc_demo_"))

(root / "plan.json").write_text(
    json.dumps(
        {
            "walls": [
                {"start": [0, 0], "end": [6, 0], "thickness": 0.2, "id": "wall_a"},
                {"start": [0, 0], "end": [0, 6], "thickness": 0.2, "id": "wall_b"},
                {"start": [0, 6], "end": [6, 6], "thickness": 0.2, "id": "wall_c"},
                {"start": [6, 0], "end": [6, 6], "thickness": 0.2, "id": "wall_d"},
            ],
            "wall_height": 2.5,
            "floor": [[0, 0], [6, 0], [6, 6], [0, 6]],
        }
    )
)
(root / "refs.json").write_text(json.dumps(["floor", "wall_a", "wall_b"]))
(root / "experiment.json").write_text(
    json.dumps(
        {
            "schema": 1,
            "floorplan": "plan.json",
            "references": "refs.json",
            "deviation": [{"surfaces": ["wall_c"], "translation": [0, -0.3, 0]}],
            "lidar": {"rings": 16, "azimuth_step_deg": 2.0, "range_noise_m": 0.01},
            "cameras": {"count": 3, "width": 128, "height": 96, "hfov_deg": 125.0},
            "prism": {"offset": [0.1, 0.0, 0.4]},
            "map_density_per_m2": 400,
            "robot_pose": {"translation": [3.0, 3.4, 0.45]},
            "selective": {
                "tau_trans_m": 0.4,
                "tau_rot_rad": 0.1,
                "icp": {"max_correspondence_m": 0.35, "huber_scale_m": 0.015},
            },
            "n_scans": 12,
            "n_executions": 2,
            "seed": 3,
            "out_dir": "out",
        },
        indent=2,
    )
)

cfg = load_config(root / "experiment.json")
print(f"running {cfg.n_executions} executions x {cfg.n_scans} scans x 6 methods ...\n")
csv_path, jsonl_path = run_matrix(cfg)

lines = csv_path.read_text().splitlines()
header = lines[0].split(",")
widths = [10, 9, 16, 14, 18, 16, 9, 12]
print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
for line in lines[1:]:
    cells = line.split(",")
    cells[2:] = [f"{float(c):.2f}" for c in cells[2:]]
    print("  ".join(c.ljust(w) for c, w in zip(cells, widths)))

n_failed = sum(
    json.loads(l)["outcome"] == "failed" for l in jsonl_path.read_text().splitlines()
)
print(f"\nper-trial log: {jsonl_path} ({n_failed} failed localizations)")
print("note how the full-model rows absorb the 0.3 m deviation into their rmse,")
print("while the selective rows localize against the task corner instead.")
