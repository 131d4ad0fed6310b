#!/usr/bin/env python3
"""Render tracking panels from `resin run` output directories.

One panel per run directory: true target paths, sensor paths, and the
predicted nominal paths every `--every` steps.

    python3 scripts/plot_trajectories.py out/random out/nearest out/resin out/centralized -o tracking.png
"""

import argparse
import csv
import sys
from collections import defaultdict
from pathlib import Path


def load_run(run_dir):
    run_dir = Path(run_dir)
    targets = defaultdict(list)
    sensors = defaultdict(list)
    with open(run_dir / "trajectories.csv", newline="") as f:
        for row in csv.DictReader(f):
            xy = (float(row["x"]), float(row["y"]))
            if row["kind"] == "target":
                if row["active"] == "1":
                    targets[int(row["id"])].append((int(row["step"]), xy))
            else:
                sensors[int(row["id"])].append((int(row["step"]), xy))
    predictions = defaultdict(list)
    with open(run_dir / "predictions.csv", newline="") as f:
        for row in csv.DictReader(f):
            key = (int(row["step"]), int(row["sensor"]), int(row["target"]))
            predictions[key].append((int(row["tau"]), float(row["x"]), float(row["y"])))
    workspace = None
    manifest = run_dir / "manifest.toml"
    if manifest.exists():
        workspace = read_workspace(manifest.read_text())
    return targets, sensors, predictions, workspace


def read_workspace(text):
    """(width, height, planner) from a run manifest."""
    try:
        import tomllib
    except ImportError:
        tomllib = None
    if tomllib is not None:
        cfg = tomllib.loads(text)["config"]
        return cfg["workspace"]["width"], cfg["workspace"]["height"], cfg["planner"]
    # minimal fallback for Python < 3.11: the fields are unique keys
    import re

    def field(name, section):
        block = re.search(r"^\[config\.%s\]\n((?:[^\[].*\n?)*)" % section, text, re.M)
        return re.search(r"^%s = (.+)$" % name, block.group(1), re.M).group(1)

    planner = re.search(r'^planner = "(.+)"$', text, re.M).group(1)
    return float(field("width", "workspace")), float(field("height", "workspace")), planner


def split_runs(points):
    """Splits a step-indexed path wherever steps are not consecutive."""
    runs, current, last = [], [], None
    for step, xy in sorted(points):
        if last is not None and step != last + 1:
            runs.append(current)
            current = []
        current.append(xy)
        last = step
    if current:
        runs.append(current)
    return runs


def draw(ax, run, every, sensor):
    targets, sensors, predictions, workspace = run
    for tid, pts in sorted(targets.items()):
        for seg in split_runs(pts):
            ax.plot([p[0] for p in seg], [p[1] for p in seg], lw=1.0, color=f"C{tid % 10}", label=f"target {tid}")
    for sid, pts in sorted(sensors.items()):
        xy = [p for _, p in sorted(pts)]
        ax.plot([p[0] for p in xy], [p[1] for p in xy], "k--", lw=0.8)
        ax.plot(*xy[-1], "k^", ms=6)
    for (step, sid, tid), path in sorted(predictions.items()):
        if sid != sensor or step % every:
            continue
        path.sort()
        ax.plot([p[1] for p in path], [p[2] for p in path], ".", ms=2, color=f"C{tid % 10}")
    if workspace:
        ax.set_xlim(0, workspace[0])
        ax.set_ylim(0, workspace[1])
        ax.set_title(workspace[2])
    ax.set_aspect("equal")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("runs", nargs="+", help="run output directories")
    ap.add_argument("-o", "--output", default="tracking.png")
    ap.add_argument("--every", type=int, default=10, help="plot predictions every N steps")
    ap.add_argument("--sensor", type=int, default=0, help="whose predictions to draw")
    args = ap.parse_args(argv)

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    runs = [load_run(r) for r in args.runs]
    fig, axes = plt.subplots(1, len(runs), figsize=(4.5 * len(runs), 4.5), squeeze=False)
    for ax, run in zip(axes[0], runs):
        draw(ax, run, args.every, args.sensor)
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)
    print(f"wrote {args.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
