#!/usr/bin/env python3
"""Generate the demo workspace, run evolution, and print the trajectory."""

from __future__ import annotations

import argparse
import csv
import json
import subprocess
import sys
from pathlib import Path


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workspace", default="demo_workspace")
    args = parser.parse_args()

    here = Path(__file__).parent
    subprocess.run(
        [sys.executable, str(here / "make_demo_task.py"), "--out", args.workspace],
        check=True,
    )
    config = Path(args.workspace) / "config.json"
    proc = subprocess.run(
        [sys.executable, "-m", "memsearch", "evolve", "--config", str(config)]
    )
    if proc.returncode != 0:
        return proc.returncode

    run_dir = Path(args.workspace) / "run"
    print("\nbest-so-far trajectory:")
    with open(run_dir / "plot_data.csv", newline="", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            bar = "#" * int(40 * float(row["best_so_far"])) if row["best_so_far"] else ""
            marker = " (discarded)" if row["discarded"] == "1" else ""
            print(f"  iter {row['iteration']:>2}  best={row['best_so_far']:<20} {bar}{marker}")

    best = json.loads((run_dir / "best_program").read_text())
    print(f"\nbest candidate {best['id']} (score {best['score']:.4f}): {run_dir / best['program']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
