#!/usr/bin/env python3
"""Desk-scale benchmark: every method on the desk preset, one summary table.

Artifacts land under --out-dir (default ./runs/desk): one run directory per
method with metrics.csv, model snapshot(s), manifest.json, plus the PCA
export for the prompt generator.  Add --sweep to also reproduce the
ablation grids (clients' class count, shots, participation).
"""

import argparse
import csv
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from fedtpg.cli import main as fedtpg_cli

METHODS = ("zeroshot", "coop_local", "fedcoop", "fedkgcoop", "fedtpg")


def last_row(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return rows[-1]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default=os.path.join("runs", "desk"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--sweep", action="store_true", help="also run the ablation grids")
    args = ap.parse_args()

    os.makedirs(args.out_dir, exist_ok=True)
    results = {}
    for method in METHODS:
        run_dir = os.path.join(args.out_dir, method)
        code = fedtpg_cli([
            "train", "--preset", "desk", "--method", method,
            "--set", f"fed.seed={args.seed}",
            "--out-dir", run_dir,
        ])
        if code != 0:
            return code
        results[method] = last_row(os.path.join(run_dir, "metrics.csv"))

    code = fedtpg_cli(["export-pca", "--run-dir", os.path.join(args.out_dir, "fedtpg")])
    if code != 0:
        return code

    print(f"\n{'method':<12} {'local':>8} {'base':>8} {'new':>8} {'hm':>8}")
    for method in METHODS:
        r = results[method]
        print(f"{method:<12} {float(r['local_acc']):>8.4f} {float(r['base_acc']):>8.4f} "
              f"{float(r['new_acc']):>8.4f} {float(r['hm']):>8.4f}")

    if args.sweep:
        grids = [
            ("n", ["--n", "5,10,20"]),
            ("shots", ["--shots", "1,2,4,8"]),
            ("participation", ["--participation", "0.1,0.4,0.7,1.0"]),
        ]
        for name, flags in grids:
            code = fedtpg_cli([
                "sweep", "--preset", "desk",
                "--set", f"fed.seed={args.seed}",
                "--out-dir", os.path.join(args.out_dir, f"sweep_{name}"),
                *flags,
            ])
            if code != 0:
                return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
