#!/usr/bin/env python3
"""Ablate the posterior pipeline and the bottleneck depth.

Rows: every generator-pipeline switch turned off one at a time
(persistence filtering, Gaussian dilation, additive aggregation), plus
conform bottleneck depths 0-3.  Depth 0 degenerates to the plain conv
baseline, which anchors the table.
"""

import argparse
import dataclasses
import json
import sys
import time

from topoconv import __version__
from topoconv.training import TrainConfig, ablation_suite


def parse_args(argv):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0,1,2", help="comma-separated run seeds")
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--n-train", type=int, default=80)
    ap.add_argument("--n-test", type=int, default=20)
    ap.add_argument("--quick", action="store_true",
                    help="tiny protocol (2 epochs, 8 samples) for smoke testing")
    ap.add_argument("--out", default=None, help="write full results as JSON")
    return ap.parse_args(argv)


def print_table(title, rows, seeds):
    print(f"\n{title} (test-set means over seeds {seeds}):")
    print(f"{'row':14s}{'betti0_error':>14s}{'euler_error':>14s}{'dice':>10s}{'cl_dice':>10s}")
    for name, by_seed in rows.items():
        ms = [by_seed[str(s)]["metrics"] for s in seeds]
        mean = lambda key: sum(m[key] for m in ms) / len(ms)
        print(f"{name:14s}{mean('betti0_error'):14.4f}{mean('euler_error'):14.4f}"
              f"{mean('dice'):10.4f}{mean('cl_dice'):10.4f}")


def main(argv=None):
    args = parse_args(argv)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    cfg = TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        n_train=args.n_train,
        n_test=args.n_test,
    )
    if args.quick:
        cfg = dataclasses.replace(cfg, epochs=2, n_train=6, n_test=2,
                                  height=16, width=16)

    t0 = time.time()

    def progress(name, seed, report):
        print(f"  [{time.time() - t0:6.1f}s] {name:14s} seed {seed}  "
              f"b0_err {report.betti0_error:.2f}  dice {report.dice:.3f}")

    table = ablation_suite(cfg, seeds, progress=progress)
    print_table("pipeline components", table["components"], seeds)
    print_table("bottleneck depth", table["layers"], seeds)

    if args.out:
        payload = dict(table)
        payload["version"] = __version__
        payload["config"] = dataclasses.asdict(cfg)
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"\nwrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
