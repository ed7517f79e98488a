#!/usr/bin/env python3
"""Compare conv / deform / conform bottlenecks on the synthetic benchmark.

Trains every bottleneck on the same per-seed datasets and reports test-set
topology errors and Dice.  The defaults reproduce the desk-scale protocol
used by the release gate; --quick shrinks everything for a smoke run.
"""

import argparse
import dataclasses
import json
import sys
import time

from topoconv import __version__
from topoconv.training import TrainConfig, paired_experiment

VARIANTS = {
    "conv": {"bottleneck": "conv"},
    "deform": {"bottleneck": "deform"},
    "conform": {"bottleneck": "conform"},
}

COLUMNS = ("betti0_error", "betti1_error", "euler_error", "dice", "cl_dice", "vi")


def parse_args(argv):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated run seeds")
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--n-train", type=int, default=80)
    ap.add_argument("--n-test", type=int, default=20)
    ap.add_argument("--noise-sigma", type=float, default=0.5)
    ap.add_argument("--quick", action="store_true",
                    help="tiny protocol (2 epochs, 8 samples) for smoke testing")
    ap.add_argument("--out", default=None, help="write full results as JSON")
    return ap.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    cfg = TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        n_train=args.n_train,
        n_test=args.n_test,
        noise_sigma=args.noise_sigma,
    )
    if args.quick:
        cfg = dataclasses.replace(cfg, epochs=2, n_train=6, n_test=2,
                                  height=16, width=16)

    t0 = time.time()

    def progress(name, seed, report):
        print(f"  [{time.time() - t0:6.1f}s] {name:8s} seed {seed}  "
              f"b0_err {report.betti0_error:.2f}  dice {report.dice:.3f}")

    rows = paired_experiment(cfg, VARIANTS, seeds, progress)

    print(f"\ntest-set means over seeds {seeds}:")
    header = "bottleneck  " + "".join(f"{c:>14s}" for c in COLUMNS)
    print(header)
    print("-" * len(header))
    for name in VARIANTS:
        reports = [rows[name][s].report for s in seeds]
        means = {
            c: sum(getattr(r, c) for r in reports) / len(reports) for c in COLUMNS
        }
        print(f"{name:12s}" + "".join(f"{means[c]:14.4f}" for c in COLUMNS))

    if args.out:
        payload = {
            "version": __version__,
            "config": dataclasses.asdict(cfg),
            "seeds": list(seeds),
            "rows": {
                name: {
                    str(s): {
                        "metrics": rows[name][s].report.to_dict(),
                        "loss_curve": rows[name][s].history,
                    }
                    for s in seeds
                }
                for name in VARIANTS
            },
        }
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"\nwrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
