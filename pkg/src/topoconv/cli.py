"""Command-line entry point.

Subcommands: ph, prior, metrics, gen-data, train, eval, ablate, gradcheck.
Exit codes are stable for CI: 0 success, 1 usage error, 2 I/O error,
3 validation or assertion failure.  Identical invocations on identical
inputs produce byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, fileio
from .autodiff import ShapeError, Tensor
from .data import KINDS, generate_dataset, load_dataset, save_dataset
from .gradcheck import standard_suite
from .metrics import evaluate_pair
from .persistence import compute_ph0, diagram_to_csv, filter_diagram
from .tpg import TpgConfig, compute_prior
from .training import (
    TrainConfig,
    ablation_suite,
    evaluate,
    load_checkpoint,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_VALIDATION = 3

PATH_KEYS = ("data", "out", "ckpt")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _write_text(path, text: str) -> None:
    with open(path, "w", newline="") as f:
        f.write(text)


def _write_json(path, payload: dict) -> None:
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_run_config(path):
    """Read a config JSON; returns (TrainConfig, path defaults)."""
    if path is None:
        return TrainConfig(), {}
    with open(path) as f:
        doc = json.load(f)
    if not isinstance(doc, dict):
        raise ValueError("config must be a JSON object")
    paths = {k: doc.pop(k) for k in PATH_KEYS if k in doc}
    return TrainConfig.from_dict(doc), paths


def _echo(cfg: TrainConfig) -> dict:
    return {"version": __version__, "config": cfg.to_dict()}


def cmd_ph(args) -> int:
    image = fileio.pgm_to_unit(fileio.read_pgm(args.image))
    pd = compute_ph0(image, connectivity=args.connectivity)
    if args.tau0 is not None:
        pd = filter_diagram(pd, args.tau0)
    comments = [
        f"topoconv {__version__}",
        f"command: ph {os.path.basename(args.image)}",
        f"connectivity: {args.connectivity}",
        f"tau0: {'none' if args.tau0 is None else repr(args.tau0)}",
    ]
    _write_text(args.out, diagram_to_csv(pd, comments))
    return EXIT_OK


def cmd_prior(args) -> int:
    cfg, _ = _load_run_config(args.config)
    image = fileio.pgm_to_unit(fileio.read_pgm(args.image))
    phi = Tensor(image[None, None])
    prior, dilated, _ = compute_prior(phi, cfg.tpg)
    comments = [f"topoconv {__version__}", f"tpg: {json.dumps(cfg.to_dict()['tpg'], sort_keys=True)}"]
    fileio.write_pgm(args.out, prior[0], comments)
    if args.dilated is not None:
        fileio.write_pgm(args.dilated, dilated[0], comments)
    return EXIT_OK


def _load_probability(path) -> np.ndarray:
    if path.endswith(".tnsr"):
        arr = fileio.read_tensor(path)
        arr = np.squeeze(arr)
        if arr.ndim != 2:
            raise ValueError(f"probability tensor must be 2-D after squeeze, got {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("probability values must lie in [0, 1]")
        return arr
    return fileio.pgm_to_unit(fileio.read_pgm(path))


def cmd_metrics(args) -> int:
    prob = _load_probability(args.pred)
    gt_u8 = fileio.read_pgm(args.gt)
    if not np.isin(gt_u8, (0, 255)).all():
        raise ValueError("ground-truth PGM must be binary (0 or 255)")
    gt = (gt_u8 > 0).astype(np.uint8)
    report = evaluate_pair(prob, gt, args.threshold)
    payload = report.to_dict()
    payload["version"] = __version__
    payload["config"] = {"threshold": args.threshold}
    _write_json(args.out, payload)
    return EXIT_OK


def cmd_gen_data(args) -> int:
    kinds = KINDS if args.kind == "mix" else (args.kind,)
    samples = generate_dataset(
        args.n, kinds=kinds, h=args.height, w=args.width,
        noise_sigma=args.noise_sigma, seed=args.seed,
    )
    meta = {
        "version": __version__,
        "config": {
            "n": args.n,
            "kind": args.kind,
            "height": args.height,
            "width": args.width,
            "noise_sigma": args.noise_sigma,
            "seed": args.seed,
        },
    }
    save_dataset(samples, args.out, extra_meta=meta)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, paths = _load_run_config(args.config)
    data_dir = args.data or paths.get("data")
    out_dir = args.out or paths.get("out")
    if data_dir is None or out_dir is None:
        raise _UsageError("train needs --data and --out (or config path keys)")
    dataset = load_dataset(data_dir)
    train(cfg, dataset, out_dir=out_dir, verbose=args.verbose)
    return EXIT_OK


def cmd_eval(args) -> int:
    model, cfg, manifest = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    mean_report, per_image = evaluate(model, dataset, cfg.threshold)
    payload = {
        "version": __version__,
        "config": manifest["config"],
        "mean": mean_report.to_dict(),
        "per_image": [r.to_dict() for r in per_image],
    }
    _write_json(args.out, payload)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg, _ = _load_run_config(args.config)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    table = ablation_suite(cfg, seeds=seeds)
    table["version"] = __version__
    table["config"] = cfg.to_dict()
    _write_json(args.out, table)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    entries = standard_suite()
    failures = 0
    for e in entries:
        status = "ok" if e.passed else "FAIL"
        print(f"{e.name:24s} max_rel_err {e.report.max_rel_err:.3e}  tol {e.tolerance:.0e}  {status}")
        failures += 0 if e.passed else 1
    if failures:
        print(f"{failures} gradient check(s) failed", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="topoconv", description=__doc__)
    parser.add_argument("--version", action="version", version=f"topoconv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ph", help="persistence diagram of a grayscale image")
    p.add_argument("image")
    p.add_argument("--tau0", type=float, default=None,
                   help="drop pairs with persistence <= tau0 (default: keep all)")
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ph)

    p = sub.add_parser("prior", help="rasterised topological prior of an image")
    p.add_argument("image")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--dilated", default=None)
    p.set_defaults(func=cmd_prior)

    p = sub.add_parser("metrics", help="metric report for a prediction/gt pair")
    p.add_argument("pred", help="prediction (.pgm mask or .tnsr probability map)")
    p.add_argument("gt", help="ground-truth binary .pgm")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--kind", choices=KINDS + ("mix",), default="mix")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--noise-sigma", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train on a dataset directory")
    p.add_argument("--config", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="component and depth ablation table")
    p.add_argument("--config", default=None)
    p.add_argument("--seeds", default="0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, AssertionError, ShapeError, RuntimeError,
            FloatingPointError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
