"""Synthetic topology-rich segmentation data: rings, curves and blobs.

Every sample is drawn from a per-sample integer seed, so a dataset is a
pure function of (n, kinds, shape, noise, master seed) and any single
sample can be regenerated from its recorded seed alone.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import fileio
from .metrics import betti_numbers

KINDS = ("ring", "curve", "blobs")
INDEX_NAME = "index.json"


@dataclass
class SynthSample:
    image: np.ndarray  # float64 [1, H, W] in [0, 1]
    mask: np.ndarray  # uint8 [H, W]
    kind: str
    seed: int


def _draw_ring(rng, h, w):
    radius_cap = 0.38 * min(h, w)
    for _ in range(200):
        r_out = rng.uniform(0.55 * radius_cap, radius_cap)
        thickness = rng.uniform(1.5, max(2.0, 0.45 * r_out))
        r_in = r_out - thickness
        if r_in < 1.5:
            continue
        cy = rng.uniform(r_out + 1, h - r_out - 2)
        cx = rng.uniform(r_out + 1, w - r_out - 2)
        yy, xx = np.mgrid[0:h, 0:w]
        dist = np.hypot(yy - cy, xx - cx)
        mask = ((dist <= r_out) & (dist >= r_in)).astype(np.uint8)
        if betti_numbers(mask) == (1, 1):
            return mask
    raise RuntimeError("could not draw a valid ring; grid too small?")


def _draw_curve(rng, h, w):
    for _ in range(200):
        mask = np.zeros((h, w), dtype=np.uint8)
        y = int(rng.integers(2, h - 2))
        x = int(rng.integers(2, w - 2))
        heading = int(rng.integers(0, 4))  # 0=N 1=E 2=S 3=W
        thick = bool(rng.random() < 0.5)
        steps = int(1.8 * (h + w))
        moves = ((-1, 0), (0, 1), (1, 0), (0, -1))
        for _ in range(steps):
            mask[y, x] = 1
            if thick:
                mask[min(y + 1, h - 1), x] = 1
                mask[y, min(x + 1, w - 1)] = 1
                mask[min(y + 1, h - 1), min(x + 1, w - 1)] = 1
            turn = rng.random()
            if turn < 0.2:
                heading = (heading + 1) % 4
            elif turn < 0.4:
                heading = (heading - 1) % 4
            dy, dx = moves[heading]
            ny, nx = y + dy, x + dx
            if not (1 <= ny < h - 1 and 1 <= nx < w - 1):
                heading = (heading + 2) % 4
                continue
            y, x = ny, nx
        b0, _ = betti_numbers(mask)
        if b0 == 1 and mask.sum() >= min(h, w):
            return mask
    raise RuntimeError("could not draw a valid curve")


def _draw_blobs(rng, h, w):
    for _ in range(200):
        k = int(rng.integers(2, 5))
        mask = np.zeros((h, w), dtype=np.uint8)
        placed = 0
        yy, xx = np.mgrid[0:h, 0:w]
        for _ in range(80):
            if placed == k:
                break
            a = rng.uniform(2.0, 0.18 * min(h, w))
            b = rng.uniform(2.0, 0.18 * min(h, w))
            theta = rng.uniform(0.0, np.pi)
            cy = rng.uniform(a + b + 1, h - a - b - 2)
            cx = rng.uniform(a + b + 1, w - a - b - 2)
            u = (yy - cy) * np.cos(theta) + (xx - cx) * np.sin(theta)
            v = -(yy - cy) * np.sin(theta) + (xx - cx) * np.cos(theta)
            blob = ((u / a) ** 2 + (v / b) ** 2 <= 1.0).astype(np.uint8)
            if blob.sum() < 4:
                continue
            # Keep blobs 8-separated so components never merge or form holes.
            pad = np.pad(mask, 1)
            grown = (
                pad[:-2, :-2] | pad[:-2, 1:-1] | pad[:-2, 2:]
                | pad[1:-1, :-2] | pad[1:-1, 1:-1] | pad[1:-1, 2:]
                | pad[2:, :-2] | pad[2:, 1:-1] | pad[2:, 2:]
            )
            if (blob & grown).any():
                continue
            mask |= blob
            placed += 1
        if placed >= 2 and betti_numbers(mask) == (placed, 0):
            return mask
    raise RuntimeError("could not draw valid blobs")


_DRAWERS = {"ring": _draw_ring, "curve": _draw_curve, "blobs": _draw_blobs}


def make_sample(kind: str, h: int, w: int, noise_sigma: float, seed: int) -> SynthSample:
    if kind not in _DRAWERS:
        raise ValueError(f"unknown sample kind {kind!r}; choose from {KINDS}")
    if h < 16 or w < 16:
        raise ValueError(f"grid must be at least 16x16, got {h}x{w}")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    mask = _DRAWERS[kind](rng, h, w)
    image = mask.astype(np.float64)
    if noise_sigma > 0:
        image = image + noise_sigma * rng.standard_normal((h, w))
    image = np.clip(image, 0.0, 1.0)
    return SynthSample(image=image[None], mask=mask, kind=kind, seed=int(seed))


def generate_dataset(
    n: int,
    kinds=KINDS,
    h: int = 32,
    w: int = 32,
    noise_sigma: float = 0.5,
    seed: int = 0,
) -> list:
    """n samples cycling through `kinds`, each from its own derived seed."""
    if n <= 0:
        raise ValueError("n must be positive")
    if isinstance(kinds, str):
        kinds = (kinds,)
    child_seeds = np.random.SeedSequence(seed).generate_state(n, dtype=np.uint32)
    return [
        make_sample(kinds[i % len(kinds)], h, w, noise_sigma, int(child_seeds[i]))
        for i in range(n)
    ]


def save_dataset(samples, outdir, extra_meta=None) -> None:
    os.makedirs(outdir, exist_ok=True)
    index = {"n": len(samples), "samples": []}
    if extra_meta:
        index.update(extra_meta)
    for i, s in enumerate(samples):
        img_name = f"img_{i:04d}.pgm"
        msk_name = f"msk_{i:04d}.pgm"
        fileio.write_pgm(os.path.join(outdir, img_name), s.image[0])
        fileio.write_pgm(os.path.join(outdir, msk_name), s.mask * np.uint8(255))
        index["samples"].append(
            {"image": img_name, "mask": msk_name, "kind": s.kind, "seed": s.seed}
        )
    with open(os.path.join(outdir, INDEX_NAME), "w") as f:
        json.dump(index, f, indent=2, sort_keys=True)
        f.write("\n")


def load_dataset(directory) -> list:
    index_path = os.path.join(directory, INDEX_NAME)
    try:
        with open(index_path) as f:
            index = json.load(f)
    except FileNotFoundError:
        raise FileNotFoundError(f"no {INDEX_NAME} in {directory}") from None
    samples = []
    for entry in index["samples"]:
        image = fileio.pgm_to_unit(fileio.read_pgm(os.path.join(directory, entry["image"])))
        mask_u8 = fileio.read_pgm(os.path.join(directory, entry["mask"]))
        if not np.isin(mask_u8, (0, 255)).all():
            raise ValueError(f"mask {entry['mask']} is not binary")
        samples.append(
            SynthSample(
                image=image[None],
                mask=(mask_u8 > 0).astype(np.uint8),
                kind=entry.get("kind", "unknown"),
                seed=int(entry.get("seed", -1)),
            )
        )
    return samples
