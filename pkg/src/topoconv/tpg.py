"""Topological posterior generation.

Pools a feature map across channels, extracts persistence generators,
rasterises the significant ones into a binary prior, softens it with a 3x3
Gaussian and folds the result back onto the input features.  The prior is
a constant with respect to differentiation: no gradient flows into the
persistence computation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autodiff as ad
from .autodiff import Tensor
from .persistence import (
    GeneratorSet,
    compute_ph0,
    filter_generators,
    normalize_unit,
    pairs_to_generators,
)


@dataclass
class TpgConfig:
    """Knobs of the prior pipeline.

    ``filter_enabled``, ``dilate_enabled`` and ``aggregate`` switch off the
    generator filtering, Gaussian dilation and additive skip term for the
    component ablations; all three default to on.
    """

    tau0: float = 0.05
    pool_mode: str = "max"  # "max" | "mean"
    gaussian_sigma: float = 1.0
    stop_gradient_prior: bool = True
    filter_enabled: bool = True
    dilate_enabled: bool = True
    aggregate: bool = True

    def __post_init__(self):
        if self.tau0 < 0:
            raise ValueError("tau0 must be >= 0")
        if self.pool_mode not in ("max", "mean"):
            raise ValueError(f"unknown pool_mode {self.pool_mode!r}")
        if self.gaussian_sigma <= 0:
            raise ValueError("gaussian_sigma must be > 0")
        if not self.stop_gradient_prior:
            raise ValueError("the prior is always detached; stop_gradient_prior must stay True")


def channel_pool(phi_in: Tensor, mode: str = "max") -> Tensor:
    """Reduce [N,C,H,W] across channels and min-max normalise per sample.

    Returns a constant (off-tape) [N,H,W] tensor; constant samples collapse
    to all zeros.
    """
    data = phi_in.data if isinstance(phi_in, Tensor) else np.asarray(phi_in, dtype=np.float64)
    if data.ndim != 4:
        raise ValueError(f"channel_pool expects [N,C,H,W], got shape {data.shape}")
    if mode == "max":
        pooled = data.max(axis=1)
    elif mode == "mean":
        pooled = data.mean(axis=1)
    else:
        raise ValueError(f"unknown pool_mode {mode!r}")
    out = np.stack([normalize_unit(p) for p in pooled])
    return Tensor(out)


def rasterize_prior(generators, shape) -> np.ndarray:
    """Binary [N,H,W] map with ones at every retained birth and death pixel.

    ``generators`` is one GeneratorSet per sample.  An out-of-bounds
    coordinate indicates a persistence bug upstream and raises.
    """
    n, h, w = shape
    if len(generators) != n:
        raise ValueError(f"got {len(generators)} generator sets for batch of {n}")
    prior = np.zeros((n, h, w))
    for i, gs in enumerate(generators):
        for (xb, yb), (xd, yd) in gs:
            for x, y in ((xb, yb), (xd, yd)):
                if not (0 <= x < w and 0 <= y < h):
                    raise RuntimeError(
                        f"generator coordinate ({x},{y}) outside {w}x{h} map: persistence bug"
                    )
                prior[i, y, x] = 1.0
    return prior


def gaussian_kernel3(sigma: float) -> np.ndarray:
    """3x3 Gaussian kernel normalised to unit sum."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    d = np.arange(-1, 2, dtype=np.float64)
    g = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def gaussian_dilate(prior: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    """Convolve a [0,1] prior with the normalised 3x3 Gaussian, zero padded.

    Accepts [H,W] or [N,H,W]; output is clamped to [0,1] (the unit-sum
    kernel cannot push a binary prior above 1 beyond float dust).
    """
    arr = np.asarray(prior, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[None]
    kernel = gaussian_kernel3(sigma)
    padded = np.pad(arr, ((0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(padded, (3, 3), axis=(1, 2))
    out = np.einsum("nhwij,ij->nhw", windows, kernel)
    np.clip(out, 0.0, 1.0, out=out)
    return out[0] if squeeze else out


def compute_prior(phi_in: Tensor, cfg: TpgConfig):
    """Run pool -> PH -> filter -> rasterise -> dilate for a whole batch.

    Returns (binary prior [N,H,W], dilated prior [N,H,W], per-sample
    persistence diagrams).  Everything is detached numpy data.
    """
    pooled = channel_pool(phi_in, cfg.pool_mode).data
    n, h, w = pooled.shape
    diagrams = []
    kept = []
    for i in range(n):
        pd = compute_ph0(pooled[i])
        gens = pairs_to_generators(pd)
        if cfg.filter_enabled:
            gens = filter_generators(pd, gens, cfg.tau0)
        diagrams.append(pd)
        kept.append(gens)
    prior = rasterize_prior(kept, (n, h, w))
    dilated = gaussian_dilate(prior, cfg.gaussian_sigma) if cfg.dilate_enabled else prior
    return prior, dilated, diagrams


def tpg_forward(phi_in: Tensor, cfg: TpgConfig) -> Tensor:
    """phi_post = phi_dil * phi_in + phi_in, with the dilated prior constant."""
    _, dilated, _ = compute_prior(phi_in, cfg)
    return ad.add(ad.mul(phi_in, Tensor(dilated)), phi_in)


def tpg_forward_no_aggregation(phi_in: Tensor, cfg: TpgConfig) -> Tensor:
    """Ablation variant without the additive skip: phi_post = phi_dil * phi_in."""
    _, dilated, _ = compute_prior(phi_in, cfg)
    return ad.mul(phi_in, Tensor(dilated))


def posterior(phi_in: Tensor, cfg: TpgConfig) -> Tensor:
    """Dispatch on ``cfg.aggregate`` between the two forward variants."""
    if cfg.aggregate:
        return tpg_forward(phi_in, cfg)
    return tpg_forward_no_aggregation(phi_in, cfg)
