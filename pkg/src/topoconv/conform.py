"""Convolution layers that sample at learned fractional offsets.

``offset_sampled_conv`` evaluates a 3x3 kernel at per-pixel, per-tap
displaced positions via bilinear interpolation (zero outside the image)
and provides gradients for the input, the offsets and the kernel.  On top
of it sit three interchangeable blocks: a plain convolution, a deformable
variant whose offsets come straight from the input, and the conformable
variant whose offsets are driven by the topological posterior.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Parameter, ShapeError, Tensor, _make_node
from .tpg import TpgConfig, posterior as tpg_posterior

# 3x3 receptive field taps in raster order (-1,-1) .. (1,1); offset channels
# (2c, 2c+1) hold (dy, dx) for tap c.
TAPS = tuple((c // 3 - 1, c % 3 - 1) for c in range(9))
OFFSET_CHANNELS = 2 * len(TAPS)


def _gather_corner(src_flat, y, x, h, w):
    """Values of one integer corner for every (n, i, j); zero outside."""
    valid = (y >= 0) & (y < h) & (x >= 0) & (x < w)
    lin = np.clip(y, 0, h - 1) * w + np.clip(x, 0, w - 1)
    vals = np.take_along_axis(src_flat, lin[:, None].reshape(lin.shape[0], 1, -1), axis=2)
    vals = vals.reshape(src_flat.shape[0], src_flat.shape[1], *y.shape[1:])
    return vals * valid[:, None], valid, lin


def bilinear_sample(source, y: float, x: float, n: int = 0, c: int = 0) -> float:
    """Bilinear probe of one (sample, channel) plane; zero outside bounds."""
    data = source.data if isinstance(source, Tensor) else np.asarray(source, dtype=np.float64)
    plane = data[n, c]
    h, w = plane.shape
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    wy, wx = y - y0, x - x0
    total = 0.0
    for dy, dx, wgt in (
        (0, 0, (1 - wy) * (1 - wx)),
        (0, 1, (1 - wy) * wx),
        (1, 0, wy * (1 - wx)),
        (1, 1, wy * wx),
    ):
        yy, xx = y0 + dy, x0 + dx
        if 0 <= yy < h and 0 <= xx < w:
            total += wgt * plane[yy, xx]
    return float(total)


def offset_sampled_conv(source: Tensor, offsets: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """3x3 convolution sampled at p + p_c + offset_c with bilinear interpolation."""
    if source.data.ndim != 4:
        raise ShapeError("offset_sampled_conv expects rank-4 input")
    n, cin, h, w = source.data.shape
    cout, cin_w, kh, kw = weight.data.shape
    if (kh, kw) != (3, 3):
        raise ShapeError("offset sampling is defined for 3x3 kernels")
    if cin != cin_w:
        raise ShapeError(f"input has {cin} channels but weights expect {cin_w}")
    if offsets.data.shape != (n, OFFSET_CHANNELS, h, w):
        raise ShapeError(
            f"offsets must be [N,{OFFSET_CHANNELS},H,W], got {offsets.data.shape}"
        )

    src = source.data
    src_flat = src.reshape(n, cin, h * w)
    wr = weight.data.reshape(cout, cin, 9)
    ii = np.arange(h, dtype=np.float64)[None, :, None]
    jj = np.arange(w, dtype=np.float64)[None, None, :]

    sampled = np.empty((n, cin, 9, h, w))
    tap_pos = []
    for c, (dy, dx) in enumerate(TAPS):
        y = ii + dy + offsets.data[:, 2 * c]
        x = jj + dx + offsets.data[:, 2 * c + 1]
        y0 = np.floor(y).astype(np.int64)
        x0 = np.floor(x).astype(np.int64)
        wy = y - y0
        wx = x - x0
        v00, _, _ = _gather_corner(src_flat, y0, x0, h, w)
        v01, _, _ = _gather_corner(src_flat, y0, x0 + 1, h, w)
        v10, _, _ = _gather_corner(src_flat, y0 + 1, x0, h, w)
        v11, _, _ = _gather_corner(src_flat, y0 + 1, x0 + 1, h, w)
        wyb = wy[:, None]
        wxb = wx[:, None]
        sampled[:, :, c] = (
            v00 * (1 - wyb) * (1 - wxb)
            + v01 * (1 - wyb) * wxb
            + v10 * wyb * (1 - wxb)
            + v11 * wyb * wxb
        )
        tap_pos.append((y0, x0, wy, wx))

    out_data = np.einsum("oic,nichw->nohw", wr, sampled, optimize=True)
    out_data += bias.data[None, :, None, None]

    def bw(g):
        if weight.requires_grad:
            gw = np.einsum("nohw,nichw->oic", g, sampled, optimize=True)
            weight.accumulate_grad(gw.reshape(cout, cin, 3, 3))
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if not (source.requires_grad or offsets.requires_grad):
            return
        dsampled = np.einsum("oic,nohw->nichw", wr, g, optimize=True)
        doff = np.zeros_like(offsets.data) if offsets.requires_grad else None
        scatter_idx = []
        scatter_val = []
        sample_base = (np.arange(n, dtype=np.int64) * (h * w))[:, None, None]
        for c, _ in enumerate(TAPS):
            y0, x0, wy, wx = tap_pos[c]
            dval = dsampled[:, :, c]
            corners = (
                (y0, x0, (1 - wy) * (1 - wx)),
                (y0, x0 + 1, (1 - wy) * wx),
                (y0 + 1, x0, wy * (1 - wx)),
                (y0 + 1, x0 + 1, wy * wx),
            )
            if source.requires_grad:
                for yc, xc, wgt in corners:
                    valid = (yc >= 0) & (yc < h) & (xc >= 0) & (xc < w)
                    lin = np.clip(yc, 0, h - 1) * w + np.clip(xc, 0, w - 1)
                    scatter_idx.append((sample_base + lin).ravel())
                    scatter_val.append(dval * (wgt * valid)[:, None])
            if doff is not None:
                v00, _, _ = _gather_corner(src_flat, y0, x0, h, w)
                v01, _, _ = _gather_corner(src_flat, y0, x0 + 1, h, w)
                v10, _, _ = _gather_corner(src_flat, y0 + 1, x0, h, w)
                v11, _, _ = _gather_corner(src_flat, y0 + 1, x0 + 1, h, w)
                wyb = wy[:, None]
                wxb = wx[:, None]
                dv_dy = (v10 - v00) * (1 - wxb) + (v11 - v01) * wxb
                dv_dx = (v01 - v00) * (1 - wyb) + (v11 - v10) * wyb
                doff[:, 2 * c] = (dval * dv_dy).sum(axis=1)
                doff[:, 2 * c + 1] = (dval * dv_dx).sum(axis=1)
        if source.requires_grad:
            # One bincount per channel beats np.add.at by a wide margin.
            all_idx = np.concatenate(scatter_idx)
            dsrc = np.empty((n * h * w, cin))
            for ci in range(cin):
                weights = np.concatenate([v[:, ci].ravel() for v in scatter_val])
                dsrc[:, ci] = np.bincount(all_idx, weights=weights, minlength=n * h * w)
            source.accumulate_grad(
                dsrc.reshape(n, h, w, cin).transpose(0, 3, 1, 2)
            )
        if doff is not None:
            offsets.accumulate_grad(doff)

    return _make_node(out_data, (source, offsets, weight, bias), bw)


# ---------------------------------------------------------------------------
# blocks


def he_init(rng: np.random.Generator, shape) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class BatchNorm2d:
    """Batch norm parameters plus running statistics for one block."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.state = BatchNormState(channels)
        self.eps = eps
        self.momentum = momentum

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return ad.batch_norm(x, self.gamma, self.beta, self.state, train, self.eps, self.momentum)

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]


class ConvBlock:
    """conv 3x3 -> batch norm -> ReLU."""

    kind = "conv"

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, kernel: int = 3):
        self.weight = Parameter(he_init(rng, (out_channels, in_channels, kernel, kernel)))
        self.bias = Parameter(np.zeros(out_channels))
        self.bn = BatchNorm2d(out_channels)
        self.padding = (kernel - 1) // 2

    def pre_norm(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, self.padding)

    def forward(self, x: Tensor, train: bool = True) -> Tensor:
        return ad.relu(self.bn(self.pre_norm(x), train))

    def parameters(self):
        params = [("weight", self.weight), ("bias", self.bias)]
        params += [("bn." + n, p) for n, p in self.bn.parameters()]
        return params


class _OffsetBlock:
    """Shared machinery for the deformable and conformable blocks."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        # Zero-initialised offset conv: the layer starts as an exact
        # standard convolution.
        self.offset_weight = Parameter(np.zeros((OFFSET_CHANNELS, in_channels, 3, 3)))
        self.offset_bias = Parameter(np.zeros(OFFSET_CHANNELS))
        self.weight = Parameter(he_init(rng, (out_channels, in_channels, 3, 3)))
        self.bias = Parameter(np.zeros(out_channels))
        self.bn = BatchNorm2d(out_channels)

    def offsets(self, guide: Tensor) -> Tensor:
        off = ad.conv2d(guide, self.offset_weight, self.offset_bias, 1)
        if not np.isfinite(off.data).all():
            raise FloatingPointError("offset field contains non-finite values")
        return off

    def forward(self, x: Tensor, train: bool = True) -> Tensor:
        return ad.relu(self.bn(self.pre_norm(x), train))

    def parameters(self):
        params = [
            ("offset_weight", self.offset_weight),
            ("offset_bias", self.offset_bias),
            ("weight", self.weight),
            ("bias", self.bias),
        ]
        params += [("bn." + n, p) for n, p in self.bn.parameters()]
        return params


class DeformLayer(_OffsetBlock):
    """Deformable baseline: offsets are generated directly from the input."""

    kind = "deform"

    def pre_norm(self, x: Tensor) -> Tensor:
        return offset_sampled_conv(x, self.offsets(x), self.weight, self.bias)


class ConformLayer(_OffsetBlock):
    """Offsets are generated from the topological posterior of the input.

    ``sample_source`` chooses what the displaced kernel reads: the raw
    input (default) or the posterior itself.
    """

    kind = "conform"

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        tpg_cfg: TpgConfig | None = None,
        sample_source: str = "input",
    ):
        super().__init__(in_channels, out_channels, rng)
        if sample_source not in ("input", "posterior"):
            raise ValueError(f"sample_source must be 'input' or 'posterior', got {sample_source!r}")
        self.tpg_cfg = tpg_cfg if tpg_cfg is not None else TpgConfig()
        self.sample_source = sample_source
        self.last_tpg_mode = None

    def posterior(self, x: Tensor) -> Tensor:
        self.last_tpg_mode = "aggregate" if self.tpg_cfg.aggregate else "no_aggregation"
        return tpg_posterior(x, self.tpg_cfg)

    def pre_norm(self, x: Tensor) -> Tensor:
        post = self.posterior(x)
        source = x if self.sample_source == "input" else post
        return offset_sampled_conv(source, self.offsets(post), self.weight, self.bias)
