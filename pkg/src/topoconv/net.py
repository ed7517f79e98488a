"""Miniature encoder-decoder segmentation network with a swappable bottleneck.

Layout: conv(1→8) → 2× avg-pool → conv(8→16) → bottleneck(16→16, one of
conv | deform | conform) → 2× nearest upsample → concat with the
full-resolution encoder features → conv(24→8) → conv(8→8) → 1×1 head →
sigmoid.  All main weights are drawn in a fixed order from one generator,
and offset convolutions are zero-initialised without consuming draws, so
the three bottleneck variants share identical weights under the same seed.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .conform import ConformLayer, ConvBlock, DeformLayer, he_init
from .tpg import TpgConfig

BOTTLENECK_KINDS = ("conv", "deform", "conform")


class MiniNet:
    """Segmentation net; forward maps [N,1,H,W] images to [N,1,H,W] probabilities."""

    def __init__(
        self,
        bottleneck: str = "conv",
        seed: int = 0,
        tpg_cfg: TpgConfig | None = None,
        sample_source: str = "input",
        bottleneck_layers: int = 1,
    ):
        if bottleneck not in BOTTLENECK_KINDS:
            raise ValueError(f"bottleneck must be one of {BOTTLENECK_KINDS}, got {bottleneck!r}")
        if bottleneck == "conform":
            if not 0 <= bottleneck_layers <= 3:
                raise ValueError("conform bottleneck supports 0..3 layers")
        elif bottleneck_layers != 1:
            raise ValueError(f"{bottleneck!r} bottleneck requires exactly 1 layer")
        self.bottleneck_kind = bottleneck
        self.bottleneck_layers = bottleneck_layers
        self.seed = int(seed)
        self.tpg_cfg = tpg_cfg if tpg_cfg is not None else TpgConfig()

        rng = np.random.default_rng(seed)
        self.enc1 = ConvBlock(1, 8, rng)
        self.enc2 = ConvBlock(8, 16, rng)
        self.bottleneck = []
        if bottleneck == "conv" or bottleneck_layers == 0:
            self.bottleneck.append(ConvBlock(16, 16, rng))
        elif bottleneck == "deform":
            self.bottleneck.append(DeformLayer(16, 16, rng))
        else:
            for _ in range(bottleneck_layers):
                self.bottleneck.append(
                    ConformLayer(16, 16, rng, tpg_cfg=self.tpg_cfg, sample_source=sample_source)
                )
        self.dec1 = ConvBlock(24, 8, rng)
        self.dec2 = ConvBlock(8, 8, rng)
        self.head_weight = Parameter(he_init(rng, (1, 8, 1, 1)))
        self.head_bias = Parameter(np.zeros(1))

    def forward(self, x: Tensor, train: bool = True) -> Tensor:
        if x.data.ndim != 4 or x.data.shape[1] != 1:
            raise ad.ShapeError(f"expected [N,1,H,W] input, got {x.data.shape}")
        _, _, h, w = x.data.shape
        if h % 2 or w % 2:
            raise ValueError(f"spatial dims must be even for pooling, got {h}x{w}")
        e1 = self.enc1.forward(x, train)
        e2 = self.enc2.forward(ad.avg_pool2(e1), train)
        b = e2
        for block in self.bottleneck:
            b = block.forward(b, train)
        u = ad.concat_channels(ad.upsample_nearest2(b), e1)
        d = self.dec2.forward(self.dec1.forward(u, train), train)
        logits = ad.conv2d(d, self.head_weight, self.head_bias, 0)
        return ad.sigmoid(logits)

    def predict(self, images: np.ndarray) -> np.ndarray:
        """Inference on a numpy batch [N,1,H,W]; returns probabilities."""
        out = self.forward(Tensor(np.asarray(images, dtype=np.float64)), train=False)
        return out.data

    def _blocks(self):
        named = [("enc1", self.enc1), ("enc2", self.enc2)]
        named += [(f"bottleneck{i}", blk) for i, blk in enumerate(self.bottleneck)]
        named += [("dec1", self.dec1), ("dec2", self.dec2)]
        return named

    def parameters(self):
        """Ordered (name, Parameter) pairs; order is the checkpoint contract."""
        out = []
        for prefix, block in self._blocks():
            out += [(f"{prefix}.{name}", p) for name, p in block.parameters()]
        out.append(("head.weight", self.head_weight))
        out.append(("head.bias", self.head_bias))
        return out

    def buffers(self):
        """Non-trainable state (batch-norm running statistics)."""
        out = []
        for prefix, block in self._blocks():
            out.append((f"{prefix}.bn.running_mean", block.bn.state.running_mean))
            out.append((f"{prefix}.bn.running_var", block.bn.state.running_var))
        return out

    def load_buffers(self, values: dict) -> None:
        for name, buf in self.buffers():
            if name not in values:
                raise KeyError(f"checkpoint is missing buffer {name}")
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != buf.shape:
                raise ValueError(f"buffer {name} shape {arr.shape} != {buf.shape}")
            buf[...] = arr
        for _, block in self._blocks():
            block.bn.state.updated = True

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.zero_grad()
