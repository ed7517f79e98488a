"""Dense float64 tensors with a minimal reverse-mode differentiation tape.

Supports exactly the operations the segmentation harness needs: 2-D
convolution, batch norm, ReLU, sigmoid, Dice loss, elementwise arithmetic
with channel broadcast, 2x pooling/upsampling and channel concatenation.
The tape is rebuilt on every forward pass (define-by-run); ``backward``
sweeps it in reverse creation order and then drops it.
"""

from __future__ import annotations

import warnings

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


_seq_counter = 0


def _next_seq() -> int:
    global _seq_counter
    _seq_counter += 1
    return _seq_counter


class Tensor:
    """A dense row-major float64 array of rank <= 4, optionally on the tape.

    ``data`` is the value, ``grad`` accumulates d(loss)/d(self) once
    ``backward`` has run.  Non-leaf tensors carry a backward closure and
    references to their parents; leaves carry neither.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "_seq")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 4:
            raise ShapeError(f"rank {arr.ndim} tensor not supported (max 4)")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()
        self._seq = _next_seq()

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def accumulate_grad(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        tag = "param" if isinstance(self, Parameter) else ("node" if self._backward else "leaf")
        return f"Tensor(shape={self.data.shape}, {tag})"


class Parameter(Tensor):
    """A trainable tensor; its gradient persists across tapes until reset."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


def _make_node(data: np.ndarray, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def backward(loss: Tensor) -> None:
    """Populate gradients of everything ``loss`` depends on, then clear the tape.

    ``loss`` must be scalar.  Repeated calls accumulate into ``Parameter``
    gradients (reset them explicitly via ``zero_grad``).
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    # Collect the reachable subgraph; creation order is a topological order.
    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    nodes.sort(key=lambda t: t._seq, reverse=True)

    if loss.requires_grad:
        loss.accumulate_grad(np.ones_like(loss.data))
    for t in nodes:
        if t._backward is not None and t.grad is not None:
            t._backward(t.grad)
    # Drop the tape: intermediate grads and closures are one-shot.
    for t in nodes:
        if t._backward is not None:
            t._backward = None
            t._parents = ()
            t.grad = None


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b) -> Tensor:
    """Elementwise a + b; b may be a scalar or broadcast [N,H,W] -> [N,C,H,W]."""
    if not isinstance(b, Tensor):
        bval = float(b)
        out_data = a.data + bval

        def bw_scalar(g):
            a.accumulate_grad(g)

        return _make_node(out_data, (a,), bw_scalar)
    bdata, channel_bcast = _align_operand(a, b)
    out_data = a.data + bdata

    def bw(g):
        a.accumulate_grad(g)
        b.accumulate_grad(g.sum(axis=1) if channel_bcast else g)

    return _make_node(out_data, (a, b), bw)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise a * b; b may be a scalar or broadcast [N,H,W] -> [N,C,H,W]."""
    if not isinstance(b, Tensor):
        return scale(a, float(b))
    bdata, channel_bcast = _align_operand(a, b)
    out_data = a.data * bdata

    def bw(g):
        a.accumulate_grad(g * bdata)
        gb = g * a.data
        b.accumulate_grad(gb.sum(axis=1) if channel_bcast else gb)

    return _make_node(out_data, (a, b), bw)


def scale(a: Tensor, alpha: float) -> Tensor:
    alpha = float(alpha)
    out_data = a.data * alpha

    def bw(g):
        a.accumulate_grad(g * alpha)

    return _make_node(out_data, (a,), bw)


def _align_operand(a: Tensor, b: Tensor):
    """Return b's data broadcast against a, flagging [N,H,W]->[N,C,H,W] expansion."""
    if a.data.shape == b.data.shape:
        return b.data, False
    if (
        a.data.ndim == 4
        and b.data.ndim == 3
        and b.data.shape == (a.data.shape[0],) + a.data.shape[2:]
    ):
        return b.data[:, None, :, :], True
    raise ShapeError(f"cannot broadcast {b.data.shape} against {a.data.shape}")


def tsum(a: Tensor) -> Tensor:
    """Sum all entries to a scalar."""
    out_data = np.asarray(a.data.sum())

    def bw(g):
        a.accumulate_grad(np.broadcast_to(g, a.data.shape))

    return _make_node(out_data, (a,), bw)


# ---------------------------------------------------------------------------
# activations


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    # np.maximum, unlike where(mask, ...), propagates NaN instead of
    # silently zeroing it; the harness relies on poison reaching the loss.
    out_data = np.maximum(a.data, 0.0)

    def bw(g):
        a.accumulate_grad(g * mask)

    return _make_node(out_data, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # Stable in both tails: exp only ever sees non-positive arguments.
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bw(g):
        a.accumulate_grad(g * out_data * (1.0 - out_data))

    return _make_node(out_data, (a,), bw)


# ---------------------------------------------------------------------------
# convolution


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, padding: int) -> Tensor:
    """Same-size 2-D convolution with zero padding, stride 1, odd kernel.

    ``x`` is [N,Cin,H,W], ``weight`` [Cout,Cin,k,k], ``bias`` [Cout];
    ``padding`` must equal (k-1)/2.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError("conv2d expects rank-4 input and weights")
    n, cin, h, w = x.data.shape
    cout, cin_w, kh, kw = weight.data.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"kernel must be square and odd, got {kh}x{kw}")
    if cin != cin_w:
        raise ShapeError(
            f"input has {cin} channels but weights expect {cin_w}"
        )
    if bias.data.shape != (cout,):
        raise ShapeError(f"bias shape {bias.data.shape} != ({cout},)")
    if padding != (kh - 1) // 2:
        raise ShapeError(f"padding {padding} must be (k-1)/2 = {(kh - 1) // 2}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # [N,Cin,H,W,k,k]
    out_data = np.einsum("nchwij,ocij->nohw", cols, weight.data, optimize=True)
    out_data += bias.data[None, :, None, None]

    def bw(g):
        if weight.requires_grad:
            weight.accumulate_grad(np.einsum("nohw,nchwij->ocij", g, cols, optimize=True))
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
            gcols = sliding_window_view(gp, (kh, kw), axis=(2, 3))
            wflip = weight.data[:, :, ::-1, ::-1]
            x.accumulate_grad(np.einsum("nohwij,ocij->nchw", gcols, wflip, optimize=True))

    return _make_node(out_data, (x, weight, bias), bw)


# ---------------------------------------------------------------------------
# batch normalisation


class BatchNormState:
    """Per-channel running statistics, shared between train and eval calls."""

    def __init__(self, channels: int):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.updated = False


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    train: bool,
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """Per-channel batch normalisation over the (N,H,W) axes of [N,C,H,W]."""
    if x.data.ndim != 4:
        raise ShapeError("batch_norm expects rank-4 input")
    n, c, h, w = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError("gamma/beta must be per-channel vectors")

    if train:
        m = n * h * w
        if m < 2:
            raise ShapeError("train-mode batch_norm needs N*H*W >= 2")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        state.running_mean = (1.0 - momentum) * state.running_mean + momentum * mean
        state.running_var = (1.0 - momentum) * state.running_var + momentum * var
        state.updated = True
    else:
        if not state.updated:
            warnings.warn(
                "batch_norm eval mode before any train step: using initial stats",
                stacklevel=2,
            )
        mean = state.running_mean
        var = state.running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out_data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def bw(g):
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gxh = g * gamma.data[None, :, None, None]
            if train:
                mean_g = gxh.mean(axis=(0, 2, 3), keepdims=True)
                mean_gx = (gxh * xhat).mean(axis=(0, 2, 3), keepdims=True)
                gx = inv_std[None, :, None, None] * (gxh - mean_g - xhat * mean_gx)
            else:
                gx = gxh * inv_std[None, :, None, None]
            x.accumulate_grad(gx)

    return _make_node(out_data, (x, gamma, beta), bw)


# ---------------------------------------------------------------------------
# loss


def dice_loss(prediction: Tensor, target: Tensor, smooth: float = 1.0) -> Tensor:
    """Soft Dice loss 1 - (2*sum(p*t)+s)/(sum(p)+sum(t)+s); target is constant."""
    if prediction.data.shape != target.data.shape:
        raise ShapeError(
            f"prediction {prediction.data.shape} vs target {target.data.shape}"
        )
    if smooth <= 0:
        raise ValueError("smooth must be > 0")
    p = prediction.data
    t = target.data
    inter = float((p * t).sum())
    denom = float(p.sum() + t.sum()) + smooth
    out_data = np.asarray(1.0 - (2.0 * inter + smooth) / denom)

    def bw(g):
        if prediction.requires_grad:
            gp = -(2.0 * t * denom - (2.0 * inter + smooth)) / (denom * denom)
            prediction.accumulate_grad(float(g) * gp)

    return _make_node(out_data, (prediction, target), bw)


# ---------------------------------------------------------------------------
# resolution plumbing for the encoder/decoder


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling, stride 2; spatial dims must be even."""
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even spatial dims, got {h}x{w}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2)
    out_data = blocks.mean(axis=(3, 5))

    def bw(g):
        gx = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25
        x.accumulate_grad(gx)

    return _make_node(out_data, (x,), bw)


def upsample_nearest2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling."""
    out_data = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def bw(g):
        n, c, h2, w2 = g.shape
        gx = g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))
        x.accumulate_grad(gx)

    return _make_node(out_data, (x,), bw)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2:] != b.data.shape[2:]:
        raise ShapeError(f"cannot concat {a.data.shape} with {b.data.shape}")
    ca = a.data.shape[1]
    out_data = np.concatenate([a.data, b.data], axis=1)

    def bw(g):
        a.accumulate_grad(g[:, :ca])
        b.accumulate_grad(g[:, ca:])

    return _make_node(out_data, (a, b), bw)
