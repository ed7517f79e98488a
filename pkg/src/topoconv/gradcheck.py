"""Central finite-difference gradient checking for tape operations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, backward


@dataclass
class GradCheckReport:
    """Worst relative error per checked tensor, plus the overall max."""

    max_rel_err: float
    worst: str
    per_tensor: dict = field(default_factory=dict)

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_err < tolerance


def _select_coords(size: int, max_coords):
    if max_coords is None or size <= max_coords:
        return np.arange(size)
    # Deterministic, evenly spread subsample.
    return np.unique(np.linspace(0, size - 1, max_coords).astype(int))


def grad_check(
    fn,
    wrt: dict,
    step: float = 1e-5,
    max_coords_per_tensor=None,
) -> GradCheckReport:
    """Compare analytic gradients of ``fn()`` against central differences.

    ``fn`` builds a fresh tape and returns a scalar Tensor; ``wrt`` maps
    names to the leaf tensors whose gradients are checked.  Relative error
    per coordinate is |a - n| / max(1e-8, |a| + |n|); the report carries
    the max per tensor and overall.
    """
    if not 1e-7 <= step <= 1e-3:
        raise ValueError(f"step {step} outside [1e-7, 1e-3]")
    for t in wrt.values():
        if not t.requires_grad:
            raise ValueError("all checked tensors must require gradients")
        t.grad = np.zeros_like(t.data)

    loss = fn()
    backward(loss)
    analytic = {name: t.grad.copy() for name, t in wrt.items()}
    for t in wrt.values():
        t.grad = np.zeros_like(t.data)

    per_tensor = {}
    worst_name = ""
    worst = 0.0
    for name, t in wrt.items():
        flat = t.data.reshape(-1)
        a = analytic[name].reshape(-1)
        tensor_worst = 0.0
        for i in _select_coords(flat.size, max_coords_per_tensor):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(fn().data)
            flat[i] = orig - step
            f_minus = float(fn().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            rel = abs(a[i] - numeric) / max(1e-8, abs(a[i]) + abs(numeric))
            tensor_worst = max(tensor_worst, rel)
        per_tensor[name] = tensor_worst
        if tensor_worst >= worst:
            worst = tensor_worst
            worst_name = name
    return GradCheckReport(max_rel_err=worst, worst=worst_name, per_tensor=per_tensor)


@dataclass
class SuiteEntry:
    """One named check of the standard suite with its tolerance."""

    name: str
    tolerance: float
    report: GradCheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed(self.tolerance)


# Piecewise-linear / polynomial ops get the tight tolerance; ops with
# square roots, exponentials or interpolation weights get the loose one.
TIGHT = 1e-6
LOOSE = 1e-4


def _quad(y: Tensor) -> Tensor:
    """Quadratic scalar readout so every output coordinate backpropagates."""
    from . import autodiff as ad

    return ad.tsum(ad.mul(y, y))


def _away_from_zero(rng, shape, margin=0.1):
    return rng.uniform(margin, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _fractional_offsets(layer, guide_data):
    """Force non-zero offsets whose sampling positions avoid integer kinks."""
    from .autodiff import Tensor

    k = layer.offset_bias.data.size
    signs = np.where(np.arange(k) % 2 == 0, 1.0, -1.0)
    layer.offset_bias.data[...] = signs * np.linspace(0.21, 0.39, k)
    rng = np.random.default_rng(7)
    layer.offset_weight.data[...] = 0.003 * rng.standard_normal(layer.offset_weight.data.shape)
    off = layer.offsets(Tensor(guide_data)).data
    frac = off - np.floor(off)
    margin = float(np.minimum(frac, 1.0 - frac).min())
    if margin <= 0.04:
        raise AssertionError(f"offset fixture too close to an integer kink: margin {margin}")


def _assert_prior_stable(phi, cfg):
    """The binary prior must be locally constant under finite-difference steps."""
    from .tpg import compute_prior

    prior, dil, diagrams = compute_prior(phi, cfg)
    for pd in diagrams:
        for pair in pd.pairs:
            if abs(pair.persistence - cfg.tau0) <= 1e-3:
                raise AssertionError(
                    "gradcheck fixture has a persistence within 1e-3 of tau0; "
                    "pick a different seed"
                )
    return prior, dil


def standard_suite(max_coords: int = 12):
    """Gradient-check every differentiable op with kink-avoiding fixtures.

    Returns a list of SuiteEntry; each entry passes iff its max relative
    error is below its tolerance.
    """
    from . import autodiff as ad
    from .autodiff import Tensor
    from .conform import ConformLayer, DeformLayer
    from .tpg import TpgConfig

    rng = np.random.default_rng(42)
    entries = []

    def run(name, tol, fn, wrt, coords=max_coords):
        report = grad_check(fn, wrt, step=1e-5, max_coords_per_tensor=coords)
        entries.append(SuiteEntry(name, tol, report))

    # Entries bounded away from zero: the quadratic readout's gradient in one
    # operand scales with powers of the other, and a near-zero entry would
    # leave a coordinate where central differences are only noise.
    a = Tensor(_away_from_zero(rng, (2, 3, 4, 4), margin=0.25), requires_grad=True)
    b = Tensor(_away_from_zero(rng, (2, 3, 4, 4), margin=0.25), requires_grad=True)
    g = Tensor(_away_from_zero(rng, (2, 4, 4), margin=0.25), requires_grad=True)
    run("add", TIGHT, lambda: _quad(ad.add(a, b)), {"a": a, "b": b})
    run("add_channel_broadcast", TIGHT, lambda: _quad(ad.add(a, g)), {"a": a, "g": g})
    run("mul", TIGHT, lambda: _quad(ad.mul(a, b)), {"a": a, "b": b})
    run("mul_channel_broadcast", TIGHT, lambda: _quad(ad.mul(a, g)), {"a": a, "g": g})
    run("scale", TIGHT, lambda: _quad(ad.scale(a, -1.7)), {"a": a})

    xr = Tensor(_away_from_zero(rng, (2, 3, 4, 4)), requires_grad=True)
    run("relu", TIGHT, lambda: _quad(ad.relu(xr)), {"x": xr})

    xs = Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True)
    run("sigmoid", LOOSE, lambda: _quad(ad.sigmoid(xs)), {"x": xs})

    xc = Tensor(rng.standard_normal((2, 3, 6, 6)), requires_grad=True)
    wc = Tensor(rng.standard_normal((4, 3, 3, 3)) * 0.5, requires_grad=True)
    bc = Tensor(rng.standard_normal(4) * 0.1, requires_grad=True)
    run(
        "conv2d",
        TIGHT,
        lambda: _quad(ad.conv2d(xc, wc, bc, 1)),
        {"x": xc, "w": wc, "b": bc},
    )

    xb = Tensor(rng.standard_normal((3, 4, 6, 6)), requires_grad=True)
    gamma = Tensor(rng.uniform(0.5, 1.5, 4), requires_grad=True)
    beta = Tensor(rng.standard_normal(4) * 0.3, requires_grad=True)
    state = ad.BatchNormState(4)
    # A quadratic readout leaves some normalised coordinates with gradients
    # ~1e-8, where central differences are pure cancellation noise.  A fixed
    # sign-mixed linear readout keeps every gradient bounded away from zero.
    readout = Tensor(
        np.sign(rng.standard_normal(xb.data.shape)) * rng.uniform(0.5, 1.5, xb.data.shape)
    )
    run(
        "batch_norm_train",
        LOOSE,
        lambda: ad.tsum(ad.mul(ad.batch_norm(xb, gamma, beta, state, train=True), readout)),
        {"x": xb, "gamma": gamma, "beta": beta},
    )
    run(
        "batch_norm_eval",
        TIGHT,
        lambda: ad.tsum(ad.mul(ad.batch_norm(xb, gamma, beta, state, train=False), readout)),
        {"x": xb, "gamma": gamma, "beta": beta},
    )

    prob = Tensor(rng.uniform(0.1, 0.9, (2, 1, 6, 6)), requires_grad=True)
    target = Tensor(rng.integers(0, 2, (2, 1, 6, 6)).astype(np.float64))
    run("dice_loss", LOOSE, lambda: ad.dice_loss(prob, target), {"prob": prob})

    xp = Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True)
    run("avg_pool2", TIGHT, lambda: _quad(ad.avg_pool2(xp)), {"x": xp})
    run("upsample_nearest2", TIGHT, lambda: _quad(ad.upsample_nearest2(xp)), {"x": xp})
    xq = Tensor(rng.standard_normal((2, 2, 4, 4)), requires_grad=True)
    run(
        "concat_channels",
        TIGHT,
        lambda: _quad(ad.concat_channels(xp, xq)),
        {"a": xp, "b": xq},
    )

    from .tpg import posterior as tpg_posterior

    cfg = TpgConfig()
    xt = Tensor(rng.uniform(0.05, 1.0, (1, 3, 8, 8)), requires_grad=True)
    _assert_prior_stable(Tensor(xt.data.copy()), cfg)
    run("tpg_posterior", LOOSE, lambda: _quad(tpg_posterior(xt, cfg)), {"x": xt})

    layer_rng = np.random.default_rng(3)
    deform = DeformLayer(3, 4, layer_rng)
    xd = Tensor(rng.uniform(0.05, 1.0, (1, 3, 6, 6)), requires_grad=True)
    _fractional_offsets(deform, xd.data)
    run(
        "deformable_conv",
        LOOSE,
        lambda: _quad(deform.pre_norm(xd)),
        {
            "x": xd,
            "offset_weight": deform.offset_weight,
            "offset_bias": deform.offset_bias,
            "weight": deform.weight,
            "bias": deform.bias,
        },
    )

    conform = ConformLayer(3, 4, np.random.default_rng(5), tpg_cfg=cfg)
    xf = Tensor(rng.uniform(0.05, 1.0, (1, 3, 8, 8)), requires_grad=True)
    _assert_prior_stable(Tensor(xf.data.copy()), cfg)
    _fractional_offsets(conform, conform.posterior(Tensor(xf.data.copy())).data)
    run(
        "conformable_conv",
        LOOSE,
        lambda: _quad(conform.pre_norm(xf)),
        {
            "x": xf,
            "offset_weight": conform.offset_weight,
            "offset_bias": conform.offset_bias,
            "weight": conform.weight,
            "bias": conform.bias,
        },
        coords=8,
    )

    return entries
