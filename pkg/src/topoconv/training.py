"""Training loop, Adam, checkpointing and the paired-run experiment drivers."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import fileio
from .autodiff import Tensor
from .metrics import MetricsReport, evaluate_pair
from .net import BOTTLENECK_KINDS, MiniNet
from .tpg import TpgConfig

PARAMS_NAME = "params.bin"
MANIFEST_NAME = "manifest.json"


@dataclass
class TrainConfig:
    """Everything that determines a run, given the code version."""

    epochs: int = 60
    batch_size: int = 8
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    bottleneck: str = "conform"
    bottleneck_layers: int = 1
    sample_source: str = "input"
    tpg: TpgConfig = field(default_factory=TpgConfig)
    n_train: int = 80
    n_test: int = 20
    height: int = 32
    width: int = 32
    noise_sigma: float = 0.5
    kinds: tuple = ("ring", "curve")
    dice_smooth: float = 1.0
    threshold: float = 0.5

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be positive")
        if self.bottleneck not in BOTTLENECK_KINDS:
            raise ValueError(f"bottleneck must be one of {BOTTLENECK_KINDS}")
        if self.n_train <= 0 or self.n_test < 0:
            raise ValueError("dataset sizes must be positive")
        if self.height < 16 or self.width < 16:
            raise ValueError("height and width must be >= 16")
        if isinstance(self.kinds, list):
            self.kinds = tuple(self.kinds)
        if isinstance(self.tpg, dict):
            self.tpg = _tpg_from_dict(self.tpg)
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["kinds"] = list(self.kinds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**d)


def _tpg_from_dict(d: dict) -> TpgConfig:
    known = {f.name for f in fields(TpgConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ValueError(f"unknown tpg config keys: {unknown}")
    return TpgConfig(**d)


class Adam:
    """Adam with bias correction over named parameters."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for name, p in self.params:
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def _build_model(cfg: TrainConfig) -> MiniNet:
    return MiniNet(
        bottleneck=cfg.bottleneck,
        seed=cfg.seed,
        tpg_cfg=cfg.tpg,
        sample_source=cfg.sample_source,
        bottleneck_layers=cfg.bottleneck_layers if cfg.bottleneck == "conform" else 1,
    )


def _batch_arrays(samples):
    images = np.stack([s.image for s in samples]).astype(np.float64)
    masks = np.stack([s.mask[None] for s in samples]).astype(np.float64)
    return images, masks


def train(cfg: TrainConfig, dataset, out_dir=None, verbose: bool = False):
    """Mini-batch Adam on Dice loss; returns (model, per-epoch loss curve)."""
    if not dataset:
        raise ValueError("empty training dataset")
    model = _build_model(cfg)
    opt = Adam(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    shuffle_rng = np.random.default_rng(cfg.seed)
    history = []
    n = len(dataset)
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            batch = [dataset[i] for i in order[start : start + cfg.batch_size]]
            images, masks = _batch_arrays(batch)
            prob = model.forward(Tensor(images), train=True)
            loss = ad.dice_loss(prob, Tensor(masks), cfg.dice_smooth)
            value = float(loss.data)
            if not np.isfinite(value):
                raise RuntimeError(
                    f"non-finite loss {value} at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            model.zero_grad()
            ad.backward(loss)
            opt.step()
            losses.append(value)
        history.append(float(np.mean(losses)))
        if verbose:
            print(f"epoch {epoch + 1}/{cfg.epochs}  loss {history[-1]:.4f}")
    if out_dir is not None:
        save_checkpoint(model, out_dir, cfg, history)
    return model, history


def evaluate(model: MiniNet, dataset, threshold: float = 0.5):
    """Per-sample metric reports plus their dataset mean."""
    if not dataset:
        raise ValueError("empty evaluation dataset")
    reports = []
    for s in dataset:
        prob = model.predict(s.image[None])[0, 0]
        reports.append(evaluate_pair(prob, s.mask, threshold))
    return MetricsReport.mean(reports), reports


def save_checkpoint(model: MiniNet, directory, cfg: TrainConfig, history=None) -> None:
    from . import __version__

    os.makedirs(directory, exist_ok=True)
    entries = []
    offset = 0
    with open(os.path.join(directory, PARAMS_NAME), "wb") as f:
        for name, p in model.parameters():
            nbytes = fileio.write_tensor_stream(f, p.data)
            entries.append({"name": name, "shape": list(p.data.shape), "offset": offset})
            offset += nbytes
        for name, buf in model.buffers():
            nbytes = fileio.write_tensor_stream(f, buf)
            entries.append({"name": name, "shape": list(buf.shape), "offset": offset})
            offset += nbytes
    manifest = {
        "version": __version__,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "parameters": entries,
        "loss_curve": history if history is not None else [],
    }
    with open(os.path.join(directory, MANIFEST_NAME), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(directory):
    """Rebuild (model, cfg, manifest) from a checkpoint directory."""
    with open(os.path.join(directory, MANIFEST_NAME)) as f:
        manifest = json.load(f)
    cfg = TrainConfig.from_dict(manifest["config"])
    model = _build_model(cfg)
    wanted = {name: p for name, p in model.parameters()}
    buffers = {}
    with open(os.path.join(directory, PARAMS_NAME), "rb") as f:
        for entry in manifest["parameters"]:
            arr = fileio.read_tensor_stream(f)
            if list(arr.shape) != list(entry["shape"]):
                raise ValueError(
                    f"checkpoint entry {entry['name']} has shape {arr.shape}, "
                    f"manifest says {entry['shape']}"
                )
            if entry["name"] in wanted:
                wanted[entry["name"]].data[...] = arr
            else:
                buffers[entry["name"]] = arr
    model.load_buffers(buffers)
    return model, cfg, manifest


@dataclass
class RunResult:
    """Test-set mean report plus the training loss curve of one run."""

    report: MetricsReport
    history: list


def paired_experiment(cfg_base: TrainConfig, variants: dict, seeds, progress=None) -> dict:
    """Train every variant on the same per-seed dataset and evaluate on its test split.

    `variants` maps a row name to TrainConfig field overrides (use the key
    "tpg" with a dict of TpgConfig overrides for nested changes).  Returns
    {row: {seed: RunResult}} over test-set means.
    """
    from .data import generate_dataset

    results = {name: {} for name in variants}
    for seed in seeds:
        cfg_seed = dataclasses.replace(cfg_base, seed=int(seed))
        full = generate_dataset(
            cfg_seed.n_train + cfg_seed.n_test,
            kinds=cfg_seed.kinds,
            h=cfg_seed.height,
            w=cfg_seed.width,
            noise_sigma=cfg_seed.noise_sigma,
            seed=int(seed),
        )
        train_set = full[: cfg_seed.n_train]
        test_set = full[cfg_seed.n_train :]
        for name, overrides in variants.items():
            overrides = dict(overrides)
            tpg_over = overrides.pop("tpg", None)
            cfg_run = dataclasses.replace(cfg_seed, **overrides)
            if tpg_over is not None:
                cfg_run = dataclasses.replace(
                    cfg_run, tpg=dataclasses.replace(cfg_seed.tpg, **tpg_over)
                )
            model, history = train(cfg_run, train_set)
            mean_report, _ = evaluate(model, test_set, cfg_run.threshold)
            results[name][int(seed)] = RunResult(mean_report, history)
            if progress is not None:
                progress(name, int(seed), mean_report)
    return results


COMPONENT_VARIANTS = {
    "all_on": {},
    "no_filter": {"tpg": {"filter_enabled": False}},
    "no_dilate": {"tpg": {"dilate_enabled": False}},
    "no_aggregate": {"tpg": {"aggregate": False}},
}


def ablation_suite(cfg_base: TrainConfig, seeds=(0,), layer_counts=(0, 1, 2, 3), progress=None) -> dict:
    """Component on/off rows plus bottleneck depth rows, as nested dicts."""
    cfg = dataclasses.replace(cfg_base, bottleneck="conform")
    component_rows = paired_experiment(cfg, COMPONENT_VARIANTS, seeds, progress)
    layer_variants = {
        f"layers_{k}": {"bottleneck_layers": k} for k in layer_counts
    }
    layer_rows = paired_experiment(cfg, layer_variants, seeds, progress)

    def serialize(rows):
        return {
            name: {
                str(seed): {"metrics": res.report.to_dict(), "loss_curve": res.history}
                for seed, res in by_seed.items()
            }
            for name, by_seed in rows.items()
        }

    return {"components": serialize(component_rows), "layers": serialize(layer_rows)}
