"""Release gate: ten numbered end-to-end checks.

Each test prints one pass/fail line (run with -s to see them on success)
and enforces both its tolerance and its wall-clock budget.  The two
desk-scale experiments (criteria 8 and 9) share one trained fixture; run
this file alone with ``pytest tests/test_acceptance.py -v`` when iterating.
"""

import json
import time

import numpy as np
import pytest

import oracles
from topoconv import autodiff as ad
from topoconv.autodiff import Tensor, backward, tsum
from topoconv.cli import EXIT_OK, main
from topoconv.conform import ConformLayer
from topoconv.data import generate_dataset
from topoconv.gradcheck import standard_suite
from topoconv.metrics import (
    adjusted_rand_index,
    ari_error,
    auc,
    betti_numbers,
    euler_characteristic,
    variation_of_information,
)
from topoconv.persistence import compute_ph0, filter_diagram
from topoconv.tpg import (
    TpgConfig,
    compute_prior,
    tpg_forward,
    tpg_forward_no_aggregation,
)
from topoconv.training import TrainConfig, paired_experiment, train

SEEDS = (0, 1, 2, 3, 4)


def _verdict(num, label, t0, budget):
    dt = time.time() - t0
    print(f"criterion {num:02d} {label:<36} PASS  ({dt:5.1f}s / {budget:.0f}s)")
    assert dt < budget, f"criterion {num}: {dt:.1f}s exceeds {budget:.0f}s budget"


# ---------------------------------------------------------------------------


def test_c01_ph_matches_sweep_oracle():
    t0 = time.time()
    for seed in range(100):
        rng = np.random.default_rng(seed)
        values = rng.integers(0, 11, size=(8, 8)) / 10.0
        got = sorted((p.birth, p.death) for p in compute_ph0(values))
        want = sorted((b, d) for b, d, _ in oracles.ph0_oracle(values))
        assert got == want, f"map {seed}: diagram mismatch"
    _verdict(1, "ph vs threshold-sweep oracle", t0, 10.0)


def test_c02_filtering_is_nested():
    t0 = time.time()
    grid = (0.0, 0.05, 0.1, 0.2, 0.5)
    for seed in range(50):
        rng = np.random.default_rng(seed)
        pd = compute_ph0(rng.random((8, 8)))
        previous = None
        for tau0 in grid:
            kept = {
                (p.birth, p.death, p.birth_coord, p.death_coord)
                for p in filter_diagram(pd, tau0)
            }
            if previous is not None:
                assert kept <= previous, f"map {seed}: tau0={tau0} not nested"
            previous = kept
    _verdict(2, "persistence filtering nested", t0, 5.0)


def test_c03_zero_offsets_reduce_to_conv():
    t0 = time.time()
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        cin = int(rng.integers(1, 4))
        cout = int(rng.integers(1, 5))
        n = int(rng.integers(1, 3))
        h = int(rng.integers(5, 10))
        w = int(rng.integers(5, 10))
        layer = ConformLayer(cin, cout, rng)
        x = Tensor(rng.standard_normal((n, cin, h, w)))
        plain = ad.conv2d(x, layer.weight, layer.bias, 1)
        diff = np.abs(layer.pre_norm(x).data - plain.data).max()
        worst = max(worst, diff)
    assert worst <= 1e-10, worst
    _verdict(3, "zero-offset conform == conv", t0, 5.0)


def test_c04_all_ops_pass_gradcheck():
    t0 = time.time()
    entries = standard_suite()
    failures = [(e.name, e.report.max_rel_err, e.tolerance) for e in entries if not e.passed]
    assert not failures, failures
    names = " ".join(e.name for e in entries)
    for op in ("conv2d", "batch_norm", "sigmoid", "dice", "add", "mul",
               "conform", "deform"):
        assert op in names, f"no gradcheck entry covers {op}"
    _verdict(4, "finite-difference gradients", t0, 60.0)


def test_c05_posterior_algebra_and_gradient():
    t0 = time.time()
    rng = np.random.default_rng(3)
    cfg = TpgConfig(tau0=0.05)
    x = Tensor(rng.random((2, 3, 8, 8)), requires_grad=True)
    _, dilated, _ = compute_prior(x, cfg)
    dil = dilated[:, None, :, :]

    post = tpg_forward(x, cfg)
    assert np.array_equal(post.data, dil * x.data + x.data)  # composed, bitwise
    # the subtracted form re-rounds once, so it is exact only to one ulp
    resid = np.abs((post.data - x.data) - dil * x.data)
    assert np.all(resid <= np.spacing(np.abs(post.data)))

    noagg = tpg_forward_no_aggregation(x, cfg)
    assert np.array_equal(noagg.data, dil * x.data)

    backward(tsum(post))
    assert np.array_equal(x.grad, np.broadcast_to(1.0 + dil, x.data.shape))
    _verdict(5, "posterior algebra + gradient", t0, 5.0)


def test_c06_metric_oracles():
    t0 = time.time()
    for seed in range(500):
        rng = np.random.default_rng(seed)
        mask = (rng.random((8, 8)) < 0.45).astype(np.uint8)
        b0, b1 = betti_numbers(mask)
        chi = euler_characteristic(mask)
        assert (b0, b1) == oracles.betti_oracle(mask), seed
        assert chi == oracles.euler_oracle(mask), seed
        assert chi == b0 - b1, seed

    for seed in range(200):
        rng = np.random.default_rng(1000 + seed)
        a = (rng.random((6, 6)) < 0.5).astype(np.uint8)
        b = (rng.random((6, 6)) < 0.5).astype(np.uint8)
        la = oracles.flood_fill_label(a)[0]
        lb = oracles.flood_fill_label(b)[0]
        ref_ari = oracles.pair_count_ari(la, lb)
        assert adjusted_rand_index(a, b) == pytest.approx(ref_ari, abs=1e-12), seed
        assert ari_error(a, b) == pytest.approx(1.0 - ref_ari, abs=1e-12), seed
        assert variation_of_information(a, b) == pytest.approx(
            oracles.entropy_vi(la, lb), abs=1e-12
        ), seed

    for seed in range(50):
        rng = np.random.default_rng(2000 + seed)
        prob = rng.random((5, 5))
        gt = (rng.random((5, 5)) < 0.5).astype(np.uint8)
        if gt.min() == gt.max():
            gt[0, 0] = 1 - gt[0, 0]
        assert auc(prob, gt) == pytest.approx(
            oracles.pairwise_auc(prob, gt), abs=1e-12
        ), seed

    annulus = np.zeros((9, 9), dtype=np.uint8)
    annulus[2:7, 2:7] = 1
    annulus[3:6, 3:6] = 0
    assert betti_numbers(annulus) == (1, 1)
    assert euler_characteristic(annulus) == 0

    disks = np.zeros((6, 10), dtype=np.uint8)
    disks[1:4, 1:4] = 1
    disks[2:5, 6:9] = 1
    assert betti_numbers(disks) == (2, 0)
    assert euler_characteristic(disks) == 2
    _verdict(6, "metrics vs brute-force oracles", t0, 30.0)


@pytest.mark.slow
def test_c07_overfit_four_samples():
    t0 = time.time()
    dataset = generate_dataset(4, kinds=("ring", "curve"), h=32, w=32,
                               noise_sigma=0.1, seed=11)
    cfg = TrainConfig(epochs=500, batch_size=4, learning_rate=3e-3,
                      bottleneck="conform", seed=0)
    _, history = train(cfg, dataset)
    best = min(history)
    assert best < 0.05, f"best training Dice loss {best:.4f}"
    _verdict(7, "conform overfits 4 samples", t0, 180.0)


# ---------------------------------------------------------------------------
# criteria 8 and 9 share one protocol: 100 ring+curve samples per seed,
# 80/20 split, 60 epochs, Adam 3e-3; conform default tau0 0.05


@pytest.fixture(scope="module")
def experiment():
    cfg = TrainConfig(learning_rate=3e-3)
    variants = {
        "all_on": {},
        "conv": {"bottleneck": "conv"},
        "no_filter": {"tpg": {"filter_enabled": False}},
    }
    t0 = time.time()
    rows = paired_experiment(cfg, variants, SEEDS)
    elapsed = time.time() - t0
    for name, by_seed in rows.items():
        for seed, res in by_seed.items():
            assert min(res.history) < res.history[0], (name, seed, "loss never fell")
    return rows, elapsed


@pytest.mark.slow
def test_c08_conform_beats_conv_on_betti0(experiment):
    rows, elapsed = experiment
    t0 = time.time() - elapsed
    wins = 0
    for seed in SEEDS:
        conform = rows["all_on"][seed].report
        conv = rows["conv"][seed].report
        assert conform.dice >= conv.dice - 0.05, (
            f"seed {seed}: dice {conform.dice:.3f} vs {conv.dice:.3f}"
        )
        wins += conform.betti0_error <= conv.betti0_error
    assert wins >= 3, f"conform wins only {wins}/5 seeds"
    _verdict(8, f"conform <= conv betti0 ({wins}/5)", t0, 1200.0)


@pytest.mark.slow
def test_c09_filtering_helps_betti0(experiment):
    rows, elapsed = experiment
    t0 = time.time() - elapsed
    wins = sum(
        rows["all_on"][s].report.betti0_error <= rows["no_filter"][s].report.betti0_error
        for s in SEEDS
    )
    assert wins >= 3, f"all_on wins only {wins}/5 seeds"
    _verdict(9, f"filtering helps betti0 ({wins}/5)", t0, 1200.0)


def test_c10_train_eval_artifacts_reproducible(tmp_path):
    t0 = time.time()
    data = tmp_path / "data"
    assert main(["gen-data", "--n", "6", "--kind", "ring", "--height", "16",
                 "--width", "16", "--noise-sigma", "0.2", "--seed", "0",
                 "--out", str(data)]) == EXIT_OK
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps({
        "epochs": 2, "batch_size": 4, "n_train": 6, "n_test": 2,
        "height": 16, "width": 16, "noise_sigma": 0.2, "kinds": ["ring"],
        "bottleneck": "conform", "seed": 0,
    }))
    outs = []
    for run in ("a", "b"):
        ckpt = tmp_path / run
        assert main(["train", "--config", str(cfg_path), "--data", str(data),
                     "--out", str(ckpt)]) == EXIT_OK
        report = tmp_path / f"report_{run}.json"
        assert main(["eval", "--ckpt", str(ckpt), "--data", str(data),
                     "--out", str(report)]) == EXIT_OK
        outs.append((ckpt, report))
    (a, ra), (b, rb) = outs
    assert (a / "params.bin").read_bytes() == (b / "params.bin").read_bytes()
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
    assert ra.read_bytes() == rb.read_bytes()
    _verdict(10, "train/eval byte-identical", t0, 120.0)
