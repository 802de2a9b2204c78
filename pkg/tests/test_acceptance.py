"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS/FAIL`` line (collected again
in the terminal summary) and then asserts at the stated tolerance.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from conftest import central_diff
from outskirt import boundary as B
from outskirt import classify as C
from outskirt import data_io, hierarchy as H, nnet, pipeline
from outskirt.config import load_config
from outskirt.metrics import reports_to_csv, roc_auc
from test_boundary import brute_force, random_catalog
from test_hierarchy import frozen_randoms, monte_carlo_kl, small_features
from test_metrics import pairwise_auc

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
PCTS = (10.0, 20.0, 30.0, 40.0, 50.0)


@pytest.fixture(scope="module")
def mnist_runs(mnist_dir):
    """Two complete 5-fold MNIST runs: one with 1 worker, one with 8."""
    cfg = load_config(CONFIGS / "mnist.conf")
    ds = data_io.load_mnist_dir(mnist_dir)
    runs = []
    for workers in (1, 8):
        t0 = time.perf_counter()
        reports, manifest = pipeline.run_experiment(cfg, ds, workers=workers)
        runs.append((reports, reports_to_csv(reports), time.perf_counter() - t0))
    return cfg, runs


@pytest.mark.slow
def test_criterion_1_mnist_auc(mnist_runs, criterion):
    cfg, runs = mnist_runs
    reports, _, seconds = runs[0]
    by_pct = {r.outlier_pct: r for r in reports}
    auc = by_pct[50.0].auc
    ok = auc >= 0.95 and cfg.train_epochs <= 50 and seconds <= 20 * 60
    criterion(1, ok, f"MNIST class 0, 5-fold, 50% outliers: mean AUC {auc:.4f} (need >= 0.95), "
                     f"{cfg.train_epochs} epochs, {seconds / 60:.1f} min for all mixes")
    assert auc >= 0.95
    assert cfg.train_epochs <= 50
    assert seconds <= 20 * 60


@pytest.mark.slow
def test_criterion_2_outlier_mix_stability(mnist_runs, criterion):
    _, runs = mnist_runs
    aucs = [r.auc for r in runs[0][0]]
    spread = max(aucs) - min(aucs)
    criterion(2, spread <= 0.02, "AUC over 10..50% outliers "
              f"{', '.join(f'{a:.4f}' for a in aucs)}; spread {spread:.4f} (need <= 0.02)")
    assert [r.outlier_pct for r in runs[0][0]] == list(PCTS)
    assert spread <= 0.02


@pytest.mark.slow
def test_criterion_3_blobs_ablation(criterion):
    cfg = load_config(CONFIGS / "blobs.conf")
    rows = dict(pipeline.default_ablation_rows(vector=True))
    names = {"full": "R-I-W-l", "one-class, no VAE": "R-C-WO--", "no AE": "R-WO-W-l",
             "deterministic": "R-I-W-l^"}
    aucs = {k: [] for k in names}
    for seed in range(5):
        data = pipeline.prepare(data_io.blobs_dataset(500, 500, 2, 10.0, seed=seed), cfg)
        table = pipeline.ablate(cfg.replace(seed=seed), data,
                                [(names[k], rows[names[k]]) for k in names])
        for k, row in zip(names, table):
            aucs[k].append(row["auc"])
    mean = {k: float(np.mean(v)) for k, v in aucs.items()}
    gaps = {k: mean["full"] - mean[k] for k in names if k != "full"}
    ok = all(g >= 0.03 for g in gaps.values())
    criterion(3, ok, f"blobs, 5 seeds: full {mean['full']:.4f}; "
              + "; ".join(f"{k} {mean[k]:.4f} (gap {g:+.4f})" for k, g in gaps.items())
              + " (need every gap >= 0.03)")
    for k, g in gaps.items():
        assert g >= 0.03, k


def test_criterion_4_selector_oracle(criterion):
    rng = np.random.default_rng(20240)
    mismatches = 0
    for _ in range(200):
        cat = random_catalog(rng, n=int(rng.integers(2, 101)), d=int(rng.integers(1, 7)))
        stats = B.meta_stats(cat)
        alpha = float(rng.uniform(0.25, 3.0))
        for rule in ("ellipsoid", "l2"):
            got = B.select(cat, stats, alpha, rule, allow_empty=True).indices.tolist()
            mismatches += got != brute_force(cat, alpha, rule)
    criterion(4, mismatches == 0, f"200 random catalogs x 2 rules: {mismatches} mismatches")
    assert mismatches == 0


def test_criterion_5_directional_synthesis(criterion):
    rng = np.random.default_rng(5)
    cat = random_catalog(rng, n=100, d=6)
    stats = B.meta_stats(cat)
    out = B.select(cat, stats, 0.75, "ellipsoid")
    signs = B.direction_signs(out.mu, stats)
    bad = {}
    for noise in B.NOISE_MODES:
        y = B.synthesize(out, B.SynthesisConfig(beta=5.0, noise=noise, count=10_000, seed=3))
        step = y[:, None, :] - out.mu[None]
        aligned = np.all(step * signs[None] >= 0, axis=2)
        farther = np.all(np.abs(y - stats.mu_bar)[:, None, :]
                         >= np.abs(out.mu - stats.mu_bar)[None], axis=2)
        bad[noise] = int(np.sum(~np.any(aligned & farther, axis=1)))
    ok = all(v == 0 for v in bad.values())
    criterion(5, ok, "10^4 samples per mode, violations: "
              + ", ".join(f"{k} {v}" for k, v in bad.items()))
    assert ok


def test_criterion_6_numerics(criterion):
    failures = []
    rng = np.random.default_rng(6)

    # dense nets against central differences, h = 1e-5, rtol 1e-4
    for acts in (["sigmoid", "tanh", "sigmoid"], ["tanh", "linear", "sigmoid"]):
        net = nnet.DenseNet.build([4, 6, 5, 3], acts, seed=1)
        x, y = rng.normal(size=(5, 4)), rng.uniform(size=(5, 3))
        for loss in ("mse", "bce"):
            lf, gf = nnet.LOSSES[loss]
            grads, _ = net.backward(gf(net.forward(x), y))
            num = central_diff(lambda: lf(net.forward(x, cache=False), y), net.parameters())
            for a, n in zip(nnet.flatten_grads(grads), num):
                if not np.allclose(a, n, rtol=1e-4, atol=1e-8):
                    failures.append(f"nnet {acts} {loss}")

    # AE + VAE stack with frozen noise, rtol 1e-3
    feats = small_features(rng)
    cfg = H.HierarchyConfig(ae_activation="tanh", vae_activation="tanh", ae_width="half")
    h = H.Hierarchy.build([f.shape[1] for f in feats], cfg, seed=2)
    noise, eps = frozen_randoms(h, feats, rng)
    _, _, analytic = h.loss_and_grads(feats, eps=eps, noise=noise)
    num = central_diff(lambda: h.loss_and_grads(feats, eps=eps, noise=noise)[0], h.parameters())
    if not all(np.allclose(a, n, rtol=1e-3, atol=1e-7) for a, n in zip(analytic, num)):
        failures.append("hierarchy")

    # MLP classifier (sigmoid output + BCE), rtol 1e-4
    m = C.mlp_fit(rng.normal(size=(10, 3)), rng.normal(2, 1, size=(10, 3)), hidden=5,
                  cfg=nnet.TrainConfig(epochs=2, batch_size=4, learning_rate=1e-2)).net
    X = rng.normal(size=(6, 3))
    t = rng.integers(0, 2, (6, 1)).astype(float)
    grads, _ = m.backward(nnet.bce_grad(m.forward(X), t))
    num = central_diff(lambda: nnet.bce_loss(m.forward(X, cache=False), t), m.parameters())
    if not all(np.allclose(a, n, rtol=1e-4, atol=1e-8) for a, n in zip(nnet.flatten_grads(grads), num)):
        failures.append("mlp")

    # analytic KL against 1e5-sample Monte Carlo, within 2%
    worst = 0.0
    for _ in range(20):
        d = int(rng.integers(1, 5))
        v = rng.standard_normal(d)
        mu = v / np.linalg.norm(v) * rng.uniform(0, 3)
        sigma = rng.uniform(0.5, 2.0, size=d)
        exact = H.kl_to_standard_normal(H.GaussianParams(mu, sigma))
        rel = abs(monte_carlo_kl(mu, sigma, 100_000, rng) - exact) / exact
        worst = max(worst, rel)
    if worst > 0.02:
        failures.append(f"KL rel err {worst:.4f}")

    # AUC against exact pairwise enumeration
    auc_bad = 0
    for _ in range(50):
        n = int(rng.integers(2, 30))
        labels = rng.integers(0, 2, n)
        labels[:2] = (0, 1)
        scores = rng.integers(0, 5, n) / 2.0
        auc_bad += roc_auc(scores, labels) != float(pairwise_auc(scores.tolist(), labels.tolist()))
    if auc_bad:
        failures.append(f"AUC mismatches {auc_bad}")

    criterion(6, not failures, f"gradient checks, KL worst rel err {worst:.4f}, "
              f"AUC exact on 50 sets; failures: {failures or 'none'}")
    assert not failures


@pytest.mark.slow
def test_criterion_7_determinism(mnist_runs, criterion):
    _, runs = mnist_runs
    same = runs[0][1] == runs[1][1]
    criterion(7, same, "two full MNIST runs (1 and 8 workers) give "
              f"{'byte-identical' if same else 'different'} metric CSVs "
              f"({len(runs[0][1])} bytes)")
    assert same


@pytest.mark.slow
def test_criterion_8_grid_surface(criterion):
    cfg = load_config(CONFIGS / "blobs.conf")
    data = pipeline.prepare(data_io.blobs_dataset(500, 500, 2, 10.0, seed=0), cfg)
    t0 = time.perf_counter()
    rows = pipeline.grid_search_alpha_beta(cfg, data)
    seconds = time.perf_counter() - t0
    cells = {(r["alpha"], r["beta"]) for r in rows}
    marked = all((r["status"] == "empty") == np.isnan(r["auc"]) for r in rows)
    empty = sum(r["status"] == "empty" for r in rows)
    ok = len(rows) == 45 and len(cells) == 45 and marked and seconds <= 600
    criterion(8, ok, f"{len(rows)} cells ({empty} empty, all marked: {marked}) "
                     f"in {seconds:.0f} s (need 45 cells in <= 600 s)")
    assert len(rows) == 45 and len(cells) == 45
    assert marked
    assert seconds <= 600
