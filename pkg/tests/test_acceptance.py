"""End-to-end acceptance checks, one test per criterion.

The MNIST runs are shared between criteria through session fixtures; the full
module takes about twenty minutes on one CPU core. Every test records a
PASS/FAIL line that is printed in the terminal summary.
"""

import time

import numpy as np
import pytest

from dstee.checkpoint import load_checkpoint, save_checkpoint
from dstee.config import ExperimentConfig
from dstee.data import load_mnist
from dstee.harness import SweepSpec, load_dataset, read_metrics_csv, run_compare, run_sweep, run_train
from dstee.metrics import MetricsRecord, convergence_series, exploitation_degree
from dstee.numerics import backward, forward, loss_value
from dstee.sparsity import erk_plan
from dstee.trainer import accuracy, train

import conftest
from conftest import MNIST_DIR, digest, erk_oracle, fd_grad, grown_case, random_batch, random_net, \
    random_params, reference_loss, rel_err

pytestmark = pytest.mark.skipif(not MNIST_DIR.exists(), reason="bundled MNIST subset not present")

SEEDS5 = (1, 2, 3, 4, 5)
SEEDS3 = (1, 2, 3)
C_VALUES = (0.0, 0.1, 1.0)
POLICIES = ("random", "gradient", "dst_ee")


def report(n, ok, detail):
    conftest.ACCEPTANCE_LINES[n] = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {detail}"
    print(conftest.ACCEPTANCE_LINES[n])
    return ok


def mnist_config(out_dir, **kw):
    base = dict(out_dir=str(out_dir), dataset="mnist", data_dir=str(MNIST_DIR), hidden_sizes=(300, 100),
                delta_t=100, t_end=10000, eval_every=100, epsilon=10.0, c=0.1)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="session")
def c_sweep(tmp_path_factory):
    """784-300-100-10 at sparsity 0.95, c in {0, 0.1, 1.0}, five seeds."""
    base = mnist_config(tmp_path_factory.mktemp("c_sweep"), label="sweep", global_sparsity=0.95)
    return run_sweep(SweepSpec("c", C_VALUES, base), seeds=SEEDS5)


@pytest.fixture(scope="session")
def policy_compare(tmp_path_factory):
    """Same network at sparsity 0.9, three policies, three seeds."""
    base = mnist_config(tmp_path_factory.mktemp("compare"), label="compare", global_sparsity=0.9)
    return run_compare(base, POLICIES, seeds=SEEDS3), base


def test_criterion_01_gradient_soundness():
    started = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(10_000 + seed)
        net = random_net(rng, max_layers=3, max_units=64)
        params, masks = random_params(net, rng)
        x, y = random_batch(net, rng, 4)
        _, cache = forward(net, params, masks, x, y)
        grads = backward(net, params, masks, cache, y)
        fn = lambda: loss_value(net, params, masks, x, y)
        for p, g in zip(params.arrays(), grads.arrays()):
            worst = max(worst, rel_err(g, fd_grad(fn, p)))
    elapsed = time.perf_counter() - started
    ok = worst < 1e-4 and elapsed < 60
    report(1, ok, f"20 nets, max relative error {worst:.2e} (< 1e-4), {elapsed:.1f}s (< 60s)")
    assert ok


@pytest.mark.slow
def test_criterion_02_budget_conservation(policy_compare):
    root, base = policy_compare
    shapes = base.network(784, 10).weight_shapes
    plan_counts = erk_plan(shapes, 0.9).active_counts()
    sizes = [a * b for a, b in shapes]
    bad = []
    for policy in POLICIES:
        for seed in SEEDS3:
            rows = read_metrics_csv(root / policy / f"seed={seed}" / "metrics.csv")
            for row in rows:
                counts = [round((1 - row[f"layer{i}_sparsity"]) * n) for i, n in enumerate(sizes)]
                if counts != plan_counts:
                    bad.append((policy, seed, int(row["iteration"]), counts))
            assert len(rows) == 101 and rows[-1]["iteration"] == 9999
    ok = not bad
    report(2, ok, f"9 runs x 101 logged iterations, per-layer nonzeros {plan_counts} constant"
           + ("" if ok else f"; first violation {bad[0]}"))
    assert ok


@pytest.mark.slow
def test_criterion_03_policy_reduction(tmp_path):
    data = None
    grown = {}
    for kind in ("dst_ee", "gradient"):
        cfg = mnist_config(tmp_path, global_sparsity=0.9, t_end=3000, seed=7, c=0.0, policy=kind,
                           eval_every=1000)
        data = load_dataset(cfg) if data is None else data
        sets = []
        train(cfg.train_config(784, 10), data, on_round=lambda st, info: sets.append(info.grown))
        grown[kind] = sets
    rounds = len(grown["dst_ee"])
    mismatched = [q for q, (a, b) in enumerate(zip(grown["dst_ee"], grown["gradient"]))
                  if any(not np.array_equal(x, y) for x, y in zip(a, b))]
    ok = rounds == 29 and len(grown["gradient"]) == rounds and not mismatched
    report(3, ok, f"c = 0 grown sets equal gradient top-k in {rounds - len(mismatched)}/{rounds} rounds")
    assert ok


def final_rates(root, c):
    return [read_metrics_csv(root / f"c={c!r}" / f"seed={s}" / "metrics.csv")[-1]["exploration_rate"]
            for s in SEEDS5]


@pytest.mark.slow
def test_criterion_04_exploration_monotone_in_c(c_sweep):
    means = [float(np.mean(final_rates(c_sweep, c))) for c in C_VALUES]
    steps = np.diff(means)
    ok = bool(np.all(steps >= 0.005))
    report(4, ok, "mean final R over 5 seeds: " + ", ".join(f"c={c}: {m:.4f}" for c, m in zip(C_VALUES, means))
           + f"; steps {', '.join(f'{s:+.4f}' for s in steps)} (each >= 0.005)")
    assert ok


@pytest.mark.slow
def test_criterion_05_accuracy_ordering(policy_compare):
    root, _ = policy_compare
    mean = {p: 100 * float(np.mean([read_metrics_csv(root / p / f"seed={s}" / "metrics.csv")[-1]["test_accuracy"]
                                    for s in SEEDS3])) for p in POLICIES}
    vs_random = mean["dst_ee"] - mean["random"]
    vs_gradient = mean["dst_ee"] - mean["gradient"]
    ok = vs_random >= 0.2 and vs_gradient >= -0.2
    report(5, ok, f"mean test accuracy dst_ee {mean['dst_ee']:.2f}, random {mean['random']:.2f}, "
           f"gradient {mean['gradient']:.2f}; dst_ee - random = {vs_random:+.2f} (>= +0.2), "
           f"dst_ee - gradient = {vs_gradient:+.2f} (>= -0.2)")
    assert ok


def as_records(rows):
    return [MetricsRecord(int(r["iteration"]), int(r["round"]), r["train_loss"], r["test_accuracy"],
                          r["exploration_rate"], r["exploitation_degree"], r["grad_norm_sq"], [],
                          r["global_sparsity"]) for r in rows]


@pytest.mark.slow
def test_criterion_06_convergence_diagnostic(c_sweep, tmp_path):
    details, ok = [], True
    for s in SEEDS5:
        summary = convergence_series(as_records(read_metrics_csv(c_sweep / "c=0.1" / f"seed={s}" / "metrics.csv")))
        ok &= summary["last_decile_mean"] < summary["first_decile_mean"]
        details.append(f"{summary['first_decile_mean']:.3g}->{summary['last_decile_mean']:.3g}")
    blobs = ExperimentConfig(label="blobs", out_dir=str(tmp_path), dataset="synthetic_blobs", n_samples=2000,
                             noise=1.0, n_classes=4, input_dim=20, hidden_sizes=(64,), global_sparsity=0.8,
                             t_end=3000, batch_size=64, eval_every=100, seed=0)
    run_train(blobs)
    rows = read_metrics_csv(tmp_path / "blobs" / "metrics.csv")
    below = [int(r["iteration"]) for r in rows if r["train_loss"] < 0.1]
    ok &= bool(below) and below[0] < 3000
    report(6, ok, f"MNIST c=0.1 grad_norm_sq first->last decile per seed [{'; '.join(details)}]; "
           f"blobs train loss < 0.1 first at iteration {below[0] if below else 'never'} (< 3000)")
    assert ok


def test_criterion_07_erk_plan():
    archs = {1: [784, 10], 3: [784, 300, 100, 10], 5: [784, 512, 256, 128, 64, 10]}
    details, ok = [], True
    for n_layers, sizes in archs.items():
        shapes = list(zip(sizes[:-1], sizes[1:]))
        for sparsity in (0.5, 0.8, 0.9, 0.95, 0.99):
            plan = erk_plan(shapes, sparsity)
            total_err = abs(sum(plan.active_counts()) - round((1 - sparsity) * plan.total))
            layer_err = max(abs(d - o) * n for d, o, n in zip(plan.densities, erk_oracle(shapes, sparsity),
                                                               plan.sizes))
            ok &= total_err <= n_layers and layer_err <= 1
            details.append(f"L={n_layers} S={sparsity}: total off by {total_err}, layer off by {layer_err:.2g}")
    report(7, ok, "ERK for 1/3/5 layers at 5 sparsities within tolerance" if ok else "; ".join(details))
    assert ok


def test_criterion_08_exploitation_oracle():
    worst, exact_zero, restored = 0.0, True, True
    for seed in range(50):
        net, params, masks, x, y, grown, probes = grown_case(20_000 + seed)
        before = digest(params, masks)
        got = exploitation_degree(net, params, masks, x, y, grown, probes)
        restored &= digest(params, masks) == before
        moved = params.copy()
        for w, idx, v in zip(moved.weights, grown, probes):
            w.reshape(-1)[idx] += v
        want = reference_loss(net, params, masks, x, y) - reference_loss(net, moved, masks, x, y)
        worst = max(worst, abs(got - want))
        zeros = [np.zeros_like(p) for p in probes]
        exact_zero &= exploitation_degree(net, params, masks, x, y, grown, zeros) == 0.0
    ok = worst <= 1e-10 and exact_zero and restored
    report(8, ok, f"50 cases, max |error| {worst:.1e} (<= 1e-10), zero probe exact: {exact_zero}, "
           f"state hash unchanged: {restored}")
    assert ok


@pytest.mark.slow
def test_criterion_09_determinism(tmp_path):
    outputs = []
    for name in ("a", "b"):
        cfg = mnist_config(tmp_path / name, label="det", global_sparsity=0.9, t_end=2000, seed=11)
        run_train(cfg)
        outputs.append((tmp_path / name / "det" / "metrics.csv").read_bytes())
    ok = outputs[0] == outputs[1]
    report(9, ok, f"two MNIST runs with one seed: metrics.csv byte-identical ({len(outputs[0])} bytes)")
    assert ok


@pytest.mark.slow
def test_criterion_10_checkpoint_round_trip(policy_compare, tmp_path):
    root, base = policy_compare
    run = root / "dst_ee" / "seed=1"
    first = (run / "checkpoint.bin").read_bytes()
    ckpt = load_checkpoint(run / "checkpoint.bin")
    save_checkpoint(tmp_path / "again.bin", ckpt)
    same_bytes = (tmp_path / "again.bin").read_bytes() == first
    data = load_mnist(MNIST_DIR)
    resumed = accuracy(ckpt.net, ckpt.params, [l.mask for l in ckpt.layers], data.x_test, data.y_test)
    logged = read_metrics_csv(run / "metrics.csv")[-1]["test_accuracy"]
    ok = same_bytes and resumed == logged
    report(10, ok, f"save->load->save byte-identical: {same_bytes}; accuracy after load {resumed} "
           f"vs before save {logged}")
    assert ok
