import hashlib
import math
from pathlib import Path

import numpy as np
import pytest

from dstee.numerics import NetworkSpec, Params

ROOT = Path(__file__).resolve().parents[1]
MNIST_DIR = ROOT / "data" / "mnist"

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def random_net(rng: np.random.Generator, max_layers=3, max_units=64, bias=True):
    n_layers = int(rng.integers(1, max_layers + 1))
    sizes = [int(rng.integers(2, max_units + 1)) for _ in range(n_layers + 1)]
    return NetworkSpec.mlp(sizes, bias=bias)


def random_params(net: NetworkSpec, rng: np.random.Generator, density=0.6):
    weights, biases, masks = [], [], []
    for layer in net.layers:
        bound = math.sqrt(6.0 / layer.n_in)
        w = rng.uniform(-bound, bound, layer.weight_shape)
        m = rng.random(layer.weight_shape) < density
        weights.append(w * m)
        masks.append(m)
        biases.append(rng.normal(0, 0.1, layer.n_out) if layer.has_bias else None)
    return Params(weights, biases), masks


def random_batch(net: NetworkSpec, rng: np.random.Generator, n=8):
    return rng.normal(size=(n, net.n_inputs)), rng.integers(0, net.n_classes, n)


def reference_loss(net, params, masks, x, y):
    """Plain-Python forward pass, one sample at a time."""
    total = 0.0
    for row, label in zip(x.tolist(), y.tolist()):
        h = row
        for layer, w, m, b in zip(net.layers, params.weights, masks, params.biases):
            out = []
            for j in range(layer.n_out):
                acc = 0.0 if b is None else float(b[j])
                for i in range(layer.n_in):
                    if m[i, j]:
                        acc += h[i] * float(w[i, j])
                out.append(max(acc, 0.0) if layer.activation == "relu" else acc)
            h = out
        top = max(h)
        lse = top + math.log(sum(math.exp(v - top) for v in h))
        total += lse - h[label]
    return total / len(y)


def fd_grad(fn, array, h=1e-5):
    grad = np.zeros_like(array)
    flat, gflat = array.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = fn()
        flat[i] = old - h
        down = fn()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


def rel_err(a, b, floor=1e-6):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))


def erk_oracle(shapes, sparsity, iters=200):
    """Bisection on the scale factor of sum(min(1, f * score) * size) == budget."""
    sizes = [math.prod(s) for s in shapes]
    scores = [sum(s) / math.prod(s) for s in shapes]
    budget = (1 - sparsity) * sum(sizes)
    lo, hi = 0.0, 1.0 / min(scores)
    for _ in range(iters):
        mid = (lo + hi) / 2
        if sum(min(1.0, mid * r) * n for r, n in zip(scores, sizes)) < budget:
            lo = mid
        else:
            hi = mid
    return [min(1.0, hi * r) for r in scores]


def digest(params, masks):
    h = hashlib.sha256()
    for a in [*params.arrays(), *masks]:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def grown_case(seed, n_grown=None):
    """Random net where some masked-in weights were just grown (value 0)."""
    rng = np.random.default_rng(seed)
    net = random_net(rng, max_units=12)
    params, masks = random_params(net, rng)
    grown, probes = [], []
    for w, m in zip(params.weights, masks):
        off = np.flatnonzero(~m.reshape(-1))
        k = min(off.size, int(rng.integers(0, 4)) if n_grown is None else n_grown)
        idx = np.sort(rng.choice(off, k, replace=False))
        m.reshape(-1)[idx] = True
        grown.append(idx)
        probes.append(rng.normal(0, 0.5, k))
    x, y = random_batch(net, rng, 6)
    return net, params, masks, x, y, grown, probes


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
