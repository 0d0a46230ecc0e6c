
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dstee.errors import ContractError
from dstee.metrics import (MetricsRecord, convergence_series, csv_header, exploitation_degree,
                           exploration_rate, grad_norm_sq)
from dstee.numerics import Params, backward, forward
from dstee.sparsity import MaskedTensor, drop_smallest, init_masked

from conftest import digest, grown_case, reference_loss


def layer(size, explored):
    ever = np.zeros(size, bool)
    ever[:explored] = True
    mask = ever.copy()
    return MaskedTensor(np.zeros(size), mask, mask.astype(np.int64), ever)


def test_exploration_rate_examples():
    assert exploration_rate([layer(10, 3), layer(10, 5)]) == 0.4
    assert exploration_rate([layer(7, 7)]) == 1.0


def test_exploration_rate_at_init_equals_density():
    layers = [init_masked((100, 50), 0.1, seed=0), init_masked((50, 10), 0.1, seed=1)]
    assert exploration_rate(layers) == pytest.approx(0.1, abs=1 / 5500)


def test_drop_never_lowers_exploration():
    tensor = init_masked((20, 20), 0.3, seed=4)
    before = exploration_rate([tensor])
    drop_smallest(tensor, 50)
    assert exploration_rate([tensor]) == before


@pytest.mark.parametrize("seed", range(5))
def test_exploitation_matches_two_forward_oracle(seed):
    net, params, masks, x, y, grown, probes = grown_case(seed)
    got = exploitation_degree(net, params, masks, x, y, grown, probes)
    moved = params.copy()
    for w, idx, v in zip(moved.weights, grown, probes):
        w.reshape(-1)[idx] += v
    want = reference_loss(net, params, masks, x, y) - reference_loss(net, moved, masks, x, y)
    assert got == pytest.approx(want, abs=1e-10)


def test_single_weight_probe():
    net, params, masks, x, y, grown, _ = grown_case(11, n_grown=1)
    probes = [np.full(idx.size, 0.7) for idx in grown]
    only_first = [grown[0]] + [idx[:0] for idx in grown[1:]]
    probes = [probes[0]] + [p[:0] for p in probes[1:]]
    moved = params.copy()
    moved.weights[0].reshape(-1)[only_first[0]] += 0.7
    want = reference_loss(net, params, masks, x, y) - reference_loss(net, moved, masks, x, y)
    got = exploitation_degree(net, params, masks, x, y, only_first, probes)
    assert got == pytest.approx(want, abs=1e-10)


def test_zero_probe_is_exactly_zero():
    net, params, masks, x, y, grown, probes = grown_case(2)
    zeros = [np.zeros_like(p) for p in probes]
    assert exploitation_degree(net, params, masks, x, y, grown, zeros) == 0.0


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_state_restored_bit_exactly(seed):
    net, params, masks, x, y, grown, probes = grown_case(seed)
    before = digest(params, masks)
    exploitation_degree(net, params, masks, x, y, grown, probes)
    assert digest(params, masks) == before


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_gradient_probe_is_first_order_descent(seed):
    net, params, masks, x, y, grown, _ = grown_case(seed)
    _, cache = forward(net, params, masks, x, y)
    dense = backward(net, params, masks, cache, y, dense_mode=True)
    probes = [-1e-3 * g.reshape(-1)[idx] for g, idx in zip(dense.weights, grown)]
    assert exploitation_degree(net, params, masks, x, y, grown, probes) > -1e-6


def test_probe_length_mismatch():
    net, params, masks, x, y, grown, probes = grown_case(5, n_grown=2)
    with pytest.raises(ContractError):
        exploitation_degree(net, params, masks, x, y, grown, [p[:1] for p in probes])
    with pytest.raises(ContractError):
        exploitation_degree(net, params, masks, x, y, grown + [grown[0]], probes + [probes[0]])


def record(g, i=0):
    return MetricsRecord(i, 0, 0.0, 0.0, 0.0, 0.0, g, [0.9], 0.9)


def test_convergence_examples():
    falling = convergence_series([record(100.0 - i) for i in range(30)])
    assert falling["last_decile_mean"] < falling["first_decile_mean"]
    assert falling["first_decile_mean"] == 99.0  # mean of 100, 99, 98
    assert falling["min_grad_norm_sq"] == 71.0
    flat = convergence_series([record(2.5) for _ in range(25)])
    assert flat["last_decile_mean"] == flat["first_decile_mean"]


def test_convergence_needs_twenty_records():
    with pytest.raises(ContractError):
        convergence_series([record(1.0)] * 19)


def test_grad_norm_and_header():
    params = Params([np.array([[3.0, 0.0]])], [np.array([4.0])])
    assert grad_norm_sq(params) == 25.0
    assert csv_header(2)[-2:] == ["layer0_sparsity", "layer1_sparsity"]
    assert ",".join(csv_header(0)) == ("iteration,round,train_loss,test_accuracy,exploration_rate,"
                                       "exploitation_degree,grad_norm_sq,global_sparsity")
