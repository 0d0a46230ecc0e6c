"""The dynamic sparse training loop.

Every ``delta_t`` iterations (while ``t < t_end``) the iteration performs a
drop-and-grow round instead of an SGD step: each layer drops its ``k`` active
weights closest to zero, grows ``k`` inactive ones chosen by the growth policy,
and finally every counter is incremented by its mask. All other iterations are
masked momentum-SGD steps under a cosine learning rate.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import metrics as M
from .data import BatchStream, Dataset
from .errors import ConfigError, NumericalError
from .numerics import NetworkSpec, OptimizerState, Params, backward, cosine_lr, forward, predict, sgd_step
from .policies import DropSchedule, GrowthPolicy, drop_count, drop_fraction, policy_growth
from .sparsity import MaskedTensor, SparsityPlan, drop_smallest, grow, init_masked, make_plan, update_counter

log = logging.getLogger(__name__)


def derive_seed(master: int, tag: str, *extra: int) -> np.random.SeedSequence:
    """Independent stream for one component: ``SeedSequence([master, crc32(tag), *extra])``."""
    return np.random.SeedSequence([int(master), zlib.crc32(tag.encode()), *map(int, extra)])


@dataclass(frozen=True)
class TrainConfig:
    net: NetworkSpec
    global_sparsity: float = 0.9
    allocation: str = "erk"
    policy: GrowthPolicy = field(default_factory=GrowthPolicy)
    drop: DropSchedule | None = None  # defaults to cosine 0.3 stopping at t_end
    delta_t: int = 100
    t_end: int = 10000
    total_iterations: int | None = None  # defaults to t_end
    lr0: float = 0.1
    lr_min: float = 0.0
    momentum: float = 0.9
    batch_size: int = 128
    seed: int = 0
    eval_every: int = 100
    counter_init: str = "mask"
    probe_size: int = 256
    dtype: str = "float32"

    def __post_init__(self):
        if self.total_iterations is None:
            object.__setattr__(self, "total_iterations", self.t_end)
        if self.drop is None:
            object.__setattr__(self, "drop", DropSchedule(0.3, "cosine", self.t_end))
        if self.delta_t < 1 or self.t_end < 1:
            raise ConfigError("delta_t and t_end must be positive")
        if not self.delta_t <= self.t_end <= self.total_iterations:
            raise ConfigError(
                f"need delta_t <= t_end <= total_iterations, got "
                f"{self.delta_t}, {self.t_end}, {self.total_iterations}"
            )
        if self.batch_size < 1 or self.eval_every < 1 or self.probe_size < 1:
            raise ConfigError("batch_size, eval_every and probe_size must be at least 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    def is_update(self, t: int) -> bool:
        return t > 0 and t % self.delta_t == 0 and t < self.t_end


@dataclass
class RoundInfo:
    t: int
    dropped: list[np.ndarray]
    grown: list[np.ndarray]
    dense_grads: list[np.ndarray]


@dataclass
class TrainState:
    config: TrainConfig
    plan: SparsityPlan
    layers: list[MaskedTensor]
    params: Params  # params.weights[i] is layers[i].values
    optimizer: OptimizerState
    t: int = 0
    round_index: int = 0
    records: list[M.MetricsRecord] = field(default_factory=list)
    last_exploitation: float = 0.0
    last_round: RoundInfo | None = None

    @property
    def net(self) -> NetworkSpec:
        return self.config.net

    @property
    def masks(self) -> list[np.ndarray]:
        return [layer.mask for layer in self.layers]


def init_state(config: TrainConfig) -> TrainState:
    net = config.net
    dtype = np.dtype(config.dtype)
    plan = make_plan(net.weight_shapes, config.global_sparsity, config.allocation)
    layers = [
        init_masked(shape, density, derive_seed(config.seed, "init", i), dtype, config.counter_init)
        for i, (shape, density) in enumerate(zip(net.weight_shapes, plan.densities))
    ]
    biases = [np.zeros(layer.n_out, dtype) if layer.has_bias else None for layer in net.layers]
    params = Params([layer.values for layer in layers], biases)
    opt = OptimizerState.for_params(params, config.momentum, config.lr0)
    return TrainState(config, plan, layers, params, opt)


def mask_update_round(state: TrainState, batch: np.ndarray, labels, cache=None) -> RoundInfo:
    """One drop-and-grow round over every layer, followed by the counter update.

    Dense gradients are taken once, on the pre-drop weights, from the same
    forward pass as the iteration's loss. Freshly dropped positions therefore
    have gradients and stay eligible for regrowth.
    """
    cfg = state.config
    t = state.t
    if cache is None:
        _, cache = forward(state.net, state.params, state.masks, batch, labels)
    grads = backward(state.net, state.params, state.masks, cache, labels, dense_mode=True)
    fraction = drop_fraction(t, cfg.drop)
    state.round_index += 1
    dropped_all, grown_all = [], []
    for i, layer in enumerate(state.layers):
        k = drop_count(fraction, layer.active, layer.inactive)
        dropped = drop_smallest(layer, k)
        state.optimizer.reset(i, dropped)
        grown = policy_growth(
            cfg.policy, layer.mask, k, dense_grad=grads.weights[i], counter=layer.counter, t=t,
            seed=derive_seed(cfg.seed, "policy", i, state.round_index), layer=i,
        )
        grow(layer, grown)
        dropped_all.append(dropped)
        grown_all.append(np.sort(grown))
    for layer in state.layers:
        update_counter(layer)
    info = RoundInfo(t, dropped_all, grown_all, grads.weights)
    state.last_round = info
    return info


def accuracy(net: NetworkSpec, params: Params, masks, x: np.ndarray, y: np.ndarray,
             chunk: int = 2048) -> float:
    if len(x) == 0:
        return 0.0
    x = x.astype(params.weights[0].dtype, copy=False)
    correct = 0
    for start in range(0, len(x), chunk):
        pred = predict(net, params, masks, x[start:start + chunk])
        correct += int(np.count_nonzero(pred == y[start:start + chunk]))
    return correct / len(x)


def evaluate(state: TrainState, x: np.ndarray, y: np.ndarray) -> float:
    """Top-1 accuracy of the masked network; never mutates ``state``."""
    return accuracy(state.net, state.params, state.masks, x, y)


class TrainingAborted(NumericalError):
    def __init__(self, message, iteration, records, layer=None):
        super().__init__(message, layer)
        self.iteration = iteration
        self.records = records


def train(config: TrainConfig, data: Dataset, callback=None,
          on_round=None) -> tuple[TrainState, list[M.MetricsRecord]]:
    """Run ``total_iterations`` iterations; log a record every ``eval_every`` and at the end.

    ``callback(state, record)`` is invoked after each record is appended and
    ``on_round(state, info)`` after each drop-and-grow round.
    """
    if data.n_features != config.net.n_inputs or data.n_classes != config.net.n_classes:
        raise ConfigError(
            f"network expects {config.net.n_inputs} inputs/{config.net.n_classes} classes, "
            f"data has {data.n_features}/{data.n_classes}"
        )
    if len(data.x_train) == 0:
        raise ConfigError("training set is empty")
    state = init_state(config)
    data = data.astype(np.dtype(config.dtype))
    net = config.net
    x_test, y_test = (data.x_test, data.y_test) if len(data.x_test) else (data.x_train, data.y_train)

    stream = BatchStream(len(data.x_train), config.batch_size, derive_seed(config.seed, "data"))
    probe_rng = np.random.default_rng(derive_seed(config.seed, "probe"))
    train_probe = probe_rng.choice(len(data.x_train), min(config.probe_size, len(data.x_train)), replace=False)
    test_probe = probe_rng.choice(len(x_test), min(config.probe_size, len(x_test)), replace=False)
    probe_x, probe_y = data.x_train[train_probe], data.y_train[train_probe]
    held_x, held_y = x_test[test_probe], y_test[test_probe]

    losses: list[float] = []
    try:
        for t in range(config.total_iterations):
            state.t = t
            idx = stream.next()
            x, y = data.x_train[idx], data.y_train[idx]
            loss, cache = forward(net, state.params, state.masks, x, y)
            losses.append(loss)
            lr = cosine_lr(t, config.total_iterations, config.lr0, config.lr_min)
            if config.is_update(t):
                info = mask_update_round(state, x, y, cache)
                probes = [-lr * g.reshape(-1)[idx_] for g, idx_ in zip(info.dense_grads, info.grown)]
                state.last_exploitation = M.exploitation_degree(
                    net, state.params, state.masks, held_x, held_y, info.grown, probes)
                if on_round is not None:
                    on_round(state, info)
            else:
                grads = backward(net, state.params, state.masks, cache, y)
                sgd_step(state.params, grads, state.masks, state.optimizer, lr)
            if t % config.eval_every == 0 or t == config.total_iterations - 1:
                record = _record(state, float(np.mean(losses)), x_test, y_test, probe_x, probe_y)
                losses.clear()
                state.records.append(record)
                if callback is not None:
                    callback(state, record)
        state.t = config.total_iterations
    except NumericalError as exc:
        log.error("training aborted at iteration %d: %s", state.t, exc)
        raise TrainingAborted(str(exc), state.t, state.records, getattr(exc, "layer", None)) from exc
    return state, state.records


def _record(state: TrainState, train_loss, x_test, y_test, probe_x, probe_y) -> M.MetricsRecord:
    net = state.net
    _, cache = forward(net, state.params, state.masks, probe_x, probe_y)
    grads = backward(net, state.params, state.masks, cache, probe_y)
    active = [layer.active for layer in state.layers]
    total = sum(layer.size for layer in state.layers)
    return M.MetricsRecord(
        iteration=state.t,
        round_index=state.round_index,
        train_loss=train_loss,
        test_accuracy=evaluate(state, x_test, y_test),
        exploration_rate=M.exploration_rate(state.layers),
        exploitation_degree=float(state.last_exploitation),
        grad_norm_sq=M.grad_norm_sq(grads),
        per_layer_sparsity=[layer.sparsity for layer in state.layers],
        global_sparsity=1.0 - sum(active) / total,
        per_layer_active=active,
    )
