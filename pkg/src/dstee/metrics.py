"""Exploration rate, exploitation degree and a convergence summary."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError
from .numerics import NetworkSpec, Params, loss_value
from .sparsity import MaskedTensor

CSV_COLUMNS = ("iteration", "round", "train_loss", "test_accuracy", "exploration_rate",
               "exploitation_degree", "grad_norm_sq", "global_sparsity")


@dataclass
class MetricsRecord:
    iteration: int
    round_index: int
    train_loss: float
    test_accuracy: float
    exploration_rate: float
    exploitation_degree: float
    grad_norm_sq: float
    per_layer_sparsity: list[float]
    global_sparsity: float
    per_layer_active: list[int] = field(default_factory=list)

    def row(self) -> list:
        return [self.iteration, self.round_index, self.train_loss, self.test_accuracy,
                self.exploration_rate, self.exploitation_degree, self.grad_norm_sq,
                self.global_sparsity, *self.per_layer_sparsity]


def csv_header(n_layers: int) -> list[str]:
    return list(CSV_COLUMNS) + [f"layer{i}_sparsity" for i in range(n_layers)]


def exploration_rate(layers: Sequence[MaskedTensor]) -> float:
    """Fraction of all weight positions that have ever been active."""
    explored = sum(int(np.count_nonzero(layer.ever_active)) for layer in layers)
    total = sum(layer.size for layer in layers)
    return explored / total


def exploitation_degree(net: NetworkSpec, params: Params, masks: Sequence[np.ndarray],
                        batch: np.ndarray, labels, grown: Sequence[np.ndarray],
                        probe_values: Sequence[np.ndarray]) -> float:
    """Loss drop on ``batch`` when the grown positions take ``probe_values``.

    ``grown[i]`` are flat indices into layer ``i`` and ``probe_values[i]`` the
    matching candidate weights. Returns ``L(W) - L(W + probe)``; positive means
    the growth lowers the loss. Parameters are restored exactly afterwards.
    """
    if len(grown) != len(probe_values) or len(grown) != len(params.weights):
        raise ContractError("need one grown set and one probe array per layer")
    for i, (idx, vals) in enumerate(zip(grown, probe_values)):
        if np.shape(idx) != np.shape(vals):
            raise ContractError(f"layer {i}: {np.size(idx)} grown indices but {np.size(vals)} probe values")
        if np.size(idx) and not masks[i].reshape(-1)[np.asarray(idx, dtype=np.intp)].all():
            raise ContractError(f"layer {i}: probed positions must be active")

    before = loss_value(net, params, masks, batch, labels)
    saved = []
    try:
        for w, idx, vals in zip(params.weights, grown, probe_values):
            idx = np.asarray(idx, dtype=np.intp)
            flat = w.reshape(-1)
            saved.append((flat, idx, flat[idx].copy()))
            flat[idx] += np.asarray(vals, dtype=w.dtype)
        after = loss_value(net, params, masks, batch, labels)
    finally:
        for flat, idx, old in saved:
            flat[idx] = old
    return before - after


def convergence_series(records: Sequence[MetricsRecord]) -> dict[str, float]:
    """Mean squared gradient norm over the first and last 10% of records."""
    if len(records) < 20:
        raise ContractError(f"need at least 20 records, got {len(records)}")
    values = np.array([r.grad_norm_sq for r in records], dtype=np.float64)
    n = len(values) // 10
    return {
        "first_decile_mean": float(values[:n].mean()),
        "last_decile_mean": float(values[-n:].mean()),
        "min_grad_norm_sq": float(values.min()),
    }


def grad_norm_sq(grads: Params) -> float:
    return float(sum(np.vdot(g, g) for g in grads.arrays()))
