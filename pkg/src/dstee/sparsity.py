"""Per-layer sparse state and the mechanical drop/grow mutations.

A :class:`MaskedTensor` bundles a layer's weights with its binary mask, the
per-weight count of update rounds it was active in, and a bitmap of every
position that has ever been active.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError

ALLOCATIONS = ("erk", "uniform")
COUNTER_INITS = ("mask", "zeros")


@dataclass
class MaskedTensor:
    values: np.ndarray
    mask: np.ndarray  # bool
    counter: np.ndarray  # int64
    ever_active: np.ndarray  # bool

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def active(self) -> int:
        return int(np.count_nonzero(self.mask))

    @property
    def inactive(self) -> int:
        return self.size - self.active

    @property
    def sparsity(self) -> float:
        return 1.0 - self.active / self.size

    def check(self) -> None:
        """Raise :class:`ContractError` if any structural invariant is broken."""
        if np.any(self.values[~self.mask] != 0):
            raise ContractError("masked-out weights must be exactly zero")
        if np.any(self.mask & ~self.ever_active):
            raise ContractError("active weight missing from the ever-active bitmap")
        if np.any(self.counter < 0):
            raise ContractError("negative counter")

    def copy(self) -> "MaskedTensor":
        return MaskedTensor(self.values.copy(), self.mask.copy(),
                            self.counter.copy(), self.ever_active.copy())


@dataclass(frozen=True)
class SparsityPlan:
    densities: tuple[float, ...]
    sizes: tuple[int, ...]
    global_sparsity: float
    allocation: str

    def active_counts(self) -> list[int]:
        return [_budget(d, n) for d, n in zip(self.densities, self.sizes)]

    @property
    def total(self) -> int:
        return sum(self.sizes)


def _budget(density: float, size: int) -> int:
    return int(math.floor(density * size + 0.5))


def _check_sparsity(global_sparsity: float) -> None:
    if not 0.0 <= global_sparsity < 1.0:
        raise ConfigError(f"global sparsity must lie in [0, 1), got {global_sparsity}")


def uniform_plan(layer_shapes: Sequence[Sequence[int]], global_sparsity: float) -> SparsityPlan:
    _check_sparsity(global_sparsity)
    sizes = tuple(math.prod(s) for s in layer_shapes)
    return SparsityPlan(tuple(1.0 - global_sparsity for _ in sizes), sizes, global_sparsity, "uniform")


def erk_raw_score(shape: Sequence[int]) -> float:
    """``sum(dims) / prod(dims)``: (n_in+n_out)/(n_in*n_out) for FC, the kernel form for conv."""
    return sum(shape) / math.prod(shape)


def erk_plan(layer_shapes: Sequence[Sequence[int]], global_sparsity: float) -> SparsityPlan:
    """Erdos-Renyi-Kernel allocation.

    Densities are proportional to :func:`erk_raw_score`, scaled by one factor so
    the total nonzero count meets the budget. Layers pushed above density 1 are
    made dense and the factor is re-solved over the rest until nothing changes.
    """
    _check_sparsity(global_sparsity)
    if not layer_shapes:
        raise ConfigError("no layers to allocate")
    sizes = [math.prod(s) for s in layer_shapes]
    scores = [erk_raw_score(s) for s in layer_shapes]
    budget = (1.0 - global_sparsity) * sum(sizes)
    dense: set[int] = set()
    factor = 0.0
    while True:
        free = [i for i in range(len(sizes)) if i not in dense]
        remaining = budget - sum(sizes[i] for i in dense)
        if not free:
            if remaining > 1e-9 * budget:
                raise ConfigError("sparsity budget cannot be met even with every layer dense")
            break
        factor = remaining / sum(scores[i] * sizes[i] for i in free)
        # tolerance keeps a layer sitting exactly at density 1 from flip-flopping
        over = {i for i in free if factor * scores[i] > 1.0 + 1e-12}
        if not over:
            break
        dense |= over
    densities = tuple(1.0 if i in dense else min(1.0, factor * scores[i]) for i in range(len(sizes)))
    return SparsityPlan(densities, tuple(sizes), global_sparsity, "erk")


def make_plan(layer_shapes, global_sparsity: float, allocation: str = "erk") -> SparsityPlan:
    if allocation == "erk":
        return erk_plan(layer_shapes, global_sparsity)
    if allocation == "uniform":
        return uniform_plan(layer_shapes, global_sparsity)
    raise ConfigError(f"unknown allocation {allocation!r}; expected one of {ALLOCATIONS}")


def init_masked(shape: Sequence[int], density: float, seed, dtype=np.float64,
                counter_init: str = "mask") -> MaskedTensor:
    """Random sparse layer with ``round(density * size)`` active weights.

    Dense Kaiming-uniform (fan-in) weights are drawn first, then the support is
    sampled uniformly without replacement and everything else is zeroed.
    """
    if not 0.0 < density <= 1.0:
        raise ConfigError(f"density must lie in (0, 1], got {density}")
    if counter_init not in COUNTER_INITS:
        raise ConfigError(f"counter_init must be one of {COUNTER_INITS}")
    shape = tuple(int(s) for s in shape)
    rng = np.random.default_rng(seed)
    size = math.prod(shape)
    fan_in = shape[0] if len(shape) == 2 else math.prod(shape[1:])
    bound = math.sqrt(6.0 / fan_in)
    values = rng.uniform(-bound, bound, size).astype(dtype)
    n_active = _budget(density, size)
    if n_active == size:
        support = np.arange(size)
    else:
        support = rng.choice(size, n_active, replace=False)
    mask = np.zeros(size, dtype=bool)
    mask[support] = True
    values[~mask] = 0
    mask = mask.reshape(shape)
    counter = mask.astype(np.int64) if counter_init == "mask" else np.zeros(shape, np.int64)
    return MaskedTensor(values.reshape(shape), mask, counter, mask.copy())


def drop_smallest(layer: MaskedTensor, k: int) -> np.ndarray:
    """Deactivate the ``k`` active weights closest to zero; returns their flat indices.

    Ties are broken by lowest flat index. The caller is responsible for
    zeroing optimizer momentum at the returned positions.
    """
    active_idx = np.flatnonzero(layer.mask)
    if k < 0 or k > active_idx.size:
        raise ContractError(f"cannot drop {k} of {active_idx.size} active weights")
    if k == 0:
        return np.empty(0, dtype=np.intp)
    magnitude = np.abs(layer.values.reshape(-1)[active_idx])
    order = np.argsort(magnitude, kind="stable")
    dropped = np.sort(active_idx[order[:k]])
    layer.mask.reshape(-1)[dropped] = False
    layer.values.reshape(-1)[dropped] = 0
    return dropped


def grow(layer: MaskedTensor, indices) -> MaskedTensor:
    """Activate the given flat positions with zero-initialized weights."""
    idx = np.asarray(indices, dtype=np.intp).reshape(-1)
    if idx.size == 0:
        return layer
    if np.unique(idx).size != idx.size:
        raise ContractError("duplicate indices in growth set")
    flat_mask = layer.mask.reshape(-1)
    if flat_mask[idx].any():
        raise ContractError("cannot grow an already active weight")
    flat_mask[idx] = True
    layer.values.reshape(-1)[idx] = 0
    layer.ever_active.reshape(-1)[idx] = True
    return layer


def update_counter(layer: MaskedTensor) -> MaskedTensor:
    layer.counter += layer.mask
    return layer
