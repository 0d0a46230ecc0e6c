"""Growth scoring and selection, plus the drop-fraction schedule.

Three growth policies are supported:

* ``random``   - uniform choice among inactive positions (SET-style).
* ``gradient`` - top-k absolute dense gradient (RigL-style).
* ``dst_ee``   - top-k of ``|grad| + c * ln(t) / (counter + eps)``, trading
  gradient exploitation against a visit-count exploration bonus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, NumericalError

POLICIES = ("random", "gradient", "dst_ee")
DROP_MODES = ("constant", "cosine")


@dataclass(frozen=True)
class GrowthPolicy:
    kind: str = "dst_ee"
    c: float = 0.1
    epsilon: float = 1.0
    signed_scores: bool = False

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise ConfigError(f"unknown policy {self.kind!r}; expected one of {POLICIES}")
        if self.c < 0:
            raise ConfigError(f"c must be non-negative, got {self.c}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")


@dataclass(frozen=True)
class DropSchedule:
    initial_fraction: float = 0.3
    mode: str = "cosine"
    stop_iteration: int = 10000

    def __post_init__(self):
        if not 0.0 <= self.initial_fraction < 1.0:
            raise ConfigError(f"drop fraction must lie in [0, 1), got {self.initial_fraction}")
        if self.mode not in DROP_MODES:
            raise ConfigError(f"drop schedule must be one of {DROP_MODES}")
        if self.stop_iteration <= 0:
            raise ConfigError("stop_iteration must be positive")


def acquisition_scores(dense_grad: np.ndarray, counter: np.ndarray, t: int, c: float,
                       epsilon: float, signed: bool = False, layer: int | None = None) -> np.ndarray:
    """``|grad| + c * ln(max(t, 2)) / (counter + epsilon)`` element-wise."""
    if dense_grad.shape != counter.shape:
        raise ConfigError(f"gradient shape {dense_grad.shape} != counter shape {counter.shape}")
    if t < 1:
        raise ContractError(f"scores are defined for t >= 1, got t={t}")
    if not np.isfinite(dense_grad).all():
        raise NumericalError(f"non-finite gradient in layer {layer}", layer=layer)
    exploit = dense_grad if signed else np.abs(dense_grad)
    if c == 0:
        return exploit.astype(np.float64)
    bonus = c * math.log(max(t, 2)) / (counter.astype(np.float64) + epsilon)
    return exploit + bonus


def select_growth(scores: np.ndarray, mask: np.ndarray, k: int) -> np.ndarray:
    """Flat indices of the ``k`` highest-scoring inactive positions.

    Ties go to the lowest flat index. The result is ordered by rank.
    """
    candidates = np.flatnonzero(~mask.reshape(-1).astype(bool))
    if k < 0 or k > candidates.size:
        raise ContractError(f"cannot grow {k} weights with {candidates.size} inactive positions")
    if k == 0:
        return np.empty(0, dtype=np.intp)
    cand_scores = scores.reshape(-1)[candidates]
    order = np.argsort(-cand_scores, kind="stable")
    return candidates[order[:k]]


def gradient_growth(dense_grad: np.ndarray, mask: np.ndarray, k: int) -> np.ndarray:
    return select_growth(np.abs(dense_grad), mask, k)


def random_growth(mask: np.ndarray, k: int, seed) -> np.ndarray:
    """``k`` inactive positions sampled uniformly without replacement.

    ``seed`` is anything :func:`numpy.random.default_rng` accepts, including a
    ``Generator``.
    """
    candidates = np.flatnonzero(~mask.reshape(-1).astype(bool))
    if k < 0 or k > candidates.size:
        raise ContractError(f"cannot grow {k} weights with {candidates.size} inactive positions")
    if k == 0:
        return np.empty(0, dtype=np.intp)
    if k == candidates.size:
        return candidates
    rng = np.random.default_rng(seed)
    return candidates[rng.choice(candidates.size, k, replace=False)]


def policy_growth(policy: GrowthPolicy, mask: np.ndarray, k: int, *, dense_grad=None,
                  counter=None, t: int = 1, seed=None, layer: int | None = None) -> np.ndarray:
    if policy.kind == "random":
        return random_growth(mask, k, seed)
    if policy.kind == "gradient":
        return gradient_growth(dense_grad, mask, k)
    scores = acquisition_scores(dense_grad, counter, t, policy.c, policy.epsilon,
                                signed=policy.signed_scores, layer=layer)
    return select_growth(scores, mask, k)


def drop_fraction(t: int, schedule: DropSchedule) -> float:
    if t < 0:
        raise ContractError("iteration must be non-negative")
    if t >= schedule.stop_iteration:
        return 0.0
    if schedule.mode == "constant":
        return schedule.initial_fraction
    return schedule.initial_fraction / 2 * (1 + math.cos(math.pi * t / schedule.stop_iteration))


def drop_count(fraction: float, active: int, inactive: int) -> int:
    """``ceil(fraction * active)`` clamped to the number of inactive positions."""
    # round away float noise such as 0.3 * 100 = 30.000000000000004 before ceil
    k = math.ceil(round(fraction * active, 9))
    return max(0, min(k, active, inactive))
