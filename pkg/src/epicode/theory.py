"""Monte Carlo study of logit errors under contrastive decoding.

Model: relative to a hypothetical optimal scorer, the strong model's logit
error is componentwise N(0, eps^2) and the weak model's is N(0, (k*eps)^2)
with k > 1. A correlation knob rho in [0, 1] spans the two idealized
regimes: rho=1 makes the weak error an exact multiple of the strong error
(consistent mistake patterns), rho=0 makes them independent (models trained
on unrelated data). Intermediate rho interpolates via

    delta_w = k * (rho * delta_s + sqrt(1 - rho^2) * eta),   eta ~ N(0, eps^2)

so Std(delta_w) = k*eps and Corr(delta_s, delta_w) = rho for every rho.

Contrastive decoding replaces the strong error with
``(1 + lam) * delta_s - lam * delta_w``, whose standard deviation is

    eps * sqrt((1 + lam)^2 + lam^2 k^2 - 2 rho lam (1 + lam) k)

reducing to |1 - lam*(k-1)| * eps at rho=1 (errors can cancel, down to
exactly zero at lam*(k-1) = 1) and to sqrt((1+lam)^2 + lam^2 k^2) * eps at
rho=0 (errors compound).

Trials are consumed in fixed blocks of 65536; block ``b`` of a scenario with
seed ``s`` draws from the counter-based Philox stream keyed by ``(s, b)``,
first the strong errors then the independent noise, so estimates are
bit-identical however the blocks are scheduled across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .rng import substream

_BLOCK_TRIALS = 1 << 16


@dataclass(frozen=True)
class ErrorScenario:
    """One Monte Carlo configuration of the error model."""

    epsilon: float
    k: float
    lam: float
    rho: float
    vocab_size: int
    trials: int
    seed: int = 0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if not (math.isfinite(self.k) and self.k > 1):
            raise ValidationError(f"k must be > 1, got {self.k}")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValidationError(f"lam must be >= 0, got {self.lam}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValidationError(f"rho must be in [0, 1], got {self.rho}")
        if self.vocab_size < 2:
            raise ValidationError("vocab_size must be >= 2")
        if self.trials < 1:
            raise ValidationError("trials must be >= 1")


@dataclass(frozen=True)
class TrueTask:
    """Logits of the hypothetical optimal scorer for one decision."""

    optimal_logits: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.optimal_logits, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] < 2 or not np.all(np.isfinite(arr)):
            raise ValidationError("optimal_logits must be a finite 1-D vector of length >= 2")
        object.__setattr__(self, "optimal_logits", arr)


def _sample_error_block(
    scenario: ErrorScenario, rng: np.random.Generator, n: int
) -> tuple[np.ndarray, np.ndarray]:
    """Draw n trials of (delta_s, delta_w), each shaped (n, vocab_size)."""
    shape = (n, scenario.vocab_size)
    delta_s = rng.standard_normal(shape) * scenario.epsilon
    eta = rng.standard_normal(shape) * scenario.epsilon
    mix = scenario.rho * delta_s + math.sqrt(max(0.0, 1.0 - scenario.rho**2)) * eta
    delta_w = scenario.k * mix
    return delta_s, delta_w


def sample_error_pair(
    scenario: ErrorScenario, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw one (delta_s, delta_w) pair of length-V error vectors."""
    delta_s, delta_w = _sample_error_block(scenario, rng, 1)
    return delta_s[0], delta_w[0]


def cd_error(delta_s, delta_w, lam: float) -> np.ndarray:
    """Error of the contrasted logit score: (1 + lam) * delta_s - lam * delta_w."""
    ds = np.asarray(delta_s, dtype=np.float64)
    dw = np.asarray(delta_w, dtype=np.float64)
    if ds.shape != dw.shape:
        raise ValidationError(f"length mismatch: {ds.shape} vs {dw.shape}")
    return (1.0 + lam) * ds - lam * dw


def predicted_error_std(scenario: ErrorScenario) -> float:
    """Closed-form standard deviation of the contrasted error."""
    lam, k, rho = scenario.lam, scenario.k, scenario.rho
    var = (1.0 + lam) ** 2 + lam**2 * k**2 - 2.0 * rho * lam * (1.0 + lam) * k
    return scenario.epsilon * math.sqrt(max(0.0, var))


def _blocks(trials: int):
    start = 0
    index = 0
    while start < trials:
        yield index, min(_BLOCK_TRIALS, trials - start)
        start += _BLOCK_TRIALS
        index += 1


def estimate_error_std(scenario: ErrorScenario) -> float:
    """Pooled sample standard deviation of contrasted-error components.

    Pools all trials * vocab_size components into one sample. Deterministic
    for a given seed: blocks accumulate in index order.
    """
    count = 0
    total = 0.0
    total_sq = 0.0
    for block_index, n in _blocks(scenario.trials):
        rng = substream(scenario.seed, block_index)
        delta_s, delta_w = _sample_error_block(scenario, rng, n)
        err = cd_error(delta_s, delta_w, scenario.lam).ravel()
        count += err.size
        total += float(err.sum())
        total_sq += float(np.dot(err, err))
    if count < 2:
        raise ValidationError("need at least 2 pooled components to estimate a std")
    var = (total_sq - total * total / count) / (count - 1)
    return math.sqrt(max(0.0, var))


def argmax_flip_rate(scenario: ErrorScenario, task: TrueTask) -> tuple[float, float]:
    """Fraction of trials where noise flips the optimal argmax.

    Returns (rate_cd, rate_strong): the flip rate under the contrasted error
    and under the strong model's raw error, computed from the same draws.
    """
    optimal = task.optimal_logits
    if optimal.shape[0] != scenario.vocab_size:
        raise ValidationError(
            f"task has {optimal.shape[0]} logits but scenario vocab_size is {scenario.vocab_size}"
        )
    best = int(np.argmax(optimal))
    flips_cd = 0
    flips_strong = 0
    for block_index, n in _blocks(scenario.trials):
        rng = substream(scenario.seed, block_index)
        delta_s, delta_w = _sample_error_block(scenario, rng, n)
        err = cd_error(delta_s, delta_w, scenario.lam)
        flips_cd += int(np.count_nonzero(np.argmax(optimal + err, axis=1) != best))
        flips_strong += int(np.count_nonzero(np.argmax(optimal + delta_s, axis=1) != best))
    return flips_cd / scenario.trials, flips_strong / scenario.trials
