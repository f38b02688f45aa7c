"""Two-stage hyperparameter search: extrapolation strength, then contrast strength.

Stage one scans the mu grid and keeps the value maximizing dev accuracy of
the extrapolated model decoded alone. Stage two freezes that mu and scans
the lambda grid for the contrastive stage. The two stages never search the
joint space, so the extrapolation baseline and the combined method are tuned
under identical budgets. Ties break toward the smaller hyperparameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

from ..checkpoint import TensorMap
from ..decode import DecodePolicy, greedy_decode, strong_only_decode
from ..errors import ValidationError
from ..extrapolate import ExtrapolationConfig, extrapolate
from ..toy_lm import ToyConfig, as_provider
from .tasks import EOS_TOKEN, Example, evaluate

_MU_MANTISSAS = (1.0, 2.0, 4.0, 6.0, 8.0)
_MU_SCALES = (1e-4, 1e-3, 1e-2, 1e-1)

DEFAULT_MU_GRID = tuple(sorted(m * s for m in _MU_MANTISSAS for s in _MU_SCALES))
DEFAULT_LAMBDA_GRID = (0.1, 0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass(frozen=True)
class SweepGrid:
    mu_values: tuple[float, ...] = DEFAULT_MU_GRID
    lambda_values: tuple[float, ...] = DEFAULT_LAMBDA_GRID

    def __post_init__(self) -> None:
        if not self.mu_values or not self.lambda_values:
            raise ValidationError("grid must have at least one mu and one lambda value")


@dataclass
class SweepResult:
    mu: float
    lam: float
    mu_table: list[tuple[float, float]] = field(default_factory=list)
    lambda_table: list[tuple[float, float]] = field(default_factory=list)

    @property
    def best_mu_accuracy(self) -> float:
        return dict(self.mu_table)[self.mu]

    @property
    def best_lambda_accuracy(self) -> float:
        return dict(self.lambda_table)[self.lam]


def _argmax_smallest(table: list[tuple[float, float]]) -> float:
    best_value, best_acc = table[0]
    for value, acc in table[1:]:
        if acc > best_acc or (acc == best_acc and value < best_value):
            best_value, best_acc = value, acc
    return best_value


def run_two_stage_sweep(
    grid: SweepGrid,
    eval_extrapolation: Callable[[float], float],
    eval_contrast: Callable[[float, float], float],
) -> SweepResult:
    """Search mu with the first evaluator, then lambda with mu frozen."""
    mu_table = [(mu, eval_extrapolation(mu)) for mu in grid.mu_values]
    best_mu = _argmax_smallest(mu_table)
    lambda_table = [(lam, eval_contrast(best_mu, lam)) for lam in grid.lambda_values]
    best_lam = _argmax_smallest(lambda_table)
    return SweepResult(mu=best_mu, lam=best_lam, mu_table=mu_table, lambda_table=lambda_table)


def sweep(
    theta_early: TensorMap,
    theta_ft: TensorMap,
    grid: SweepGrid,
    dev: Sequence[Example],
    config: ToyConfig,
    alpha: float = 0.1,
    max_new_tokens: int = 2,
    eos_token: int = EOS_TOKEN,
) -> SweepResult:
    """Tune (mu, lambda) on a dev set for the extrapolate-then-contrast pipeline."""
    extrapolated: dict[float, TensorMap] = {}

    def theta_ep(mu: float) -> TensorMap:
        if mu not in extrapolated:
            extrapolated[mu] = extrapolate(theta_ft, theta_early, ExtrapolationConfig(mu=mu))
        return extrapolated[mu]

    def eval_extrapolation(mu: float) -> float:
        provider = as_provider(theta_ep(mu), config)
        return evaluate(
            lambda prompt: strong_only_decode(provider, prompt, max_new_tokens, eos_token),
            dev,
            eos_token,
        )

    ft_provider = as_provider(theta_ft, config)

    def eval_contrast(mu: float, lam: float) -> float:
        strong = as_provider(theta_ep(mu), config)
        policy = DecodePolicy(lam=lam, alpha=alpha, max_new_tokens=max_new_tokens, eos_token=eos_token)
        return evaluate(
            lambda prompt: greedy_decode(strong, ft_provider, prompt, policy),
            dev,
            eos_token,
        )

    return run_two_stage_sweep(grid, eval_extrapolation, eval_contrast)


def tune_lambda(
    eval_contrast: Callable[[float], float],
    lambda_values: Sequence[float],
) -> tuple[float, list[tuple[float, float]]]:
    """Single-stage lambda search (used for the contrastive-only baseline)."""
    if not lambda_values:
        raise ValidationError("lambda grid must be non-empty")
    table = [(lam, eval_contrast(lam)) for lam in lambda_values]
    return _argmax_smallest(table), table
