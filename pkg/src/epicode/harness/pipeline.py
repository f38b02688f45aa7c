"""The four-condition experiment pipeline and the weak-model ablation.

Per seed: finetune the toy model for two epochs, keep the per-epoch
checkpoints (early, ft), tune hyperparameters on dev, then score four
conditions on the held-out test set:

* ``finetune`` — greedy decoding with the two-epoch model,
* ``me_only``  — greedy decoding with the extrapolated model,
* ``cd_only``  — contrastive decoding, strong=ft against weak=early,
* ``epicode``  — contrastive decoding, strong=extrapolated against weak=ft.

The contrastive-only baseline gets its own dev-tuned lambda so every
condition is tuned under the same protocol. Hyperparameters are functions of
the dev split only; test labels never influence them.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

from ..checkpoint import TensorMap
from ..decode import DecodePolicy, greedy_decode, strong_only_decode
from ..errors import ValidationError
from ..extrapolate import ExtrapolationConfig, extrapolate
from ..toy_lm import OptimizerConfig, ToyConfig, TrainState, as_provider, init, train_epochs
from .sweep import SweepGrid, sweep, tune_lambda
from .tasks import EOS_TOKEN, Example, SplitDataset, TaskSpec, evaluate, evaluate_detailed, gen_dataset

CONDITIONS = ("finetune", "me_only", "cd_only", "epicode")
ABLATION_WEAK_MODELS = ("init", "early", "ft")

DEFAULT_ALPHA = 0.1
TRAIN_EPOCHS = 2


@dataclass
class RunRecord:
    """Per-seed results of the four conditions plus sweep metadata."""

    seed: int
    chosen_mu: float
    chosen_lambda: float
    cd_lambda: float
    dev_accuracy: dict[str, float]
    test_accuracy: dict[str, float]
    outputs: dict[str, list[list[int]]]
    correct: dict[str, list[bool]]


@dataclass
class AblationRecord:
    """Test accuracy of contrastive decoding per weak-model choice."""

    seed: int
    chosen_mu: float
    chosen_lambda: float
    baseline_accuracy: float  # extrapolated model decoded alone
    accuracies: dict[str, float]


@dataclass
class ExperimentResult:
    record: RunRecord
    ablation: AblationRecord | None = None


def train_stage_checkpoints(
    data: SplitDataset,
    config: ToyConfig,
    opt: OptimizerConfig,
    seed: int,
) -> tuple[TensorMap, TensorMap, TensorMap]:
    """Train two epochs; returns (initial, after-epoch-1, after-epoch-2) params."""
    cfg = replace(config, seed=seed)
    initial = init(cfg)
    state = TrainState.fresh(initial)
    pairs = [(ex.prompt, ex.answer + (EOS_TOKEN,)) for ex in data.train]
    early, ft = train_epochs(state, pairs, opt, TRAIN_EPOCHS, cfg, shuffle_seed=seed)
    return initial, early, ft


def run_experiment(
    task: TaskSpec,
    config: ToyConfig | None = None,
    opt: OptimizerConfig | None = None,
    grid: SweepGrid | None = None,
    seed: int = 0,
    alpha: float = DEFAULT_ALPHA,
    include_ablation: bool = False,
) -> ExperimentResult:
    config = config if config is not None else ToyConfig(vocab_size=task.vocab_size)
    opt = opt if opt is not None else OptimizerConfig()
    grid = grid if grid is not None else SweepGrid()
    if config.vocab_size < task.vocab_size:
        raise ValidationError(
            f"model vocab {config.vocab_size} smaller than task vocab {task.vocab_size}"
        )

    data = gen_dataset(task)
    max_new = task.max_answer_len() + 1
    initial, early, ft = train_stage_checkpoints(data, config, opt, seed)

    result = sweep(early, ft, grid, data.dev, config, alpha, max_new, EOS_TOKEN)
    ep = extrapolate(ft, early, ExtrapolationConfig(mu=result.mu))

    ft_provider = as_provider(ft, config)
    early_provider = as_provider(early, config)
    ep_provider = as_provider(ep, config)

    def cd_dev_eval(lam: float) -> float:
        policy = DecodePolicy(lam=lam, alpha=alpha, max_new_tokens=max_new, eos_token=EOS_TOKEN)
        return evaluate(
            lambda prompt: greedy_decode(ft_provider, early_provider, prompt, policy),
            data.dev,
            EOS_TOKEN,
        )

    cd_lambda, cd_table = tune_lambda(cd_dev_eval, grid.lambda_values)

    decoders = {
        "finetune": lambda prompt: strong_only_decode(ft_provider, prompt, max_new, EOS_TOKEN),
        "me_only": lambda prompt: strong_only_decode(ep_provider, prompt, max_new, EOS_TOKEN),
        "cd_only": lambda prompt: greedy_decode(
            ft_provider,
            early_provider,
            prompt,
            DecodePolicy(lam=cd_lambda, alpha=alpha, max_new_tokens=max_new, eos_token=EOS_TOKEN),
        ),
        "epicode": lambda prompt: greedy_decode(
            ep_provider,
            ft_provider,
            prompt,
            DecodePolicy(lam=result.lam, alpha=alpha, max_new_tokens=max_new, eos_token=EOS_TOKEN),
        ),
    }

    dev_accuracy = {
        "finetune": evaluate(decoders["finetune"], data.dev, EOS_TOKEN),
        "me_only": result.best_mu_accuracy,
        "cd_only": dict(cd_table)[cd_lambda],
        "epicode": result.best_lambda_accuracy,
    }

    test_accuracy: dict[str, float] = {}
    outputs: dict[str, list[list[int]]] = {}
    correct: dict[str, list[bool]] = {}
    for name in CONDITIONS:
        detail = evaluate_detailed(decoders[name], data.test, EOS_TOKEN)
        test_accuracy[name] = detail.accuracy
        outputs[name] = detail.outputs
        correct[name] = detail.correct

    record = RunRecord(
        seed=seed,
        chosen_mu=result.mu,
        chosen_lambda=result.lam,
        cd_lambda=cd_lambda,
        dev_accuracy=dev_accuracy,
        test_accuracy=test_accuracy,
        outputs=outputs,
        correct=correct,
    )

    ablation = None
    if include_ablation:
        weak_providers = {
            "init": as_provider(initial, config),
            "early": early_provider,
            "ft": ft_provider,
        }
        policy = DecodePolicy(
            lam=result.lam, alpha=alpha, max_new_tokens=max_new, eos_token=EOS_TOKEN
        )
        accuracies = {
            name: evaluate(
                lambda prompt, weak=weak: greedy_decode(ep_provider, weak, prompt, policy),
                data.test,
                EOS_TOKEN,
            )
            for name, weak in weak_providers.items()
        }
        ablation = AblationRecord(
            seed=seed,
            chosen_mu=result.mu,
            chosen_lambda=result.lam,
            baseline_accuracy=test_accuracy["me_only"],
            accuracies=accuracies,
        )
    return ExperimentResult(record=record, ablation=ablation)


def run_pipeline(
    task: TaskSpec,
    config: ToyConfig | None = None,
    opt: OptimizerConfig | None = None,
    grid: SweepGrid | None = None,
    seed: int = 0,
    alpha: float = DEFAULT_ALPHA,
) -> RunRecord:
    return run_experiment(task, config, opt, grid, seed, alpha).record


def weak_model_ablation(
    task: TaskSpec,
    config: ToyConfig | None = None,
    grid: SweepGrid | None = None,
    seed: int = 0,
    alpha: float = DEFAULT_ALPHA,
    opt: OptimizerConfig | None = None,
) -> AblationRecord:
    result = run_experiment(task, config, opt, grid, seed, alpha, include_ablation=True)
    assert result.ablation is not None
    return result.ablation


def _experiment_worker(args) -> ExperimentResult:
    task, config, opt, grid, seed, alpha, include_ablation = args
    return run_experiment(task, config, opt, grid, seed, alpha, include_ablation)


def run_seeds(
    task: TaskSpec,
    seeds: Sequence[int],
    config: ToyConfig | None = None,
    opt: OptimizerConfig | None = None,
    grid: SweepGrid | None = None,
    alpha: float = DEFAULT_ALPHA,
    include_ablation: bool = False,
    workers: int = 1,
) -> list[ExperimentResult]:
    """Run independent seeds, optionally in parallel; results stay in seed order."""
    if not seeds:
        raise ValidationError("need at least one seed")
    jobs = [(task, config, opt, grid, int(s), alpha, include_ablation) for s in seeds]
    if workers <= 1 or len(jobs) == 1:
        return [_experiment_worker(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_experiment_worker, jobs))
