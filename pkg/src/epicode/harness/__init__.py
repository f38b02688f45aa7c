"""Experiment harness: task generation, sweeps, the four-condition pipeline,
significance tests, and reporting."""

from .pipeline import (
    ABLATION_WEAK_MODELS,
    CONDITIONS,
    AblationRecord,
    ExperimentResult,
    RunRecord,
    run_experiment,
    run_pipeline,
    run_seeds,
    train_stage_checkpoints,
    weak_model_ablation,
)
from .reports import (
    TercileRow,
    ablation_markdown,
    ablations_to_csv,
    condition_t_tests,
    difficulty_markdown,
    difficulty_report,
    mean_test_accuracy,
    records_to_csv,
    success_count,
    summary_markdown,
)
from .stats import TTestResult, paired_t_test, regularized_incomplete_beta, student_t_sf
from .sweep import (
    DEFAULT_LAMBDA_GRID,
    DEFAULT_MU_GRID,
    SweepGrid,
    SweepResult,
    run_two_stage_sweep,
    sweep,
    tune_lambda,
)
from .tasks import (
    EOS_TOKEN,
    QUERY_TOKEN,
    Example,
    SplitDataset,
    TaskSpec,
    evaluate,
    evaluate_detailed,
    gen_dataset,
    read_jsonl,
    strip_at_eos,
    write_jsonl,
)

__all__ = [
    "ABLATION_WEAK_MODELS",
    "CONDITIONS",
    "DEFAULT_LAMBDA_GRID",
    "DEFAULT_MU_GRID",
    "AblationRecord",
    "EOS_TOKEN",
    "Example",
    "ExperimentResult",
    "QUERY_TOKEN",
    "RunRecord",
    "SplitDataset",
    "SweepGrid",
    "SweepResult",
    "TTestResult",
    "TaskSpec",
    "TercileRow",
    "ablation_markdown",
    "ablations_to_csv",
    "condition_t_tests",
    "difficulty_markdown",
    "difficulty_report",
    "evaluate",
    "evaluate_detailed",
    "gen_dataset",
    "mean_test_accuracy",
    "paired_t_test",
    "read_jsonl",
    "records_to_csv",
    "regularized_incomplete_beta",
    "run_experiment",
    "run_pipeline",
    "run_seeds",
    "run_two_stage_sweep",
    "strip_at_eos",
    "student_t_sf",
    "success_count",
    "summary_markdown",
    "sweep",
    "train_stage_checkpoints",
    "tune_lambda",
    "weak_model_ablation",
    "write_jsonl",
]
