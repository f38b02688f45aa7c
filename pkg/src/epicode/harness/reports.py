"""Aggregation and reporting over per-seed run records.

Covers the robustness count (how often a condition strictly beats the plain
finetuned model), paired significance tests between conditions, the
difficulty partition (test examples split into terciles by the finetuned
model's output length), and CSV / markdown rendering of all of it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ..errors import ValidationError
from .pipeline import ABLATION_WEAK_MODELS, CONDITIONS, AblationRecord, RunRecord
from .stats import TTestResult, paired_t_test
from .tasks import strip_at_eos


def success_count(records: Sequence[RunRecord], condition: str) -> int:
    """Seeds where `condition` strictly beats the finetuned baseline on test."""
    if not records:
        raise ValidationError("no records")
    if condition not in CONDITIONS:
        raise ValidationError(f"unknown condition {condition!r}")
    return sum(
        1 for r in records if r.test_accuracy[condition] > r.test_accuracy["finetune"]
    )


def mean_test_accuracy(records: Sequence[RunRecord], condition: str) -> float:
    return sum(r.test_accuracy[condition] for r in records) / len(records)


def condition_t_tests(records: Sequence[RunRecord]) -> dict[str, TTestResult]:
    """Paired one-tailed tests of epicode against every other condition."""
    if len(records) < 2:
        raise ValidationError("need at least 2 records for significance tests")
    epicode = [r.test_accuracy["epicode"] for r in records]
    out: dict[str, TTestResult] = {}
    for other in ("finetune", "me_only", "cd_only"):
        out[f"epicode>{other}"] = paired_t_test(
            epicode, [r.test_accuracy[other] for r in records]
        )
    return out


@dataclass(frozen=True)
class TercileRow:
    label: str
    size: int
    accuracy: dict[str, float]
    delta_vs_finetune: dict[str, float]


def _tercile_slices(n: int) -> list[range]:
    base, extra = divmod(n, 3)
    sizes = [base + (1 if i < extra else 0) for i in range(3)]
    bounds = [0]
    for s in sizes:
        bounds.append(bounds[-1] + s)
    return [range(bounds[i], bounds[i + 1]) for i in range(3)]


def difficulty_report(records: Sequence[RunRecord]) -> list[TercileRow]:
    """Accuracy per difficulty tercile, averaged over records.

    Each record's test set is sorted by the length of the finetuned model's
    generated answer (ties keep the original example order) and cut into
    three near-equal parts: short outputs are "easy", long ones "hard".
    """
    if not records:
        raise ValidationError("no records")
    n = len(records[0].correct["finetune"])
    if n < 3:
        raise ValidationError("difficulty partition needs at least 3 test examples")

    labels = ("easy", "medium", "hard")
    sums = {label: {cond: 0.0 for cond in CONDITIONS} for label in labels}
    sizes: dict[str, int] = {}
    for record in records:
        lengths = [len(strip_at_eos(out)) for out in record.outputs["finetune"]]
        if len(lengths) != n:
            raise ValidationError("records disagree on test-set size")
        order = sorted(range(n), key=lambda i: (lengths[i], i))
        for label, chunk in zip(labels, _tercile_slices(n)):
            indices = [order[i] for i in chunk]
            sizes[label] = len(indices)
            for cond in CONDITIONS:
                flags = record.correct[cond]
                sums[label][cond] += sum(flags[i] for i in indices) / len(indices)

    rows: list[TercileRow] = []
    for label in labels:
        accuracy = {cond: sums[label][cond] / len(records) for cond in CONDITIONS}
        delta = {cond: accuracy[cond] - accuracy["finetune"] for cond in CONDITIONS}
        rows.append(
            TercileRow(label=label, size=sizes[label], accuracy=accuracy, delta_vs_finetune=delta)
        )
    return rows


def records_to_csv(records: Sequence[RunRecord], path: str | Path) -> None:
    """One row per seed and condition; floats use round-trippable repr."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["seed", "condition", "chosen_mu", "chosen_lambda", "cd_lambda",
             "dev_accuracy", "test_accuracy"]
        )
        for record in records:
            for cond in CONDITIONS:
                writer.writerow(
                    [
                        record.seed,
                        cond,
                        repr(record.chosen_mu),
                        repr(record.chosen_lambda),
                        repr(record.cd_lambda),
                        repr(record.dev_accuracy[cond]),
                        repr(record.test_accuracy[cond]),
                    ]
                )


def read_accuracy_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def ablations_to_csv(ablations: Sequence[AblationRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "chosen_mu", "chosen_lambda", "baseline", *ABLATION_WEAK_MODELS])
        for ab in ablations:
            writer.writerow(
                [
                    ab.seed,
                    repr(ab.chosen_mu),
                    repr(ab.chosen_lambda),
                    repr(ab.baseline_accuracy),
                    *(repr(ab.accuracies[w]) for w in ABLATION_WEAK_MODELS),
                ]
            )


def _format_pct(x: float) -> str:
    return f"{100.0 * x:.2f}"


def summary_markdown(records: Sequence[RunRecord]) -> str:
    """Mean accuracy with deltas, per-seed table, success counts, and t-tests."""
    if not records:
        raise ValidationError("no records")
    lines = ["## Mean test accuracy", "", "| method | accuracy | delta vs finetune |",
             "|--------|----------|-------------------|"]
    base = mean_test_accuracy(records, "finetune")
    for cond in CONDITIONS:
        acc = mean_test_accuracy(records, cond)
        delta = "" if cond == "finetune" else f"{100.0 * (acc - base):+.2f}"
        lines.append(f"| {cond} | {_format_pct(acc)} | {delta} |")

    lines += ["", "## Per-seed test accuracy", "",
              "| seed | " + " | ".join(CONDITIONS) + " | mu | lambda |",
              "|" + "------|" * (len(CONDITIONS) + 3)]
    for record in records:
        cells = " | ".join(_format_pct(record.test_accuracy[c]) for c in CONDITIONS)
        lines.append(
            f"| {record.seed} | {cells} | {record.chosen_mu:g} | {record.chosen_lambda:g} |"
        )

    lines += ["", "## Successful runs (strict improvement over finetune)", "",
              "| method | successes / runs |", "|--------|------------------|"]
    for cond in ("me_only", "cd_only", "epicode"):
        lines.append(f"| {cond} | {success_count(records, cond)} / {len(records)} |")

    if len(records) >= 2:
        try:
            tests = condition_t_tests(records)
        except ValidationError:
            tests = {}
        if tests:
            lines += ["", "## Paired one-tailed t-tests", "",
                      "| hypothesis | t | df | p (one-tailed) |", "|------------|---|----|----|"]
            for name, result in tests.items():
                lines.append(
                    f"| {name} | {result.t_statistic:.4f} | {result.degrees_of_freedom} "
                    f"| {result.p_value_one_tailed:.4g} |"
                )
    return "\n".join(lines) + "\n"


def difficulty_markdown(rows: Sequence[TercileRow]) -> str:
    lines = ["## Accuracy by difficulty tercile (finetuned output length)", "",
             "| tercile | size | " + " | ".join(CONDITIONS) + " |",
             "|" + "------|" * (len(CONDITIONS) + 2)]
    for row in rows:
        cells = " | ".join(
            f"{_format_pct(row.accuracy[c])} ({100.0 * row.delta_vs_finetune[c]:+.2f})"
            for c in CONDITIONS
        )
        lines.append(f"| {row.label} | {row.size} | {cells} |")
    return "\n".join(lines) + "\n"


def ablation_markdown(ablations: Sequence[AblationRecord]) -> str:
    if not ablations:
        raise ValidationError("no ablation records")
    n = len(ablations)
    lines = ["## Weak-model choice (strong model fixed to the extrapolated one)", "",
             "| weak model | mean accuracy | delta vs extrapolated-alone |",
             "|------------|---------------|------------------------------|"]
    base = sum(a.baseline_accuracy for a in ablations) / n
    lines.append(f"| (none: extrapolated alone) | {_format_pct(base)} | |")
    for weak in ABLATION_WEAK_MODELS:
        acc = sum(a.accuracies[weak] for a in ablations) / n
        lines.append(f"| {weak} | {_format_pct(acc)} | {100.0 * (acc - base):+.2f} |")
    lines += ["", "| seed | " + " | ".join(ABLATION_WEAK_MODELS) + " | extrapolated alone |",
              "|" + "------|" * (len(ABLATION_WEAK_MODELS) + 2)]
    for ab in ablations:
        cells = " | ".join(_format_pct(ab.accuracies[w]) for w in ABLATION_WEAK_MODELS)
        lines.append(f"| {ab.seed} | {cells} | {_format_pct(ab.baseline_accuracy)} |")
    return "\n".join(lines) + "\n"
