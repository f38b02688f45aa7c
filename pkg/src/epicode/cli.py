"""Single entry point exposing every capability as a subcommand.

Machine-readable results go to stdout; progress and diagnostics go to
stderr. Numeric output is printed with Python's round-trippable float repr.
Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, decode, extrapolate, harness, theory, toy_lm
from .errors import IncompatibleMaps, NumericError, ValidationError

log = logging.getLogger("epicode")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # exit 1 instead of argparse's 2
        raise _UsageError(message)


def _fmt(x: float) -> str:
    return repr(float(x))


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: expected a JSON object")
    return data


def _dataclass_from_json(cls, data: dict, context: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValidationError(f"{context}: unknown fields {unknown}")
    return cls(**data)


def _toy_config(args) -> toy_lm.ToyConfig:
    if getattr(args, "model_config", None):
        return _dataclass_from_json(toy_lm.ToyConfig, _load_json(args.model_config), args.model_config)
    return toy_lm.ToyConfig()


def _grid(args) -> harness.SweepGrid:
    if getattr(args, "grid", None):
        data = _load_json(args.grid)
        return harness.SweepGrid(
            mu_values=tuple(data.get("mu_values", harness.DEFAULT_MU_GRID)),
            lambda_values=tuple(data.get("lambda_values", harness.DEFAULT_LAMBDA_GRID)),
        )
    return harness.SweepGrid()


def _task_spec(path: str) -> harness.TaskSpec:
    return _dataclass_from_json(harness.TaskSpec, _load_json(path), path)


# ---------------------------------------------------------------- subcommands


def _cmd_extrapolate(args) -> int:
    strong = checkpoint.load(args.strong)
    weak = checkpoint.load(args.weak)
    out = extrapolate.extrapolate(strong, weak, extrapolate.ExtrapolationConfig(mu=args.mu))
    checkpoint.save(out, args.out)
    log.info("wrote %s", args.out)
    return EXIT_OK


def _cmd_interpolate(args) -> int:
    a = checkpoint.load(args.a)
    b = checkpoint.load(args.b)
    checkpoint.save(extrapolate.interpolate(a, b, args.t), args.out)
    log.info("wrote %s", args.out)
    return EXIT_OK


def _cmd_distance(args) -> int:
    a = checkpoint.load(args.a)
    b = checkpoint.load(args.b)
    print(_fmt(extrapolate.param_distance(a, b)))
    return EXIT_OK


def _cmd_decode(args) -> int:
    config = _toy_config(args)
    strong = toy_lm.as_provider(checkpoint.load(args.strong), config)
    weak = toy_lm.as_provider(checkpoint.load(args.weak), config)
    policy = decode.DecodePolicy(
        lam=args.lam,
        alpha=args.alpha,
        max_new_tokens=args.max_new_tokens,
        eos_token=args.eos_token,
    )
    examples = harness.read_jsonl(args.prompt_file)
    with open(args.out, "w", encoding="utf-8") as fh:
        for ex in examples:
            trace = decode.contrastive_decode_trace(strong, weak, ex.prompt, policy)
            fh.write(json.dumps({
                "input": list(ex.prompt),
                "output": trace.tokens,
                "chosen_scores": trace.chosen_scores,
            }))
            fh.write("\n")
    log.info("decoded %d prompts to %s", len(examples), args.out)
    return EXIT_OK


def _cmd_train_toy(args) -> int:
    data = _load_json(args.config) if args.config else {}
    config = _dataclass_from_json(toy_lm.ToyConfig, data.get("model", {}), "model config")
    config = dataclasses.replace(config, seed=args.seed)
    opt = _dataclass_from_json(toy_lm.OptimizerConfig, data.get("optimizer", {}), "optimizer config")
    examples = harness.read_jsonl(args.data)
    pairs = [(ex.prompt, ex.answer + (harness.EOS_TOKEN,)) for ex in examples]

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = toy_lm.TrainState.fresh(toy_lm.init(config))
    log_rows: list[tuple[int, int, float]] = []
    checkpoints = toy_lm.train_epochs(
        state, pairs, opt, args.epochs, config,
        shuffle_seed=args.seed,
        on_step=lambda epoch, step, value: log_rows.append((epoch, step, value)),
    )
    for epoch, params in enumerate(checkpoints, start=1):
        checkpoint.save(params, out_dir / f"epoch{epoch}.safetensors")
        log.info("saved epoch %d checkpoint", epoch)
    with open(out_dir / "training_log.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,step,loss\n")
        for epoch, step, value in log_rows:
            fh.write(f"{epoch},{step},{_fmt(value)}\n")
    return EXIT_OK


def _cmd_gen_data(args) -> int:
    spec = _task_spec(args.task) if args.task else harness.TaskSpec(seed=args.seed)
    data = harness.gen_dataset(spec)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for split in ("train", "dev", "test"):
        harness.write_jsonl(getattr(data, split), out_dir / f"{split}.jsonl")
    log.info("wrote train/dev/test to %s", out_dir)
    return EXIT_OK


def _build_decoder(args, config):
    strong = toy_lm.as_provider(checkpoint.load(args.strong), config)
    if args.weak is None:
        return lambda prompt: decode.strong_only_decode(
            strong, prompt, args.max_new_tokens, args.eos_token
        )
    weak = toy_lm.as_provider(checkpoint.load(args.weak), config)
    policy = decode.DecodePolicy(
        lam=args.lam, alpha=args.alpha,
        max_new_tokens=args.max_new_tokens, eos_token=args.eos_token,
    )
    return lambda prompt: decode.greedy_decode(strong, weak, prompt, policy)


def _cmd_evaluate(args) -> int:
    config = _toy_config(args)
    examples = harness.read_jsonl(args.data)
    accuracy = harness.evaluate(_build_decoder(args, config), examples, args.eos_token)
    print(_fmt(accuracy))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config = _toy_config(args)
    early = checkpoint.load(args.early)
    ft = checkpoint.load(args.ft)
    dev = harness.read_jsonl(args.dev)
    result = harness.sweep(
        early, ft, _grid(args), dev, config,
        alpha=args.alpha, max_new_tokens=args.max_new_tokens, eos_token=args.eos_token,
    )
    print(f"mu={_fmt(result.mu)} lambda={_fmt(result.lam)}")
    return EXIT_OK


def _cmd_pipeline(args) -> int:
    task = _task_spec(args.task) if args.task else harness.TaskSpec(seed=args.seed)
    config = _toy_config(args)
    grid = _grid(args)
    seeds = list(range(args.seeds))
    results = harness.run_seeds(
        task, seeds, config=config, grid=grid, alpha=args.alpha,
        include_ablation=False, workers=args.threads,
    )
    records = [res.record for res in results]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    harness.records_to_csv(records, out_dir / "runs.csv")
    summary = harness.summary_markdown(records)
    summary += "\n" + harness.difficulty_markdown(harness.difficulty_report(records))
    (out_dir / "summary.md").write_text(summary, encoding="utf-8")
    print(summary, end="")
    return EXIT_OK


def _cmd_ablation(args) -> int:
    task = _task_spec(args.task) if args.task else harness.TaskSpec(seed=args.seed)
    config = _toy_config(args)
    grid = _grid(args)
    seeds = list(range(args.seeds))
    results = harness.run_seeds(
        task, seeds, config=config, grid=grid, alpha=args.alpha,
        include_ablation=True, workers=args.threads,
    )
    ablations = [res.ablation for res in results]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    harness.ablations_to_csv(ablations, out_dir / "ablation.csv")
    summary = harness.ablation_markdown(ablations)
    (out_dir / "ablation.md").write_text(summary, encoding="utf-8")
    print(summary, end="")
    return EXIT_OK


def _cmd_theory(args) -> int:
    scenario = theory.ErrorScenario(
        epsilon=args.epsilon, k=args.k, lam=args.lam, rho=args.rho,
        vocab_size=args.vocab, trials=args.trials, seed=args.seed,
    )
    estimated = theory.estimate_error_std(scenario)
    predicted = theory.predicted_error_std(scenario)
    rel = abs(estimated - predicted) / predicted if predicted > 0 else abs(estimated)
    optimal = np.zeros(args.vocab)
    optimal[0] = 1.0
    rate_cd, rate_strong = theory.argmax_flip_rate(scenario, theory.TrueTask(optimal))
    print("epsilon,k,lambda,rho,vocab,trials,seed,std_estimate,std_predicted,rel_error,flip_cd,flip_strong")
    print(",".join([
        _fmt(args.epsilon), _fmt(args.k), _fmt(args.lam), _fmt(args.rho),
        str(args.vocab), str(args.trials), str(args.seed),
        _fmt(estimated), _fmt(predicted), _fmt(rel), _fmt(rate_cd), _fmt(rate_strong),
    ]))
    return EXIT_OK


def _read_csv_column(spec: str) -> list[float]:
    if ":" not in spec:
        raise ValidationError(f"expected FILE:COLUMN, got {spec!r}")
    path, column = spec.rsplit(":", 1)
    rows = harness.reports.read_accuracy_csv(path)
    if not rows:
        raise ValidationError(f"{path}: empty CSV")
    if column not in rows[0]:
        raise ValidationError(f"{path}: no column {column!r}")
    try:
        return [float(row[column]) for row in rows]
    except ValueError as exc:
        raise ValidationError(f"{path}:{column}: non-numeric value: {exc}") from exc


def _cmd_ttest(args) -> int:
    a = _read_csv_column(args.a)
    b = _read_csv_column(args.b)
    result = harness.paired_t_test(a, b)
    print(
        f"t={_fmt(result.t_statistic)} df={result.degrees_of_freedom} "
        f"p_one_tailed={_fmt(result.p_value_one_tailed)}"
    )
    return EXIT_OK


def _cmd_report(args) -> int:
    rows = harness.reports.read_accuracy_csv(args.runs)
    by_seed: dict[int, dict] = {}
    for row in rows:
        seed = int(row["seed"])
        rec = by_seed.setdefault(seed, {
            "seed": seed,
            "chosen_mu": float(row["chosen_mu"]),
            "chosen_lambda": float(row["chosen_lambda"]),
            "cd_lambda": float(row["cd_lambda"]),
            "dev_accuracy": {}, "test_accuracy": {}, "outputs": {}, "correct": {},
        })
        rec["dev_accuracy"][row["condition"]] = float(row["dev_accuracy"])
        rec["test_accuracy"][row["condition"]] = float(row["test_accuracy"])
    records = []
    for seed in sorted(by_seed):
        rec = by_seed[seed]
        missing = [c for c in harness.CONDITIONS if c not in rec["test_accuracy"]]
        if missing:
            raise ValidationError(f"seed {seed}: missing conditions {missing}")
        records.append(harness.RunRecord(**rec))
    print(harness.summary_markdown(records), end="")
    return EXIT_OK


# ------------------------------------------------------------------- parsing


def _add_eval_flags(p, with_contrast: bool = True) -> None:
    if with_contrast:
        p.add_argument("--lambda", dest="lam", type=float, default=0.0,
                       help="contrast strength")
        p.add_argument("--alpha", type=float, default=0.1,
                       help="plausibility threshold on strong-model probabilities")
    p.add_argument("--max-new-tokens", type=int, default=2)
    p.add_argument("--eos-token", type=int, default=harness.EOS_TOKEN)


def build_parser() -> _Parser:
    parser = _Parser(prog="epicode", description=__doc__)
    parser.add_argument("--log-level", default=None,
                        help="debug/info/warning/error (default: from config file or warning)")
    parser.add_argument("--config", default=None,
                        help="JSON file with defaults for log_level/seed/threads/out_dir")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("extrapolate", help="extrapolate strong away from weak")
    p.add_argument("--strong", required=True)
    p.add_argument("--weak", required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_extrapolate)

    p = sub.add_parser("interpolate", help="linear merge of two checkpoints")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_interpolate)

    p = sub.add_parser("distance", help="parameter-space Euclidean distance")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=_cmd_distance)

    p = sub.add_parser("decode", help="contrastive decoding over a prompt file")
    p.add_argument("--strong", required=True)
    p.add_argument("--weak", required=True)
    p.add_argument("--model-config", default=None)
    _add_eval_flags(p)
    p.add_argument("--prompt-file", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("train-toy", help="train the toy model, one checkpoint per epoch")
    p.add_argument("--config", dest="config", default=None,
                   help='JSON with "model" and "optimizer" sections')
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_train_toy)

    p = sub.add_parser("gen-data", help="generate synthetic train/dev/test splits")
    p.add_argument("--task", default=None, help="task spec JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("evaluate", help="exact-match accuracy of a decoder setup")
    p.add_argument("--strong", required=True)
    p.add_argument("--weak", default=None, help="omit for strong-only greedy decoding")
    p.add_argument("--model-config", default=None)
    _add_eval_flags(p)
    p.add_argument("--data", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="two-stage hyperparameter search on a dev set")
    p.add_argument("--early", required=True)
    p.add_argument("--ft", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--model-config", default=None)
    p.add_argument("--grid", default=None, help="JSON with mu_values/lambda_values")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--max-new-tokens", type=int, default=2)
    p.add_argument("--eos-token", type=int, default=harness.EOS_TOKEN)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("pipeline", help="four-condition experiment over several seeds")
    p.add_argument("--task", default=None, help="task spec JSON file")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="task seed when --task is omitted")
    p.add_argument("--model-config", default=None)
    p.add_argument("--grid", default=None)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("ablation", help="weak-model choice ablation over several seeds")
    p.add_argument("--task", default=None)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-config", default=None)
    p.add_argument("--grid", default=None)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_ablation)

    p = sub.add_parser("theory", help="Monte Carlo check of the logit-error model")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--vocab", type=int, default=8)
    p.add_argument("--trials", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_theory)

    p = sub.add_parser("ttest", help="paired one-tailed t-test on two CSV columns")
    p.add_argument("--a", required=True, metavar="FILE:COLUMN")
    p.add_argument("--b", required=True, metavar="FILE:COLUMN")
    p.set_defaults(func=_cmd_ttest)

    p = sub.add_parser("report", help="markdown summary from a pipeline runs.csv")
    p.add_argument("--runs", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    file_config = {}
    if args.config and args.command != "train-toy":
        try:
            file_config = _load_json(args.config)
        except ValidationError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DATA
    level = args.log_level or file_config.get("log_level", "warning")
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.WARNING),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )

    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except IncompatibleMaps as exc:
        print(f"error: incompatible checkpoints: {exc.report.describe()}", file=sys.stderr)
        return EXIT_DATA
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
