"""Synthetic data-scarce tasks with exact-match evaluation.

Two task kinds, both over integer token sequences so no tokenizer exists:

* ``kv_recall`` — the prompt lists key/value pairs and then queries one key
  after a query marker; the answer is that key's value.
* ``modular_chain`` — the prompt is a chain of operand tokens; the answer
  encodes the sum of their residues modulo a fixed base.

Token layout: id 0 is the end-of-answer token, id 1 the query marker, and
payload tokens start at 2. Generated splits are pairwise disjoint by prompt,
and the answer is a pure function of the prompt, so a trivial lookup oracle
can re-derive every label.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from ..errors import ValidationError
from ..rng import substream

EOS_TOKEN = 0
QUERY_TOKEN = 1
PAYLOAD_START = 2

_DATA_STREAM = 404

KV_RECALL = "kv_recall"
MODULAR_CHAIN = "modular_chain"


@dataclass(frozen=True)
class Example:
    prompt: tuple[int, ...]
    answer: tuple[int, ...]


@dataclass(frozen=True)
class SplitDataset:
    train: list[Example]
    dev: list[Example]
    test: list[Example]


@dataclass(frozen=True)
class TaskSpec:
    kind: str = KV_RECALL
    vocab_size: int = 64
    n_train: int = 512
    n_dev: int = 500
    n_test: int = 1000
    n_pairs: int = 2
    n_keys: int = 8
    n_values: int = 8
    chain_len: int = 3
    modulus: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in (KV_RECALL, MODULAR_CHAIN):
            raise ValidationError(f"unknown task kind {self.kind!r}")
        if self.n_train < 1 or self.n_dev < 1 or self.n_test < 1:
            raise ValidationError("all split sizes must be >= 1")
        if self.kind == KV_RECALL:
            if self.n_pairs < 1 or self.n_keys < 2 or self.n_values < 2:
                raise ValidationError("kv_recall needs n_pairs >= 1 and key/value spaces >= 2")
            if self.n_pairs > self.n_keys:
                raise ValidationError("n_pairs cannot exceed n_keys (keys are distinct)")
            needed = PAYLOAD_START + self.n_keys + self.n_values
        else:
            if self.chain_len < 1 or self.modulus < 2:
                raise ValidationError("modular_chain needs chain_len >= 1 and modulus >= 2")
            needed = PAYLOAD_START + 2 * self.modulus
        if self.vocab_size < needed:
            raise ValidationError(
                f"vocab_size {self.vocab_size} too small for this task (needs >= {needed})"
            )
        total = self.n_train + self.n_dev + self.n_test
        if self._prompt_space() < total:
            raise ValidationError(
                f"only {self._prompt_space()} distinct prompts exist but {total} were requested"
            )

    def _prompt_space(self) -> int:
        if self.kind == KV_RECALL:
            ordered_keys = math.perm(self.n_keys, self.n_pairs)
            return ordered_keys * self.n_values**self.n_pairs * self.n_pairs
        return self.modulus**self.chain_len

    def max_answer_len(self) -> int:
        return 1

    def prompt_len(self) -> int:
        if self.kind == KV_RECALL:
            return 2 * self.n_pairs + 2
        return self.chain_len + 1


def _kv_example(spec: TaskSpec, rng) -> Example:
    keys = rng.choice(spec.n_keys, size=spec.n_pairs, replace=False)
    values = rng.integers(0, spec.n_values, size=spec.n_pairs)
    query = int(rng.integers(0, spec.n_pairs))
    prompt: list[int] = []
    for k, v in zip(keys, values):
        prompt.append(PAYLOAD_START + int(k))
        prompt.append(PAYLOAD_START + spec.n_keys + int(v))
    prompt.append(QUERY_TOKEN)
    prompt.append(PAYLOAD_START + int(keys[query]))
    answer = (PAYLOAD_START + spec.n_keys + int(values[query]),)
    return Example(prompt=tuple(prompt), answer=answer)


def _chain_example(spec: TaskSpec, rng) -> Example:
    residues = rng.integers(0, spec.modulus, size=spec.chain_len)
    prompt = tuple(PAYLOAD_START + int(r) for r in residues) + (QUERY_TOKEN,)
    answer = (PAYLOAD_START + spec.modulus + int(residues.sum()) % spec.modulus,)
    return Example(prompt=prompt, answer=answer)


def kv_lookup_answer(prompt: Sequence[int], spec: TaskSpec) -> tuple[int, ...]:
    """Re-derive a kv_recall label by scanning the prompt; the test oracle."""
    pairs = {prompt[i]: prompt[i + 1] for i in range(0, 2 * spec.n_pairs, 2)}
    return (pairs[prompt[-1]],)


def gen_dataset(spec: TaskSpec) -> SplitDataset:
    """Deterministic train/dev/test splits, pairwise disjoint by prompt."""
    rng = substream(spec.seed, _DATA_STREAM)
    make = _kv_example if spec.kind == KV_RECALL else _chain_example
    total = spec.n_train + spec.n_dev + spec.n_test
    seen: set[tuple[int, ...]] = set()
    examples: list[Example] = []
    attempts = 0
    limit = 200 * total
    while len(examples) < total:
        attempts += 1
        if attempts > limit:
            raise ValidationError("could not generate enough distinct prompts")
        ex = make(spec, rng)
        if ex.prompt in seen:
            continue
        seen.add(ex.prompt)
        examples.append(ex)
    train = examples[: spec.n_train]
    dev = examples[spec.n_train : spec.n_train + spec.n_dev]
    test = examples[spec.n_train + spec.n_dev :]
    return SplitDataset(train=train, dev=dev, test=test)


def strip_at_eos(tokens: Sequence[int], eos_token: int = EOS_TOKEN) -> list[int]:
    out = list(tokens)
    if eos_token in out:
        return out[: out.index(eos_token)]
    return out


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    outputs: list[list[int]]
    correct: list[bool]


def evaluate_detailed(
    decode_fn: Callable[[Sequence[int]], Sequence[int]],
    examples: Sequence[Example],
    eos_token: int = EOS_TOKEN,
) -> EvalResult:
    """Exact-match accuracy; generated tokens are compared up to the first eos."""
    if not examples:
        raise ValidationError("dataset must be non-empty")
    outputs: list[list[int]] = []
    correct: list[bool] = []
    for ex in examples:
        generated = list(decode_fn(ex.prompt))
        outputs.append(generated)
        correct.append(tuple(strip_at_eos(generated, eos_token)) == ex.answer)
    return EvalResult(
        accuracy=sum(correct) / len(correct),
        outputs=outputs,
        correct=correct,
    )


def evaluate(
    decode_fn: Callable[[Sequence[int]], Sequence[int]],
    examples: Sequence[Example],
    eos_token: int = EOS_TOKEN,
) -> float:
    return evaluate_detailed(decode_fn, examples, eos_token).accuracy


def write_jsonl(examples: Sequence[Example], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({"prompt": list(ex.prompt), "answer": list(ex.answer)}))
            fh.write("\n")


def read_jsonl(path: str | Path) -> list[Example]:
    examples: list[Example] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                prompt = tuple(int(t) for t in record["prompt"])
                answer = tuple(int(t) for t in record["answer"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{path}:{line_no}: bad example record: {exc}") from exc
            examples.append(Example(prompt=prompt, answer=answer))
    if not examples:
        raise ValidationError(f"{path}: no examples")
    return examples
