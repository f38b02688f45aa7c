"""Contrastive decoding: combine a strong and a weak logit stream per token.

Per step the engine computes ``out = strong + lam * (strong - weak)`` and
restricts selection to tokens whose strong-model probability is at least
``alpha`` times the strong model's maximum probability. The plausibility
threshold guards against the failure mode where the weak model assigns an
absurdly low score to a bad token and the contrastive difference makes that
token win.

Generation is greedy and deterministic: ties break toward the lowest token
id, and a sequence stops at the eos token or after ``max_new_tokens`` steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .errors import ValidationError


class LogitProvider(Protocol):
    """Anything that scores the next token for a given prefix."""

    def next_logits(self, prefix: Sequence[int]) -> np.ndarray: ...

    def vocab_size(self) -> int: ...


@dataclass(frozen=True)
class DecodePolicy:
    """Contrast strength, plausibility threshold, and generation limits."""

    lam: float = 0.0
    alpha: float = 0.0
    max_new_tokens: int = 16
    eos_token: int | None = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.lam) or self.lam < 0:
            raise ValidationError(f"lam must be finite and >= 0, got {self.lam}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.max_new_tokens < 1:
            raise ValidationError("max_new_tokens must be >= 1")


@dataclass(frozen=True)
class ContrastedLogits:
    """Contrasted scores plus the plausibility mask (True = selectable).

    Scores stay finite at masked positions so the vector is safe to log;
    exclusion happens through the mask rather than a -inf sentinel.
    """

    scores: np.ndarray
    allowed: np.ndarray

    def argmax(self) -> int:
        masked = np.where(self.allowed, self.scores, -np.inf)
        return int(np.argmax(masked))


def _as_logits(vec, *, name: str) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] < 2:
        raise ValidationError(f"{name} must be a 1-D vector of length >= 2")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    exps = np.exp(shifted)
    return exps / exps.sum()


def plausibility_mask(strong_logits, alpha: float) -> np.ndarray:
    """True where softmax(strong)[v] >= alpha * max softmax(strong).

    The strong model's argmax always survives, for any alpha <= 1.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must be in [0, 1], got {alpha}")
    probs = softmax(_as_logits(strong_logits, name="strong_logits"))
    return probs >= alpha * probs.max()


def contrast_logits(strong_logits, weak_logits, policy: DecodePolicy) -> ContrastedLogits:
    """Apply the contrastive combination under the policy's plausibility mask."""
    strong = _as_logits(strong_logits, name="strong_logits")
    weak = _as_logits(weak_logits, name="weak_logits")
    if strong.shape != weak.shape:
        raise ValidationError(
            f"logit length mismatch: strong has {strong.shape[0]}, weak has {weak.shape[0]}"
        )
    scores = strong + policy.lam * (strong - weak)
    allowed = plausibility_mask(strong, policy.alpha)
    return ContrastedLogits(scores=scores, allowed=allowed)


@dataclass(frozen=True)
class DecodeTrace:
    """Generated tokens plus the winning score at each step."""

    tokens: list[int]
    chosen_scores: list[float]


def _check_providers(strong: LogitProvider, weak: LogitProvider) -> None:
    if strong.vocab_size() != weak.vocab_size():
        raise ValidationError(
            f"provider vocab mismatch: {strong.vocab_size()} vs {weak.vocab_size()}"
        )


def contrastive_decode_trace(
    strong: LogitProvider,
    weak: LogitProvider,
    prompt: Sequence[int],
    policy: DecodePolicy,
) -> DecodeTrace:
    """Greedy contrastive generation, recording per-step chosen scores.

    The returned token list includes the eos token when one triggered the
    stop; callers that want only the answer strip at the first eos.
    """
    if len(prompt) == 0:
        raise ValidationError("prompt must be non-empty")
    _check_providers(strong, weak)
    prefix = list(prompt)
    tokens: list[int] = []
    scores: list[float] = []
    for _ in range(policy.max_new_tokens):
        combined = contrast_logits(strong.next_logits(prefix), weak.next_logits(prefix), policy)
        token = combined.argmax()
        tokens.append(token)
        scores.append(float(combined.scores[token]))
        prefix.append(token)
        if policy.eos_token is not None and token == policy.eos_token:
            break
    return DecodeTrace(tokens=tokens, chosen_scores=scores)


def greedy_decode(
    strong: LogitProvider,
    weak: LogitProvider,
    prompt: Sequence[int],
    policy: DecodePolicy,
) -> list[int]:
    """Tokens generated by greedy contrastive decoding."""
    return contrastive_decode_trace(strong, weak, prompt, policy).tokens


def strong_only_decode(
    strong: LogitProvider,
    prompt: Sequence[int],
    max_new_tokens: int,
    eos_token: int | None = None,
) -> list[int]:
    """Plain greedy argmax on the strong model alone; no mask, same stopping rules."""
    if len(prompt) == 0:
        raise ValidationError("prompt must be non-empty")
    if max_new_tokens < 1:
        raise ValidationError("max_new_tokens must be >= 1")
    prefix = list(prompt)
    tokens: list[int] = []
    for _ in range(max_new_tokens):
        logits = _as_logits(strong.next_logits(prefix), name="strong logits")
        token = int(np.argmax(logits))
        tokens.append(token)
        prefix.append(token)
        if eos_token is not None and token == eos_token:
            break
    return tokens
