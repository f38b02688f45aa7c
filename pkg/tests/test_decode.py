from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import softmax as scipy_softmax

from epicode.decode import (
    DecodePolicy,
    contrast_logits,
    contrastive_decode_trace,
    greedy_decode,
    plausibility_mask,
    strong_only_decode,
)
from epicode.errors import ValidationError

from conftest import RandomProvider, ScriptedProvider


# ---------------------------------------------------------------- mask


def test_mask_alpha_zero_is_all_true():
    assert plausibility_mask([1.0, -5.0, 3.0], 0.0).all()


def test_mask_sharp_distribution():
    # independent oracle: softmax([5,0,0]) ~ [0.9867, 0.00665, 0.00665]
    probs = scipy_softmax(np.array([5.0, 0.0, 0.0]))
    assert probs[0] == pytest.approx(0.9867, abs=1e-4)
    threshold = 0.5 * probs.max()
    expected = probs >= threshold
    np.testing.assert_array_equal(plausibility_mask([5.0, 0.0, 0.0], 0.5), expected)
    np.testing.assert_array_equal(expected, [True, False, False])


def test_mask_flat_distribution_alpha_point_one():
    probs = scipy_softmax(np.array([2.0, 1.0, 0.0]))
    expected = probs >= 0.1 * probs.max()
    np.testing.assert_array_equal(expected, [True, True, True])
    np.testing.assert_array_equal(plausibility_mask([2.0, 1.0, 0.0], 0.1), expected)


@given(
    logits=st.lists(st.floats(-30, 30), min_size=2, max_size=12),
    alpha=st.floats(0.0, 1.0),
)
def test_mask_argmax_always_survives(logits, alpha):
    mask = plausibility_mask(logits, alpha)
    assert mask[int(np.argmax(logits))]


def test_mask_bad_alpha_rejected():
    with pytest.raises(ValidationError):
        plausibility_mask([1.0, 2.0], 1.5)


# ---------------------------------------------------------------- contrast


def test_contrast_lambda_zero_equals_strong():
    policy = DecodePolicy(lam=0.0, alpha=0.3)
    out = contrast_logits([2.0, 1.0, 0.5], [9.0, -9.0, 0.0], policy)
    np.testing.assert_array_equal(out.scores[out.allowed], np.array([2.0, 1.0, 0.5])[out.allowed])


def test_contrast_hand_arithmetic():
    policy = DecodePolicy(lam=1.0, alpha=0.1)
    out = contrast_logits([2.0, 1.0, 0.0], [1.0, 1.0, 1.0], policy)
    np.testing.assert_allclose(out.scores, [3.0, 1.0, -1.0])
    assert out.allowed.all()
    assert out.argmax() == 0


def test_contrast_mask_blocks_runaway_difference():
    # weak model hates token 2; without the mask its contrast would explode
    policy = DecodePolicy(lam=1.0, alpha=0.5)
    out = contrast_logits([5.0, 0.0, 0.0], [0.0, 0.0, -10.0], policy)
    np.testing.assert_array_equal(out.allowed, [True, False, False])
    assert out.scores[0] == pytest.approx(10.0)
    assert out.argmax() == 0
    assert np.isfinite(out.scores).all()  # masked entries stay finite


def test_contrast_length_mismatch():
    with pytest.raises(ValidationError, match="mismatch"):
        contrast_logits([1.0, 2.0], [1.0, 2.0, 3.0], DecodePolicy())


def test_at_least_one_entry_unmasked_always():
    policy = DecodePolicy(lam=2.0, alpha=1.0)
    out = contrast_logits([0.0, 0.0, 5.0], [1.0, 1.0, 1.0], policy)
    assert out.allowed.any()


# ---------------------------------------------------------------- decoding


def test_greedy_decode_scripted_vs_per_step_oracle():
    rows_strong = [[2.0, 1.0, 0.0], [0.0, 3.0, 1.0], [1.0, 1.0, 4.0], [0.5, 0.2, 0.1]]
    rows_weak = [[1.0, 1.0, 1.0], [2.0, 0.0, 0.0], [0.0, 2.0, 2.0], [0.0, 0.0, 0.0]]
    prompt = [0, 1]
    policy = DecodePolicy(lam=0.5, alpha=0.1, max_new_tokens=4)
    strong = ScriptedProvider(rows_strong, len(prompt))
    weak = ScriptedProvider(rows_weak, len(prompt))

    got = greedy_decode(strong, weak, prompt, policy)

    # exhaustive per-step oracle over all tokens
    expected = []
    for step in range(4):
        s = np.array(rows_strong[step])
        w = np.array(rows_weak[step])
        probs = scipy_softmax(s)
        allowed = probs >= policy.alpha * probs.max()
        scores = s + policy.lam * (s - w)
        best, best_score = None, -np.inf
        for v in range(3):
            if allowed[v] and scores[v] > best_score:
                best, best_score = v, scores[v]
        expected.append(best)
    assert got == expected


def test_greedy_decode_stops_at_eos():
    rows = [[0.0, 5.0, 0.0], [9.0, 0.0, 0.0], [0.0, 0.0, 9.0]]
    strong = ScriptedProvider(rows, 1)
    weak = ScriptedProvider([[0.0, 0.0, 0.0]], 1)
    policy = DecodePolicy(lam=0.0, alpha=0.0, max_new_tokens=5, eos_token=0)
    tokens = greedy_decode(strong, weak, [2], policy)
    assert tokens == [1, 0]  # eos (token 0) is included, then generation stops


def test_greedy_decode_empty_prompt_rejected():
    strong = ScriptedProvider([[1.0, 0.0]], 0)
    with pytest.raises(ValidationError, match="non-empty"):
        greedy_decode(strong, strong, [], DecodePolicy())


def test_vocab_mismatch_rejected():
    strong = ScriptedProvider([[1.0, 0.0]], 1)
    weak = ScriptedProvider([[1.0, 0.0, 0.0]], 1)
    with pytest.raises(ValidationError, match="vocab"):
        greedy_decode(strong, weak, [0], DecodePolicy())


def test_trace_records_chosen_scores():
    rows_strong = [[2.0, 0.0], [0.0, 3.0]]
    strong = ScriptedProvider(rows_strong, 1)
    weak = ScriptedProvider([[1.0, 1.0], [1.0, 1.0]], 1)
    policy = DecodePolicy(lam=1.0, alpha=0.0, max_new_tokens=2)
    trace = contrastive_decode_trace(strong, weak, [0], policy)
    assert trace.tokens == [0, 1]
    assert trace.chosen_scores == [pytest.approx(3.0), pytest.approx(5.0)]


def test_strong_only_single_step_argmax():
    strong = ScriptedProvider([[0.1, 0.7, 0.2]], 1)
    assert strong_only_decode(strong, [0], 1) == [1]


def test_strong_only_tie_breaks_to_lowest_id():
    strong = ScriptedProvider([[1.0, 1.0]], 1)
    assert strong_only_decode(strong, [0], 1) == [0]


def test_strong_only_equals_lambda_zero_alpha_zero():
    strong = RandomProvider(vocab=7, seed=5)
    weak = RandomProvider(vocab=7, seed=6)
    policy = DecodePolicy(lam=0.0, alpha=0.0, max_new_tokens=6, eos_token=0)
    assert greedy_decode(strong, weak, [1, 2], policy) == strong_only_decode(
        strong, [1, 2], 6, eos_token=0
    )


@given(seed=st.integers(0, 10_000), alpha=st.floats(0.0, 1.0))
def test_lambda_zero_equivalence_random_providers(seed, alpha):
    strong = RandomProvider(vocab=5, seed=seed)
    weak = RandomProvider(vocab=5, seed=seed + 1)
    policy = DecodePolicy(lam=0.0, alpha=alpha, max_new_tokens=5, eos_token=0)
    assert greedy_decode(strong, weak, [1], policy) == strong_only_decode(
        strong, [1], 5, eos_token=0
    )


@given(seed=st.integers(0, 10_000), lam=st.floats(0.0, 3.0))
def test_identical_providers_collapse_to_strong(seed, lam):
    strong = RandomProvider(vocab=6, seed=seed)
    weak = RandomProvider(vocab=6, seed=seed)
    policy = DecodePolicy(lam=lam, alpha=0.1, max_new_tokens=4, eos_token=0)
    assert greedy_decode(strong, weak, [2, 3], policy) == strong_only_decode(
        strong, [2, 3], 4, eos_token=0
    )


@given(
    seed=st.integers(0, 10_000),
    lam=st.floats(0.0, 2.0),
    alpha=st.sampled_from([0.1, 0.5, 0.9]),
)
def test_mask_soundness_random_decodes(seed, lam, alpha):
    strong = RandomProvider(vocab=6, seed=seed)
    weak = RandomProvider(vocab=6, seed=seed + 99)
    policy = DecodePolicy(lam=lam, alpha=alpha, max_new_tokens=4, eos_token=0)
    tokens = greedy_decode(strong, weak, [1, 4], policy)
    # independent replay: every emitted token must be unmasked at its step,
    # and the strong argmax must never be masked
    prefix = [1, 4]
    for token in tokens:
        logits = strong.next_logits(prefix)
        mask = plausibility_mask(logits, alpha)
        assert mask[token]
        assert mask[int(np.argmax(logits))]
        prefix.append(token)


@given(seed=st.integers(0, 10_000), c1=st.floats(-20, 20), c2=st.floats(-20, 20))
def test_shift_invariance(seed, c1, c2):
    strong = RandomProvider(vocab=5, seed=seed)
    weak = RandomProvider(vocab=5, seed=seed + 7)
    policy = DecodePolicy(lam=0.7, alpha=0.3, max_new_tokens=1)

    base = contrast_logits(strong.next_logits([1]), weak.next_logits([1]), policy)
    shifted = contrast_logits(
        strong.next_logits([1]) + c1, weak.next_logits([1]) + c2, policy
    )
    assert base.argmax() == shifted.argmax()
    np.testing.assert_array_equal(base.allowed, shifted.allowed)


def test_decode_is_deterministic():
    strong = RandomProvider(vocab=9, seed=3)
    weak = RandomProvider(vocab=9, seed=4)
    policy = DecodePolicy(lam=0.4, alpha=0.1, max_new_tokens=8, eos_token=0)
    runs = {tuple(greedy_decode(strong, weak, [5, 6], policy)) for _ in range(5)}
    assert len(runs) == 1
