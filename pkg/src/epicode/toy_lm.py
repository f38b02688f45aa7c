"""A minimal trainable decoder-only language model.

Architecture: pre-norm transformer with learned positional embeddings,
causal scaled-dot-product attention, GELU feed-forward, and an untied output
head. Parameters live in a float32 :class:`TensorMap` under the naming
scheme of :func:`tensor_names`; forward and backward run in float64
internally. The defaults (V=64, d_model=32, 2 layers, 2 heads, d_ff=128)
are the smallest configuration for which checkpoint arithmetic between
training stages is non-trivial while training stays a matter of seconds.

Initialization: every weight matrix (embeddings included) is drawn from
N(0, 0.02^2), biases and layer-norm offsets start at zero, layer-norm gains
at one. Weight tensors consume the init stream in lexicographic name order,
so a seed pins the parameters bit-exactly.

Optimizer: decoupled weight decay with adaptive moments, applied per batch.
With gradient g and step count t (starting at 1):

    m <- beta1 * m + (1 - beta1) * g
    v <- beta2 * v + (1 - beta2) * g^2
    m_hat = m / (1 - beta1^t)
    v_hat = v / (1 - beta2^t)
    p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)

All optimizer arithmetic is float32 and the decay applies uniformly to every
tensor. The training loss is the mean cross-entropy of answer-position
predictions only; prompt positions carry no loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .checkpoint import TensorMap
from .errors import NumericError, ValidationError
from .rng import substream

_LN_EPS = 1e-5
_INIT_STD = 0.02
_INIT_STREAM = 101
_SHUFFLE_STREAM = 202


@dataclass(frozen=True)
class ToyConfig:
    vocab_size: int = 64
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 128
    max_context: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        dims = (self.vocab_size, self.d_model, self.n_layers, self.n_heads, self.d_ff)
        if any(d < 1 for d in dims):
            raise ValidationError("all model dimensions must be >= 1")
        if self.max_context < 2:
            raise ValidationError("max_context must be >= 2")
        if self.d_model % self.n_heads != 0:
            raise ValidationError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )


@dataclass(frozen=True)
class OptimizerConfig:
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 32

    def __post_init__(self) -> None:
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValidationError("beta1 and beta2 must be in [0, 1)")
        # learning_rate 0 is admitted so the null-update identity is testable.
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")


# The paper-faithful preset used on 7B models; kept for reference, not the
# toy default (3e-5 with batch 128 barely moves a 30k-parameter model).
PAPER_FAITHFUL_OPTIMIZER = OptimizerConfig(learning_rate=3e-5, batch_size=128)


@dataclass
class TrainState:
    params: TensorMap
    first_moments: TensorMap
    second_moments: TensorMap
    step_count: int = 0

    @classmethod
    def fresh(cls, params: TensorMap) -> "TrainState":
        zeros = {name: np.zeros_like(arr) for name, arr in params.items()}
        return cls(
            params=params,
            first_moments=TensorMap(zeros),
            second_moments=TensorMap(zeros),
            step_count=0,
        )


def tensor_names(config: ToyConfig) -> dict[str, tuple[int, ...]]:
    """The naming scheme: tensor name -> shape."""
    d, f, v, c = config.d_model, config.d_ff, config.vocab_size, config.max_context
    shapes: dict[str, tuple[int, ...]] = {
        "embed.tok": (v, d),
        "embed.pos": (c, d),
        "final_ln.gain": (d,),
        "final_ln.bias": (d,),
        "head.w": (d, v),
        "head.b": (v,),
    }
    for i in range(config.n_layers):
        prefix = f"layers.{i}"
        shapes[f"{prefix}.ln1.gain"] = (d,)
        shapes[f"{prefix}.ln1.bias"] = (d,)
        shapes[f"{prefix}.ln2.gain"] = (d,)
        shapes[f"{prefix}.ln2.bias"] = (d,)
        for proj in ("q", "k", "v", "o"):
            shapes[f"{prefix}.attn.w{proj}"] = (d, d)
            shapes[f"{prefix}.attn.b{proj}"] = (d,)
        shapes[f"{prefix}.mlp.w1"] = (d, f)
        shapes[f"{prefix}.mlp.b1"] = (f,)
        shapes[f"{prefix}.mlp.w2"] = (f, d)
        shapes[f"{prefix}.mlp.b2"] = (d,)
    return shapes


def _is_weight(name: str) -> bool:
    leaf = name.rsplit(".", 1)[-1]
    return name.startswith("embed.") or leaf.startswith("w")


def init(config: ToyConfig) -> TensorMap:
    """Deterministic initial parameters for a config (seeded by config.seed)."""
    rng = substream(config.seed, _INIT_STREAM)
    shapes = tensor_names(config)
    tensors: dict[str, np.ndarray] = {}
    for name in sorted(shapes):
        shape = shapes[name]
        if _is_weight(name):
            tensors[name] = (rng.standard_normal(shape) * _INIT_STD).astype(np.float32)
        elif name.endswith(".gain"):
            tensors[name] = np.ones(shape, dtype=np.float32)
        else:
            tensors[name] = np.zeros(shape, dtype=np.float32)
    return TensorMap(tensors)


def _as_f64(params: TensorMap) -> dict[str, np.ndarray]:
    return {name: arr.astype(np.float64) for name, arr in params.items()}


def _config_matches(params, config: ToyConfig) -> None:
    expected = tensor_names(config)
    actual = {name: tuple(params[name].shape) for name in params}
    if actual != expected:
        missing = sorted(set(expected) - set(actual))
        extra = sorted(set(actual) - set(expected))
        bad = [n for n in expected if n in actual and actual[n] != expected[n]]
        raise ValidationError(
            f"params do not match config: missing={missing} extra={extra} shape_mismatch={bad}"
        )


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return cdf + x * pdf


def _layernorm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = centered * inv_std
    return gain * xhat + bias, (xhat, inv_std)


def _layernorm_backward(dy: np.ndarray, gain: np.ndarray, cache):
    xhat, inv_std = cache
    dgain = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    dbias = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * gain
    mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * inv_std
    return dx, dgain, dbias


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def _forward_batch(p: dict[str, np.ndarray], tokens: np.ndarray, config: ToyConfig, cache=None):
    """Logits (B, T, V) for a padded token batch; fills cache when given."""
    b, t = tokens.shape
    n_heads = config.n_heads
    scale = 1.0 / math.sqrt(config.d_model // n_heads)
    causal = np.triu(np.ones((t, t), dtype=bool), k=1)

    h = p["embed.tok"][tokens] + p["embed.pos"][:t]
    if cache is not None:
        cache["h0"] = h
        cache["layers"] = []
    for i in range(config.n_layers):
        pre = f"layers.{i}"
        a, ln1_cache = _layernorm(h, p[f"{pre}.ln1.gain"], p[f"{pre}.ln1.bias"])
        q = _split_heads(a @ p[f"{pre}.attn.wq"] + p[f"{pre}.attn.bq"], n_heads)
        k = _split_heads(a @ p[f"{pre}.attn.wk"] + p[f"{pre}.attn.bk"], n_heads)
        v = _split_heads(a @ p[f"{pre}.attn.wv"] + p[f"{pre}.attn.bv"], n_heads)
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale
        scores = np.where(causal, -np.inf, scores)
        scores -= scores.max(axis=-1, keepdims=True)
        probs = np.exp(scores)
        probs /= probs.sum(axis=-1, keepdims=True)
        ctx = _merge_heads(probs @ v)
        attn = ctx @ p[f"{pre}.attn.wo"] + p[f"{pre}.attn.bo"]
        h_mid = h + attn
        m, ln2_cache = _layernorm(h_mid, p[f"{pre}.ln2.gain"], p[f"{pre}.ln2.bias"])
        u = m @ p[f"{pre}.mlp.w1"] + p[f"{pre}.mlp.b1"]
        g = _gelu(u)
        ff = g @ p[f"{pre}.mlp.w2"] + p[f"{pre}.mlp.b2"]
        h_out = h_mid + ff
        if cache is not None:
            cache["layers"].append(
                {"a": a, "ln1": ln1_cache, "q": q, "k": k, "v": v, "probs": probs,
                 "ctx": ctx, "ln2": ln2_cache, "m": m, "u": u, "g": g}
            )
        h = h_out
    fin, lnf_cache = _layernorm(h, p["final_ln.gain"], p["final_ln.bias"])
    logits = fin @ p["head.w"] + p["head.b"]
    if cache is not None:
        cache["fin"] = fin
        cache["lnf"] = lnf_cache
    return logits


def _backward_batch(
    p: dict[str, np.ndarray],
    tokens: np.ndarray,
    config: ToyConfig,
    cache,
    dlogits: np.ndarray,
) -> dict[str, np.ndarray]:
    grads = {name: np.zeros_like(arr) for name, arr in p.items()}
    n_heads = config.n_heads
    scale = 1.0 / math.sqrt(config.d_model // n_heads)

    fin = cache["fin"]
    grads["head.w"] = np.einsum("btd,btv->dv", fin, dlogits)
    grads["head.b"] = dlogits.sum(axis=(0, 1))
    dfin = dlogits @ p["head.w"].T
    dh, dg_f, db_f = _layernorm_backward(dfin, p["final_ln.gain"], cache["lnf"])
    grads["final_ln.gain"] = dg_f
    grads["final_ln.bias"] = db_f

    for i in reversed(range(config.n_layers)):
        pre = f"layers.{i}"
        lc = cache["layers"][i]
        # feed-forward block: h_out = h_mid + ff
        dff = dh
        grads[f"{pre}.mlp.w2"] = np.einsum("btf,btd->fd", lc["g"], dff)
        grads[f"{pre}.mlp.b2"] = dff.sum(axis=(0, 1))
        dgel = dff @ p[f"{pre}.mlp.w2"].T
        du = dgel * _gelu_grad(lc["u"])
        grads[f"{pre}.mlp.w1"] = np.einsum("btd,btf->df", lc["m"], du)
        grads[f"{pre}.mlp.b1"] = du.sum(axis=(0, 1))
        dm = du @ p[f"{pre}.mlp.w1"].T
        dh_mid, dg2, db2 = _layernorm_backward(dm, p[f"{pre}.ln2.gain"], lc["ln2"])
        grads[f"{pre}.ln2.gain"] = dg2
        grads[f"{pre}.ln2.bias"] = db2
        dh_mid = dh_mid + dh
        # attention block: h_mid = h_in + attn
        dattn = dh_mid
        grads[f"{pre}.attn.wo"] = np.einsum("btd,bte->de", lc["ctx"], dattn)
        grads[f"{pre}.attn.bo"] = dattn.sum(axis=(0, 1))
        dctx = _split_heads(dattn @ p[f"{pre}.attn.wo"].T, n_heads)
        probs, q, k, v = lc["probs"], lc["q"], lc["k"], lc["v"]
        dprobs = dctx @ v.transpose(0, 1, 3, 2)
        dv = probs.transpose(0, 1, 3, 2) @ dctx
        dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
        dq = (dscores @ k) * scale
        dk = (dscores.transpose(0, 1, 3, 2) @ q) * scale
        dq_flat, dk_flat, dv_flat = (_merge_heads(x) for x in (dq, dk, dv))
        a = lc["a"]
        da = np.zeros_like(a)
        for proj, dproj in (("q", dq_flat), ("k", dk_flat), ("v", dv_flat)):
            grads[f"{pre}.attn.w{proj}"] = np.einsum("btd,bte->de", a, dproj)
            grads[f"{pre}.attn.b{proj}"] = dproj.sum(axis=(0, 1))
            da += dproj @ p[f"{pre}.attn.w{proj}"].T
        dh_in, dg1, db1 = _layernorm_backward(da, p[f"{pre}.ln1.gain"], lc["ln1"])
        grads[f"{pre}.ln1.gain"] = dg1
        grads[f"{pre}.ln1.bias"] = db1
        dh = dh_in + dh_mid

    t = tokens.shape[1]
    np.add.at(grads["embed.tok"], tokens, dh)
    grads["embed.pos"][:t] = dh.sum(axis=0)
    return grads


def forward(params: TensorMap, tokens: Sequence[int], config: ToyConfig) -> np.ndarray:
    """Logits for one sequence, shape (len(tokens), vocab_size)."""
    _config_matches(params, config)
    arr = _validate_tokens(tokens, config)
    logits = _forward_batch(_as_f64(params), arr[None, :], config)[0]
    if not np.all(np.isfinite(logits)):
        raise NumericError("forward produced non-finite logits")
    return logits


def _validate_tokens(tokens: Sequence[int], config: ToyConfig) -> np.ndarray:
    arr = np.asarray(tokens, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError("tokens must be a non-empty 1-D sequence")
    if arr.size > config.max_context:
        raise ValidationError(f"sequence length {arr.size} exceeds max_context {config.max_context}")
    if arr.min() < 0 or arr.max() >= config.vocab_size:
        raise ValidationError("token id out of range")
    return arr


def _prepare_batch(batch, config: ToyConfig):
    """Pad (prompt, answer) pairs into token/target/mask arrays.

    Position p is supervised iff p+1 is an answer position; the target at a
    supervised position is the token at p+1.
    """
    if not batch:
        raise ValidationError("empty batch")
    seqs = []
    prompt_lens = []
    for prompt, answer in batch:
        prompt = list(prompt)
        answer = list(answer)
        if not prompt or not answer:
            raise ValidationError("prompt and answer must be non-empty")
        seq = prompt + answer
        if len(seq) > config.max_context:
            raise ValidationError(f"sequence length {len(seq)} exceeds max_context {config.max_context}")
        seqs.append(seq)
        prompt_lens.append(len(prompt))
    b = len(seqs)
    t = max(len(s) for s in seqs)
    tokens = np.zeros((b, t), dtype=np.int64)
    targets = np.zeros((b, t), dtype=np.int64)
    mask = np.zeros((b, t), dtype=np.float64)
    for row, (seq, np_len) in enumerate(zip(seqs, prompt_lens)):
        n = len(seq)
        if min(seq) < 0 or max(seq) >= config.vocab_size:
            raise ValidationError("token id out of range")
        tokens[row, :n] = seq
        targets[row, np_len - 1 : n - 1] = seq[np_len:]
        mask[row, np_len - 1 : n - 1] = 1.0
    return tokens, targets, mask


def _loss_from_logits(logits: np.ndarray, targets: np.ndarray, mask: np.ndarray):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=-1))
    target_scores = np.take_along_axis(shifted, targets[..., None], axis=-1)[..., 0]
    per_position = logsumexp - target_scores
    count = mask.sum()
    loss = float((per_position * mask).sum() / count)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=-1, keepdims=True)
    dlogits = probs
    rows = np.arange(targets.shape[0])[:, None]
    cols = np.arange(targets.shape[1])[None, :]
    dlogits[rows, cols, targets] -= 1.0
    dlogits *= (mask / count)[..., None]
    return loss, dlogits


def _loss_batch(p: dict[str, np.ndarray], tokens, targets, mask, config: ToyConfig, with_grads: bool):
    cache: dict | None = {} if with_grads else None
    logits = _forward_batch(p, tokens, config, cache)
    loss, dlogits = _loss_from_logits(logits, targets, mask)
    if not math.isfinite(loss):
        raise NumericError("loss is non-finite")
    if not with_grads:
        return loss, None
    return loss, _backward_batch(p, tokens, config, cache, dlogits)


def loss(params: TensorMap, batch, config: ToyConfig) -> float:
    """Mean cross-entropy of answer-position predictions only."""
    _config_matches(params, config)
    tokens, targets, mask = _prepare_batch(batch, config)
    value, _ = _loss_batch(_as_f64(params), tokens, targets, mask, config, with_grads=False)
    return value


def loss_and_grads(params: TensorMap, batch, config: ToyConfig):
    """Loss plus analytic float64 gradients keyed by tensor name."""
    _config_matches(params, config)
    tokens, targets, mask = _prepare_batch(batch, config)
    return _loss_batch(_as_f64(params), tokens, targets, mask, config, with_grads=True)


def adamw_update(
    param: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    grad: np.ndarray,
    step: int,
    opt: OptimizerConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One decoupled-weight-decay moment update in float32; step counts from 1."""
    g = np.asarray(grad, dtype=np.float32)
    b1 = np.float32(opt.beta1)
    b2 = np.float32(opt.beta2)
    m_new = b1 * m + (np.float32(1.0) - b1) * g
    v_new = b2 * v + (np.float32(1.0) - b2) * (g * g)
    m_hat = m_new / np.float32(1.0 - opt.beta1**step)
    v_hat = v_new / np.float32(1.0 - opt.beta2**step)
    lr = np.float32(opt.learning_rate)
    update = m_hat / (np.sqrt(v_hat) + np.float32(opt.eps)) + np.float32(opt.weight_decay) * param
    return (param - lr * update).astype(np.float32), m_new, v_new


def train_epochs(
    state: TrainState,
    dataset,
    opt: OptimizerConfig,
    epochs: int,
    config: ToyConfig,
    shuffle_seed: int = 0,
    on_step: Callable[[int, int, float], None] | None = None,
) -> list[TensorMap]:
    """Run whole epochs of minibatch updates; returns one checkpoint per epoch.

    Example order is a seeded permutation per epoch (stream key
    (shuffle_seed, 202, epoch)), so training is bitwise reproducible.
    Mutates `state` in place and aborts on a non-finite loss. `on_step`
    receives (epoch, global step, batch loss) after every update.
    """
    if not dataset:
        raise ValidationError("dataset must be non-empty")
    if epochs < 1:
        raise ValidationError("epochs must be >= 1")
    params = {name: arr.copy() for name, arr in state.params.items()}
    moments1 = {name: arr.copy() for name, arr in state.first_moments.items()}
    moments2 = {name: arr.copy() for name, arr in state.second_moments.items()}
    checkpoints: list[TensorMap] = []
    n = len(dataset)
    for epoch in range(epochs):
        order = substream(shuffle_seed, _SHUFFLE_STREAM, epoch).permutation(n)
        for start in range(0, n, opt.batch_size):
            batch = [dataset[idx] for idx in order[start : start + opt.batch_size]]
            value, grads = _loss_batch(
                {k: a.astype(np.float64) for k, a in params.items()},
                *_prepare_batch(batch, config),
                config,
                with_grads=True,
            )
            if not math.isfinite(value):
                raise NumericError(f"training diverged at step {state.step_count + 1}")
            state.step_count += 1
            for name in params:
                params[name], moments1[name], moments2[name] = adamw_update(
                    params[name], moments1[name], moments2[name],
                    grads[name], state.step_count, opt,
                )
            if on_step is not None:
                on_step(epoch + 1, state.step_count, value)
        checkpoints.append(TensorMap(params))
    state.params = TensorMap(params)
    state.first_moments = TensorMap(moments1)
    state.second_moments = TensorMap(moments2)
    return checkpoints


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float) -> np.ndarray:
    """Central finite-difference gradient of a scalar function, coordinate by coordinate."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    out = grad.ravel()
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        up = f(x)
        flat[idx] = orig - h
        down = f(x)
        flat[idx] = orig
        out[idx] = (up - down) / (2.0 * h)
    return grad


def grad_check(
    params: TensorMap,
    batch,
    config: ToyConfig,
    n_coords: int = 200,
    h: float = 1e-3,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Samples `n_coords` random parameter coordinates. A coordinate where the
    two gradients agree within 1e-4 absolutely counts as exact, which keeps
    near-zero-gradient coordinates from blowing up the ratio.
    """
    _config_matches(params, config)
    tokens, targets, mask = _prepare_batch(batch, config)
    p64 = _as_f64(params)
    _, grads = _loss_batch(p64, tokens, targets, mask, config, with_grads=True)

    names = sorted(p64)
    sizes = np.array([p64[name].size for name in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    rng = substream(seed, 303)
    chosen = rng.choice(total, size=min(n_coords, total), replace=False)

    worst = 0.0
    for global_idx in chosen:
        tensor_pos = int(np.searchsorted(offsets, global_idx, side="right") - 1)
        name = names[tensor_pos]
        local = int(global_idx - offsets[tensor_pos])
        flat = p64[name].ravel()
        orig = flat[local]
        flat[local] = orig + h
        up, _ = _loss_batch(p64, tokens, targets, mask, config, with_grads=False)
        flat[local] = orig - h
        down, _ = _loss_batch(p64, tokens, targets, mask, config, with_grads=False)
        flat[local] = orig
        fd = (up - down) / (2.0 * h)
        analytic = float(grads[name].ravel()[local])
        diff = abs(fd - analytic)
        if diff > 1e-4:
            worst = max(worst, diff / max(abs(fd), abs(analytic)))
    return worst


class ToyProvider:
    """LogitProvider view of a parameter map: final-position logits per prefix."""

    def __init__(self, params: TensorMap, config: ToyConfig) -> None:
        _config_matches(params, config)
        self._params = _as_f64(params)
        self._config = config

    def next_logits(self, prefix: Sequence[int]) -> np.ndarray:
        arr = _validate_tokens(prefix, self._config)
        return _forward_batch(self._params, arr[None, :], self._config)[0, -1]

    def vocab_size(self) -> int:
        return self._config.vocab_size


def as_provider(params: TensorMap, config: ToyConfig) -> ToyProvider:
    return ToyProvider(params, config)
