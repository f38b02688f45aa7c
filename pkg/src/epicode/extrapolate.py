"""Parameter-space linear arithmetic over tensor maps.

Extrapolation continues the movement from a weak checkpoint to a strong one:
``out = strong + mu * (strong - weak)``, elementwise in float32. It is the
inverse of linear merging: the same map equals ``interpolate(strong, weak,
t=1+mu)``, and interpolating the result back with ``t = 1/(1+mu)`` recovers
the strong model.

All operations require strictly identical structure (same names, same
shapes). There is no name-subset or broadcast fallback: silently skipping
tensors would corrupt the locality reasoning built on these maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .checkpoint import TensorMap, check_compat
from .errors import IncompatibleMaps, NumericError, ValidationError


@dataclass(frozen=True)
class ExtrapolationConfig:
    """Extrapolation strength. mu=0 is admitted as the identity case."""

    mu: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.mu) or self.mu < 0:
            raise ValidationError(f"mu must be finite and >= 0, got {self.mu}")


def _require_compatible(a: TensorMap, b: TensorMap) -> None:
    report = check_compat(a, b)
    if not report.empty:
        raise IncompatibleMaps(report)


def extrapolate(strong: TensorMap, weak: TensorMap, cfg: ExtrapolationConfig) -> TensorMap:
    """Return ``strong + mu * (strong - weak)``, computed in float32."""
    _require_compatible(strong, weak)
    mu = np.float32(cfg.mu)
    out: dict[str, np.ndarray] = {}
    with np.errstate(over="ignore", invalid="ignore"):
        for name, s in strong.items():
            result = s + mu * (s - weak[name])
            if not np.all(np.isfinite(result)):
                raise NumericError(f"extrapolation overflowed to non-finite values in {name!r}")
            out[name] = result
    return TensorMap(out)


def interpolate(a: TensorMap, b: TensorMap, t: float) -> TensorMap:
    """Return the linear merge ``t * a + (1 - t) * b`` in float32."""
    if not math.isfinite(t):
        raise ValidationError(f"t must be finite, got {t}")
    _require_compatible(a, b)
    tf = np.float32(t)
    one_minus = np.float32(1.0) - tf
    out: dict[str, np.ndarray] = {}
    with np.errstate(over="ignore", invalid="ignore"):
        for name, ta in a.items():
            result = tf * ta + one_minus * b[name]
            if not np.all(np.isfinite(result)):
                raise NumericError(f"interpolation overflowed to non-finite values in {name!r}")
            out[name] = result
    return TensorMap(out)


def param_distance(a: TensorMap, b: TensorMap) -> float:
    """Euclidean norm of the concatenated elementwise difference.

    Partial sums accumulate in float64 over the float32 inputs, tensor by
    tensor in lexicographic name order, so the reduction is deterministic.
    """
    _require_compatible(a, b)
    total = 0.0
    for name, ta in a.items():
        diff = ta.astype(np.float64) - b[name].astype(np.float64)
        total += float(np.dot(diff.ravel(), diff.ravel()))
    return math.sqrt(total)


def locality_gain(ep: TensorMap, ft: TensorMap, grad: TensorMap) -> float:
    """Inner product of the flattened difference (ep - ft) with a gradient.

    A negative value predicts that moving from ``ft`` to ``ep`` lowers the
    loss whose gradient was supplied (first-order estimate). The raw inner
    product is returned without any extra strength factor; since ep - ft is
    itself proportional to the extrapolation strength, callers who want the
    doubly-scaled reading can multiply by mu themselves.
    """
    _require_compatible(ep, ft)
    _require_compatible(ep, grad)
    total = 0.0
    for name, te in ep.items():
        diff = te.astype(np.float64) - ft[name].astype(np.float64)
        total += float(np.dot(diff.ravel(), grad[name].astype(np.float64).ravel()))
    return total
