"""The distance family d(y) and its gradient d'(y) used by the matching losses.

All members are proper distances on the score-difference vector: d(0) = 0,
d(y) ≥ 0, and d'(0) = 0 under the subgradient-zero convention at kinks. Both
``value`` and ``derivative`` accept a single vector ``(dim,)`` or a batch
``(n, dim)`` (reduction over the last axis), and either plain numpy arrays or
autodiff tensors — with tensors the result stays on the graph, which is what
lets the training loss differentiate through d'(y) when y depends on the
generator.

The pseudo-Huber derivative is y/√(‖y‖²+c²) — the analytic gradient of
√(‖y‖²+c²) − c. Published variants sometimes carry an extra constant factor;
any such constant is absorbed into the time weighting, so the bare gradient
is used. Its norm is < 1 for every finite y, which is what bounds the
generator update (the robustness property the loss is chosen for).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nnkit import tensor as T
from .nnkit.tensor import Tensor

TAGS = ("l2", "power", "exp_power", "l1", "huber", "pseudo_huber")


@dataclass(frozen=True)
class DistanceFn:
    """Tagged distance with its parameters (only the relevant ones are read).

    tags: ``l2`` → ‖y‖²; ``power(alpha)`` → ‖y‖_α^α; ``exp_power(alpha, beta)``
    → exp(β‖y‖_α^α) − 1; ``l1`` → ‖y‖₁; ``huber(delta)`` → coordinatewise
    Huber, summed; ``pseudo_huber(c)`` → √(‖y‖²+c²) − c.
    """

    tag: str
    alpha: int = 2
    beta: float = 1.0
    delta: float = 1.0
    c: float = 1.0

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ValueError(f"unknown distance tag {self.tag!r}, expected one of {TAGS}")
        if self.tag in ("power", "exp_power"):
            if not isinstance(self.alpha, int) or self.alpha < 2 or self.alpha % 2 != 0:
                raise ValueError(f"alpha must be an even integer ≥ 2, got {self.alpha!r}")
        if self.tag == "exp_power" and self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.tag == "huber" and self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.tag == "pseudo_huber" and self.c <= 0:
            raise ValueError(f"c must be positive, got {self.c}")

    # constructors for each tag
    @classmethod
    def l2(cls) -> "DistanceFn":
        return cls("l2")

    @classmethod
    def power(cls, alpha: int) -> "DistanceFn":
        return cls("power", alpha=alpha)

    @classmethod
    def exp_power(cls, alpha: int, beta: float) -> "DistanceFn":
        return cls("exp_power", alpha=alpha, beta=beta)

    @classmethod
    def l1(cls) -> "DistanceFn":
        return cls("l1")

    @classmethod
    def huber(cls, delta: float) -> "DistanceFn":
        return cls("huber", delta=delta)

    @classmethod
    def pseudo_huber(cls, c: float) -> "DistanceFn":
        return cls("pseudo_huber", c=c)

    def value(self, y):
        return value(self, y)

    def derivative(self, y):
        return derivative(self, y)


def default_pseudo_huber_c(dim: int) -> float:
    """Transition scale growing with dimension: c = 0.1·√dim."""
    return 0.1 * float(np.sqrt(dim))


def _last_axis_sum(y):
    if isinstance(y, Tensor):
        return T.tsum(y, axis=y.data.ndim - 1)
    return y.sum(axis=-1)


def _as_column_like(reduced, y):
    """Reshape a last-axis reduction so it broadcasts back against y."""
    if isinstance(y, Tensor):
        if y.data.ndim == 1:
            return reduced
        return T.reshape(reduced, (-1, 1))
    if np.ndim(y) == 1:
        return reduced
    return np.asarray(reduced)[..., None]


def value(d: DistanceFn, y):
    """d(y), reduced over the last axis; batch inputs give per-row values."""
    if d.tag == "l2":
        sq = T.square(y) if isinstance(y, Tensor) else np.square(y)
        return _last_axis_sum(sq)
    if d.tag == "power":
        # alpha is even, so y**alpha == |y|**alpha
        p = T.powi(y, d.alpha) if isinstance(y, Tensor) else y**d.alpha
        return _last_axis_sum(p)
    if d.tag == "exp_power":
        p = T.powi(y, d.alpha) if isinstance(y, Tensor) else y**d.alpha
        s = _last_axis_sum(p)
        if isinstance(y, Tensor):
            return T.exp(s * d.beta) - 1.0
        return np.exp(d.beta * s) - 1.0
    if d.tag == "l1":
        a = T.absolute(y) if isinstance(y, Tensor) else np.abs(y)
        return _last_axis_sum(a)
    if d.tag == "huber":
        if isinstance(y, Tensor):
            a = T.absolute(y)
            small = T.square(y) * 0.5
            large = (a - 0.5 * d.delta) * d.delta
            inside = (np.abs(y.data) <= d.delta).astype(np.float64)
            per = small * inside + large * (1.0 - inside)
            return _last_axis_sum(per)
        a = np.abs(y)
        per = np.where(a <= d.delta, 0.5 * np.square(y), d.delta * (a - 0.5 * d.delta))
        return per.sum(axis=-1)
    # pseudo_huber
    sq = T.square(y) if isinstance(y, Tensor) else np.square(y)
    s = _last_axis_sum(sq)
    if isinstance(y, Tensor):
        return T.sqrt(s + d.c * d.c) - d.c
    return np.sqrt(s + d.c * d.c) - d.c


def derivative(d: DistanceFn, y):
    """∇_y d(y), same shape as y; subgradient 0 at kinks (sign(0) = 0)."""
    if d.tag == "l2":
        return y * 2.0
    if d.tag == "power":
        p = T.powi(y, d.alpha - 1) if isinstance(y, Tensor) else y ** (d.alpha - 1)
        return p * float(d.alpha)
    if d.tag == "exp_power":
        p = T.powi(y, d.alpha) if isinstance(y, Tensor) else y**d.alpha
        s = _last_axis_sum(p)
        if isinstance(y, Tensor):
            scale = T.exp(s * d.beta) * (d.alpha * d.beta)
        else:
            scale = d.alpha * d.beta * np.exp(d.beta * s)
        pm1 = T.powi(y, d.alpha - 1) if isinstance(y, Tensor) else y ** (d.alpha - 1)
        return pm1 * _as_column_like(scale, y)
    if d.tag == "l1":
        return T.sign(y) if isinstance(y, Tensor) else np.sign(y)
    if d.tag == "huber":
        if isinstance(y, Tensor):
            return T.clip(y, -d.delta, d.delta)
        return np.clip(y, -d.delta, d.delta)
    # pseudo_huber
    sq = T.square(y) if isinstance(y, Tensor) else np.square(y)
    s = _last_axis_sum(sq)
    if isinstance(y, Tensor):
        root = T.sqrt(s + d.c * d.c)
    else:
        root = np.sqrt(s + d.c * d.c)
    return y / _as_column_like(root, y)
