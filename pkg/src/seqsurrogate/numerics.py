"""Float64 array substrate: affine maps, activations, losses, Adam, gradient checks, seeded streams.

Matrices are plain 2-D float64 numpy arrays in row-major order; column
vectors are (n, 1) matrices. Batched variants use (n, B) with one column
per batch member. Everything runs in 64-bit arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import NonFiniteError, ShapeMismatchError, ValidationError

ACTIVATION_KINDS = ("sigmoid", "tanh", "relu", "linear")

_STREAM_MIX = 0x9E3779B97F4A7C15


def affine(w: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return ``w @ x + b`` for w (m, n), x (n, k), b (m, 1)."""
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    b = np.asarray(b, dtype=float)
    if w.ndim != 2 or x.ndim != 2 or b.ndim != 2:
        raise ShapeMismatchError(
            f"affine: operands must be 2-D, got W{w.shape} x{x.shape} b{b.shape}"
        )
    if w.shape[1] != x.shape[0] or b.shape != (w.shape[0], 1):
        raise ShapeMismatchError(
            f"affine: incompatible shapes W{w.shape} x{x.shape} b{b.shape}"
        )
    return w @ x + b


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def activation(kind: str, x: np.ndarray) -> np.ndarray:
    """Elementwise activation of ``kind`` applied to a finite array."""
    x = _checked_activation_input(kind, x)
    if kind == "sigmoid":
        return expit(x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    return x.copy()


def activation_derivative(kind: str, x: np.ndarray) -> np.ndarray:
    """Elementwise derivative of the activation, evaluated at ``x``."""
    x = _checked_activation_input(kind, x)
    if kind == "sigmoid":
        s = expit(x)
        return s * (1.0 - s)
    if kind == "tanh":
        t = np.tanh(x)
        return 1.0 - t * t
    if kind == "relu":
        return (x > 0.0).astype(float)
    return np.ones_like(x)


def _checked_activation_input(kind: str, x) -> np.ndarray:
    if kind not in ACTIVATION_KINDS:
        raise ValidationError(f"unknown activation kind '{kind}'")
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"activation '{kind}': non-finite input")
    return x


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean squared difference over all entries."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"mse: pred{pred.shape} vs target{target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


@dataclass
class ParamGroup:
    """Named trainable array paired with its gradient accumulator."""

    name: str
    value: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=float)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        else:
            self.grad = np.asarray(self.grad, dtype=float)
            if self.grad.shape != self.value.shape:
                raise ShapeMismatchError(
                    f"param '{self.name}': grad{self.grad.shape} vs value{self.value.shape}"
                )

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


@dataclass
class AdamState:
    """Adam moment estimates, one slot per parameter group."""

    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(
        cls,
        params: Sequence[ParamGroup],
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> "AdamState":
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate parameter names: {sorted(names)}")
        return cls(
            step=0,
            m={p.name: np.zeros_like(p.value) for p in params},
            v={p.name: np.zeros_like(p.value) for p in params},
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(params: Sequence[ParamGroup], state: AdamState, learn_rate: float) -> None:
    """Apply one in-place bias-corrected Adam update from accumulated gradients."""
    state.step += 1
    t = state.step
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p in params:
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"adam_step: non-finite gradient in parameter '{p.name}'")
        m = state.m[p.name]
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.value -= learn_rate * (m / c1) / (np.sqrt(v / c2) + eps)


def grad_check(
    loss_fn: Callable[[Sequence[ParamGroup]], float],
    params: Sequence[ParamGroup],
    probe_eps: float = 1e-6,
) -> float:
    """Compare each stored analytic gradient entry against a central difference.

    ``loss_fn`` must be a deterministic function of the parameter values; the
    analytic gradients are read from each group's ``grad`` field as populated
    by the caller. Returns the worst relative deviation
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    if probe_eps <= 0:
        raise ValidationError("grad_check: probe_eps must be positive")
    worst = 0.0
    for p in params:
        flat_value = p.value.reshape(-1)
        flat_grad = p.grad.reshape(-1)
        for i in range(flat_value.size):
            saved = flat_value[i]
            flat_value[i] = saved + probe_eps
            loss_plus = loss_fn(params)
            flat_value[i] = saved - probe_eps
            loss_minus = loss_fn(params)
            flat_value[i] = saved
            numeric = (loss_plus - loss_minus) / (2.0 * probe_eps)
            analytic = flat_grad[i]
            dev = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, dev)
    return worst


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream: (seed, stream) fully determines all draws.

    Backed by the Philox generator, so identical (seed, stream) pairs yield
    identical sequences on every platform for a given numpy version, and
    distinct stream ids are statistically independent.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed % 2**64, self.stream % 2**64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, stream_id: int) -> "RngStream":
        mixed = (self.stream * _STREAM_MIX + stream_id + 1) % 2**64
        return RngStream(self.seed, mixed)


def as_generator(rng) -> np.random.Generator:
    """Accept either an RngStream or a live numpy Generator."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")
