"""Dense layers with a per-call gradient tape, and an Adam optimizer.

Matrices are plain float64 numpy arrays. Parameter values are kept on the
float32 grid (every write goes through :func:`f32_grid`) so checkpoints,
which store float32 blobs, reproduce them bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import DimensionError, NumericError, StateError


def f32_grid(a) -> np.ndarray:
    """Round to the nearest float32 and return as float64 (out-of-range values become inf)."""
    with np.errstate(over="ignore"):
        return np.asarray(a, dtype=np.float32).astype(np.float64)


def check_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {what}")


def make_rng(seed: int, *stream) -> np.random.Generator:
    """Seeded PCG64 generator; extra ints select an independent substream."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *stream])


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def restore_rng(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)


@dataclass(eq=False)
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = f32_grid(self.value)
        if self.value.ndim != 2:
            raise DimensionError(f"parameter {self.name} must be 2-D, got {self.value.shape}")
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


class Tape:
    """Records backward closures during a forward pass.

    Each closure takes the gradient w.r.t. its op's output, accumulates
    parameter gradients, and returns the gradient w.r.t. its input.
    """

    def __init__(self):
        self._ops: list[Callable[[np.ndarray], np.ndarray]] = []

    def record(self, fn: Callable[[np.ndarray], np.ndarray]) -> None:
        self._ops.append(fn)

    def __len__(self) -> int:
        return len(self._ops)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if not self._ops:
            raise StateError("backward called without a recorded forward pass")
        ops, self._ops = self._ops, []
        for fn in reversed(ops):
            grad = fn(grad)
        return grad


def linear_forward(x: np.ndarray, weight: Parameter, bias: Parameter,
                   tape: Tape | None = None) -> np.ndarray:
    """``x @ W + b``; ``x`` is (B, a), ``W`` is (a, b), ``b`` is (1, b)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(
            f"{weight.name}: input shape {x.shape} does not match weight {weight.shape}")
    if bias.shape != (1, weight.shape[1]):
        raise DimensionError(f"{bias.name}: bias shape {bias.shape} != (1, {weight.shape[1]})")
    check_finite(x, f"input to {weight.name}")
    out = x @ weight.value + bias.value
    check_finite(out, f"output of {weight.name}")
    if tape is not None:
        def back(g):
            weight.grad += x.T @ g
            bias.grad += g.sum(axis=0, keepdims=True)
            return g @ weight.value.T
        tape.record(back)
    return out


def relu_forward(x: np.ndarray, tape: Tape | None = None) -> np.ndarray:
    mask = x > 0
    if tape is not None:
        tape.record(lambda g: g * mask)
    return np.where(mask, x, 0.0)


class Mlp:
    """Two affine layers with a rectifier between: ``n_in -> hidden -> n_out``."""

    def __init__(self, name: str, n_in: int, hidden: int, n_out: int,
                 rng: np.random.Generator):
        # He-uniform for the rectified layer, Glorot-uniform for the output layer.
        lim1 = np.sqrt(6.0 / n_in)
        lim2 = np.sqrt(6.0 / (hidden + n_out))
        self.w1 = Parameter(f"{name}.w1", rng.uniform(-lim1, lim1, (n_in, hidden)))
        self.b1 = Parameter(f"{name}.b1", np.zeros((1, hidden)))
        self.w2 = Parameter(f"{name}.w2", rng.uniform(-lim2, lim2, (hidden, n_out)))
        self.b2 = Parameter(f"{name}.b2", np.zeros((1, n_out)))
        self.n_in, self.n_out = n_in, n_out

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2]

    def __call__(self, x: np.ndarray, tape: Tape | None = None) -> np.ndarray:
        h = relu_forward(linear_forward(x, self.w1, self.b1, tape), tape)
        return linear_forward(h, self.w2, self.b2, tape)


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: Iterable[Parameter], lr: float = 1e-3,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
              step: int = 1) -> None:
    """One bias-corrected Adam update; gradients are zeroed afterwards.

    A parameter whose gradient is identically zero is skipped (values and
    moments untouched), the same as a parameter that received no gradient.
    """
    if step < 1:
        raise ValueError("adam step count starts at 1")
    params = list(params)
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in parameter {p.name}")
    b1, b2 = betas
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    staged = []
    for p in params:
        g = p.grad
        if not g.any():
            continue
        m = f32_grid(b1 * p.m + (1.0 - b1) * g)
        v = f32_grid(b2 * p.v + (1.0 - b2) * g * g)
        value = f32_grid(p.value - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(value))):
            raise NumericError(f"parameter {p.name} diverged (non-finite after update)")
        staged.append((p, m, v, value))
    # commit only once every parameter is known to be finite
    for p, m, v, value in staged:
        p.m, p.v, p.value = m, v, value
    for p in params:
        p.zero_grad()
