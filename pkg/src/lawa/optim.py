"""Optimizers and learning-rate schedules for the training engine.

SGD uses the heavy-ball convention (v = mu*v + g; theta -= lr*v), Adam is
the bias-corrected variant with its usual constants, and Lookahead wraps
either of them, pulling fast weights back onto the slow weights every
``k`` inner steps. Optimizer state mutates in place across calls, but the
parameter sets going in and out are immutable values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NonFiniteGradError
from .params import ParameterSet, check_same_structure

DEFAULT_MOMENTUM = 0.9
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_ADAM_EPS = 1e-8
DEFAULT_LOOKAHEAD_ALPHA = 0.8
DEFAULT_LOOKAHEAD_K = 5


def _check_grads(params: ParameterSet, grads: ParameterSet) -> None:
    check_same_structure(params, grads)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradError(f"gradient entry {name!r} contains NaN or Inf")


class Sgd:
    """Stochastic gradient descent with heavy-ball momentum."""

    def __init__(self, momentum: float = DEFAULT_MOMENTUM):
        if momentum < 0.0:
            raise ConfigError(f"momentum must be >= 0, got {momentum}")
        self.momentum = momentum
        self.step_count = 0
        self._velocity: dict[str, np.ndarray] | None = None

    def step(self, params: ParameterSet, grads: ParameterSet, lr: float) -> ParameterSet:
        _check_grads(params, grads)
        if self._velocity is None:
            self._velocity = {
                name: np.zeros_like(arr) for name, arr in params.items()
            }
        new = []
        for name, theta in params.items():
            v = self.momentum * self._velocity[name] + grads[name]
            self._velocity[name] = v
            new.append((name, theta - lr * v))
        self.step_count += 1
        return ParameterSet(new)


class Adam:
    """Adam with bias correction; no weight decay."""

    def __init__(
        self,
        beta1: float = DEFAULT_BETA1,
        beta2: float = DEFAULT_BETA2,
        eps: float = DEFAULT_ADAM_EPS,
    ):
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ConfigError("adam betas must lie in [0, 1)")
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m: dict[str, np.ndarray] | None = None
        self._v: dict[str, np.ndarray] | None = None

    def step(self, params: ParameterSet, grads: ParameterSet, lr: float) -> ParameterSet:
        _check_grads(params, grads)
        if self._m is None:
            self._m = {name: np.zeros_like(arr) for name, arr in params.items()}
            self._v = {name: np.zeros_like(arr) for name, arr in params.items()}
        t = self.step_count + 1
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        new = []
        for name, theta in params.items():
            g = grads[name]
            m = self.beta1 * self._m[name] + (1.0 - self.beta1) * g
            v = self.beta2 * self._v[name] + (1.0 - self.beta2) * g * g
            self._m[name] = m
            self._v[name] = v
            m_hat = m / bc1
            v_hat = v / bc2
            new.append((name, theta - lr * m_hat / (np.sqrt(v_hat) + self.eps)))
        self.step_count = t
        return ParameterSet(new)


class Lookahead:
    """Wrapper keeping slow weights that the fast weights sync back to.

    Every ``k`` inner steps the slow weights move a fraction ``alpha``
    toward the fast weights and the fast weights are reset onto them
    (pullback). Slow weights initialize from the parameters seen at the
    first step call.
    """

    def __init__(
        self,
        inner: Sgd | Adam,
        alpha: float = DEFAULT_LOOKAHEAD_ALPHA,
        k: int = DEFAULT_LOOKAHEAD_K,
    ):
        if not 0.0 <= alpha <= 1.0:
            raise ConfigError(f"lookahead alpha must lie in [0, 1], got {alpha}")
        if k < 1:
            raise ConfigError(f"lookahead k must be >= 1, got {k}")
        self.inner = inner
        self.alpha = alpha
        self.k = k
        self.step_count = 0
        self.inner_counter = 0
        self._slow: dict[str, np.ndarray] | None = None

    def step(self, params: ParameterSet, grads: ParameterSet, lr: float) -> ParameterSet:
        if self._slow is None:
            self._slow = {name: arr.copy() for name, arr in params.items()}
        fast = self.inner.step(params, grads, lr)
        self.inner_counter += 1
        self.step_count += 1
        if self.inner_counter == self.k:
            self.inner_counter = 0
            synced = []
            for name, theta in fast.items():
                phi = self._slow[name] + self.alpha * (theta - self._slow[name])
                self._slow[name] = phi
                synced.append((name, phi))
            return ParameterSet(synced)
        return fast


def make_optimizer(
    kind: str,
    momentum: float = DEFAULT_MOMENTUM,
    beta1: float = DEFAULT_BETA1,
    beta2: float = DEFAULT_BETA2,
    adam_eps: float = DEFAULT_ADAM_EPS,
    lookahead_alpha: float = DEFAULT_LOOKAHEAD_ALPHA,
    lookahead_k: int = DEFAULT_LOOKAHEAD_K,
    lookahead_inner: str = "sgd",
) -> Sgd | Adam | Lookahead:
    if kind == "sgd":
        return Sgd(momentum=momentum)
    if kind == "adam":
        return Adam(beta1=beta1, beta2=beta2, eps=adam_eps)
    if kind == "lookahead":
        if lookahead_inner == "sgd":
            inner: Sgd | Adam = Sgd(momentum=momentum)
        elif lookahead_inner == "adam":
            inner = Adam(beta1=beta1, beta2=beta2, eps=adam_eps)
        else:
            raise ConfigError(f"unknown lookahead inner optimizer {lookahead_inner!r}")
        return Lookahead(inner, alpha=lookahead_alpha, k=lookahead_k)
    raise ConfigError(f"unknown optimizer {kind!r}")


@dataclass(frozen=True)
class ConstantSchedule:
    base: float

    def lr_at(self, t: int) -> float:
        return self.base


@dataclass(frozen=True)
class CosineSchedule:
    """Half-cosine decay from ``base`` at t=0 to 0 at t=total_steps."""

    base: float
    total_steps: int

    def lr_at(self, t: int) -> float:
        t = min(t, self.total_steps)
        return self.base * 0.5 * (1.0 + math.cos(math.pi * t / self.total_steps))


@dataclass(frozen=True)
class PolyWarmupSchedule:
    """Linear warmup to ``peak`` over ``warmup_steps``, then polynomial decay.

    After warmup the rate decays as
    ``end + (peak - end) * (1 - (t - W) / (T - W)) ** power``; beyond
    ``total_steps`` it stays clamped at the final value.
    """

    peak: float
    total_steps: int
    warmup_steps: int
    end: float = 0.0
    power: float = 1.0

    def __post_init__(self):
        if self.warmup_steps > self.total_steps:
            raise ConfigError(
                f"warmup steps {self.warmup_steps} exceed total steps {self.total_steps}"
            )

    def lr_at(self, t: int) -> float:
        t = min(t, self.total_steps)
        if t < self.warmup_steps:
            return self.peak * t / self.warmup_steps
        if self.total_steps == self.warmup_steps:
            return self.peak
        frac = (t - self.warmup_steps) / (self.total_steps - self.warmup_steps)
        return self.end + (self.peak - self.end) * (1.0 - frac) ** self.power


LrSchedule = ConstantSchedule | CosineSchedule | PolyWarmupSchedule


def make_schedule(
    kind: str,
    lr: float,
    total_steps: int,
    warmup_steps: int = 0,
    end_lr: float = 0.0,
    power: float = 1.0,
) -> LrSchedule:
    if lr < 0.0:
        raise ConfigError(f"learning rate must be >= 0, got {lr}")
    if kind == "constant":
        return ConstantSchedule(lr)
    if kind == "cosine":
        if total_steps < 1:
            raise ConfigError("cosine schedule needs total_steps >= 1")
        return CosineSchedule(lr, total_steps)
    if kind == "poly_warmup":
        if total_steps < 1:
            raise ConfigError("poly_warmup schedule needs total_steps >= 1")
        return PolyWarmupSchedule(
            peak=lr,
            total_steps=total_steps,
            warmup_steps=warmup_steps,
            end=end_lr,
            power=power,
        )
    raise ConfigError(f"unknown schedule {kind!r}")
