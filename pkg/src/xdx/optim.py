"""Adam and rectified-Adam updates, classification losses, and the
reduce-on-plateau learning-rate schedule.

Weight decay is the coupled L2 form (added to the gradient) for both
optimizers. Epsilon is added to the square root of the bias-corrected
second moment, outside the root.
"""

from __future__ import annotations

import math
from typing import Iterable, Optional, Sequence

import numpy as np

from . import engine
from .engine import Tensor


class _MomentOptimizer:
    """Shared state: step counter and per-parameter first/second moments."""

    def __init__(self, params: Sequence[Tensor], lr: float, beta1: float, beta2: float,
                 eps: float, weight_decay: float):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise ValueError(f"betas must lie in (0,1), got ({beta1}, {beta2})")
        if weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {weight_decay}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def _gradients(self) -> list:
        grads = []
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ValueError(f"parameter {i} has no gradient")
            if p.grad.shape != p.data.shape:
                raise ValueError(
                    f"gradient shape {p.grad.shape} does not match parameter shape {p.data.shape}"
                )
            g = p.grad
            if self.weight_decay != 0.0:
                g = g + self.weight_decay * p.data
            grads.append(g)
        return grads

    def _update_moments(self, grads: list) -> None:
        for i, g in enumerate(grads):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)


class Adam(_MomentOptimizer):
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        super().__init__(params, lr, beta1, beta2, eps, weight_decay)

    def step(self) -> None:
        grads = self._gradients()
        self.t += 1
        self._update_moments(grads)
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def radam_rectification(t: int, beta2: float):
    """(rho_t, r_t): the variance-tractability measure and the rectification
    factor, or r_t=None while rho_t <= 4 (momentum-only regime)."""
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    b2t = beta2**t
    rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t)
    if rho_t <= 4.0:
        return rho_t, None
    r_t = math.sqrt(
        ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
        / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)
    )
    return rho_t, r_t


class RAdam(_MomentOptimizer):
    """Adam with rectified adaptive learning rate.

    While the variance of the adaptive term is intractable (rho_t <= 4)
    the update is momentum-only: param -= lr * m_hat. Once rho_t > 4 the
    bias-corrected adaptive step is scaled by the rectification factor.
    """

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        super().__init__(params, lr, beta1, beta2, eps, weight_decay)

    def step(self) -> None:
        grads = self._gradients()
        self.t += 1
        self._update_moments(grads)
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        _, r_t = radam_rectification(self.t, self.beta2)
        for i, p in enumerate(self.params):
            m_hat = self.m[i] / bc1
            if r_t is None:
                p.data -= self.lr * m_hat
            else:
                v_hat = np.sqrt(self.v[i] / bc2)
                p.data -= self.lr * r_t * m_hat / (v_hat + self.eps)


def make_optimizer(kind: str, params, lr: float, beta1=0.9, beta2=0.999, eps=1e-8,
                   weight_decay=0.0):
    if kind == "adam":
        return Adam(params, lr, beta1, beta2, eps, weight_decay)
    if kind == "radam":
        return RAdam(params, lr, beta1, beta2, eps, weight_decay)
    raise ValueError(f"unknown optimizer kind {kind!r}")


# -- losses ---------------------------------------------------------------------


def bce_loss(logits: Tensor, targets: Tensor) -> Tensor:
    """Mean binary cross-entropy from logits.

    Computed as mean(softplus(z) - z*y), the overflow-safe equivalent of
    -[y log sigma(z) + (1-y) log(1-sigma(z))]. Targets must be exactly
    0 or 1.
    """
    if logits.shape != targets.shape:
        raise ValueError(f"shape mismatch: logits {tuple(logits.shape)} vs targets {tuple(targets.shape)}")
    tvals = targets.data
    if not np.all((tvals == 0.0) | (tvals == 1.0)):
        bad = tvals[(tvals != 0.0) & (tvals != 1.0)].reshape(-1)[0]
        raise ValueError(f"BCE targets must be 0 or 1, found {bad}")
    return engine.mean(engine.softplus(logits) - logits * targets)


def ce_loss(logits: Tensor, target_index) -> Tensor:
    """Cross-entropy from logits: -log softmax(logits)[target].

    Accepts a 1-D logits vector with an int target, or a 2-D [N, C] batch
    with a length-N index sequence; batch losses are averaged. Stabilized
    with log-sum-exp.
    """
    if logits.ndim == 1:
        z = engine.reshape(logits, (1, logits.shape[0]))
        idx = np.asarray([int(target_index)])
    elif logits.ndim == 2:
        z = logits
        idx = np.asarray([int(i) for i in target_index])
        if idx.shape[0] != logits.shape[0]:
            raise ValueError(f"{logits.shape[0]} rows but {idx.shape[0]} targets")
    else:
        raise ValueError(f"ce_loss expects 1-D or 2-D logits, got shape {tuple(logits.shape)}")
    n, c = z.shape
    if np.any(idx < 0) or np.any(idx >= c):
        bad = idx[(idx < 0) | (idx >= c)][0]
        raise IndexError(f"target index {bad} out of range for {c} classes")

    zd = z.data
    zmax = zd.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(zd - zmax).sum(axis=1))
    picked = zd[np.arange(n), idx]
    data = np.asarray((lse - picked).mean())

    def backward(g):
        soft = np.exp(zd - zmax)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[np.arange(n), idx] -= 1.0
        return (g * soft / n,)

    out = Tensor._from_op(data, (z,), backward, "ce_loss")
    return out


# -- learning-rate schedule ----------------------------------------------------------


class PlateauScheduler:
    """Reduce the learning rate when a monitored metric stops improving.

    Mode is 'min': improvement means strictly smaller. After more than
    ``patience`` consecutive non-improving epochs the rate is multiplied
    by ``factor`` (floored at ``min_lr``) and the counter resets.
    """

    def __init__(self, factor: float = 0.1, patience: int = 3, min_lr: float = 0.0):
        if not 0 < factor < 1:
            raise ValueError(f"factor must lie in (0,1), got {factor}")
        if patience < 0:
            raise ValueError(f"patience must be >= 0, got {patience}")
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best: Optional[float] = None
        self.num_bad_epochs = 0

    def step(self, metric: float, optimizer) -> float:
        """Feed one epoch's validation metric; returns the (possibly
        reduced) learning rate. NaN metrics are rejected."""
        metric = float(metric)
        if math.isnan(metric):
            raise ValueError("plateau scheduler received NaN metric")
        if self.best is None or metric < self.best:
            self.best = metric
            self.num_bad_epochs = 0
        else:
            self.num_bad_epochs += 1
            if self.num_bad_epochs > self.patience:
                optimizer.lr = max(optimizer.lr * self.factor, self.min_lr)
                self.num_bad_epochs = 0
        return optimizer.lr


def scheduler_step(sched: PlateauScheduler, metric: float, state) -> float:
    return sched.step(metric, state)
