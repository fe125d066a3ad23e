from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stresslab.autodiff.tensor import Parameter


@dataclass(frozen=True)
class ExponentialDecay:
    """``lr(step) = lr0 * gamma ** (step / decay_steps)`` (continuous, not staircase).

    ``step`` counts completed updates, so the first update uses ``lr0``.
    """

    lr0: float = 1e-3
    gamma: float = 0.97
    decay_steps: int = 100

    def __call__(self, step: int) -> float:
        return self.lr0 * self.gamma ** (step / self.decay_steps)


class Adam:
    def __init__(self, params: list[Parameter], schedule: ExponentialDecay = ExponentialDecay(),
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.schedule = schedule
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0

    @property
    def lr(self) -> float:
        return self.schedule(self.step_count)

    def step(self) -> None:
        """Apply one update from the ``.grad`` of each parameter (missing grads count as zero)."""
        lr = self.schedule(self.step_count)
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**t
        c2 = 1.0 - b2**t
        step = lr / c1
        for p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            p.m *= b1
            p.m += (1.0 - b1) * g
            p.v *= b2
            p.v += (1.0 - b2) * np.square(g)
            # lr * m_hat / (sqrt(v_hat) + eps) with the bias corrections folded in
            denom = np.sqrt(p.v / c2)
            denom += self.eps
            upd = p.m * step
            upd /= denom
            p.data -= upd.astype(p.data.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
