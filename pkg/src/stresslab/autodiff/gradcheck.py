"""Finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from stresslab.autodiff import ops
from stresslab.autodiff.tensor import Tensor
from stresslab.errors import GradCheckFailed


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    n_checked: int
    worst: str
    per_tensor: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def to_text(self) -> str:
        lines = [
            f"status = {'pass' if self.passed else 'fail'}",
            f"max_rel_error = {self.max_rel_error!r}",
            f"tolerance = {self.tolerance!r}",
            f"n_checked = {self.n_checked}",
            f"worst = {self.worst}",
        ]
        lines += [f"tensor.{k} = {v!r}" for k, v in self.per_tensor.items()]
        return "\n".join(lines) + "\n"


def grad_check(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    tolerance: float = 1e-4,
    n_samples: int = 12,
    h: float = 1e-5,
    seed: int = 0,
    abs_floor: float = 1e-6,
    names: Sequence[str] | None = None,
    raise_on_fail: bool = True,
) -> GradCheckReport:
    """Compare tape gradients of ``loss_fn()`` with central differences.

    Up to ``n_samples`` randomly chosen entries of every tensor are perturbed.
    The error of one entry is ``|a - n| / max(|a|, |n|, abs_floor)``. Tensors
    should be float64 for the comparison to be meaningful.
    """
    rng = np.random.default_rng(seed)
    if names is None:
        names = [getattr(t, "name", f"input{i}") for i, t in enumerate(tensors)]
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    worst, worst_err, count, per = "", 0.0, 0, {}
    for name, t, a in zip(names, tensors, analytic):
        flat = t.data.reshape(-1)
        k = min(n_samples, flat.size)
        idx = rng.choice(flat.size, size=k, replace=False)
        t_err = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(loss_fn().data)
            flat[i] = orig - h
            fm = float(loss_fn().data)
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            ana = float(a.reshape(-1)[i])
            err = abs(ana - num) / max(abs(ana), abs(num), abs_floor)
            t_err = max(t_err, err)
            if err >= worst_err:
                worst_err, worst = err, f"{name}[{int(i)}] analytic={ana!r} numeric={num!r}"
            count += 1
        per[name] = t_err
    report = GradCheckReport(worst_err, tolerance, count, worst, per)
    if raise_on_fail and not report.passed:
        raise GradCheckFailed(f"gradient check failed: {report.worst} (rel. error {worst_err:.3e} >= {tolerance})")
    return report


def check_module(model, inputs: Sequence[Tensor], tolerance: float = 1e-4, seed: int = 0, **kw) -> GradCheckReport:
    """Grad-check ``model(*inputs)`` against a random projection of its output,
    over every parameter and every input tensor."""
    rng = np.random.default_rng(seed + 1)
    out = model(*inputs)
    weights = rng.standard_normal(out.shape)

    def loss():
        return ops.project(model(*inputs), weights)

    params = model.parameters()
    tensors = list(params) + list(inputs)
    names = [p.name for p in params] + [f"input{i}" for i in range(len(inputs))]
    return grad_check(loss, tensors, tolerance=tolerance, seed=seed, names=names, **kw)
