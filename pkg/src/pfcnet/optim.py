"""Trainable parameters, the Adam update, and a finite-difference checker."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .tensor import Tensor, backward, no_grad


class Parameter:
    """A trainable tensor bundled with its Adam state.

    The gradient accumulator lives on .value.grad; adam_m and adam_v are
    the first/second moment estimates. All four arrays share one shape.
    """

    __slots__ = ("value", "adam_m", "adam_v", "step_count")

    def __init__(self, data, dtype=None):
        value = data if isinstance(data, Tensor) else Tensor(data, dtype=dtype)
        value.requires_grad = True
        self.value = value
        self.adam_m = np.zeros_like(value.data)
        self.adam_v = np.zeros_like(value.data)
        self.step_count = 0

    @property
    def shape(self):
        return self.value.shape

    @property
    def grad(self):
        return self.value.grad

    def clear_grad(self):
        self.value.grad = None

    def __repr__(self):
        return f"Parameter(shape={self.shape}, steps={self.step_count})"


def adam_step(p: Parameter, lr: float, beta1: float = 0.5, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One Adam update with bias correction.

    Leaves the gradient buffer intact; clearing it is the trainer's job.
    """
    if p.grad is None:
        raise ContractError("adam_step called on a parameter with no gradient")
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ContractError(f"betas must lie in [0,1), got ({beta1}, {beta2})")
    g = p.grad
    p.step_count += 1
    t = p.step_count
    p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
    p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * (g * g)
    m_hat = p.adam_m / (1.0 - beta1 ** t)
    v_hat = p.adam_v / (1.0 - beta2 ** t)
    p.value.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class GradCheckReport:
    """Outcome of one finite-difference comparison. Reports, never asserts."""

    max_rel_error: float
    worst_index: tuple
    analytic: np.ndarray
    numeric: np.ndarray
    rel_errors: np.ndarray
    rtol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.rtol


def grad_check(f, x: Tensor, rtol: float = 1e-4, step: float = 1e-5) -> GradCheckReport:
    """Compare backward() gradients of scalar f(x) with central differences.

    Runs in float64 regardless of the input dtype. The per-element error
    is |analytic - numeric| / max(|analytic|, |numeric|, 1), so near-zero
    gradients are compared absolutely.
    """
    probe = Tensor(x.data.astype(np.float64), requires_grad=True)
    y = f(probe)
    if not isinstance(y, Tensor) or y.data.size != 1:
        raise ContractError("grad_check needs a scalar-valued function")
    backward(y)
    analytic = probe.grad.copy() if probe.grad is not None else np.zeros_like(probe.data)

    numeric = np.zeros_like(probe.data)
    with no_grad():
        d = probe.data
        for idx in np.ndindex(*d.shape):
            orig = d[idx]
            d[idx] = orig + step
            fp = float(f(probe).data)
            d[idx] = orig - step
            fm = float(f(probe).data)
            d[idx] = orig
            numeric[idx] = (fp - fm) / (2.0 * step)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    rel = np.abs(analytic - numeric) / denom
    if rel.size:
        worst = np.unravel_index(int(rel.argmax()), rel.shape)
        worst_val = float(rel[worst])
    else:
        worst, worst_val = (), 0.0
    return GradCheckReport(
        max_rel_error=worst_val,
        worst_index=worst,
        analytic=analytic,
        numeric=numeric,
        rel_errors=rel,
        rtol=rtol,
    )
