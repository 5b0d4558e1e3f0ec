"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import Tensor, backward, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(err <= self.tolerance for err in self.max_rel_error.values())

    def failures(self) -> list[str]:
        return [n for n, err in self.max_rel_error.items() if err > self.tolerance]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-8) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, atol)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def numeric_grad(loss_fn: Callable[[], Tensor], param: Tensor, step: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn().item()
            flat[i] = orig - step
            down = loss_fn().item()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
    return grad


def analytic_grads(loss_fn: Callable[[], Tensor], params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    for p in params.values():
        p.grad = None
    backward(loss_fn())
    return {n: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for n, p in params.items()}


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    atol: float = 1e-8,
    corrupt: Callable[[str, np.ndarray], np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare backprop gradients of ``loss_fn()`` with central differences.

    ``loss_fn`` must rebuild the graph from the current parameter values on
    each call. ``corrupt`` lets tests inject a fault into the analytic side.
    """
    analytic = analytic_grads(loss_fn, params)
    errors = {}
    for name, p in params.items():
        a = analytic[name] if corrupt is None else corrupt(name, analytic[name])
        errors[name] = relative_error(a, numeric_grad(loss_fn, p, step), atol)
    return GradCheckReport(errors, tolerance)
