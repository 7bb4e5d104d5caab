"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    passed: bool
    max_error: float
    worst_input: int | None = None
    worst_index: tuple[int, ...] | None = None
    analytic: float | None = None
    numeric: float | None = None
    per_input: list[float] = field(default_factory=list)

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        where = ""
        if self.worst_input is not None:
            where = (f" at input {self.worst_input} index {self.worst_index}"
                     f" (analytic={self.analytic:.6g}, numeric={self.numeric:.6g})")
        return f"grad_check {status}: max relative error {self.max_error:.3g}{where}"


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], tolerance: float = 1e-4,
               step: float = 1e-5, seed: int = 0, floor: float = 1e-3) -> GradCheckReport:
    """Compare the backward pass of ``fn`` against central differences.

    ``fn`` maps tensors (one per array in ``inputs``) to a tensor of any
    shape; it is reduced to a scalar by a fixed random projection so that
    every output element contributes. The per-element error is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    rng = np.random.default_rng(seed)

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*leaves)
    weights = rng.standard_normal(out.shape)

    def objective(values: list[np.ndarray]) -> float:
        res = fn(*[Tensor(v) for v in values])
        return float(np.sum(res.data * weights))

    out.backward(weights.astype(out.dtype))

    report = GradCheckReport(passed=True, max_error=0.0)
    for i, (leaf, base) in enumerate(zip(leaves, arrays)):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)
        numeric = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[i][idx] += step
            minus[i][idx] -= step
            numeric[idx] = (objective(plus) - objective(minus)) / (2 * step)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        err = np.abs(analytic - numeric) / denom
        worst = float(err.max()) if err.size else 0.0
        report.per_input.append(worst)
        if worst > report.max_error:
            loc = np.unravel_index(int(np.argmax(err)), err.shape)
            report.max_error = worst
            report.worst_input = i
            report.worst_index = tuple(int(j) for j in loc)
            report.analytic = float(analytic[loc])
            report.numeric = float(numeric[loc])
    report.passed = report.max_error <= tolerance
    return report
