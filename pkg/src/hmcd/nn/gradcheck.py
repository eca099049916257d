"""Finite-difference verification of analytic gradients.

Central differences in float64 with h = 1e-5 put the numerical error floor
around 1e-10 for losses of order one, leaving four orders of magnitude of
headroom below the 1e-4 acceptance threshold. The relative error denominator
is floored at 1e-3: below that scale the comparison degenerates into
absolute error against FD noise and would flag healthy gradients, while any
actual backward bug shows up orders of magnitude above the floor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import Tensor, grad

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
_REL_FLOOR = 1e-3


@dataclass
class BlockReport:
    name: str
    max_rel_err: float
    max_abs_err: float
    worst_index: tuple[int, ...]


@dataclass
class GradCheckReport:
    blocks: list[BlockReport]
    tolerance: float

    @property
    def max_rel_err(self) -> float:
        return max((b.max_rel_err for b in self.blocks), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance

    def summary(self) -> str:
        lines = [
            f"{b.name}: max_rel={b.max_rel_err:.3e} max_abs={b.max_abs_err:.3e}"
            for b in self.blocks
        ]
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"{verdict}: max relative error {self.max_rel_err:.3e} vs tolerance {self.tolerance:.0e}")
        return "\n".join(lines)


def gradient_check(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn`` against central differences.

    ``loss_fn`` must rebuild the graph on every call and close over
    ``params``; each parameter element is perturbed in place by +-h. Every
    element of every block is checked, so keep the shapes small.
    """
    names = list(params)
    tensors = [params[n] for n in names]
    analytic = grad(loss_fn(), tensors)
    blocks: list[BlockReport] = []
    for name, p, a in zip(names, tensors, analytic):
        a = a.data
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            f_plus = float(loss_fn().data)
            flat[j] = orig - h
            f_minus = float(loss_fn().data)
            flat[j] = orig
            num_flat[j] = (f_plus - f_minus) / (2.0 * h)
        abs_err = np.abs(a - numeric)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), _REL_FLOOR)
        rel = abs_err / denom
        worst = int(np.argmax(rel))
        blocks.append(
            BlockReport(
                name=name,
                max_rel_err=float(rel.reshape(-1)[worst]),
                max_abs_err=float(abs_err.max()),
                worst_index=tuple(int(i) for i in np.unravel_index(worst, p.data.shape)),
            )
        )
    return GradCheckReport(blocks=blocks, tolerance=tolerance)
