"""Central-difference gradient checking shared by every trainable model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    worst: tuple | None  # (param name, index) of the largest relative error
    failing: tuple | None  # first coordinate over tolerance, if any
    n_checked: int

    def __bool__(self) -> bool:
        return self.passed


def check_gradients(
    params: dict[str, np.ndarray],
    loss_fn: Callable[[], float],
    analytic: dict[str, np.ndarray],
    h: float = 1e-5,
    tol: float = 1e-4,
    atol: float = 1e-7,
) -> GradCheckReport:
    """Check ``analytic`` against ``(L(theta + h e) - L(theta - h e)) / 2h``.

    ``loss_fn`` is evaluated with ``params`` perturbed in place, one
    coordinate at a time, and every coordinate is restored afterwards.
    A coordinate passes when ``|a - n| <= max(tol * max(|a|, |n|), atol)``.
    """
    if not h > 0:
        raise ValueError(f"step h must be positive, got {h}")
    if not tol > 0:
        raise ValueError(f"tolerance must be positive, got {tol}")

    max_rel, worst, failing, n = 0.0, None, None, 0
    for name, theta in params.items():
        a_grad = analytic.get(name)
        if a_grad is None:
            a_grad = np.zeros_like(theta)
        if a_grad.shape != theta.shape:
            raise ValueError(f"analytic gradient for {name!r} has shape {a_grad.shape}, expected {theta.shape}")
        for idx in np.ndindex(theta.shape):
            orig = theta[idx]
            theta[idx] = orig + h
            up = loss_fn()
            theta[idx] = orig - h
            down = loss_fn()
            theta[idx] = orig
            numeric = (up - down) / (2.0 * h)
            a = float(a_grad[idx])
            err = abs(a - numeric)
            scale = max(abs(a), abs(numeric))
            rel = err / scale if scale > 0 else 0.0
            n += 1
            if scale > atol and rel > max_rel:
                max_rel, worst = rel, (name, idx)
            if failing is None and err > max(tol * scale, atol):
                failing = (name, idx)
    return GradCheckReport(failing is None, max_rel, worst, failing, n)
