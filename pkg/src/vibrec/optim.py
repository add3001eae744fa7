"""Adagrad with per-coordinate squared-gradient accumulators.

Update for a coordinate with gradient ``g``::

    acc   <- acc + g**2
    theta <- theta - lr * g / (sqrt(acc) + eps)

Gradients may be dense arrays shaped like the parameter, or :class:`RowGrad`
blocks that touch only some rows of a table; untouched rows keep both their
value and their accumulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np


@dataclass
class RowGrad:
    """Gradient for selected rows of a parameter table. ``rows`` must be unique."""

    rows: np.ndarray
    values: np.ndarray


@dataclass
class AdagradState:
    accumulators: dict[str, np.ndarray]
    learning_rate: float
    epsilon: float = 1e-8


def adagrad_init(shapes: Mapping[str, tuple], learning_rate: float, epsilon: float = 1e-8) -> AdagradState:
    if not learning_rate > 0:
        raise ValueError(f"learning rate must be positive, got {learning_rate}")
    if not epsilon >= 0:
        raise ValueError(f"epsilon must be non-negative, got {epsilon}")
    acc = {name: np.zeros(shape, dtype=np.float64) for name, shape in shapes.items()}
    return AdagradState(acc, float(learning_rate), float(epsilon))


def _check_finite(name, g, rows=None):
    if not np.all(np.isfinite(g)):
        bad = np.unravel_index(np.flatnonzero(~np.isfinite(g))[0], g.shape)
        if rows is not None:
            bad = (int(rows[bad[0]]),) + tuple(int(b) for b in bad[1:])
        raise FloatingPointError(f"non-finite gradient for {name!r} at {tuple(int(b) for b in bad)}")


def _ratio(g, acc, eps):
    # g / (sqrt(acc) + eps), with zero-gradient coordinates held at 0 even when eps == 0
    if eps > 0:
        return g / (np.sqrt(acc) + eps)
    return np.divide(g, np.sqrt(acc), out=np.zeros_like(g), where=g != 0)


def adagrad_step(state: AdagradState, params: dict[str, np.ndarray], grads: Mapping[str, object]) -> dict[str, np.ndarray]:
    """Apply one Adagrad step in place and return ``params``.

    Parameters absent from ``grads`` are left alone.
    """
    lr, eps = state.learning_rate, state.epsilon
    for name, g in grads.items():
        theta = params[name]
        acc = state.accumulators[name]
        if isinstance(g, RowGrad):
            if g.values.shape[1:] != theta.shape[1:] or len(g.rows) != len(g.values):
                raise ValueError(f"gradient block for {name!r} has shape {g.values.shape}, table is {theta.shape}")
            _check_finite(name, g.values, g.rows)
            a = acc[g.rows] + g.values * g.values
            acc[g.rows] = a
            theta[g.rows] -= lr * _ratio(g.values, a, eps)
        else:
            g = np.asarray(g, dtype=np.float64)
            if g.shape != theta.shape:
                raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter is {theta.shape}")
            _check_finite(name, g)
            acc += g * g
            theta -= lr * _ratio(g, acc, eps)
    return params


def run_epochs(
    n: int,
    params: dict[str, np.ndarray],
    batch_fn: Callable[[np.ndarray, int, int], tuple[float, dict]],
    *,
    epochs: int,
    batch_size: int,
    learning_rate: float,
    seed: int,
    after_step: Callable[[dict], None] | None = None,
    progress: Callable[[int, float], None] | None = None,
) -> list[float]:
    """Shuffled mini-batch Adagrad over ``n`` training examples.

    ``batch_fn(idx, epoch, step)`` returns the batch loss and its gradients
    (dense or :class:`RowGrad`). Returns the mean per-example loss of each
    epoch. Raises :class:`FloatingPointError` with epoch/step context when
    the loss or a gradient stops being finite.
    """
    state = adagrad_init({name: p.shape for name, p in params.items()}, learning_rate)
    trace = []
    for epoch in range(epochs):
        perm = np.random.default_rng([seed, 1, epoch]).permutation(n)
        total = 0.0
        for step, start in enumerate(range(0, n, batch_size)):
            loss, grads = batch_fn(perm[start:start + batch_size], epoch, step)
            try:
                if not math.isfinite(loss):
                    raise FloatingPointError("non-finite loss")
                adagrad_step(state, params, grads)
            except FloatingPointError as exc:
                raise FloatingPointError(f"epoch {epoch}, step {step}: {exc}") from exc
            if after_step is not None:
                after_step(grads)
            total += loss
        trace.append(total / n)
        if progress is not None:
            progress(epoch, trace[-1])
    return trace
