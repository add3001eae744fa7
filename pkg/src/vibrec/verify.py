"""Randomized gradient-check trials for every trainable model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import baselines, vibdml
from .gradcheck import GradCheckReport
from .vibdml import BiasTerms, GaussianEmbeddingTable, NoiseDraw, TrainConfig

KINDS = ("vibdml", "biassvd", "pmf", "metricf")


@dataclass
class Trial:
    kind: str
    index: int
    report: GradCheckReport


def random_instance(kind: str, rng: np.random.Generator):
    """A small random model, a batch over it and (for VIB-DML) fixed noise.

    Batches may repeat users and items so row accumulation is exercised.
    """
    n_users = int(rng.integers(2, 6))
    n_items = int(rng.integers(2, 6))
    k = int(rng.integers(1, 5))
    b = int(rng.integers(1, 9))
    u = rng.integers(0, n_users, b)
    i = rng.integers(0, n_items, b)
    r = rng.uniform(1.0, 5.0, b)
    batch = (u, i, r)
    biases = BiasTerms(rng.normal(0, 0.5, n_users), rng.normal(0, 0.5, n_items), float(rng.uniform(2.5, 4.0)))
    cfg = TrainConfig(k=k)

    if kind == "vibdml":
        model = vibdml.VibDmlModel(
            GaussianEmbeddingTable(rng.normal(0, 1, (n_users, k)), rng.uniform(-2, 1, (n_users, k))),
            GaussianEmbeddingTable(rng.normal(0, 1, (n_items, k)), rng.uniform(-2, 1, (n_items, k))),
            biases, beta_user=float(rng.uniform(0, 1)), beta_item=float(rng.uniform(0, 1)),
            r_min=1.0, r_max=5.0, user_kl_weight=rng.uniform(0.1, 1.0, n_users),
            item_kl_weight=rng.uniform(0.1, 1.0, n_items), config=cfg,
        )
        noise = NoiseDraw(rng.standard_normal((b, k)), rng.standard_normal((b, k)))
        return model, batch, noise
    if kind == "metricf":
        model = baselines.MetricFModel(rng.normal(0, 1, (n_users, k)), rng.normal(0, 1, (n_items, k)),
                                       biases, 1.0, 5.0, config=cfg)
        return model, batch, None
    if kind in baselines.DOT_VARIANTS:
        if kind == "pmf":
            biases = BiasTerms(np.zeros(n_users), np.zeros(n_items), biases.r_global)
        model = baselines.DotProductModel(rng.normal(0, 1, (n_users, k)), rng.normal(0, 1, (n_items, k)),
                                          biases, kind, float(rng.uniform(0, 0.5)), 1.0, 5.0, config=cfg)
        return model, batch, None
    raise ValueError(f"unknown model kind {kind!r}")


def check_instance(kind, model, batch, noise, h=1e-5, tol=1e-4, atol=1e-7) -> GradCheckReport:
    if kind == "vibdml":
        return vibdml.gradient_check(model, batch, noise, h=h, tol=tol, atol=atol)
    return baselines.gradient_check(model, batch, h=h, tol=tol, atol=atol)


def run_trials(kinds=KINDS, trials: int = 100, tol: float = 1e-4, h: float = 1e-5, atol: float = 1e-7,
               seed: int = 0) -> list[Trial]:
    out = []
    for kind in kinds:
        rng = np.random.default_rng([seed, KINDS.index(kind)])
        for j in range(trials):
            model, batch, noise = random_instance(kind, rng)
            out.append(Trial(kind, j, check_instance(kind, model, batch, noise, h=h, tol=tol, atol=atol)))
    return out
