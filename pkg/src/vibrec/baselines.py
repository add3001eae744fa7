"""Comparison models trained with the same pipeline and optimizer.

* ``biassvd``: ``r_global + b_u + b_i + P_u . Q_i`` with L2 on every touched term.
* ``pmf``: ``P_u . Q_i`` with L2 on the factors (MAP under Gaussian priors).
* ``metricf``: ``r_max - |P_u - Q_i| + b_u + b_i + r_global``, plain squared
  loss; the distance and rating conversion are the ones VIB-DML uses.
* global mean: predicts the training mean everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import Dataset
from .gradcheck import GradCheckReport, check_gradients
from .optim import run_epochs
from .vibdml import (
    BiasTerms,
    RowGrouping,
    TrainConfig,
    TrainingError,
    as_batch,
    clamp_rating,
    cold_start_predict,
    densify,
    distance_to_rating,
    euclidean_distance,
)

DOT_VARIANTS = ("biassvd", "pmf")


@dataclass
class DotProductModel:
    P: np.ndarray
    Q: np.ndarray
    biases: BiasTerms
    variant: str
    l2: float
    r_min: float
    r_max: float
    user_seen: np.ndarray = None
    item_seen: np.ndarray = None
    config: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.variant not in DOT_VARIANTS:
            raise ValueError(f"variant must be one of {DOT_VARIANTS}, got {self.variant!r}")
        if self.user_seen is None:
            self.user_seen = np.ones(len(self.P), dtype=bool)
        if self.item_seen is None:
            self.item_seen = np.ones(len(self.Q), dtype=bool)

    @property
    def kind(self) -> str:
        return self.variant

    @property
    def k(self) -> int:
        return self.P.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        p = {"P": self.P, "Q": self.Q}
        if self.variant == "biassvd":
            p["b_user"] = self.biases.b_user
            p["b_item"] = self.biases.b_item
        return p

    def predict(self, u, i):
        if self.variant == "pmf":
            return pmf_predict(self, u, i)
        return biassvd_predict(self, u, i)


@dataclass
class MetricFModel:
    P: np.ndarray
    Q: np.ndarray
    biases: BiasTerms
    r_min: float
    r_max: float
    distance_floor: float = 1e-12
    user_seen: np.ndarray = None
    item_seen: np.ndarray = None
    config: TrainConfig = field(default_factory=TrainConfig)

    kind = "metricf"

    def __post_init__(self):
        if self.user_seen is None:
            self.user_seen = np.ones(len(self.P), dtype=bool)
        if self.item_seen is None:
            self.item_seen = np.ones(len(self.Q), dtype=bool)

    @property
    def k(self) -> int:
        return self.P.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"P": self.P, "Q": self.Q, "b_user": self.biases.b_user, "b_item": self.biases.b_item}

    def positions(self) -> tuple[np.ndarray, np.ndarray]:
        return self.P, self.Q

    def predict(self, u, i):
        return metricf_predict(self, u, i)


# -- construction -------------------------------------------------------------

def _init_factors(n_users, n_items, cfg: TrainConfig):
    rng = np.random.default_rng([cfg.seed, 0])
    return rng.normal(0.0, cfg.init_sd, (n_users, cfg.k)), rng.normal(0.0, cfg.init_sd, (n_items, cfg.k))


def init_dot_model(n_users, n_items, cfg: TrainConfig, variant: str, r_min, r_max, r_global) -> DotProductModel:
    cfg.validate()
    P, Q = _init_factors(n_users, n_items, cfg)
    return DotProductModel(P, Q, BiasTerms(np.zeros(n_users), np.zeros(n_items), float(r_global)),
                           variant, cfg.l2, float(r_min), float(r_max), config=cfg)


def init_metricf(n_users, n_items, cfg: TrainConfig, r_min, r_max, r_global) -> MetricFModel:
    cfg.validate()
    P, Q = _init_factors(n_users, n_items, cfg)
    return MetricFModel(P, Q, BiasTerms(np.zeros(n_users), np.zeros(n_items), float(r_global)),
                        float(r_min), float(r_max), cfg.distance_floor, config=cfg)


# -- losses and gradients -----------------------------------------------------

def _dot_forward_backward(model: DotProductModel, u, i, r, need_grad=True):
    p_u, q_i = model.P[u], model.Q[i]
    pred = np.einsum("bk,bk->b", p_u, q_i)
    biased = model.variant == "biassvd"
    if biased:
        b = model.biases
        bu, bi = b.b_user[u], b.b_item[i]
        pred = pred + b.r_global + bu + bi
    resid = r - pred
    penalty = np.einsum("bk,bk->b", p_u, p_u) + np.einsum("bk,bk->b", q_i, q_i)
    if biased:
        penalty = penalty + bu * bu + bi * bi
    loss = float(np.sum(resid * resid) + model.l2 * np.sum(penalty))
    if not need_grad:
        return loss, None
    g = (-2.0 * resid)[:, None]
    lam = 2.0 * model.l2
    pieces = {"P": g * q_i + lam * p_u, "Q": g * p_u + lam * q_i}
    if biased:
        pieces["b_user"] = -2.0 * resid + lam * bu
        pieces["b_item"] = -2.0 * resid + lam * bi
    return loss, pieces


def _metricf_forward_backward(model: MetricFModel, u, i, r, need_grad=True):
    p_u, q_i = model.P[u], model.Q[i]
    b = model.biases
    diff = p_u - q_i
    dist = euclidean_distance(p_u, q_i, model.distance_floor)
    pred = distance_to_rating(dist, b.b_user[u], b.b_item[i], b.r_global, model.r_max)
    resid = r - pred
    loss = float(np.sum(resid * resid))
    if not need_grad:
        return loss, None
    g_p = (2.0 * resid / dist)[:, None] * diff
    return loss, {"P": g_p, "Q": -g_p, "b_user": -2.0 * resid, "b_item": -2.0 * resid}


_USER_SIDE = {"P", "b_user"}


def _row_grads(pieces, u, i):
    groups = (RowGrouping(u), RowGrouping(i))
    return {name: groups[0 if name in _USER_SIDE else 1].sum(g) for name, g in pieces.items()}


def _forward_backward(model, u, i, r, need_grad=True):
    if isinstance(model, MetricFModel):
        return _metricf_forward_backward(model, u, i, r, need_grad)
    return _dot_forward_backward(model, u, i, r, need_grad)


def loss_batch(model, batch) -> float:
    u, i, r = as_batch(batch)
    return _forward_backward(model, u, i, r, need_grad=False)[0]


def grad_batch(model, batch) -> dict[str, np.ndarray]:
    u, i, r = as_batch(batch)
    _, pieces = _forward_backward(model, u, i, r)
    return densify(_row_grads(pieces, u, i), model.params())


def gradient_check(model, batch, h=1e-5, tol=1e-4, atol=1e-7, grads=None) -> GradCheckReport:
    if grads is None:
        grads = grad_batch(model, batch)
    return check_gradients(model.params(), lambda: loss_batch(model, batch), grads, h=h, tol=tol, atol=atol)


# -- training -----------------------------------------------------------------

def _train(model, ds: Dataset, cfg: TrainConfig, progress):
    users, items, ratings = ds.users, ds.items, ds.ratings
    model.user_seen = np.bincount(users, minlength=ds.n_users) > 0
    model.item_seen = np.bincount(items, minlength=ds.n_items) > 0

    def batch(idx, epoch, step):
        u, i = users[idx], items[idx]
        loss, pieces = _forward_backward(model, u, i, ratings[idx])
        return loss, _row_grads(pieces, u, i)

    try:
        trace = run_epochs(len(ds), model.params(), batch, epochs=cfg.epochs, batch_size=cfg.batch_size,
                           learning_rate=cfg.learning_rate, seed=cfg.seed, progress=progress)
    except FloatingPointError as exc:
        raise TrainingError(str(exc)) from exc
    return model, trace


def _check_train(ds: Dataset, cfg: TrainConfig | None) -> TrainConfig:
    if len(ds) == 0:
        raise ValueError("empty training set")
    return (cfg or TrainConfig()).validate()


def biassvd_fit(ds: Dataset, cfg: TrainConfig | None = None, progress=None):
    cfg = _check_train(ds, cfg)
    model = init_dot_model(ds.n_users, ds.n_items, cfg, "biassvd", ds.r_min, ds.r_max, float(np.mean(ds.ratings)))
    return _train(model, ds, cfg, progress)


def pmf_fit(ds: Dataset, cfg: TrainConfig | None = None, progress=None):
    cfg = _check_train(ds, cfg)
    model = init_dot_model(ds.n_users, ds.n_items, cfg, "pmf", ds.r_min, ds.r_max, float(np.mean(ds.ratings)))
    return _train(model, ds, cfg, progress)


def metricf_fit(ds: Dataset, cfg: TrainConfig | None = None, progress=None):
    cfg = _check_train(ds, cfg)
    model = init_metricf(ds.n_users, ds.n_items, cfg, ds.r_min, ds.r_max, float(np.mean(ds.ratings)))
    return _train(model, ds, cfg, progress)


# -- prediction ---------------------------------------------------------------

def biassvd_predict(model: DotProductModel, u, i):
    b = model.biases

    def score(uu, ii):
        dot = np.einsum("bk,bk->b", model.P[uu], model.Q[ii])
        return b.r_global + b.b_user[uu] + b.b_item[ii] + dot

    return cold_start_predict(model, u, i, score)


def pmf_predict(model: DotProductModel, u, i):
    """Clamped ``P_u . Q_i``; unseen ids get the training mean (PMF has no biases)."""

    def score(uu, ii):
        return np.einsum("bk,bk->b", model.P[uu], model.Q[ii])

    return cold_start_predict(model, u, i, score, use_bias=False)


def metricf_predict(model: MetricFModel, u, i):
    b = model.biases

    def score(uu, ii):
        dist = euclidean_distance(model.P[uu], model.Q[ii], model.distance_floor)
        return distance_to_rating(dist, b.b_user[uu], b.b_item[ii], b.r_global, model.r_max)

    return cold_start_predict(model, u, i, score)


@dataclass
class GlobalMeanModel:
    r_global: float
    r_min: float
    r_max: float

    kind = "global_mean"

    def predict(self, u, i):
        shape = np.broadcast(np.asarray(u), np.asarray(i)).shape
        out = np.full(shape, float(clamp_rating(self.r_global, self.r_min, self.r_max)))
        return float(out) if out.ndim == 0 else out


def global_mean_predict(ds_train: Dataset) -> GlobalMeanModel:
    if len(ds_train) == 0:
        raise ValueError("empty training set")
    return GlobalMeanModel(float(np.mean(ds_train.ratings)), ds_train.r_min, ds_train.r_max)


def global_mean_fit(ds_train: Dataset, cfg: TrainConfig | None = None, progress=None):
    return global_mean_predict(ds_train), []


FITTERS: dict[str, Callable] = {
    "biassvd": biassvd_fit,
    "pmf": pmf_fit,
    "metricf": metricf_fit,
    "global_mean": global_mean_fit,
}
