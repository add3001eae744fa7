"""Distance metric learning with Gaussian (information-bottleneck) embeddings.

Every user and item owns a diagonal Gaussian ``N(mu, exp(logvar))`` in a
shared k-dimensional space. During training a latent position is drawn with
the reparameterization ``z = mu + exp(logvar / 2) * eps`` and the rating is
read off the Euclidean distance between the two samples::

    r_hat = r_max - |z_u - z_i| + b_u + b_i + r_global

The per-triple objective is the squared residual plus ``beta`` times the KL
divergence of each side's posterior from the standard normal prior. At
evaluation time the posterior means are used and the result is clamped to
the rating range.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse

from .data import Dataset
from .gradcheck import GradCheckReport, check_gradients
from .optim import RowGrad, run_epochs


LOGVAR_BOUND = 20.0
KL_SCOPES = ("entity", "triple")
EVAL_DISTANCES = ("expected", "mean")


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss or gradient)."""

    def __init__(self, message: str, epoch: int | None = None, step: int | None = None):
        if epoch is not None:
            message = f"epoch {epoch}, step {step}: {message}"
        super().__init__(message)
        self.epoch = epoch
        self.step = step


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 0.05
    batch_size: int = 256
    beta: float = 0.2
    k: int = 150
    seed: int = 0
    init_sd: float = 0.05
    distance_floor: float = 1e-12
    l2: float = 0.02
    init_logvar: float | None = None
    kl_scope: str = "entity"
    eval_distance: str = "expected"

    def validate(self) -> "TrainConfig":
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not self.init_sd > 0:
            raise ValueError(f"init_sd must be positive, got {self.init_sd}")
        if self.beta < 0 or self.l2 < 0 or self.distance_floor < 0:
            raise ValueError("beta, l2 and distance_floor must be non-negative")
        if self.kl_scope not in KL_SCOPES:
            raise ValueError(f"kl_scope must be one of {KL_SCOPES}, got {self.kl_scope!r}")
        if self.eval_distance not in EVAL_DISTANCES:
            raise ValueError(f"eval_distance must be one of {EVAL_DISTANCES}, got {self.eval_distance!r}")
        return self

    @property
    def initial_logvar(self) -> float:
        # start each posterior as narrow as the spread of the initial means
        return 2.0 * math.log(self.init_sd) if self.init_logvar is None else self.init_logvar

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GaussianEmbeddingTable:
    mu: np.ndarray
    logvar: np.ndarray

    @property
    def k(self) -> int:
        return self.mu.shape[1]

    def __len__(self) -> int:
        return self.mu.shape[0]


@dataclass
class BiasTerms:
    b_user: np.ndarray
    b_item: np.ndarray
    r_global: float


@dataclass
class VibDmlModel:
    users: GaussianEmbeddingTable
    items: GaussianEmbeddingTable
    biases: BiasTerms
    beta_user: float
    beta_item: float
    r_min: float
    r_max: float
    distance_floor: float = 1e-12
    eval_distance: str = "expected"
    user_seen: np.ndarray = None
    item_seen: np.ndarray = None
    # per-entity multiplier on that entity's KL each time it appears in a triple
    user_kl_weight: np.ndarray = None
    item_kl_weight: np.ndarray = None
    config: TrainConfig = field(default_factory=TrainConfig)

    kind = "vibdml"

    def __post_init__(self):
        if self.user_seen is None:
            self.user_seen = np.ones(len(self.users), dtype=bool)
        if self.item_seen is None:
            self.item_seen = np.ones(len(self.items), dtype=bool)
        if self.user_kl_weight is None:
            self.user_kl_weight = np.ones(len(self.users))
        if self.item_kl_weight is None:
            self.item_kl_weight = np.ones(len(self.items))

    @property
    def k(self) -> int:
        return self.users.k

    def params(self) -> dict[str, np.ndarray]:
        """Trainable arrays by name (views, not copies)."""
        return {
            "user_mu": self.users.mu,
            "user_logvar": self.users.logvar,
            "item_mu": self.items.mu,
            "item_logvar": self.items.logvar,
            "b_user": self.biases.b_user,
            "b_item": self.biases.b_item,
        }

    def positions(self) -> tuple[np.ndarray, np.ndarray]:
        return self.users.mu, self.items.mu

    def predict(self, u, i):
        return predict_eval(self, u, i)


@dataclass
class NoiseDraw:
    """Standard-normal reparameterization noise, one row per example."""

    eps_user: np.ndarray
    eps_item: np.ndarray


def draw_noise(seed: int, epoch: int, step: int, n: int, k: int) -> NoiseDraw:
    """Noise for one training step; the same (seed, epoch, step) replays it."""
    rng = np.random.default_rng([seed, 2, epoch, step])
    return NoiseDraw(rng.standard_normal((n, k)), rng.standard_normal((n, k)))


def zero_noise(n: int, k: int) -> NoiseDraw:
    return NoiseDraw(np.zeros((n, k)), np.zeros((n, k)))


# -- model construction -------------------------------------------------------

def init_model(n_users: int, n_items: int, cfg: TrainConfig, r_min: float, r_max: float, r_global: float) -> VibDmlModel:
    """Means ~ N(0, init_sd^2), log-variances at ``cfg.initial_logvar``, biases 0."""
    cfg.validate()
    if n_users < 1 or n_items < 1:
        raise ValueError("n_users and n_items must be positive")
    rng = np.random.default_rng([cfg.seed, 0])
    k = cfg.k
    users = GaussianEmbeddingTable(rng.normal(0.0, cfg.init_sd, (n_users, k)), np.full((n_users, k), cfg.initial_logvar))
    items = GaussianEmbeddingTable(rng.normal(0.0, cfg.init_sd, (n_items, k)), np.full((n_items, k), cfg.initial_logvar))
    biases = BiasTerms(np.zeros(n_users), np.zeros(n_items), float(r_global))
    return VibDmlModel(
        users, items, biases,
        beta_user=cfg.beta, beta_item=cfg.beta,
        r_min=float(r_min), r_max=float(r_max),
        distance_floor=cfg.distance_floor, eval_distance=cfg.eval_distance, config=cfg,
    )


# -- forward pieces shared with the metric baselines ---------------------------

def sample_latent(table: GaussianEmbeddingTable, idx, eps) -> np.ndarray:
    """``mu[idx] + exp(logvar[idx] / 2) * eps``; works for one index or an index array."""
    n = len(table)
    if np.any((np.asarray(idx) < 0) | (np.asarray(idx) >= n)):
        raise IndexError(f"entity index out of range for table of {n} rows")
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape[-1] != table.k:
        raise ValueError(f"noise has length {eps.shape[-1]}, table has k={table.k}")
    return table.mu[idx] + np.exp(0.5 * table.logvar[idx]) * eps


def euclidean_distance(z_u, z_i, floor: float = 0.0):
    """``sqrt(sum((z_u - z_i)**2) + floor)`` along the last axis."""
    z_u = np.asarray(z_u, dtype=np.float64)
    z_i = np.asarray(z_i, dtype=np.float64)
    if z_u.shape[-1] != z_i.shape[-1]:
        raise ValueError(f"length mismatch: {z_u.shape[-1]} vs {z_i.shape[-1]}")
    diff = z_u - z_i
    return np.sqrt(np.einsum("...k,...k->...", diff, diff) + floor)


def distance_to_rating(dist, b_u, b_i, r_global: float, r_max: float):
    return r_max - dist + b_u + b_i + r_global


def clamp_rating(r, r_min: float, r_max: float):
    return np.clip(r, r_min, r_max)


def cold_start_predict(model, u, i, score: Callable[[np.ndarray, np.ndarray], np.ndarray], use_bias: bool = True):
    """Clamped eval predictions with the global-mean fallback for unseen ids.

    ``score(u, i)`` gives the raw prediction for pairs whose ids were both
    seen in training. If only one side was seen, its bias is added to the
    global mean; with neither, the global mean is returned.
    """
    scalar = np.ndim(u) == 0 and np.ndim(i) == 0
    u = np.atleast_1d(np.asarray(u, dtype=np.int64))
    i = np.atleast_1d(np.asarray(i, dtype=np.int64))
    u, i = np.broadcast_arrays(u, i)
    known_u = (u >= 0) & (u < len(model.user_seen))
    known_u[known_u] = model.user_seen[u[known_u]]
    known_i = (i >= 0) & (i < len(model.item_seen))
    known_i[known_i] = model.item_seen[i[known_i]]

    out = np.full(u.shape, float(model.biases.r_global))
    both = known_u & known_i
    if both.any():
        out[both] = score(u[both], i[both])
    if use_bias:
        only_u = known_u & ~known_i
        only_i = known_i & ~known_u
        out[only_u] += model.biases.b_user[u[only_u]]
        out[only_i] += model.biases.b_item[i[only_i]]
    out = clamp_rating(out, model.r_min, model.r_max)
    return float(out[0]) if scalar else out


# -- prediction ---------------------------------------------------------------

def predict_train(model: VibDmlModel, u, i, noise: NoiseDraw):
    """Unclamped training prediction from sampled latents.

    Returns ``(r_hat, cache)`` where ``cache`` holds ``z_u``, ``z_i`` and ``D``.
    """
    z_u = sample_latent(model.users, u, noise.eps_user)
    z_i = sample_latent(model.items, i, noise.eps_item)
    dist = euclidean_distance(z_u, z_i, model.distance_floor)
    b = model.biases
    r_hat = distance_to_rating(dist, b.b_user[u], b.b_item[i], b.r_global, model.r_max)
    return r_hat, {"z_u": z_u, "z_i": z_i, "D": dist}


def eval_distance(model: VibDmlModel, u, i) -> np.ndarray:
    """Deterministic user-item distance used at evaluation time.

    ``"mean"`` measures between posterior means. ``"expected"`` is the root
    of the expected squared distance between the two Gaussians,
    ``sqrt(|mu_u - mu_i|^2 + sum(var_u + var_i) + floor)``, which keeps the
    offset the sampled training distances carry.
    """
    mu_u, mu_i = model.users.mu[u], model.items.mu[i]
    if model.eval_distance == "mean":
        return euclidean_distance(mu_u, mu_i, model.distance_floor)
    diff = mu_u - mu_i
    spread = np.exp(model.users.logvar[u]) + np.exp(model.items.logvar[i])
    return np.sqrt(np.einsum("...k,...k->...", diff, diff) + spread.sum(axis=-1) + model.distance_floor)


def predict_eval(model: VibDmlModel, u, i):
    """Deterministic clamped prediction; unseen ids fall back to the global mean."""
    b = model.biases

    def score(uu, ii):
        dist = eval_distance(model, uu, ii)
        return distance_to_rating(dist, b.b_user[uu], b.b_item[ii], b.r_global, model.r_max)

    return cold_start_predict(model, u, i, score)


# -- objective ----------------------------------------------------------------

def kl_term(mu_row, logvar_row):
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over the last axis."""
    mu_row = np.asarray(mu_row, dtype=np.float64)
    logvar_row = np.asarray(logvar_row, dtype=np.float64)
    return 0.5 * np.sum(-logvar_row + mu_row * mu_row + np.exp(logvar_row) - 1.0, axis=-1)


def as_batch(batch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Accept ``(users, items, ratings)`` arrays or a sequence of ``(u, i, r)``."""
    if isinstance(batch, tuple) and len(batch) == 3 and all(isinstance(a, np.ndarray) for a in batch):
        u, i, r = batch
    else:
        rows = list(batch)
        if not rows:
            raise ValueError("empty batch")
        u, i, r = (np.array(col) for col in zip(*rows))
    u = np.asarray(u, dtype=np.int64)
    i = np.asarray(i, dtype=np.int64)
    r = np.asarray(r, dtype=np.float64)
    if len(u) == 0:
        raise ValueError("empty batch")
    return u, i, r


def _check_noise(noise: NoiseDraw, n: int, k: int):
    if noise.eps_user.shape != (n, k) or noise.eps_item.shape != (n, k):
        raise ValueError(f"noise must be shaped ({n}, {k}) per side, got {noise.eps_user.shape} / {noise.eps_item.shape}")


def _forward_backward(model: VibDmlModel, u, i, r, noise: NoiseDraw, need_grad: bool = True):
    """Batch loss and per-example gradient pieces."""
    _check_noise(noise, len(u), model.k)
    mu_u, lv_u = model.users.mu[u], model.users.logvar[u]
    mu_i, lv_i = model.items.mu[i], model.items.logvar[i]
    sd_u = np.exp(0.5 * lv_u)
    sd_i = np.exp(0.5 * lv_i)
    diff = (mu_u + sd_u * noise.eps_user) - (mu_i + sd_i * noise.eps_item)
    dist = np.sqrt(np.einsum("bk,bk->b", diff, diff) + model.distance_floor)
    b = model.biases
    r_hat = distance_to_rating(dist, b.b_user[u], b.b_item[i], b.r_global, model.r_max)
    resid = r - r_hat
    var_u = sd_u * sd_u
    var_i = sd_i * sd_i
    kl_u = 0.5 * np.sum(-lv_u + mu_u * mu_u + var_u - 1.0, axis=1)
    kl_i = 0.5 * np.sum(-lv_i + mu_i * mu_i + var_i - 1.0, axis=1)
    w_u = model.beta_user * model.user_kl_weight[u]
    w_i = model.beta_item * model.item_kl_weight[i]
    loss = float(np.sum(resid * resid) + np.dot(w_u, kl_u) + np.dot(w_i, kl_i))
    if not need_grad:
        return loss, None

    # d loss / d r_hat = -2 resid and d r_hat / d D = -1
    g_z_u = (2.0 * resid / dist)[:, None] * diff
    bu, bi = w_u[:, None], w_i[:, None]
    pieces = {
        "user_mu": g_z_u + bu * mu_u,
        "user_logvar": 0.5 * g_z_u * sd_u * noise.eps_user + 0.5 * bu * (var_u - 1.0),
        "item_mu": -g_z_u + bi * mu_i,
        "item_logvar": -0.5 * g_z_u * sd_i * noise.eps_item + 0.5 * bi * (var_i - 1.0),
        "b_user": -2.0 * resid,
        "b_item": -2.0 * resid,
    }
    return loss, pieces


_ROW_OWNER = {"user_mu": 0, "user_logvar": 0, "b_user": 0, "item_mu": 1, "item_logvar": 1, "b_item": 1}


class RowGrouping:
    """Sums per-example gradient rows that share an entity index.

    Built once per batch side as a sparse (unique rows x batch) 0/1 matrix.
    """

    def __init__(self, idx: np.ndarray):
        order = np.argsort(idx, kind="stable")
        sorted_idx = idx[order]
        first = np.ones(len(idx), dtype=bool)
        first[1:] = sorted_idx[1:] != sorted_idx[:-1]
        starts = np.flatnonzero(first)
        self.rows = sorted_idx[starts]
        indptr = np.append(starts, len(idx))
        self.matrix = sparse.csr_matrix((np.ones(len(idx)), order, indptr), shape=(len(starts), len(idx)))

    def sum(self, values: np.ndarray) -> RowGrad:
        return RowGrad(self.rows, np.asarray(self.matrix @ values))


def scatter_rows(idx: np.ndarray, values: np.ndarray) -> RowGrad:
    """Sum per-example gradient rows that share an entity index."""
    return RowGrouping(np.asarray(idx)).sum(values)


def row_grads(pieces: dict, u, i) -> dict[str, RowGrad]:
    groups = (RowGrouping(u), RowGrouping(i))
    return {name: groups[_ROW_OWNER[name]].sum(g) for name, g in pieces.items()}


def densify(grads: dict[str, RowGrad], params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    dense = {}
    for name, g in grads.items():
        full = np.zeros_like(params[name])
        full[g.rows] = g.values
        dense[name] = full
    return dense


def loss_batch(model: VibDmlModel, batch, noise: NoiseDraw) -> float:
    """Summed squared error plus per-triple KL penalties for the batch."""
    u, i, r = as_batch(batch)
    return _forward_backward(model, u, i, r, noise, need_grad=False)[0]


def grad_batch(model: VibDmlModel, batch, noise: NoiseDraw) -> dict[str, np.ndarray]:
    """Exact gradient of :func:`loss_batch`, one dense array per parameter."""
    u, i, r = as_batch(batch)
    _, pieces = _forward_backward(model, u, i, r, noise)
    return densify(row_grads(pieces, u, i), model.params())


def gradient_check(model: VibDmlModel, batch, noise: NoiseDraw, h: float = 1e-5, tol: float = 1e-4,
                   atol: float = 1e-7, grads: dict | None = None) -> GradCheckReport:
    """Compare :func:`grad_batch` with central differences under fixed noise."""
    if grads is None:
        grads = grad_batch(model, batch, noise)
    return check_gradients(model.params(), lambda: loss_batch(model, batch, noise), grads, h=h, tol=tol, atol=atol)


# -- training -----------------------------------------------------------------

def kl_weights(idx: np.ndarray, n: int) -> np.ndarray:
    """1 / (training count) per entity, so each KL enters an epoch's loss once."""
    counts = np.bincount(idx, minlength=n).astype(np.float64)
    return np.divide(1.0, counts, out=np.zeros(n), where=counts > 0)


def fit(ds_train: Dataset, cfg: TrainConfig | None = None, progress: Callable[[int, float], None] | None = None):
    """Train on every triple of ``ds_train``.

    Each epoch shuffles the triples, walks them in mini-batches, draws fresh
    noise per batch and applies Adagrad, clamping touched log-variances to
    [-20, 20]. ``progress(epoch, mean_loss)`` is called after each epoch.

    Returns ``(model, trace)`` with ``trace[e]`` the mean per-triple loss of
    epoch ``e``.
    """
    cfg = (cfg or TrainConfig()).validate()
    if len(ds_train) == 0:
        raise ValueError("empty training set")
    r_global = float(np.mean(ds_train.ratings))
    model = init_model(ds_train.n_users, ds_train.n_items, cfg, ds_train.r_min, ds_train.r_max, r_global)
    model.user_seen = np.bincount(ds_train.users, minlength=ds_train.n_users) > 0
    model.item_seen = np.bincount(ds_train.items, minlength=ds_train.n_items) > 0
    if cfg.kl_scope == "entity":
        model.user_kl_weight = kl_weights(ds_train.users, ds_train.n_users)
        model.item_kl_weight = kl_weights(ds_train.items, ds_train.n_items)

    users, items, ratings = ds_train.users, ds_train.items, ds_train.ratings

    def batch(idx, epoch, step):
        u, i = users[idx], items[idx]
        noise = draw_noise(cfg.seed, epoch, step, len(idx), cfg.k)
        loss, pieces = _forward_backward(model, u, i, ratings[idx], noise)
        return loss, row_grads(pieces, u, i)

    def clamp_logvar(grads):
        for table, name in ((model.users, "user_logvar"), (model.items, "item_logvar")):
            rows = grads[name].rows
            table.logvar[rows] = np.clip(table.logvar[rows], -LOGVAR_BOUND, LOGVAR_BOUND)

    try:
        trace = run_epochs(
            len(ds_train), model.params(), batch,
            epochs=cfg.epochs, batch_size=cfg.batch_size, learning_rate=cfg.learning_rate,
            seed=cfg.seed, after_step=clamp_logvar, progress=progress,
        )
    except FloatingPointError as exc:
        raise TrainingError(str(exc)) from exc
    return model, trace


def train_rmse(model, ds: Dataset) -> float:
    pred = model.predict(ds.users, ds.items)
    return float(np.sqrt(np.mean((pred - ds.ratings) ** 2)))


def mean_kl(model: VibDmlModel) -> float:
    """Average KL of the seen entities' posteriors from the prior."""
    kl_u = kl_term(model.users.mu[model.user_seen], model.users.logvar[model.user_seen])
    kl_i = kl_term(model.items.mu[model.item_seen], model.items.logvar[model.item_seen])
    return float(np.mean(np.concatenate([kl_u, kl_i])))
