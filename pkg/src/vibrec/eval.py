"""Experimental protocol: RMSE, repeated hold-out, parameter sweeps,
high-dimension robustness and latent-geometry analysis."""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import stats

from . import baselines, vibdml
from .data import Dataset, holdout_split
from .vibdml import TrainConfig

FITTERS = {"vibdml": vibdml.fit, **baselines.FITTERS}
TRAINABLE = ("vibdml", "biassvd", "pmf", "metricf")
DISTANCE_MODELS = ("vibdml", "metricf")
# report fields that legitimately differ between identical runs
NONDETERMINISTIC_FIELDS = ("wall_time_s",)


def rmse(predictions, truths) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("rmse of empty input")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def fit_model(kind: str, ds_train: Dataset, cfg: TrainConfig, progress=None):
    try:
        fitter = FITTERS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(FITTERS)}") from None
    return fitter(ds_train, cfg, progress)


# -- reports ------------------------------------------------------------------

def _config_fields(cfg: TrainConfig, seeds) -> dict:
    return {"k": cfg.k, "beta": cfg.beta, "lr": cfg.learning_rate, "epochs": cfg.epochs,
            "batch": cfg.batch_size, "l2": cfg.l2, "seeds": list(seeds)}


@dataclass
class EvalReport:
    dataset: str
    model: str
    config: dict
    rmse_splits: list[float]
    wall_time_s: list[float]
    split_fingerprints: list[str] = field(default_factory=list, repr=False)

    @property
    def rmse_mean(self) -> float:
        return float(np.mean(self.rmse_splits))

    @property
    def rmse_std(self) -> float | None:
        if len(self.rmse_splits) < 2:
            return None
        return float(np.std(self.rmse_splits, ddof=1))

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "model": self.model,
            "config": self.config,
            "rmse_splits": list(self.rmse_splits),
            "rmse_mean": self.rmse_mean,
            "rmse_std": self.rmse_std,
            "wall_time_s": list(self.wall_time_s),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["dataset"], d["model"], d["config"], list(d["rmse_splits"]), list(d["wall_time_s"]))


@dataclass
class SweepReport:
    dataset: str
    model: str
    axis: str
    grid: list
    points: list[EvalReport]

    @property
    def argmin(self):
        return argmin_of(self.grid, [p.rmse_mean for p in self.points])

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "model": self.model,
            "config": self.points[0].config if self.points else {},
            "axis": self.axis,
            "grid": list(self.grid),
            "points": [p.to_dict() for p in self.points],
            "argmin": self.argmin,
        }


def argmin_of(grid: Sequence, means: Sequence[float]):
    """Grid value with the smallest mean; ties go to the smaller grid value."""
    best = min(range(len(grid)), key=lambda j: (means[j], grid[j]))
    return grid[best]


@dataclass
class RobustnessEntry:
    model: str
    best_k: int
    rmse_best: float
    rmse_high: float

    @property
    def percent_increase(self) -> float:
        return 100.0 * (self.rmse_high - self.rmse_best) / self.rmse_best


@dataclass
class RobustnessReport:
    dataset: str
    high_k: int
    entries: dict[str, RobustnessEntry]
    reports: dict[str, tuple[EvalReport, EvalReport]] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "high_k": self.high_k,
            "models": {
                m: {"best_k": e.best_k, "rmse_best": e.rmse_best, "rmse_high": e.rmse_high,
                    "percent_increase": e.percent_increase}
                for m, e in self.entries.items()
            },
            "points": {m: [best.to_dict(), high.to_dict()] for m, (best, high) in self.reports.items()},
        }


def write_json(obj, path) -> None:
    data = obj.to_dict() if hasattr(obj, "to_dict") else obj
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=False)
        fh.write("\n")


def strip_nondeterministic(d):
    """Copy of a report dict without timing fields, for determinism comparisons."""
    if isinstance(d, dict):
        return {k: strip_nondeterministic(v) for k, v in d.items() if k not in NONDETERMINISTIC_FIELDS}
    if isinstance(d, list):
        return [strip_nondeterministic(v) for v in d]
    return d


# -- hold-out protocol --------------------------------------------------------

def _one_split(ds: Dataset, kind: str, cfg: TrainConfig, ratio: float, seed: int):
    split = holdout_split(ds, ratio, seed)
    train, test = split.train, split.test
    start = time.perf_counter()
    model, _ = fit_model(kind, train, cfg)
    score = rmse(model.predict(test.users, test.items), test.ratings)
    return score, time.perf_counter() - start, split.fingerprint()


def run_holdout_protocol(
    ds: Dataset,
    kind: str,
    cfg: TrainConfig | None = None,
    n_repeats: int = 5,
    base_seed: int = 0,
    ratio: float = 0.9,
    jobs: int = 1,
) -> EvalReport:
    """Fit on ``n_repeats`` random splits (seeds base, base+1, ...) and score the test sides.

    Every model kind sees the same splits for the same ``base_seed``, and the
    model's own seed is ``cfg.seed``, so reruns reproduce the report.
    """
    cfg = (cfg or TrainConfig()).validate()
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    if kind not in FITTERS:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(FITTERS)}")
    seeds = [base_seed + j for j in range(n_repeats)]
    if jobs > 1 and n_repeats > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one_split, *zip(*[(ds, kind, cfg, ratio, s) for s in seeds])))
    else:
        results = [_one_split(ds, kind, cfg, ratio, s) for s in seeds]
    return EvalReport(
        dataset=ds.name,
        model=kind,
        config=_config_fields(cfg, seeds),
        rmse_splits=[r[0] for r in results],
        wall_time_s=[r[1] for r in results],
        split_fingerprints=[r[2] for r in results],
    )


SWEEP_AXES = ("k", "beta")


def sweep(ds: Dataset, kind: str, cfg: TrainConfig, axis: str, grid: Sequence, n_repeats: int = 5,
          base_seed: int = 0, ratio: float = 0.9, jobs: int = 1) -> SweepReport:
    """One hold-out protocol per grid value, all on the same splits."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    points = []
    for value in grid:
        value = int(value) if axis == "k" else float(value)
        point_cfg = replace(cfg, **{axis: value}).validate()
        points.append(run_holdout_protocol(ds, kind, point_cfg, n_repeats, base_seed, ratio, jobs))
    return SweepReport(ds.name, kind, axis, [int(v) if axis == "k" else float(v) for v in grid], points)


def robustness_experiment(ds: Dataset, kinds: Sequence[str], cfg: TrainConfig, best_k: dict[str, int],
                          high_k: int = 500, n_repeats: int = 5, base_seed: int = 0, ratio: float = 0.9,
                          jobs: int = 1, precomputed: dict[str, EvalReport] | None = None) -> RobustnessReport:
    """Each model at its best k and at ``high_k`` on identical splits.

    ``precomputed`` may supply already-run best-k reports by model kind.
    """
    precomputed = precomputed or {}
    entries, reports = {}, {}
    for kind in kinds:
        if kind not in best_k:
            raise ValueError(f"no best k supplied for {kind!r}")
        best = precomputed.get(kind)
        if best is None:
            best = run_holdout_protocol(ds, kind, replace(cfg, k=best_k[kind]), n_repeats, base_seed, ratio, jobs)
        high = run_holdout_protocol(ds, kind, replace(cfg, k=high_k), n_repeats, base_seed, ratio, jobs)
        entries[kind] = RobustnessEntry(kind, best_k[kind], best.rmse_mean, high.rmse_mean)
        reports[kind] = (best, high)
    return RobustnessReport(ds.name, high_k, entries, reports)


# -- geometry -----------------------------------------------------------------

@dataclass
class UserNeighbors:
    user: int
    items: list[tuple[int, float, float]]  # (item, rating, distance)
    rho: float | None  # Spearman correlation of rating with -distance; None if undefined
    level_means: dict[float, float]

    @property
    def top_closer(self) -> bool | None:
        """Mean distance at the user's highest rating level below that at the lowest."""
        if len(self.level_means) < 2:
            return None
        levels = sorted(self.level_means)
        return self.level_means[levels[-1]] < self.level_means[levels[0]]


@dataclass
class NeighborReport:
    users: list[UserNeighbors]

    @property
    def top_closer_fraction(self) -> float:
        flags = [u.top_closer for u in self.users if u.top_closer is not None]
        return float(np.mean(flags)) if flags else float("nan")

    @property
    def mean_rho(self) -> float:
        rhos = [u.rho for u in self.users if u.rho is not None]
        return float(np.mean(rhos)) if rhos else float("nan")

    def to_dict(self) -> dict:
        return {
            "top_closer_fraction": self.top_closer_fraction,
            "mean_rho": self.mean_rho,
            "users": [
                {"user": u.user, "rho": u.rho, "level_means": {str(k): v for k, v in u.level_means.items()},
                 "items": [list(t) for t in u.items]}
                for u in self.users
            ],
        }


def neighbor_consistency(model, ds: Dataset, probe_users: Sequence[int]) -> NeighborReport:
    """Latent-mean distances from each probe user to the items they rated in ``ds``."""
    if not hasattr(model, "positions"):
        raise ValueError(f"model kind {model.kind!r} has no latent positions")
    user_pos, item_pos = model.positions()
    out = []
    for u in probe_users:
        u = int(u)
        if not (0 <= u < len(model.user_seen) and model.user_seen[u]):
            raise ValueError(f"probe user {u} was not seen in training")
        mask = ds.users == u
        items, ratings = ds.items[mask], ds.ratings[mask]
        dist = vibdml.euclidean_distance(user_pos[u], item_pos[items])
        rho = None
        if len(items) > 1 and np.ptp(ratings) > 0 and np.ptp(dist) > 0:
            rho = float(stats.spearmanr(ratings, -dist)[0])
        levels = {float(r): float(dist[ratings == r].mean()) for r in np.unique(ratings)}
        out.append(UserNeighbors(u, [(int(i), float(r), float(d)) for i, r, d in zip(items, ratings, dist)], rho, levels))
    return NeighborReport(out)


def select_probe_users(ds: Dataset, n: int = 50, min_ratings: int = 20, seed: int = 0, model=None) -> list[int]:
    """Up to ``n`` users with at least ``min_ratings`` ratings in ``ds``, chosen at random."""
    counts = np.bincount(ds.users, minlength=ds.n_users)
    eligible = np.flatnonzero(counts >= min_ratings)
    if model is not None:
        eligible = eligible[model.user_seen[eligible]]
    rng = np.random.default_rng(seed)
    chosen = rng.choice(eligible, size=min(n, len(eligible)), replace=False)
    return sorted(int(u) for u in chosen)


def export_embeddings(model, path, ds: Dataset | None = None) -> None:
    """Write ``kind id mu_1 .. mu_k [var_1 .. var_k]`` lines, users first.

    Variances are written for VIB-DML only. Ids are raw ids when ``ds`` is
    given, dense indices otherwise.
    """
    if not hasattr(model, "positions"):
        raise ValueError(f"model kind {model.kind!r} has no latent positions")
    user_pos, item_pos = model.positions()
    variances = None
    if isinstance(model, vibdml.VibDmlModel):
        variances = (np.exp(model.users.logvar), np.exp(model.items.logvar))
    with open(path, "w", encoding="utf-8") as fh:
        for side, pos in enumerate((user_pos, item_pos)):
            tag = "user" if side == 0 else "item"
            ids = (ds.user_ids if side == 0 else ds.item_ids) if ds is not None else range(len(pos))
            for j, raw in enumerate(ids):
                vals = list(pos[j])
                if variances is not None:
                    vals += list(variances[side][j])
                fh.write(tag + " " + str(raw) + " " + " ".join(repr(float(v)) for v in vals) + "\n")


def read_embeddings(path, k: int) -> dict[str, dict[str, dict]]:
    """Parse an export into ``{"user": {id: {"mu": ..., "var": ...}}, "item": {...}}``.

    ``var`` is None for rows without variance columns.
    """
    out: dict[str, dict[str, dict]] = {"user": {}, "item": {}}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            cols = line.split()
            if len(cols) not in (2 + k, 2 + 2 * k):
                raise ValueError(f"{path}:{lineno}: expected {k} or {2 * k} values, got {len(cols) - 2}")
            vals = np.array([float(c) for c in cols[2:]])
            out[cols[0]][cols[1]] = {"mu": vals[:k], "var": vals[k:] if len(vals) > k else None}
    return out
