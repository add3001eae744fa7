"""Rating datasets: raw-format loaders, canonical CSV, hold-out splits, planted synthetics."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

log = logging.getLogger(__name__)

CANONICAL_MAGIC = "#vibrec-ratings v1"
CANONICAL_HEADER = "user,item,rating"


class DatasetError(ValueError):
    """Raised for unreadable, malformed or out-of-range rating data."""

    def __init__(self, message: str, path=None, lineno: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{lineno}: " if lineno is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.lineno = lineno


@dataclass(frozen=True)
class RatingTriple:
    user_raw: str
    item_raw: str
    rating: float


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable set of ratings with dense integer ids.

    ``users[j], items[j], ratings[j]`` is the j-th triple. ``user_ids[u]`` is
    the raw id behind dense index ``u`` (and likewise for items).
    """

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    r_min: float
    r_max: float
    name: str = ""
    duplicates: int = 0
    _user_index: dict = field(default=None, repr=False, compare=False)
    _item_index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.r_min < self.r_max:
            raise DatasetError(f"invalid rating range [{self.r_min}, {self.r_max}]")
        for name in ("users", "items"):
            object.__setattr__(self, name, _readonly(np.asarray(getattr(self, name), dtype=np.int64)))
        object.__setattr__(self, "ratings", _readonly(np.asarray(self.ratings, dtype=np.float64)))
        object.__setattr__(self, "_user_index", {raw: j for j, raw in enumerate(self.user_ids)})
        object.__setattr__(self, "_item_index", {raw: j for j, raw in enumerate(self.item_ids)})

    @classmethod
    def from_triples(
        cls,
        triples: Iterable[tuple[str, str, float]],
        r_min: float,
        r_max: float,
        name: str = "",
    ) -> "Dataset":
        """Index raw triples in order of first appearance; last duplicate wins."""
        cells: dict[tuple[str, str], float] = {}
        duplicates = 0
        for user, item, rating in triples:
            key = (user, item)
            if key in cells:
                duplicates += 1
            cells[key] = rating
        if not cells:
            raise DatasetError("no triples")
        if duplicates:
            log.warning("%s: %d duplicate (user, item) pairs, last occurrence kept", name or "dataset", duplicates)

        user_index: dict[str, int] = {}
        item_index: dict[str, int] = {}
        n = len(cells)
        users = np.empty(n, dtype=np.int64)
        items = np.empty(n, dtype=np.int64)
        ratings = np.empty(n, dtype=np.float64)
        for j, ((user, item), rating) in enumerate(cells.items()):
            users[j] = user_index.setdefault(user, len(user_index))
            items[j] = item_index.setdefault(item, len(item_index))
            ratings[j] = rating
        return cls(
            users, items, ratings,
            tuple(user_index), tuple(item_index),
            float(r_min), float(r_max), name=name, duplicates=duplicates,
        )

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def user_index(self) -> dict[str, int]:
        return self._user_index

    @property
    def item_index(self) -> dict[str, int]:
        return self._item_index

    def __len__(self) -> int:
        return len(self.ratings)

    def __iter__(self) -> Iterator[RatingTriple]:
        for u, i, r in zip(self.users, self.items, self.ratings):
            yield RatingTriple(self.user_ids[u], self.item_ids[i], float(r))

    def subset(self, indices: Sequence[int] | np.ndarray, name: str | None = None) -> "Dataset":
        """Triples at ``indices``, keeping this dataset's id space and range."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.users[idx].copy(), self.items[idx].copy(), self.ratings[idx].copy(),
            self.user_ids, self.item_ids, self.r_min, self.r_max,
            name=self.name if name is None else name,
        )

    def stats(self) -> dict:
        return {"n_users": self.n_users, "n_items": self.n_items, "n_ratings": len(self)}


# -- raw formats --------------------------------------------------------------

def _read_lines(path):
    try:
        with open(path, encoding="utf-8") as fh:
            yield from enumerate(fh, start=1)
    except OSError as exc:
        raise DatasetError(f"cannot read file: {exc.strerror}", path) from exc


def _parse_rating_file(path, *, sep, min_cols, max_cols, r_min, r_max, name):
    def triples():
        for lineno, line in _read_lines(path):
            line = line.strip()
            if not line:
                continue
            cols = line.split(sep)
            if len(cols) < min_cols or (max_cols is not None and len(cols) > max_cols):
                raise DatasetError(f"malformed line, expected {min_cols} columns, got {len(cols)}", path, lineno)
            try:
                rating = float(cols[2])
            except ValueError:
                raise DatasetError(f"rating {cols[2]!r} is not a number", path, lineno) from None
            if not (math.isfinite(rating) and r_min <= rating <= r_max):
                raise DatasetError(f"rating {rating} outside [{r_min}, {r_max}]", path, lineno)
            yield cols[0], cols[1], rating

    try:
        return Dataset.from_triples(triples(), r_min, r_max, name=name)
    except DatasetError as exc:
        if exc.path is None:
            raise DatasetError(str(exc), path) from None
        raise


def load_movielens(path) -> Dataset:
    """MovieLens ``u.data``: ``user<TAB>item<TAB>rating<TAB>timestamp``, ratings 1..5."""
    return _parse_rating_file(path, sep="\t", min_cols=4, max_cols=4, r_min=1.0, r_max=5.0, name="movielens")


def load_filmtrust(path) -> Dataset:
    """FilmTrust ``ratings.txt``: ``user item rating``, ratings 0.5..4.0."""
    return _parse_rating_file(path, sep=None, min_cols=3, max_cols=3, r_min=0.5, r_max=4.0, name="filmtrust")


def load_epinions(path) -> Dataset:
    """Epinions ``ratings_data.txt``: whitespace separated, columns past the third ignored."""
    return _parse_rating_file(path, sep=None, min_cols=3, max_cols=None, r_min=1.0, r_max=5.0, name="epinions")


# -- canonical format ---------------------------------------------------------

def write_canonical(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{CANONICAL_MAGIC} r_min={ds.r_min!r} r_max={ds.r_max!r}\n")
        fh.write(CANONICAL_HEADER + "\n")
        for u, i, r in zip(ds.users, ds.items, ds.ratings):
            fh.write(f"{ds.user_ids[u]},{ds.item_ids[i]},{float(r)!r}\n")


def _parse_magic(line: str, path) -> tuple[float, float]:
    if not line.startswith(CANONICAL_MAGIC):
        raise DatasetError(f"not a canonical ratings file (first line {line.strip()!r})", path, 1)
    fields = dict(tok.split("=", 1) for tok in line.split()[2:] if "=" in tok)
    try:
        return float(fields["r_min"]), float(fields["r_max"])
    except (KeyError, ValueError):
        raise DatasetError("range metadata r_min/r_max missing from header", path, 1) from None


def read_canonical(path, name: str | None = None) -> Dataset:
    lines = _read_lines(path)
    first = next(lines, None)
    if first is None:
        raise DatasetError("empty file", path)
    r_min, r_max = _parse_magic(first[1], path)
    second = next(lines, None)
    if second is None or second[1].strip() != CANONICAL_HEADER:
        raise DatasetError(f"expected header {CANONICAL_HEADER!r}", path, 2)

    def triples():
        for lineno, line in lines:
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split(",")
            if len(cols) != 3:
                raise DatasetError(f"malformed row, expected 3 fields, got {len(cols)}", path, lineno)
            try:
                rating = float(cols[2])
            except ValueError:
                raise DatasetError(f"rating {cols[2]!r} is not a number", path, lineno) from None
            if not (math.isfinite(rating) and r_min <= rating <= r_max):
                raise DatasetError(f"rating {rating} outside [{r_min}, {r_max}]", path, lineno)
            yield cols[0], cols[1], rating

    try:
        return Dataset.from_triples(triples(), r_min, r_max, name=name if name is not None else Path(path).stem)
    except DatasetError as exc:
        if exc.path is None:
            raise DatasetError(str(exc), path) from None
        raise


LOADERS = {
    "movielens": load_movielens,
    "filmtrust": load_filmtrust,
    "epinions": load_epinions,
    "canonical": read_canonical,
}


def load(path, fmt: str = "canonical") -> Dataset:
    try:
        loader = LOADERS[fmt]
    except KeyError:
        raise ValueError(f"unknown format {fmt!r}; choose from {sorted(LOADERS)}") from None
    return loader(path)


# -- splits -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HoldoutSplit:
    parent: Dataset
    train_idx: np.ndarray
    test_idx: np.ndarray
    seed: int
    ratio: float

    @property
    def train(self) -> Dataset:
        return self.parent.subset(self.train_idx)

    @property
    def test(self) -> Dataset:
        return self.parent.subset(self.test_idx)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.train_idx.tobytes())
        h.update(b"|")
        h.update(self.test_idx.tobytes())
        return h.hexdigest()


def holdout_split(ds: Dataset, ratio: float = 0.9, seed: int = 0) -> HoldoutSplit:
    """Uniform random train/test partition of the triples.

    The first ``round(ratio * N)`` entries of a seeded permutation go to train.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    n = len(ds)
    n_train = int(math.floor(ratio * n + 0.5))
    if n_train == 0 or n_train == n:
        raise ValueError(f"dataset of {n} triples too small for a {ratio} split with both sides non-empty")
    perm = np.random.default_rng(seed).permutation(n)
    return HoldoutSplit(ds, _readonly(perm[:n_train]), _readonly(perm[n_train:]), seed, ratio)


# -- planted synthetic data ---------------------------------------------------

def default_granularity(r_min: float) -> float:
    return 0.5 if r_min == 0.5 else 1.0


def synth_generate(
    n_users: int,
    n_items: int,
    k_true: int,
    noise_sd: float,
    density: float,
    r_min: float = 1.0,
    r_max: float = 5.0,
    seed: int = 0,
    *,
    granularity: float | None = None,
    spread: float | None = None,
) -> tuple[Dataset, dict]:
    """Ratings generated from hidden user/item points.

    ``rating = clamp(r_max - |p_u - q_i| + N(0, noise_sd), r_min, r_max)``,
    rounded to ``granularity`` (0.5 when ``r_min == 0.5``, else 1; pass 0 to
    keep real values). Points are N(0, spread^2) per coordinate, with the
    default spread chosen so a typical distance is half the rating range.

    Returns the dataset and ``{"users": (n_users, k), "items": (n_items, k)}``
    planted positions aligned with the dataset's dense indices.
    """
    if min(n_users, n_items, k_true) < 1:
        raise ValueError("n_users, n_items and k_true must be positive")
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must be in (0, 1], got {density}")
    if noise_sd < 0 or not r_min < r_max:
        raise ValueError("noise_sd must be >= 0 and r_min < r_max")
    if granularity is None:
        granularity = default_granularity(r_min)
    if spread is None:
        spread = (r_max - r_min) / (2.0 * math.sqrt(2.0 * k_true))

    rng = np.random.default_rng(seed)
    p = rng.normal(0.0, spread, size=(n_users, k_true))
    q = rng.normal(0.0, spread, size=(n_items, k_true))
    n_pairs = max(1, int(round(density * n_users * n_items)))
    cells = np.sort(rng.choice(n_users * n_items, size=n_pairs, replace=False))
    u, i = np.divmod(cells, n_items)

    dist = np.sqrt(((p[u] - q[i]) ** 2).sum(axis=1))
    raw = r_max - dist
    if noise_sd > 0:
        raw = raw + rng.normal(0.0, noise_sd, size=n_pairs)
    if granularity > 0:
        raw = r_min + np.round((raw - r_min) / granularity) * granularity
    ratings = np.clip(raw, r_min, r_max)

    ds = Dataset.from_triples(
        ((f"u{a}", f"i{b}", float(r)) for a, b, r in zip(u, i, ratings)),
        r_min, r_max, name="synthetic",
    )
    user_order = np.array([int(s[1:]) for s in ds.user_ids])
    item_order = np.array([int(s[1:]) for s in ds.item_ids])
    return ds, {"users": p[user_order], "items": q[item_order]}
