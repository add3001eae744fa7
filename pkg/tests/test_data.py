import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vibrec import data
from vibrec.data import Dataset, DatasetError, holdout_split, synth_generate

from conftest import tiny_dataset


def test_movielens_fixture_dense_indices(write):
    p = write("u.data", "a\tx\t3\t100\na\ty\t4\t101\nb\tx\t5\t102\n")
    ds = data.load_movielens(p)
    assert ds.n_users == 2 and ds.n_items == 2 and len(ds) == 3
    assert sorted(ds.user_index.values()) == [0, 1]
    assert ds.r_min == 1.0 and ds.r_max == 5.0
    assert list(ds.users) == [0, 0, 1]


def test_movielens_empty_file(write):
    with pytest.raises(DatasetError, match="no triples"):
        data.load_movielens(write("u.data", ""))


@pytest.mark.parametrize("line,msg", [
    ("1\t2\t3\n", "line 1|:1:"),
    ("1\t2\tx\t9\n", ":1:"),
    ("1\t2\t6\t9\n", "outside"),
    ("1\t2\t0\t9\n", "outside"),
])
def test_movielens_malformed_lines_report_line_number(write, line, msg):
    p = write("u.data", "7\t8\t4\t1\n" + line)
    with pytest.raises(DatasetError) as exc:
        data.load_movielens(p)
    assert exc.value.lineno == 2
    assert ":2:" in str(exc.value)


def test_unreadable_file(tmp_path):
    with pytest.raises(DatasetError, match="cannot read"):
        data.load_movielens(tmp_path / "missing")


def test_filmtrust_range(write):
    ds = data.load_filmtrust(write("r.txt", "1 1 4.0\n"))
    assert len(ds) == 1 and ds.ratings[0] == 4.0
    assert (ds.r_min, ds.r_max) == (0.5, 4.0)
    with pytest.raises(DatasetError, match="outside"):
        data.load_filmtrust(write("bad.txt", "1 1 4.5\n"))


def test_epinions_duplicates_last_wins(write):
    ds = data.load_epinions(write("e.txt", "1 1 2\n1 2 3 extra\n1 1 5\n"))
    assert ds.duplicates == 1
    assert len(ds) == 2
    got = {(t.user_raw, t.item_raw): t.rating for t in ds}
    assert got[("1", "1")] == 5.0


def test_epinions_missing_column(write):
    with pytest.raises(DatasetError) as exc:
        data.load_epinions(write("e.txt", "1 1 2\n1 2\n"))
    assert exc.value.lineno == 2


def test_unknown_format():
    with pytest.raises(ValueError, match="unknown format"):
        data.load("x", "netflix")


def test_dataset_is_read_only():
    ds = tiny_dataset()
    with pytest.raises(ValueError):
        ds.ratings[0] = 1.0


def test_canonical_round_trip(tmp_path):
    ds = tiny_dataset(4, 5)
    assert len(ds) >= 10
    ds = ds.subset(np.arange(10))
    p = tmp_path / "c.csv"
    data.write_canonical(ds, p)
    back = data.read_canonical(p)
    assert [tuple(vars(t).values()) for t in back] == [tuple(vars(t).values()) for t in ds]
    assert (back.r_min, back.r_max) == (ds.r_min, ds.r_max)


def test_canonical_header_only(write):
    p = write("c.csv", "#vibrec-ratings v1 r_min=1.0 r_max=5.0\nuser,item,rating\n")
    with pytest.raises(DatasetError, match="no triples"):
        data.read_canonical(p)


def test_canonical_bad_headers(write):
    with pytest.raises(DatasetError, match="not a canonical"):
        data.read_canonical(write("a.csv", "user,item,rating\n1,2,3\n"))
    with pytest.raises(DatasetError, match="r_min"):
        data.read_canonical(write("b.csv", "#vibrec-ratings v1\nuser,item,rating\n1,2,3\n"))


ids = st.text(alphabet="abcdefghij0123456789_-", min_size=1, max_size=6)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(ids, ids, st.floats(0.5, 4.0)), min_size=1, max_size=30))
def test_canonical_round_trip_property(tmp_path_factory, triples):
    ds = Dataset.from_triples(triples, 0.5, 4.0)
    p = tmp_path_factory.mktemp("rt") / "c.csv"
    data.write_canonical(ds, p)
    back = data.read_canonical(p)
    assert back.user_ids == ds.user_ids and back.item_ids == ds.item_ids
    assert np.array_equal(back.users, ds.users) and np.array_equal(back.items, ds.items)
    assert np.array_equal(back.ratings, ds.ratings)


def test_holdout_sizes_and_cover():
    ds = tiny_dataset(30, 40, density=0.9)
    n = len(ds)
    s = holdout_split(ds, 0.9, seed=3)
    assert len(s.train_idx) == math.floor(0.9 * n + 0.5)
    assert len(s.train_idx) + len(s.test_idx) == n
    assert np.array_equal(np.sort(np.concatenate([s.train_idx, s.test_idx])), np.arange(n))
    assert len(s.train) == len(s.train_idx) and s.train.n_users == ds.n_users


def test_holdout_ratio_of_100000():
    ds = Dataset(np.zeros(100000, dtype=np.int64), np.arange(100000), np.ones(100000),
                 ("u",), tuple(str(j) for j in range(100000)), 1.0, 5.0)
    s = holdout_split(ds, 0.9, 0)
    assert (len(s.train_idx), len(s.test_idx)) == (90000, 10000)


def test_holdout_determinism_and_seed_sensitivity():
    ds = tiny_dataset(20, 20, density=0.5)
    assert len(ds) >= 100
    a, b, c = holdout_split(ds, 0.9, 7), holdout_split(ds, 0.9, 7), holdout_split(ds, 0.9, 8)
    assert np.array_equal(a.train_idx, b.train_idx) and a.fingerprint() == b.fingerprint()
    assert not np.array_equal(a.train_idx, c.train_idx)


@pytest.mark.parametrize("ratio", [0.0, 1.0, -0.1, 1.5])
def test_holdout_bad_ratio(ratio):
    with pytest.raises(ValueError):
        holdout_split(tiny_dataset(), ratio, 0)


def test_holdout_too_small():
    ds = Dataset.from_triples([("a", "b", 3.0)], 1, 5)
    with pytest.raises(ValueError, match="too small"):
        holdout_split(ds, 0.9, 0)


def test_synth_noise_free_exact():
    ds, pos = synth_generate(20, 30, 3, 0.0, 0.5, seed=2, granularity=0)
    p, q = pos["users"], pos["items"]
    dist = np.sqrt(((p[ds.users] - q[ds.items]) ** 2).sum(axis=1))
    assert np.array_equal(ds.ratings, np.clip(ds.r_max - dist, ds.r_min, ds.r_max))


def test_synth_default_granularity():
    ds, _ = synth_generate(20, 30, 3, 0.1, 0.5, seed=2)
    assert np.all(ds.ratings == np.round(ds.ratings))
    ds, _ = synth_generate(20, 30, 3, 0.1, 0.5, r_min=0.5, r_max=4.0, seed=2)
    assert np.all(ds.ratings * 2 == np.round(ds.ratings * 2))
    assert ds.ratings.min() >= 0.5 and ds.ratings.max() <= 4.0


def test_synth_full_density_and_determinism():
    a, pa = synth_generate(7, 9, 2, 0.3, 1.0, seed=5)
    b, pb = synth_generate(7, 9, 2, 0.3, 1.0, seed=5)
    assert len(a) == 63
    assert np.array_equal(a.ratings, b.ratings) and np.array_equal(pa["users"], pb["users"])
    assert pa["users"].shape == (7, 2) and pa["items"].shape == (9, 2)


@pytest.mark.parametrize("kw", [dict(n_users=0), dict(density=0.0), dict(density=1.5), dict(noise_sd=-1)])
def test_synth_invalid(kw):
    args = dict(n_users=5, n_items=5, k_true=2, noise_sd=0.0, density=0.5)
    args.update(kw)
    with pytest.raises(ValueError):
        synth_generate(**args)
