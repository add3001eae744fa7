import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vibrec import baselines, data, eval as ev, vibdml
from vibrec.vibdml import TrainConfig

from conftest import tiny_dataset

FAST = TrainConfig(k=2, epochs=2, batch_size=16)


def test_rmse_examples():
    assert ev.rmse([1, 2, 3], [1, 2, 3]) == 0.0
    assert ev.rmse(np.arange(7) + 1.0, np.arange(7)) == 1.0
    assert ev.rmse([1, 2], [2, 4]) == pytest.approx(math.sqrt(2.5), rel=1e-15)
    assert ev.rmse([1, 2], [2, 4]) == pytest.approx(1.581139, abs=1e-6)
    with pytest.raises(ValueError):
        ev.rmse([1], [1, 2])
    with pytest.raises(ValueError):
        ev.rmse([], [])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=20), st.randoms())
def test_rmse_symmetric_and_permutation_invariant(pairs, rnd):
    p, t = map(np.array, zip(*pairs))
    perm = list(range(len(p)))
    rnd.shuffle(perm)
    assert ev.rmse(p, t) == ev.rmse(t, p)
    assert ev.rmse(p[perm], t[perm]) == pytest.approx(ev.rmse(p, t), rel=1e-12)


def test_global_mean_rmse_is_rms_deviation():
    ds = tiny_dataset(20, 20, density=0.5)
    s = data.holdout_split(ds, 0.9, 0)
    m = baselines.global_mean_predict(s.train)
    got = ev.rmse(m.predict(s.test.users, s.test.items), s.test.ratings)
    mean = np.clip(np.mean(s.train.ratings), 1, 5)
    assert got == pytest.approx(math.sqrt(np.mean((s.test.ratings - mean) ** 2)), rel=1e-12)


def test_holdout_protocol_report():
    ds = tiny_dataset(20, 20, density=0.6)
    rep = ev.run_holdout_protocol(ds, "vibdml", FAST, n_repeats=5, base_seed=10)
    assert len(rep.rmse_splits) == 5 and len(rep.wall_time_s) == 5
    d = rep.to_dict()
    assert list(d) == ["dataset", "model", "config", "rmse_splits", "rmse_mean", "rmse_std", "wall_time_s"]
    assert list(d["config"]) == ["k", "beta", "lr", "epochs", "batch", "l2", "seeds"]
    assert d["config"]["seeds"] == [10, 11, 12, 13, 14]
    assert d["rmse_mean"] == pytest.approx(sum(d["rmse_splits"]) / 5, rel=1e-15)
    assert d["rmse_std"] == pytest.approx(float(np.std(d["rmse_splits"], ddof=1)))
    again = ev.run_holdout_protocol(ds, "vibdml", FAST, n_repeats=5, base_seed=10)
    assert ev.strip_nondeterministic(again.to_dict()) == ev.strip_nondeterministic(d)


def test_single_repeat_has_no_std():
    rep = ev.run_holdout_protocol(tiny_dataset(10, 10), "global_mean", FAST, n_repeats=1)
    assert len(rep.rmse_splits) == 1 and rep.rmse_std is None


def test_paired_splits_across_models():
    ds = tiny_dataset(15, 15, density=0.6)
    a = ev.run_holdout_protocol(ds, "metricf", FAST, n_repeats=3)
    b = ev.run_holdout_protocol(ds, "pmf", FAST, n_repeats=3)
    assert a.split_fingerprints == b.split_fingerprints


def test_parallel_jobs_match_serial():
    ds = tiny_dataset(15, 15, density=0.6)
    a = ev.run_holdout_protocol(ds, "biassvd", FAST, n_repeats=2, jobs=1)
    b = ev.run_holdout_protocol(ds, "biassvd", FAST, n_repeats=2, jobs=2)
    assert a.rmse_splits == b.rmse_splits


def test_protocol_errors():
    ds = tiny_dataset()
    with pytest.raises(ValueError):
        ev.run_holdout_protocol(ds, "nnmf", FAST)
    with pytest.raises(ValueError):
        ev.run_holdout_protocol(ds, "pmf", FAST, n_repeats=0)


def test_sweep_argmin_and_singleton():
    ds = tiny_dataset(15, 15, density=0.6)
    rep = ev.sweep(ds, "metricf", FAST, "k", [1, 2, 3], n_repeats=2)
    d = rep.to_dict()
    assert d["grid"] == [1, 2, 3] and len(d["points"]) == 3
    means = [p["rmse_mean"] for p in d["points"]]
    assert d["argmin"] == ev.argmin_of(d["grid"], means)
    single = ev.sweep(ds, "metricf", FAST, "k", [2], n_repeats=2)
    direct = ev.run_holdout_protocol(ds, "metricf", FAST, n_repeats=2)
    assert single.points[0].rmse_splits == direct.rmse_splits
    with pytest.raises(ValueError):
        ev.sweep(ds, "metricf", FAST, "lr", [0.1])
    with pytest.raises(ValueError):
        ev.sweep(ds, "metricf", FAST, "k", [])
    with pytest.raises(ValueError):
        ev.sweep(ds, "metricf", FAST, "k", [0])


def test_argmin_ties_toward_smaller():
    assert ev.argmin_of([200, 100, 150], [0.9, 0.9, 0.95]) == 100
    assert ev.argmin_of([0.1, 0.2], [0.5, 0.4]) == 0.2


def test_robustness_percent_increase():
    e = ev.RobustnessEntry("x", 150, 1.0, 1.05)
    assert e.percent_increase == pytest.approx(5.0)
    assert ev.RobustnessEntry("x", 150, 0.9, 0.9).percent_increase == 0.0
    ds = tiny_dataset(15, 15, density=0.6)
    rep = ev.robustness_experiment(ds, ["metricf"], FAST, {"metricf": 2}, high_k=2, n_repeats=2)
    assert rep.entries["metricf"].percent_increase == 0.0
    with pytest.raises(ValueError):
        ev.robustness_experiment(ds, ["pmf"], FAST, {}, n_repeats=1)


def test_json_schema_round_trip(tmp_path):
    ds = tiny_dataset(10, 10)
    rep = ev.run_holdout_protocol(ds, "pmf", FAST, n_repeats=2)
    p = tmp_path / "r.json"
    ev.write_json(rep, p)
    back = ev.EvalReport.from_dict(json.loads(p.read_text()))
    assert back.to_dict() == rep.to_dict()


def _planted_model():
    ds, pos = data.synth_generate(40, 60, 2, 0.0, 0.5, seed=3)
    cfg = TrainConfig(k=2)
    model = vibdml.init_model(ds.n_users, ds.n_items, cfg, 1, 5, 3.0)
    model.users.mu[:] = pos["users"]
    model.items.mu[:] = pos["items"]
    return ds, model


def test_neighbor_consistency_planted_positions():
    ds, model = _planted_model()
    rep = ev.neighbor_consistency(model, ds, list(range(ds.n_users)))
    assert rep.top_closer_fraction >= 0.9
    assert rep.mean_rho > 0.8
    for u in rep.users:
        assert all(d >= 0 for _, _, d in u.items)
        assert set(u.level_means) <= {1.0, 2.0, 3.0, 4.0, 5.0}


def test_neighbor_consistency_fresh_model_near_zero():
    ds, _ = _planted_model()
    fresh = vibdml.init_model(ds.n_users, ds.n_items, TrainConfig(k=8, seed=5), 1, 5, 3.0)
    rep = ev.neighbor_consistency(fresh, ds, list(range(ds.n_users)))
    assert abs(rep.mean_rho) < 0.2


def test_neighbor_degenerate_and_unseen():
    ds = data.Dataset.from_triples([("a", "x", 3.0), ("a", "y", 3.0), ("b", "x", 1.0)], 1, 5)
    m = vibdml.init_model(2, 2, TrainConfig(k=2), 1, 5, 3.0)
    rep = ev.neighbor_consistency(m, ds, [0])
    assert rep.users[0].rho is None and rep.users[0].top_closer is None
    m.user_seen[1] = False
    with pytest.raises(ValueError, match="not seen"):
        ev.neighbor_consistency(m, ds, [1])


def test_export_embeddings(tmp_path):
    ds = data.Dataset.from_triples([(f"u{j}", f"i{j % 2}", 3.0) for j in range(3)], 1, 5)
    vib = vibdml.init_model(3, 2, TrainConfig(k=2), 1, 5, 3.0)
    p = tmp_path / "e.txt"
    ev.export_embeddings(vib, p, ds)
    lines = p.read_text().splitlines()
    users = [l.split() for l in lines if l.startswith("user ")]
    assert len(users) == 3 and all(len(c) == 2 + 4 for c in users)
    back = ev.read_embeddings(p, 2)
    for j, raw in enumerate(ds.user_ids):
        assert np.array_equal(back["user"][raw]["mu"], vib.users.mu[j])
        assert np.array_equal(back["user"][raw]["var"], np.exp(vib.users.logvar[j]))

    mf = baselines.init_metricf(3, 2, TrainConfig(k=2), 1, 5, 3.0)
    ev.export_embeddings(mf, p)
    cols = [l.split() for l in p.read_text().splitlines()]
    assert all(len(c) == 4 for c in cols)
    assert ev.read_embeddings(p, 2)["item"]["1"]["var"] is None
    with pytest.raises(OSError):
        ev.export_embeddings(mf, tmp_path / "no" / "such" / "dir.txt")
