import numpy as np
import pytest

from vibrec import baselines, data, vibdml
from vibrec.baselines import DotProductModel, MetricFModel
from vibrec.vibdml import BiasTerms, TrainConfig
from vibrec.verify import random_instance, run_trials

from conftest import tiny_dataset


@pytest.mark.parametrize("kind", ["biassvd", "pmf", "metricf"])
def test_gradients_match_finite_differences(kind):
    trials = run_trials([kind], trials=100, seed=7)
    bad = [t for t in trials if not t.report.passed]
    assert not bad, [(t.index, t.report.failing) for t in bad]


@pytest.mark.parametrize("kind", ["biassvd", "pmf", "metricf"])
def test_gradient_check_detects_fault(kind):
    rng = np.random.default_rng(0)
    model, batch, _ = random_instance(kind, rng)
    g = baselines.grad_batch(model, batch)
    g["P"][int(batch[0][0]), 0] += 1.0
    assert not baselines.gradient_check(model, batch, grads=g).passed


def test_biassvd_initial_prediction_is_global_mean():
    ds = tiny_dataset()
    cfg = TrainConfig(k=4)
    m = baselines.init_dot_model(ds.n_users, ds.n_items, cfg, "biassvd", 1, 5, 3.25)
    m.P[:] = 0.0
    assert np.all(baselines.biassvd_predict(m, ds.users, ds.items) == 3.25)


def test_pmf_zero_latents_clamp_to_r_min_and_has_no_bias_params():
    m = baselines.init_dot_model(3, 3, TrainConfig(k=2), "pmf", 1, 5, 3.0)
    m.P[:] = 0.0
    assert baselines.pmf_predict(m, 0, 1) == 1.0
    assert set(m.params()) == {"P", "Q"}
    ds = tiny_dataset()
    fitted, _ = baselines.pmf_fit(ds, TrainConfig(k=2, epochs=3))
    assert not fitted.biases.b_user.any() and not fitted.biases.b_item.any()


def test_dot_loss_with_l2_by_hand():
    P, Q = np.array([[1.0, 2.0]]), np.array([[0.5, -1.0]])
    m = DotProductModel(P, Q, BiasTerms(np.array([0.3]), np.array([-0.1]), 3.0), "biassvd", 0.1, 1, 5)
    pred = 3.0 + 0.3 - 0.1 + (0.5 - 2.0)
    pen = 0.1 * (1 + 4 + 0.25 + 1 + 0.09 + 0.01)
    assert baselines.loss_batch(m, [(0, 0, 4.0)]) == pytest.approx((4.0 - pred) ** 2 + pen, rel=1e-14)


def test_metricf_zero_distance_gives_r_max():
    P = np.array([[0.2, -0.4]])
    m = MetricFModel(P, P.copy(), BiasTerms(np.zeros(1), np.zeros(1), 0.0), 1.0, 5.0, distance_floor=0.0)
    raw = vibdml.distance_to_rating(vibdml.euclidean_distance(m.P[0], m.Q[0]), 0.0, 0.0, 0.0, 5.0)
    assert raw == 5.0
    assert baselines.metricf_predict(m, 0, 0) == 5.0


def test_metricf_and_vibdml_share_rating_path_on_fixed_inputs():
    rng = np.random.default_rng(4)
    mu_u, mu_i = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
    b = BiasTerms(rng.normal(size=3) * 0.1, rng.normal(size=5) * 0.1, 3.5)
    mf = MetricFModel(mu_u, mu_i, b, 1.0, 5.0)
    vib = vibdml.VibDmlModel(vibdml.GaussianEmbeddingTable(mu_u, np.zeros((3, 4))),
                             vibdml.GaussianEmbeddingTable(mu_i, np.zeros((5, 4))), b, 0.0, 0.0, 1.0, 5.0,
                             eval_distance="mean")
    u, i = np.array([0, 1, 2, 2]), np.array([4, 0, 3, 1])
    assert np.array_equal(baselines.metricf_predict(mf, u, i), vibdml.predict_eval(vib, u, i))
    assert baselines.euclidean_distance is vibdml.euclidean_distance
    assert baselines.distance_to_rating is vibdml.distance_to_rating


def test_global_mean():
    ds = data.Dataset.from_triples([("a", "x", 2.0), ("b", "y", 4.0)], 1, 5)
    m = baselines.global_mean_predict(ds)
    assert m.predict(0, 1) == 3.0
    assert np.all(m.predict(np.array([0, 1, 5]), np.array([1, 1, 1])) == 3.0)
    with pytest.raises(ValueError):
        baselines.global_mean_predict(ds.subset([]))


@pytest.mark.parametrize("fit", [baselines.biassvd_fit, baselines.pmf_fit, baselines.metricf_fit])
def test_fitters(fit):
    ds = tiny_dataset(10, 12, density=0.7)
    cfg = TrainConfig(k=3, epochs=5, batch_size=8)
    (a, ta), (b, tb) = fit(ds, cfg), fit(ds, cfg)
    assert ta == tb and len(ta) == 5
    assert np.array_equal(a.P, b.P)
    pred = a.predict(ds.users, ds.items)
    assert np.all((pred >= 1) & (pred <= 5))
    with pytest.raises(ValueError):
        fit(ds.subset([]), cfg)


def test_unseen_ids_fall_back():
    ds = tiny_dataset(4, 4, density=1.0)
    train = ds.subset(np.flatnonzero(ds.users != 3))
    m, _ = baselines.biassvd_fit(train, TrainConfig(k=2, epochs=2))
    assert not m.user_seen[3]
    expected = np.clip(m.biases.r_global + m.biases.b_item[0], 1, 5)
    assert m.predict(3, 0) == pytest.approx(expected)
