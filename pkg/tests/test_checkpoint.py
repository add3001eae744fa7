import numpy as np
import pytest

from vibrec import baselines, checkpoint, vibdml
from vibrec.vibdml import TrainConfig

from conftest import tiny_dataset

CFG = TrainConfig(k=3, epochs=2, batch_size=8)


@pytest.mark.parametrize("kind", ["vibdml", "biassvd", "pmf", "metricf", "global_mean"])
def test_round_trip_bit_exact(tmp_path, kind):
    from vibrec.eval import fit_model
    ds = tiny_dataset(6, 7)
    model, _ = fit_model(kind, ds, CFG)
    p = tmp_path / "m.ckpt"
    checkpoint.save_model(model, p)
    back = checkpoint.load_model(p)
    assert back.kind == kind
    assert np.array_equal(back.predict(ds.users, ds.items), model.predict(ds.users, ds.items))
    if hasattr(model, "params"):
        for name, arr in model.params().items():
            assert np.array_equal(back.params()[name], arr)
        assert back.config == model.config


def test_same_model_same_bytes(tmp_path):
    ds = tiny_dataset(6, 7)
    a, _ = vibdml.fit(ds, CFG)
    b, _ = vibdml.fit(ds, CFG)
    checkpoint.save_model(a, tmp_path / "a")
    checkpoint.save_model(b, tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_bad_files(tmp_path):
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load_model(tmp_path / "missing")
    junk = tmp_path / "junk"
    junk.write_bytes(b"not a zip")
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load_model(junk)
