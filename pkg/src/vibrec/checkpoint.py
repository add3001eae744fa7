"""Model checkpoints: a zip of ``.npy`` arrays plus a JSON metadata member.

Members are written in a fixed order with a fixed timestamp, so the same
model always produces the same bytes, and arrays round-trip bit-exactly.
"""

from __future__ import annotations

import io
import json
import zipfile

import numpy as np

from .baselines import DotProductModel, GlobalMeanModel, MetricFModel
from .vibdml import BiasTerms, GaussianEmbeddingTable, TrainConfig, VibDmlModel

FORMAT = "vibrec-checkpoint"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def _arrays_and_meta(model):
    meta = {"format": FORMAT, "version": VERSION, "kind": model.kind}
    if isinstance(model, GlobalMeanModel):
        meta.update(r_global=model.r_global, r_min=model.r_min, r_max=model.r_max)
        return {}, meta
    b = model.biases
    meta.update(r_global=b.r_global, r_min=model.r_min, r_max=model.r_max, k=model.k,
                config=model.config.to_dict())
    arrays = {"b_user": b.b_user, "b_item": b.b_item,
              "user_seen": model.user_seen, "item_seen": model.item_seen}
    if isinstance(model, VibDmlModel):
        meta.update(beta_user=model.beta_user, beta_item=model.beta_item,
                    distance_floor=model.distance_floor, eval_distance=model.eval_distance)
        arrays.update(user_mu=model.users.mu, user_logvar=model.users.logvar,
                      item_mu=model.items.mu, item_logvar=model.items.logvar,
                      user_kl_weight=model.user_kl_weight, item_kl_weight=model.item_kl_weight)
    elif isinstance(model, MetricFModel):
        meta.update(distance_floor=model.distance_floor)
        arrays.update(P=model.P, Q=model.Q)
    elif isinstance(model, DotProductModel):
        meta.update(l2=model.l2)
        arrays.update(P=model.P, Q=model.Q)
    else:
        raise CheckpointError(f"cannot checkpoint {type(model).__name__}")
    return arrays, meta


def _member(zf: zipfile.ZipFile, name: str, data: bytes):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_model(model, path) -> None:
    arrays, meta = _arrays_and_meta(model)
    with zipfile.ZipFile(path, "w") as zf:
        _member(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=1).encode("utf-8"))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            _member(zf, f"{name}.npy", buf.getvalue())


def load_model(path):
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from exc
    with zf:
        try:
            meta = json.loads(zf.read("meta.json"))
        except KeyError:
            raise CheckpointError(f"{path}: missing meta.json") from None
        if meta.get("format") != FORMAT or meta.get("version") != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint {meta.get('format')} v{meta.get('version')}")
        a = {n[:-4]: np.lib.format.read_array(io.BytesIO(zf.read(n)), allow_pickle=False)
             for n in zf.namelist() if n.endswith(".npy")}

    kind = meta["kind"]
    if kind == "global_mean":
        return GlobalMeanModel(meta["r_global"], meta["r_min"], meta["r_max"])
    cfg = TrainConfig(**meta["config"])
    biases = BiasTerms(a["b_user"], a["b_item"], meta["r_global"])
    common = dict(r_min=meta["r_min"], r_max=meta["r_max"], user_seen=a["user_seen"],
                  item_seen=a["item_seen"], config=cfg)
    if kind == "vibdml":
        return VibDmlModel(
            GaussianEmbeddingTable(a["user_mu"], a["user_logvar"]),
            GaussianEmbeddingTable(a["item_mu"], a["item_logvar"]),
            biases, beta_user=meta["beta_user"], beta_item=meta["beta_item"],
            distance_floor=meta["distance_floor"], eval_distance=meta["eval_distance"],
            user_kl_weight=a["user_kl_weight"], item_kl_weight=a["item_kl_weight"], **common,
        )
    if kind == "metricf":
        return MetricFModel(a["P"], a["Q"], biases, distance_floor=meta["distance_floor"], **common)
    if kind in ("biassvd", "pmf"):
        return DotProductModel(a["P"], a["Q"], biases, kind, meta["l2"], **common)
    raise CheckpointError(f"{path}: unknown model kind {kind!r}")
