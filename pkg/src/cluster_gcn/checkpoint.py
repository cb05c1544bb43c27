"""Model + optimizer checkpoints.

``.json`` files store every float as its shortest round-trip decimal string,
so a save/load cycle is bit exact. Any other suffix is written as a numpy
``.npz`` container.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import write_atomic
from .model import GcnModel
from .optim import AdamState

FORMAT = "cluster-gcn-checkpoint"
VERSION = 1


def _pack(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "values": [repr(float(v)) for v in arr.ravel()]}


def _unpack(d: dict) -> np.ndarray:
    return np.array([float(v) for v in d["values"]], dtype=np.float64).reshape(d["shape"])


def save_checkpoint(path, model: GcnModel, optimizer: AdamState | None = None,
                    norm_mode: str = "row") -> None:
    path = Path(path)
    meta = {
        "format": FORMAT, "version": VERSION, "dims": [int(d) for d in model.dims],
        "variant": model.variant, "lambda": repr(float(model.lam)), "task": model.task,
        "norm_mode": norm_mode,
    }
    if path.suffix == ".json":
        doc = dict(meta, weights=[_pack(w) for w in model.weights])
        if optimizer is not None:
            doc["optimizer"] = {
                "lr": repr(optimizer.lr), "beta1": repr(optimizer.beta1),
                "beta2": repr(optimizer.beta2), "eps": repr(optimizer.eps),
                "step": optimizer.step,
                "m": [_pack(m) for m in optimizer.m], "v": [_pack(v) for v in optimizer.v],
            }
        write_atomic(path, json.dumps(doc))
        return
    arrays = {f"w{i}": w for i, w in enumerate(model.weights)}
    if optimizer is not None:
        meta["optimizer"] = {"lr": optimizer.lr, "beta1": optimizer.beta1,
                             "beta2": optimizer.beta2, "eps": optimizer.eps,
                             "step": optimizer.step, "n": len(optimizer.m)}
        arrays.update({f"m{i}": m for i, m in enumerate(optimizer.m)})
        arrays.update({f"v{i}": v for i, v in enumerate(optimizer.v)})
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[GcnModel, AdamState | None, dict]:
    """Returns (model, optimizer state or None, metadata)."""
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        _check(doc)
        model = GcnModel(doc["dims"], [_unpack(w) for w in doc["weights"]], doc["variant"],
                         float(doc["lambda"]), doc["task"])
        opt = None
        if "optimizer" in doc:
            o = doc["optimizer"]
            opt = AdamState(float(o["lr"]), float(o["beta1"]), float(o["beta2"]), float(o["eps"]),
                            int(o["step"]), [_unpack(m) for m in o["m"]], [_unpack(v) for v in o["v"]])
        return model, opt, doc
    with np.load(path) as z:
        meta = json.loads(z["meta"].tobytes().decode())
        _check(meta)
        n_layers = len(meta["dims"]) - 1
        model = GcnModel(meta["dims"], [z[f"w{i}"].copy() for i in range(n_layers)],
                         meta["variant"], float(meta["lambda"]), meta["task"])
        opt = None
        if "optimizer" in meta:
            o = meta["optimizer"]
            opt = AdamState(o["lr"], o["beta1"], o["beta2"], o["eps"], o["step"],
                            [z[f"m{i}"].copy() for i in range(o["n"])],
                            [z[f"v{i}"].copy() for i in range(o["n"])])
    return model, opt, meta


def _check(meta: dict):
    if meta.get("format") != FORMAT or meta.get("version") != VERSION:
        raise ValueError("not a checkpoint file of a supported version")
