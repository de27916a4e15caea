"""Checkpoint archive: one zip holding named parameter tensors as raw
little-endian floats, the model config as a key-value header, optimizer
moments, the step counter, and PRNG states. Round-trips are bitwise."""

from __future__ import annotations

import json
import zipfile
from typing import Any

import numpy as np

from .model import EncoderModel, ModelConfig
from .optim import OptimizerState
from .rng import RngTree


def _to_jsonable(obj):
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": obj.tolist(), "dtype": str(obj.dtype)}
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def _from_jsonable(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            return np.array(obj["__ndarray__"], dtype=obj["dtype"])
        return {k: _from_jsonable(v) for k, v in obj.items()}
    return obj


def generator_state(gen: np.random.Generator) -> dict:
    return _to_jsonable(gen.bit_generator.state)


def restore_generator(state: dict) -> np.random.Generator:
    state = _from_jsonable(state)
    bit_gen = getattr(np.random, state["bit_generator"])()
    bit_gen.state = state
    return np.random.Generator(bit_gen)


def _write_array(zf: zipfile.ZipFile, name: str, arr: np.ndarray) -> dict:
    little = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    zf.writestr(name, little.tobytes())
    return {"shape": list(arr.shape), "dtype": str(little.dtype)}


def _read_array(zf: zipfile.ZipFile, name: str, meta: dict) -> np.ndarray:
    raw = zf.read(name)
    arr = np.frombuffer(raw, dtype=np.dtype(meta["dtype"])).reshape(meta["shape"])
    return arr.astype(arr.dtype.newbyteorder("="), copy=True)


def save_checkpoint(path, model: EncoderModel, opt: OptimizerState | None = None,
                    header: dict[str, Any] | None = None) -> None:
    header = dict(header or {})
    header["config"] = model.cfg.to_dict()
    manifest: dict[str, dict] = {}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for p in model.parameters():
            manifest[p.name] = _write_array(zf, f"params/{p.name}", p.data)
            manifest[p.name]["decay"] = p.decay
        opt_meta = None
        if opt is not None:
            opt_meta = {"lr": opt.lr, "weight_decay": opt.weight_decay, "beta1": opt.beta1,
                        "beta2": opt.beta2, "eps": opt.eps, "step_count": opt.step_count,
                        "moments": {}}
            for name, m in opt.m.items():
                opt_meta["moments"][name] = _write_array(zf, f"opt_m/{name}", m)
                _write_array(zf, f"opt_v/{name}", opt.v[name])
        zf.writestr("header.json", json.dumps(header, sort_keys=True))
        zf.writestr("manifest.json", json.dumps(manifest, sort_keys=True))
        if opt_meta is not None:
            zf.writestr("optimizer.json", json.dumps(opt_meta, sort_keys=True))


def load_checkpoint(path) -> tuple[EncoderModel, OptimizerState | None, dict]:
    with zipfile.ZipFile(path, "r") as zf:
        header = json.loads(zf.read("header.json"))
        manifest = json.loads(zf.read("manifest.json"))
        cfg = ModelConfig.from_dict(header["config"])
        model = EncoderModel.build(cfg, RngTree(0))
        loaded = set()
        for p in model.parameters():
            if p.name not in manifest:
                raise ValueError(f"checkpoint missing parameter {p.name}")
            p.data = _read_array(zf, f"params/{p.name}", manifest[p.name])
            loaded.add(p.name)
        extra = set(manifest) - loaded
        if extra:
            raise ValueError(f"checkpoint has unknown parameters: {sorted(extra)}")
        opt = None
        if "optimizer.json" in zf.namelist():
            meta = json.loads(zf.read("optimizer.json"))
            opt = OptimizerState(lr=meta["lr"], weight_decay=meta["weight_decay"],
                                 beta1=meta["beta1"], beta2=meta["beta2"], eps=meta["eps"],
                                 step_count=meta["step_count"])
            for name, arr_meta in meta["moments"].items():
                opt.m[name] = _read_array(zf, f"opt_m/{name}", arr_meta)
                opt.v[name] = _read_array(zf, f"opt_v/{name}", arr_meta)
    return model, opt, header
