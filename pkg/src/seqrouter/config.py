"""Run configuration: one flat dataclass, readable from key=value files,
with per-task defaults matching the reference hyperparameter grid."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass
from pathlib import Path

from .layers import ACTConfig
from .model import ModelConfig

# Canonical search values for the adaptive-depth regularizer weight,
# usable directly as a sweep axis (act_reg_weight).
ACT_REG_SWEEP = (0.001, 0.003, 0.01, 0.03, 0.1)


@dataclass
class RunConfig:
    task: str = "ctl_fwd"
    # model
    d_model: int = 256
    d_ff: int = 512
    n_heads: int = 1
    n_layers: int = 14
    test_steps: int | None = None
    kind: str = "geometric"
    gated: bool = True
    readout: str = "last"
    act: str = "none"  # none | A | U
    act_t_max: int | None = None
    act_epsilon: float = 0.01
    act_reg_weight: float = 0.03
    dropout: float = 0.5
    att_dropout: float = 0.1
    # optimization
    batch_size: int = 512
    lr: float = 1.5e-4
    weight_decay: float = 0.01
    grad_clip: float = 5.0
    n_iters: int = 30_000
    eval_every: int = 1000
    seed: int = 0
    # paths
    data_dir: str = "data/ctl_fwd"
    out_dir: str = "runs/run"

    def model_config(self, vocab_size: int, n_classes: int) -> ModelConfig:
        act = None
        if self.act != "none":
            act = ACTConfig(variant=self.act, t_max=self.act_t_max,
                            epsilon=self.act_epsilon, reg_weight=self.act_reg_weight)
        return ModelConfig(
            vocab_size=vocab_size, n_classes=n_classes, d_model=self.d_model,
            d_ff=self.d_ff, n_heads=self.n_heads, n_layers=self.n_layers,
            test_steps=self.test_steps, kind=self.kind, gated=self.gated,
            readout=self.readout, act=act, dropout=self.dropout,
            att_dropout=self.att_dropout)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def default_config(task: str) -> RunConfig:
    """Defaults reproducing the gated geometric-attention rows of the
    hyperparameter tables for each task."""
    if task in ("ctl_fwd", "ctl_bwd"):
        return RunConfig(task=task, d_model=256, d_ff=512, n_heads=1, n_layers=14,
                         batch_size=512, lr=1.5e-4, weight_decay=0.01, dropout=0.5,
                         att_dropout=0.1, grad_clip=5.0, n_iters=30_000,
                         data_dir=f"data/{task}")
    if task == "arith":
        return RunConfig(task=task, d_model=256, d_ff=1024, n_heads=4, n_layers=15,
                         batch_size=512, lr=1.5e-4, weight_decay=0.01, dropout=0.5,
                         att_dropout=0.1, grad_clip=1.0, n_iters=100_000,
                         data_dir="data/arith")
    if task == "listops":
        return RunConfig(task=task, d_model=512, d_ff=1024, n_heads=16, n_layers=20,
                         test_steps=24, batch_size=512, lr=2e-4, weight_decay=0.09,
                         dropout=0.1, att_dropout=0.1, grad_clip=1.0, n_iters=100_000,
                         data_dir="data/listops")
    raise ValueError(f"unknown task {task!r}")


_HINTS = typing.get_type_hints(RunConfig)


def _coerce(key: str, raw: str):
    if key not in _HINTS:
        raise ValueError(f"unknown config key {key!r}")
    hint = _HINTS[key]
    raw = raw.strip()
    if hint in (int, float, str, bool):
        kinds = {int: int, float: float, str: str}
        if hint is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"config key {key!r} expects a boolean, got {raw!r}")
        return kinds[hint](raw)
    # Optional[int] is the only other hint in use.
    if raw.lower() in ("none", ""):
        return None
    return int(raw)


def load_config(path) -> RunConfig:
    """Flat key = value text; '#' starts a comment. Unknown keys are
    rejected. The task's defaults fill everything unspecified."""
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, raw = line.split("=", 1)
        pairs[key.strip()] = raw
    task = pairs.get("task", "ctl_fwd").strip()
    cfg = default_config(task)
    for key, raw in pairs.items():
        setattr(cfg, key, _coerce(key, raw))
    return cfg


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        setattr(cfg, key.strip(), _coerce(key.strip(), raw))
    return cfg
