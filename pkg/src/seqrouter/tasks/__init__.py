"""Task generators with exact oracles and depth-disjoint splits."""

from __future__ import annotations

from pathlib import Path

from . import arithmetic, ctl, listops
from .data import (Sample, SplitPlan, SplitSpec, Vocab, load_split, read_manifest,
                   write_dataset)

TASKS = ("ctl_fwd", "ctl_bwd", "arith", "listops")


def _check_task(task: str) -> None:
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")


def vocab_for_task(task: str) -> Vocab:
    _check_task(task)
    if task.startswith("ctl"):
        return ctl.vocab()
    return arithmetic.vocab() if task == "arith" else listops.vocab()


def default_plan(task: str) -> SplitPlan:
    _check_task(task)
    if task.startswith("ctl"):
        return ctl.default_plan()
    return arithmetic.default_plan() if task == "arith" else listops.default_plan()


def generate(task: str, seed: int, plan: SplitPlan | None = None,
             workers: int = 1) -> dict[str, list[Sample]]:
    _check_task(task)
    plan = plan or default_plan(task)
    if task.startswith("ctl"):
        order = "forward" if task == "ctl_fwd" else "backward"
        return ctl.generate(plan, seed, order, workers)
    if task == "arith":
        return arithmetic.generate(plan, seed, workers)
    return listops.generate(plan, seed, workers)


def generate_to_dir(task: str, seed: int, out_dir, plan: SplitPlan | None = None,
                    workers: int = 1) -> dict[str, list[Sample]]:
    plan = plan or default_plan(task)
    splits = generate(task, seed, plan, workers)
    manifest = {"format": 1, "task": task, "seed": seed, "plan": plan.to_jsonable()}
    if task.startswith("ctl"):
        order = "forward" if task == "ctl_fwd" else "backward"
        manifest["ctl"] = ctl.manifest_entry(seed, order)
    write_dataset(out_dir, splits, manifest)
    return splits


def dataset_task(data_dir) -> str:
    return read_manifest(Path(data_dir))["task"]
