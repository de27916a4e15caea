"""Shared dataset machinery: samples, split plans, vocabularies, JSONL io,
and deterministic chunked generation.

Every (split, depth, chunk) triple draws from its own named stream, so the
emitted files are byte-identical no matter how many workers run the
chunks.
"""

from __future__ import annotations

import json
import multiprocessing
from dataclasses import dataclass
from pathlib import Path

from ..rng import RngTree

PAD, BEGIN, END = "<pad>", "<b>", "<e>"
CHUNK_SIZE = 512


@dataclass(frozen=True)
class Sample:
    tokens: tuple[str, ...]
    target: str
    depth: int
    dep_depth: int | None = None


@dataclass(frozen=True)
class SplitSpec:
    name: str
    depths: tuple[int, ...]
    size: int

    def quotas(self) -> list[tuple[int, int]]:
        """Per-depth counts, balanced to within one sample; the remainder
        goes to the shallowest depths."""
        base, rem = divmod(self.size, len(self.depths))
        return [(d, base + (1 if i < rem else 0)) for i, d in enumerate(self.depths)]


@dataclass(frozen=True)
class SplitPlan:
    splits: tuple[SplitSpec, ...]

    def __getitem__(self, name: str) -> SplitSpec:
        for s in self.splits:
            if s.name == name:
                return s
        raise KeyError(name)

    def names(self) -> list[str]:
        return [s.name for s in self.splits]

    def to_jsonable(self) -> list[dict]:
        return [{"name": s.name, "depths": list(s.depths), "size": s.size} for s in self.splits]

    @classmethod
    def from_jsonable(cls, rows: list[dict]) -> "SplitPlan":
        return cls(tuple(SplitSpec(r["name"], tuple(r["depths"]), r["size"]) for r in rows))


class Vocab:
    """Token and class tables for one task. Model inputs are
    <b> tokens... <e>, padded with id 0."""

    def __init__(self, tokens: tuple[str, ...], classes: tuple[str, ...]):
        self.tokens = (PAD, BEGIN, END) + tokens
        self.classes = classes
        self._tok_id = {t: i for i, t in enumerate(self.tokens)}
        self._cls_id = {c: i for i, c in enumerate(classes)}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def encode(self, tokens) -> list[int]:
        try:
            return [self._tok_id[BEGIN]] + [self._tok_id[t] for t in tokens] + [self._tok_id[END]]
        except KeyError as exc:
            raise ValueError(f"token {exc.args[0]!r} not in vocabulary") from None

    def class_id(self, target: str) -> int:
        try:
            return self._cls_id[target]
        except KeyError:
            raise ValueError(f"target {target!r} not a known class") from None


# ---------------------------------------------------------------------------
# JSONL + manifest io


def sample_to_json(s: Sample) -> str:
    record = {"tokens": list(s.tokens), "target": s.target, "depth": s.depth,
              "dep_depth": s.dep_depth}
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def sample_from_json(line: str) -> Sample:
    d = json.loads(line)
    return Sample(tuple(d["tokens"]), d["target"], d["depth"], d.get("dep_depth"))


def write_jsonl(path, samples) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(sample_to_json(s))
            fh.write("\n")


def read_jsonl(path) -> list[Sample]:
    with open(path) as fh:
        return [sample_from_json(line) for line in fh if line.strip()]


def write_manifest(out_dir, manifest: dict) -> None:
    with open(Path(out_dir) / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)


def read_manifest(out_dir) -> dict:
    with open(Path(out_dir) / "manifest.json") as fh:
        return json.load(fh)


def write_dataset(out_dir, splits: dict[str, list[Sample]], manifest: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, samples in splits.items():
        write_jsonl(out / f"{name}.jsonl", samples)
    write_manifest(out, manifest)


def load_split(data_dir, name: str) -> list[Sample]:
    path = Path(data_dir) / f"{name}.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"no split file {path}")
    return read_jsonl(path)


# ---------------------------------------------------------------------------
# chunked generation


def chunk_sizes(total: int, chunk: int = CHUNK_SIZE) -> list[int]:
    full, rem = divmod(total, chunk)
    return [chunk] * full + ([rem] if rem else [])


def fill_quota(attempt_fn, seed_rng: RngTree, count: int, workers: int = 1) -> list[Sample]:
    """Generate exactly ``count`` samples via rejection, in fixed-size
    chunks with independent streams. ``attempt_fn(draws)`` produces a
    Sample or None per call and must be picklable (a module-level function
    or a functools.partial of one) so chunks can run in worker processes.
    Output is the fixed-order concatenation of chunks, so it does not
    depend on the worker count."""
    jobs = [(attempt_fn, seed_rng.child(f"chunk{i}"), n)
            for i, n in enumerate(chunk_sizes(count))]
    if workers > 1 and len(jobs) > 1:
        with multiprocessing.Pool(workers) as pool:
            parts = pool.map(_run_chunk, jobs)
    else:
        parts = [_run_chunk(j) for j in jobs]
    out: list[Sample] = []
    for part in parts:
        out.extend(part)
    return out


def _run_chunk(job) -> list[Sample]:
    attempt_fn, rng, n = job
    draws = rng.draws()
    out: list[Sample] = []
    while len(out) < n:
        s = attempt_fn(draws)
        if s is not None:
            out.append(s)
    return out
