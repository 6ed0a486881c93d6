"""Synthetic multi-task group-sparse regression data and persistence.

All randomness in the project flows through :func:`substream`: a Philox
(64-bit counter-based) generator keyed by the master seed plus a purpose
string, so every consumer gets an independent, platform-stable stream.

A bundle holds T regression tasks sharing one oracle group structure.
Per task: an oracle regressor supported on the union of at most two
groups, and train/validation/test splits with fresh design matrices and
fresh noise around the same regressor.
"""

from __future__ import annotations

import base64
import json
import zlib
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np


SCHEMA_VERSION = 1


class SchemaVersionMismatch(ValueError):
    """Bundle file was written with an unsupported schema version."""


class ChecksumMismatch(ValueError):
    """Bundle file is corrupt (payload checksum or structure broken)."""


def substream(seed: int, purpose: str) -> np.random.Generator:
    """Named, seedable, deterministic random stream.

    Streams with different purposes are statistically independent; the
    same (seed, purpose) pair reproduces bitwise on any platform.
    """
    key = zlib.crc32(purpose.encode("utf-8"))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, key])))


@dataclass(frozen=True)
class GenConfig:
    d: int = 100
    L: int = 10
    T: int = 50
    n: int = 50
    noise_var: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.L > self.d:
            raise ValueError("need L <= d")
        if self.n < 1 or self.T < 1 or self.L < 1:
            raise ValueError("counts must be positive")
        if not self.noise_var > 0:
            raise ValueError("noise variance must be positive")


@dataclass(frozen=True)
class TaskData:
    """One regression design: X is (n, d) with unit-norm columns, y is (n,)."""

    X: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class Task:
    train: TaskData
    val: TaskData
    test: TaskData
    w_star: np.ndarray


@dataclass(frozen=True)
class TaskBundle:
    gen: GenConfig
    group_of_feature: np.ndarray  # (d,) int, oracle group index per feature
    tasks: tuple[Task, ...]

    @property
    def d(self) -> int:
        return self.gen.d

    @property
    def L(self) -> int:
        return self.gen.L

    @property
    def T(self) -> int:
        return self.gen.T

    def groups(self) -> list[np.ndarray]:
        """Oracle groups as index arrays (a partition of range(d))."""
        return [np.nonzero(self.group_of_feature == l)[0] for l in range(self.gen.L)]

    def oracle_theta(self) -> np.ndarray:
        t = np.zeros((self.gen.d, self.gen.L))
        t[np.arange(self.gen.d), self.group_of_feature] = 1.0
        return t


def random_partition(d: int, L: int, seed: int) -> np.ndarray:
    """Partition range(d) into L contiguous nonempty blocks of uneven sizes.

    Block sizes are a symmetric Dirichlet(0.5) draw scaled to d, floored,
    clamped to a minimum of 1, with the rounding remainder settled on the
    largest block. Returns the (d,) group-index-per-feature array.
    """
    if L > d:
        raise ValueError("need L <= d")
    rng = substream(seed, "partition")
    p = rng.dirichlet(np.full(L, 0.5))
    sizes = np.maximum(1, np.floor(p * d).astype(np.int64))
    rem = d - int(sizes.sum())
    while rem != 0:
        big = int(np.argmax(sizes))
        if rem > 0:
            sizes[big] += rem
            rem = 0
        else:
            take = min(-rem, int(sizes[big]) - 1)
            sizes[big] -= take
            rem += take
            if take == 0:  # all blocks at minimum size; cannot shrink further
                raise AssertionError("partition remainder cannot be settled")
    return np.repeat(np.arange(L, dtype=np.int64), sizes)


def _design(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    X = rng.standard_normal((n, d))
    X /= np.linalg.norm(X, axis=0)
    return X


def generate(cfg: GenConfig) -> TaskBundle:
    """Generate a bundle; a pure function of the config (seed included)."""
    group_of_feature = random_partition(cfg.d, cfg.L, cfg.seed)
    rng_sup = substream(cfg.seed, "supports")
    rng_w = substream(cfg.seed, "wstar")
    rng_x = substream(cfg.seed, "design")
    rng_e = substream(cfg.seed, "noise")
    sigma = float(np.sqrt(cfg.noise_var))

    tasks = []
    for _ in range(cfg.T):
        # half the tasks draw one group, half draw two distinct groups
        k = 1 if rng_sup.random() < 0.5 else 2
        chosen = rng_sup.choice(cfg.L, size=k, replace=False)
        support = np.isin(group_of_feature, chosen)
        w_star = np.zeros(cfg.d)
        w_star[support] = rng_w.standard_normal(int(support.sum()))

        splits = []
        for _split in range(3):
            X = _design(rng_x, cfg.n, cfg.d)
            y = X @ w_star + sigma * rng_e.standard_normal(cfg.n)
            splits.append(TaskData(X=X, y=y))
        tasks.append(Task(train=splits[0], val=splits[1], test=splits[2], w_star=w_star))
    return TaskBundle(gen=cfg, group_of_feature=group_of_feature, tasks=tuple(tasks))


# ---------------------------------------------------------------------------
# persistence: one JSON document, numeric payloads as base64 little-endian
# arrays, CRC-32 over the concatenated payload bytes in document order


def _encode_array(arr: np.ndarray, parts: list[bytes]) -> dict:
    arr = np.ascontiguousarray(arr)
    dtype = "<i8" if arr.dtype.kind == "i" else "<f8"
    raw = arr.astype(dtype).tobytes()
    parts.append(raw)
    return {
        "dtype": dtype,
        "shape": list(arr.shape),
        "data": base64.b64encode(raw).decode("ascii"),
    }


def _decode_array(payload: dict, parts: list[bytes]) -> np.ndarray:
    raw = base64.b64decode(payload["data"])
    parts.append(raw)
    arr = np.frombuffer(raw, dtype=payload["dtype"]).reshape(payload["shape"])
    return arr.astype(np.float64) if payload["dtype"] == "<f8" else arr.astype(np.int64)


def save_bundle(bundle: TaskBundle, path) -> None:
    parts: list[bytes] = []
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "task_bundle",
        "gen": {
            "d": bundle.gen.d,
            "L": bundle.gen.L,
            "T": bundle.gen.T,
            "n": bundle.gen.n,
            "noise_var": bundle.gen.noise_var,
            "seed": bundle.gen.seed,
        },
        "group_of_feature": _encode_array(bundle.group_of_feature, parts),
        "tasks": [
            {
                "train": {"X": _encode_array(t.train.X, parts), "y": _encode_array(t.train.y, parts)},
                "val": {"X": _encode_array(t.val.X, parts), "y": _encode_array(t.val.y, parts)},
                "test": {"X": _encode_array(t.test.X, parts), "y": _encode_array(t.test.y, parts)},
                "w_star": _encode_array(t.w_star, parts),
            }
            for t in bundle.tasks
        ],
    }
    doc["checksum"] = zlib.crc32(b"".join(parts))
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def load_bundle(path) -> TaskBundle:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
        version = doc["schema_version"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ChecksumMismatch(f"bundle file is corrupt: {exc}") from exc
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"schema version {version}, expected {SCHEMA_VERSION}")
    try:
        parts: list[bytes] = []
        group_of_feature = _decode_array(doc["group_of_feature"], parts)
        tasks = []
        for td in doc["tasks"]:
            splits = {
                name: TaskData(X=_decode_array(td[name]["X"], parts), y=_decode_array(td[name]["y"], parts))
                for name in ("train", "val", "test")
            }
            tasks.append(Task(w_star=_decode_array(td["w_star"], parts), **splits))
        checksum = zlib.crc32(b"".join(parts))
        stated = doc["checksum"]
        gen = GenConfig(**doc["gen"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ChecksumMismatch(f"bundle file is corrupt: {exc}") from exc
    if checksum != stated:
        raise ChecksumMismatch(f"payload checksum {checksum} != stated {stated}")
    return TaskBundle(gen=gen, group_of_feature=group_of_feature, tasks=tuple(tasks))
