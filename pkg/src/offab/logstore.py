"""Logged-feedback data model: JSON-lines ingestion and window selection.

Log files are newline-delimited JSON. The first line is a header declaring
the context dimension ``d`` and the action count ``K``; every following line
is one interaction record::

    {"d": 4, "K": 3}
    {"t": 1700000000000, "x": [0.1, -2.0, 0.4, 1.1], "a": 2, "p": 0.31, "r": 1.0}

Datasets are immutable once built and are safe to share across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np


class LogFormatError(ValueError):
    """A log file violates the JSON-lines contract; the message names the line."""


@dataclass(frozen=True)
class LogRecord:
    """One logged interaction."""

    timestamp: int
    context: tuple[float, ...]
    action: int
    propensity: float
    reward: float


@dataclass(frozen=True)
class WindowSpec:
    """How to pick an evaluation window out of the accumulated log.

    ``last_n`` keeps the ``n`` most recent records, ``time_range`` keeps the
    half-open interval ``[t_start, t_end)``, ``shuffled_sample`` draws ``n``
    records uniformly without replacement with a fixed seed (result re-sorted
    by timestamp).
    """

    strategy: str
    n: int | None = None
    t_start: int | None = None
    t_end: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.strategy not in ("last_n", "time_range", "shuffled_sample"):
            raise ValueError(f"unknown window strategy: {self.strategy!r}")
        if self.strategy in ("last_n", "shuffled_sample"):
            if self.n is None or self.n < 1:
                raise ValueError(f"window strategy {self.strategy!r} needs n >= 1")
        if self.strategy == "time_range":
            if self.t_start is None or self.t_end is None:
                raise ValueError("time_range needs t_start and t_end")
            if self.t_start >= self.t_end:
                raise ValueError("time_range needs t_start < t_end")

    def to_dict(self) -> dict:
        out: dict = {"strategy": self.strategy}
        if self.strategy in ("last_n", "shuffled_sample"):
            out["n"] = self.n
        if self.strategy == "time_range":
            out["t_start"] = self.t_start
            out["t_end"] = self.t_end
        if self.strategy == "shuffled_sample":
            out["seed"] = self.seed
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "WindowSpec":
        if "strategy" not in data:
            raise ValueError("window spec is missing 'strategy'")
        return cls(
            strategy=data["strategy"],
            n=data.get("n"),
            t_start=data.get("t_start"),
            t_end=data.get("t_end"),
            seed=data.get("seed", 0),
        )


class LogDataset:
    """Immutable, timestamp-sorted batch of logged interactions.

    Backed by flat numpy arrays so a policy can be evaluated over a whole
    window in one shot. Sorting is stable: records with equal timestamps keep
    their original (file) order.
    """

    __slots__ = ("d", "K", "timestamps", "contexts", "actions", "propensities", "rewards")

    def __init__(self, d, K, timestamps, contexts, actions, propensities, rewards):
        if d < 1:
            raise ValueError(f"context dimension must be >= 1, got {d}")
        if K < 2:
            raise ValueError(f"action count must be >= 2, got {K}")
        timestamps = np.asarray(timestamps, dtype=np.int64)
        contexts = np.asarray(contexts, dtype=np.float64).reshape(len(timestamps), d)
        actions = np.asarray(actions, dtype=np.int64)
        propensities = np.asarray(propensities, dtype=np.float64)
        rewards = np.asarray(rewards, dtype=np.float64)
        n = len(timestamps)
        if not (len(actions) == len(propensities) == len(rewards) == n):
            raise ValueError("log arrays have inconsistent lengths")
        if n > 0:
            if not np.isfinite(contexts).all():
                raise ValueError("contexts must be finite")
            if not np.isfinite(rewards).all():
                raise ValueError("rewards must be finite")
            if (propensities <= 0.0).any() or (propensities > 1.0).any():
                raise ValueError("propensities must lie in (0, 1]")
            if (actions < 0).any() or (actions >= K).any():
                raise ValueError(f"actions must lie in [0, {K})")
            order = np.argsort(timestamps, kind="stable")
            timestamps = timestamps[order]
            contexts = contexts[order]
            actions = actions[order]
            propensities = propensities[order]
            rewards = rewards[order]
        for arr in (timestamps, contexts, actions, propensities, rewards):
            arr.setflags(write=False)
        object.__setattr__(self, "d", int(d))
        object.__setattr__(self, "K", int(K))
        object.__setattr__(self, "timestamps", timestamps)
        object.__setattr__(self, "contexts", contexts)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "propensities", propensities)
        object.__setattr__(self, "rewards", rewards)

    def __setattr__(self, name, value):
        raise AttributeError("LogDataset is immutable")

    def __len__(self) -> int:
        return len(self.timestamps)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LogDataset):
            return NotImplemented
        return (
            self.d == other.d
            and self.K == other.K
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.contexts, other.contexts)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.propensities, other.propensities)
            and np.array_equal(self.rewards, other.rewards)
        )

    def record(self, i: int) -> LogRecord:
        return LogRecord(
            timestamp=int(self.timestamps[i]),
            context=tuple(float(v) for v in self.contexts[i]),
            action=int(self.actions[i]),
            propensity=float(self.propensities[i]),
            reward=float(self.rewards[i]),
        )

    def __iter__(self) -> Iterator[LogRecord]:
        return (self.record(i) for i in range(len(self)))

    def subset(self, indices: np.ndarray) -> "LogDataset":
        """New dataset from ascending positional indices (order preserved)."""
        return LogDataset(
            d=self.d,
            K=self.K,
            timestamps=self.timestamps[indices],
            contexts=self.contexts[indices],
            actions=self.actions[indices],
            propensities=self.propensities[indices],
            rewards=self.rewards[indices],
        )

    @classmethod
    def from_records(cls, records, d: int, K: int) -> "LogDataset":
        records = list(records)
        return cls(
            d=d,
            K=K,
            timestamps=[r.timestamp for r in records],
            contexts=np.array([r.context for r in records], dtype=np.float64).reshape(len(records), d),
            actions=[r.action for r in records],
            propensities=[r.propensity for r in records],
            rewards=[r.reward for r in records],
        )

    def header_line(self) -> str:
        return json.dumps({"d": self.d, "K": self.K})

    def record_lines(self) -> Iterator[str]:
        for i in range(len(self)):
            yield json.dumps(
                {
                    "t": int(self.timestamps[i]),
                    "x": [float(v) for v in self.contexts[i]],
                    "a": int(self.actions[i]),
                    "p": float(self.propensities[i]),
                    "r": float(self.rewards[i]),
                }
            )


def write_jsonl(dataset: LogDataset, path, append: bool = False) -> None:
    """Write (or append) a dataset in the log file format.

    Appending skips the header; the target file must already carry one.
    """
    mode = "a" if append else "w"
    with open(path, mode, encoding="utf-8") as fh:
        if not append:
            fh.write(dataset.header_line() + "\n")
        for line in dataset.record_lines():
            fh.write(line + "\n")


def _require_int(obj: dict, key: str, where: str) -> int:
    value = obj.get(key)
    if not isinstance(value, int) or isinstance(value, bool):
        raise LogFormatError(f"{where}: field {key!r} must be an integer")
    return value


def _require_real(obj: dict, key: str, where: str) -> float:
    value = obj.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise LogFormatError(f"{where}: field {key!r} must be a number")
    value = float(value)
    if not math.isfinite(value):
        raise LogFormatError(f"{where}: field {key!r} must be finite")
    return value


def ingest(path) -> LogDataset:
    """Read and validate a JSON-lines log file into a sorted dataset."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"log file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        header_raw = fh.readline()
        if header_raw == "":
            raise LogFormatError(f"{path}: line 1: missing header line")
        where = f"{path}: line 1"
        try:
            header = json.loads(header_raw)
        except json.JSONDecodeError as exc:
            raise LogFormatError(f"{where}: malformed JSON ({exc.msg})") from exc
        if not isinstance(header, dict) or "d" not in header or "K" not in header:
            raise LogFormatError(f"{where}: header must declare 'd' and 'K'")
        d = _require_int(header, "d", where)
        k = _require_int(header, "K", where)
        if d < 1 or k < 2:
            raise LogFormatError(f"{where}: header needs d >= 1 and K >= 2")

        timestamps: list[int] = []
        contexts: list[list[float]] = []
        actions: list[int] = []
        propensities: list[float] = []
        rewards: list[float] = []
        for lineno, raw in enumerate(fh, start=2):
            where = f"{path}: line {lineno}"
            if raw.strip() == "":
                raise LogFormatError(f"{where}: blank line")
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise LogFormatError(f"{where}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise LogFormatError(f"{where}: record must be a JSON object")
            missing = [key for key in ("t", "x", "a", "p", "r") if key not in obj]
            if missing:
                raise LogFormatError(f"{where}: missing field(s) {missing}")
            t = _require_int(obj, "t", where)
            a = _require_int(obj, "a", where)
            if not 0 <= a < k:
                raise LogFormatError(f"{where}: action {a} outside [0, {k})")
            p = _require_real(obj, "p", where)
            if p <= 0.0:
                raise LogFormatError(f"{where}: propensity must be > 0, got {p}")
            if p > 1.0:
                raise LogFormatError(f"{where}: propensity must be <= 1, got {p}")
            r = _require_real(obj, "r", where)
            x = obj["x"]
            if not isinstance(x, list) or len(x) != d:
                raise LogFormatError(f"{where}: context must be a list of {d} numbers")
            row: list[float] = []
            for j, value in enumerate(x):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise LogFormatError(f"{where}: context entry {j} must be a number")
                value = float(value)
                if not math.isfinite(value):
                    raise LogFormatError(f"{where}: context entry {j} must be finite")
                row.append(value)
            timestamps.append(t)
            contexts.append(row)
            actions.append(a)
            propensities.append(p)
            rewards.append(r)

    return LogDataset(
        d=d,
        K=k,
        timestamps=timestamps,
        contexts=np.array(contexts, dtype=np.float64).reshape(len(timestamps), d),
        actions=actions,
        propensities=propensities,
        rewards=rewards,
    )


def select_window(dataset: LogDataset, spec: WindowSpec) -> LogDataset:
    """Pick the evaluation window. Deterministic given (dataset, spec)."""
    n = len(dataset)
    if spec.strategy == "last_n":
        keep = min(spec.n, n)
        return dataset.subset(np.arange(n - keep, n))
    if spec.strategy == "time_range":
        mask = (dataset.timestamps >= spec.t_start) & (dataset.timestamps < spec.t_end)
        return dataset.subset(np.flatnonzero(mask))
    keep = min(spec.n, n)
    if keep == n:
        return dataset.subset(np.arange(n))
    rng = np.random.default_rng(spec.seed)
    indices = rng.choice(n, size=keep, replace=False)
    indices.sort()
    return dataset.subset(indices)
