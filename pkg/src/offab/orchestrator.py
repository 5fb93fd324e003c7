"""Periodic evaluation loop: runs, persistence, drift detection, reports.

Each run selects a window from the current log tail, re-evaluates a fixed set
of probe variants, searches the space with the GA, compares against the
previous successful run, and appends one ``run-<k>.json`` file to the store.
The probe set is regenerated deterministically from the program seed, so
probe deltas between runs measure data change, not variant change.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .estimators import DegenerateWeightsError, Estimate, EstimatorConfig, estimate
from .gasearch import GAConfig, SearchError, evolve, random_variant
from .logstore import LogDataset, LogFormatError, WindowSpec, ingest, select_window
from .policyspace import HyperparameterSpace, Variant, decode

logger = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_EMPTY_WINDOW = "empty_window"
STATUS_DEGENERATE = "degenerate"
STATUS_ABORTED = "aborted"

_PROBE_STREAM_KEY = 0x50524F42  # distinguishes probe draws from GA draws


class StoreError(OSError):
    """The results store could not be read or written."""


@dataclass(frozen=True)
class TriggerPolicy:
    """When the loop fires: every N new records (default) or every T millis."""

    kind: str = "every_n_records"
    n: int = 1000
    t_millis: int = 60_000

    def __post_init__(self) -> None:
        if self.kind not in ("every_n_records", "every_t_millis"):
            raise ValueError(f"unknown trigger kind: {self.kind!r}")
        if self.kind == "every_n_records" and self.n < 1:
            raise ValueError("trigger n must be >= 1")
        if self.kind == "every_t_millis" and self.t_millis < 1:
            raise ValueError("trigger t_millis must be >= 1")

    def to_dict(self) -> dict:
        if self.kind == "every_n_records":
            return {"kind": self.kind, "n": self.n}
        return {"kind": self.kind, "t_millis": self.t_millis}

    @classmethod
    def from_dict(cls, data: dict) -> "TriggerPolicy":
        return cls(
            kind=data.get("kind", "every_n_records"),
            n=int(data.get("n", 1000)),
            t_millis=int(data.get("t_millis", 60_000)),
        )


@dataclass(frozen=True)
class ProgramConfig:
    """Everything one evaluation program needs: space, measurement, search, data selection."""

    space: HyperparameterSpace
    estimator: EstimatorConfig
    ga: GAConfig
    window: WindowSpec
    trigger: TriggerPolicy = TriggerPolicy()
    probe_count: int = 12
    drift_threshold: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.probe_count <= 10_000:
            raise ValueError("probe_count must lie in [0, 10000]")
        if not self.drift_threshold >= 0.0:
            raise ValueError("drift_threshold must be >= 0")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "probe_count": self.probe_count,
            "drift_threshold": self.drift_threshold,
            "space": self.space.to_dict(),
            "estimator": self.estimator.to_dict(),
            "ga": self.ga.to_dict(),
            "window": self.window.to_dict(),
            "trigger": self.trigger.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProgramConfig":
        for key in ("space", "estimator", "ga", "window"):
            if key not in data:
                raise ValueError(f"program config is missing {key!r}")
        return cls(
            space=HyperparameterSpace.from_dict(data["space"]),
            estimator=EstimatorConfig.from_dict(data["estimator"]),
            ga=GAConfig.from_dict(data["ga"]),
            window=WindowSpec.from_dict(data["window"]),
            trigger=TriggerPolicy.from_dict(data.get("trigger", {})),
            probe_count=int(data.get("probe_count", 12)),
            drift_threshold=float(data.get("drift_threshold", 0.05)),
            seed=int(data.get("seed", 0)),
        )

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path) -> "ProgramConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"program config not found: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))


@dataclass(frozen=True)
class WindowDigest:
    count: int
    t_min: int | None
    t_max: int | None
    content_hash: str

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "t_min": self.t_min,
            "t_max": self.t_max,
            "content_hash": self.content_hash,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WindowDigest":
        return cls(
            count=int(data["count"]),
            t_min=data.get("t_min"),
            t_max=data.get("t_max"),
            content_hash=data["content_hash"],
        )


def window_digest(window: LogDataset) -> WindowDigest:
    digest = hashlib.sha256()
    for line in window.record_lines():
        digest.update(line.encode("utf-8"))
        digest.update(b"\n")
    empty = len(window) == 0
    return WindowDigest(
        count=len(window),
        t_min=None if empty else int(window.timestamps[0]),
        t_max=None if empty else int(window.timestamps[-1]),
        content_hash=digest.hexdigest(),
    )


@dataclass(frozen=True)
class ProbeResult:
    variant_id: str
    estimate: Estimate | None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "variant_id": self.variant_id,
            "estimate": None if self.estimate is None else self.estimate.to_dict(),
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProbeResult":
        est = data.get("estimate")
        return cls(
            variant_id=data["variant_id"],
            estimate=None if est is None else Estimate.from_dict(est),
            error=data.get("error"),
        )


@dataclass(frozen=True)
class DriftReport:
    best_delta: float
    ci_disjoint: bool
    probe_max_abs_delta: float
    flagged: bool

    def to_dict(self) -> dict:
        return {
            "best_delta": self.best_delta,
            "ci_disjoint": self.ci_disjoint,
            "probe_max_abs_delta": self.probe_max_abs_delta,
            "flagged": self.flagged,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DriftReport":
        return cls(
            best_delta=float(data["best_delta"]),
            ci_disjoint=bool(data["ci_disjoint"]),
            probe_max_abs_delta=float(data["probe_max_abs_delta"]),
            flagged=bool(data["flagged"]),
        )


def _json_float(value: float):
    return value if value == value and abs(value) != float("inf") else None


@dataclass(frozen=True)
class SearchSummary:
    """What the GA found on this window, with the winner fully re-estimated."""

    best_variant: Variant
    best_estimate: Estimate
    history: tuple[tuple[float, float], ...]
    evaluations: int

    def to_dict(self) -> dict:
        return {
            "best_variant": self.best_variant.to_dict(),
            "best_estimate": self.best_estimate.to_dict(),
            "history": [[_json_float(b), _json_float(m)] for b, m in self.history],
            "evaluations": self.evaluations,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SearchSummary":
        raw = data["best_variant"]
        history = tuple(
            (
                float("-inf") if b is None else float(b),
                float("-inf") if m is None else float(m),
            )
            for b, m in data.get("history", [])
        )
        return cls(
            best_variant=Variant(id=raw["id"], assignments=tuple(raw["assignments"])),
            best_estimate=Estimate.from_dict(data["best_estimate"]),
            history=history,
            evaluations=int(data.get("evaluations", 0)),
        )


@dataclass(frozen=True)
class EvaluationRun:
    run_id: int
    started_at: int
    finished_at: int
    status: str
    window_spec: WindowSpec
    window_digest: WindowDigest
    search: SearchSummary | None
    probes: tuple[ProbeResult, ...]
    drift: DriftReport | None

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "status": self.status,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "window": {"spec": self.window_spec.to_dict(), "digest": self.window_digest.to_dict()},
            "search": None if self.search is None else self.search.to_dict(),
            "probes": [p.to_dict() for p in self.probes],
            "drift": None if self.drift is None else self.drift.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvaluationRun":
        return cls(
            run_id=int(data["run_id"]),
            started_at=int(data["started_at"]),
            finished_at=int(data["finished_at"]),
            status=data["status"],
            window_spec=WindowSpec.from_dict(data["window"]["spec"]),
            window_digest=WindowDigest.from_dict(data["window"]["digest"]),
            search=None if data.get("search") is None else SearchSummary.from_dict(data["search"]),
            probes=tuple(ProbeResult.from_dict(p) for p in data.get("probes", [])),
            drift=None if data.get("drift") is None else DriftReport.from_dict(data["drift"]),
        )


class RunStore:
    """Append-only directory of ``run-<k>.json`` files plus a ``latest`` pointer."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def ensure(self) -> None:
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StoreError(f"cannot create store directory {self.directory}: {exc}") from exc

    def run_ids(self) -> list[int]:
        if not self.directory.is_dir():
            raise FileNotFoundError(f"store directory not found: {self.directory}")
        ids = []
        for entry in self.directory.glob("run-*.json"):
            stem = entry.stem[len("run-"):]
            if stem.isdigit():
                ids.append(int(stem))
        return sorted(ids)

    def next_run_id(self) -> int:
        try:
            ids = self.run_ids()
        except FileNotFoundError:
            return 1
        return ids[-1] + 1 if ids else 1

    def path_for(self, run_id: int) -> Path:
        return self.directory / f"run-{run_id}.json"

    def read(self, run_id: int) -> EvaluationRun:
        try:
            data = json.loads(self.path_for(run_id).read_text(encoding="utf-8"))
        except OSError as exc:
            raise StoreError(f"cannot read run {run_id}: {exc}") from exc
        return EvaluationRun.from_dict(data)

    def read_all(self) -> list[EvaluationRun]:
        return [self.read(run_id) for run_id in self.run_ids()]

    def latest_ok(self) -> EvaluationRun | None:
        try:
            ids = self.run_ids()
        except FileNotFoundError:
            return None
        for run_id in reversed(ids):
            run = self.read(run_id)
            if run.status == STATUS_OK:
                return run
        return None

    def append(self, run: EvaluationRun) -> None:
        payload = json.dumps(run.to_dict(), indent=2) + "\n"
        try:
            self.path_for(run.run_id).write_text(payload, encoding="utf-8")
            (self.directory / "latest").write_text(f"run-{run.run_id}.json\n", encoding="utf-8")
        except OSError as exc:
            raise StoreError(f"cannot write run {run.run_id} to {self.directory}: {exc}") from exc


def _now_ms() -> int:
    return int(time.time() * 1000)


def probe_variants(config: ProgramConfig) -> list[Variant]:
    """The fixed probe set, regenerated identically on every call."""
    return [
        random_variant(
            config.space,
            np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(_PROBE_STREAM_KEY, i))),
        )
        for i in range(config.probe_count)
    ]


def _evaluate_probes(config: ProgramConfig, window: LogDataset) -> tuple[ProbeResult, ...]:
    results = []
    for variant in probe_variants(config):
        try:
            est = estimate(decode(config.space, variant), window, config.estimator)
            results.append(ProbeResult(variant_id=variant.id, estimate=est))
        except (DegenerateWeightsError, ValueError) as exc:
            results.append(ProbeResult(variant_id=variant.id, estimate=None, error=str(exc)))
    return tuple(results)


def _compute_drift(config: ProgramConfig, search: SearchSummary,
                   probes: Sequence[ProbeResult], previous: EvaluationRun) -> DriftReport:
    current = search.best_estimate
    prior = previous.search.best_estimate
    best_delta = current.value - prior.value
    ci_disjoint = (
        current.ci_lo is not None
        and prior.ci_lo is not None
        and (current.ci_lo > prior.ci_hi or current.ci_hi < prior.ci_lo)
    )
    prior_probes = {p.variant_id: p for p in previous.probes}
    deltas = [
        abs(p.estimate.value - prior_probes[p.variant_id].estimate.value)
        for p in probes
        if p.estimate is not None
        and p.variant_id in prior_probes
        and prior_probes[p.variant_id].estimate is not None
    ]
    probe_max = max(deltas, default=0.0)
    return DriftReport(
        best_delta=best_delta,
        ci_disjoint=ci_disjoint,
        probe_max_abs_delta=probe_max,
        flagged=ci_disjoint or probe_max > config.drift_threshold,
    )


def run_once(config: ProgramConfig, store: RunStore, logs: LogDataset) -> EvaluationRun:
    """One evaluation: select window, probe, search, compare, persist."""
    store.ensure()
    run_id = store.next_run_id()
    started = _now_ms()
    window = select_window(logs, config.window)
    digest = window_digest(window)

    def finish(status, search=None, probes=(), drift=None) -> EvaluationRun:
        run = EvaluationRun(
            run_id=run_id,
            started_at=started,
            finished_at=_now_ms(),
            status=status,
            window_spec=config.window,
            window_digest=digest,
            search=search,
            probes=tuple(probes),
            drift=drift,
        )
        store.append(run)
        return run

    if len(window) == 0:
        return finish(STATUS_EMPTY_WINDOW)

    try:
        probes = _evaluate_probes(config, window)
        fitness_config = dataclasses.replace(config.estimator, bootstrap_resamples=0)

        def fitness(variant: Variant) -> float:
            return estimate(decode(config.space, variant), window, fitness_config).value

        try:
            result = evolve(config.space, fitness, config.ga)
            best_estimate = estimate(
                decode(config.space, result.best_variant), window, config.estimator
            )
        except (SearchError, DegenerateWeightsError) as exc:
            logger.warning("run %d: search failed: %s", run_id, exc)
            return finish(STATUS_DEGENERATE, probes=probes)
    except StoreError:
        raise
    except Exception:
        logger.exception("run %d: evaluation failed unexpectedly", run_id)
        return finish(STATUS_ABORTED)

    search = SearchSummary(
        best_variant=result.best_variant,
        best_estimate=best_estimate,
        history=result.history,
        evaluations=result.evaluations,
    )
    previous = store.latest_ok()
    drift = None if previous is None else _compute_drift(config, search, probes, previous)
    return finish(STATUS_OK, search=search, probes=probes, drift=drift)


def run_loop(
    config: ProgramConfig,
    store: RunStore,
    log_path,
    max_runs: int,
    poll_millis: int = 500,
    sleep: Callable[[float], None] = time.sleep,
    on_run: Callable[[EvaluationRun], None] | None = None,
) -> list[EvaluationRun]:
    """Poll the log file and evaluate whenever the trigger fires.

    Unreadable log files are retried on the next poll; failed runs are
    persisted with their status and do not stop the loop. Only a store
    failure (nothing can be persisted) propagates.
    """
    if max_runs < 1:
        raise ValueError("max_runs must be >= 1")
    runs: list[EvaluationRun] = []
    records_at_last_run = 0
    last_fire_ms: int | None = None
    while len(runs) < max_runs:
        try:
            logs = ingest(log_path)
        except (OSError, LogFormatError) as exc:
            logger.warning("log poll failed, retrying: %s", exc)
            sleep(poll_millis / 1000.0)
            continue
        if config.trigger.kind == "every_n_records":
            fire = len(logs) - records_at_last_run >= config.trigger.n
        else:
            fire = last_fire_ms is None or _now_ms() - last_fire_ms >= config.trigger.t_millis
        if not fire:
            sleep(poll_millis / 1000.0)
            continue
        run = run_once(config, store, logs)
        records_at_last_run = len(logs)
        last_fire_ms = _now_ms()
        runs.append(run)
        if on_run is not None:
            on_run(run)
    return runs


def _fmt(value: float | None, digits: int = 6) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def report(store: RunStore, fmt: str = "markdown") -> str:
    """Cross-run report for human review; byte-deterministic given the store."""
    if fmt not in ("json", "markdown"):
        raise ValueError(f"unknown report format: {fmt!r}")
    runs = store.read_all()
    if fmt == "json":
        return _report_json(runs)
    return _report_markdown(runs)


def _probe_columns(runs: list[EvaluationRun]) -> list[str]:
    seen: dict[str, None] = {}
    for run in runs:
        for probe in run.probes:
            seen.setdefault(probe.variant_id, None)
    return list(seen)


def _report_json(runs: list[EvaluationRun]) -> str:
    probe_ids = _probe_columns(runs)
    doc = {
        "run_count": len(runs),
        "runs": [run.to_dict() for run in runs],
        "trend": {
            "best": [
                [run.run_id, run.search.best_estimate.value]
                for run in runs
                if run.search is not None
            ],
            "probes": {
                vid: [
                    [run.run_id, probe.estimate.value]
                    for run in runs
                    for probe in run.probes
                    if probe.variant_id == vid and probe.estimate is not None
                ]
                for vid in probe_ids
            },
        },
    }
    return json.dumps(doc, indent=2) + "\n"


def _report_markdown(runs: list[EvaluationRun]) -> str:
    lines = ["# Offline evaluation report", "", f"{len(runs)} runs in store", ""]
    if not runs:
        return "\n".join(lines)
    lines.append("| run | status | records | window | best value | 95% CI | ess | capped | drift |")
    lines.append("|---:|---|---:|---|---:|---|---:|---:|---|")
    for run in runs:
        digest = run.window_digest
        window = "-" if digest.count == 0 else f"[{digest.t_min}, {digest.t_max}]"
        if run.search is not None:
            best = run.search.best_estimate
            value = _fmt(best.value)
            ci = "-" if best.ci_lo is None else f"[{_fmt(best.ci_lo)}, {_fmt(best.ci_hi)}]"
            ess = _fmt(best.ess, 1)
            capped = _fmt(best.capped_fraction, 4)
        else:
            value = ci = ess = capped = "-"
        drift = ""
        if run.drift is not None:
            drift = "DRIFT" if run.drift.flagged else "steady"
        lines.append(
            f"| {run.run_id} | {run.status} | {digest.count} | {window} "
            f"| {value} | {ci} | {ess} | {capped} | {drift} |"
        )
    lines.append("")
    lines.append("## Best variant per run")
    lines.append("")
    for run in runs:
        if run.search is None:
            lines.append(f"- run {run.run_id}: no result ({run.status})")
        else:
            assignments = ", ".join(
                str(v) if isinstance(v, str) else _fmt(float(v))
                for v in run.search.best_variant.assignments
            )
            lines.append(
                f"- run {run.run_id}: variant `{run.search.best_variant.id}` "
                f"(evaluations {run.search.evaluations}) with [{assignments}]"
            )
    probe_ids = _probe_columns(runs)
    if probe_ids:
        lines.append("")
        lines.append("## Probe trend")
        lines.append("")
        header = "| run |" + "".join(f" `{vid}` |" for vid in probe_ids)
        lines.append(header)
        lines.append("|---:|" + "---:|" * len(probe_ids))
        for run in runs:
            by_id = {p.variant_id: p for p in run.probes}
            cells = []
            for vid in probe_ids:
                probe = by_id.get(vid)
                cells.append(_fmt(None if probe is None or probe.estimate is None else probe.estimate.value))
            lines.append(f"| {run.run_id} |" + "".join(f" {cell} |" for cell in cells))
    lines.append("")
    return "\n".join(lines)
