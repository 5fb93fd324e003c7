from __future__ import annotations

import dataclasses
import json

import numpy as np
import pytest

from offab.banditsim import default_scenario, generate_logs
from offab.estimators import EstimatorConfig
from offab.gasearch import GAConfig
from offab.logstore import WindowSpec, ingest, select_window, write_jsonl
from offab.orchestrator import (
    STATUS_ABORTED,
    STATUS_DEGENERATE,
    STATUS_EMPTY_WINDOW,
    STATUS_OK,
    EvaluationRun,
    ProgramConfig,
    RunStore,
    StoreError,
    TriggerPolicy,
    probe_variants,
    report,
    run_loop,
    run_once,
    window_digest,
)
from offab.policyspace import builtin_space


def small_config(**overrides) -> ProgramConfig:
    defaults = dict(
        space=builtin_space(4, 3),
        estimator=EstimatorConfig(kind="NCIS", cap=100.0, bootstrap_resamples=40, seed=3),
        ga=GAConfig(population_size=8, generations=3, seed=4),
        window=WindowSpec(strategy="last_n", n=200),
        probe_count=4,
        seed=9,
    )
    defaults.update(overrides)
    return ProgramConfig(**defaults)


@pytest.fixture
def logs():
    return generate_logs(default_scenario(seed=11), 400)


@pytest.fixture
def store(tmp_path):
    return RunStore(tmp_path / "runs")


class TestConfig:
    def test_json_round_trip(self, tmp_path):
        config = small_config()
        path = tmp_path / "program.json"
        config.to_json(path)
        assert ProgramConfig.from_json(path) == config

    def test_missing_block_rejected(self):
        with pytest.raises(ValueError, match="space"):
            ProgramConfig.from_dict({"estimator": {}, "ga": {}, "window": {}})

    def test_trigger_validation(self):
        with pytest.raises(ValueError, match="kind"):
            TriggerPolicy(kind="sometimes")
        with pytest.raises(ValueError, match="n must be"):
            TriggerPolicy(n=0)

    def test_probe_count_bound(self):
        with pytest.raises(ValueError, match="probe_count"):
            small_config(probe_count=10_001)


class TestWindowDigest:
    def test_recomputable_from_spec_and_logs(self, logs):
        spec = WindowSpec(strategy="last_n", n=100)
        first = window_digest(select_window(logs, spec))
        second = window_digest(select_window(logs, spec))
        assert first == second
        assert first.count == 100
        assert first.t_min is not None and first.t_max is not None

    def test_distinguishes_content(self, logs):
        a = window_digest(select_window(logs, WindowSpec(strategy="last_n", n=100)))
        b = window_digest(select_window(logs, WindowSpec(strategy="last_n", n=101)))
        assert a.content_hash != b.content_hash


class TestProbes:
    def test_probe_set_is_stable_across_calls(self):
        config = small_config()
        first = probe_variants(config)
        second = probe_variants(config)
        assert first == second
        assert len(first) == 4

    def test_probe_set_depends_on_program_seed(self):
        a = probe_variants(small_config(seed=1))
        b = probe_variants(small_config(seed=2))
        assert a != b


class TestRunOnce:
    def test_first_run(self, logs, store):
        run = run_once(small_config(), store, logs)
        assert run.run_id == 1
        assert run.status == STATUS_OK
        assert run.drift is None
        assert len(run.probes) == 4
        assert run.search.best_estimate.ci_lo is not None
        assert (store.directory / "run-1.json").exists()
        assert (store.directory / "latest").read_text().strip() == "run-1.json"

    def test_empty_window_is_persisted(self, logs, store):
        config = small_config(window=WindowSpec(strategy="time_range", t_start=10**9, t_end=10**9 + 1))
        run = run_once(config, store, logs)
        assert run.status == STATUS_EMPTY_WINDOW
        assert run.search is None
        assert run.probes == ()
        assert (store.directory / "run-1.json").exists()

    def test_drift_comparison_skips_non_ok_runs(self, logs, store):
        empty = small_config(window=WindowSpec(strategy="time_range", t_start=10**9, t_end=10**9 + 1))
        run_once(empty, store, logs)
        run = run_once(small_config(), store, logs)
        assert run.run_id == 2
        assert run.drift is None  # no prior ok run to compare against

    def test_identical_reruns_have_zero_probe_delta(self, logs, store):
        config = small_config()
        run_once(config, store, logs)
        second = run_once(config, store, logs)
        assert second.drift is not None
        assert second.drift.probe_max_abs_delta == 0.0
        assert second.drift.best_delta == 0.0
        assert not second.drift.ci_disjoint
        assert not second.drift.flagged

    def test_flag_is_monotone_in_threshold(self, logs, store):
        loose = small_config(drift_threshold=0.5)
        run_once(loose, store, generate_logs(default_scenario(seed=21), 400))
        flagged_loose = run_once(loose, store, generate_logs(default_scenario(seed=22), 400))
        strict = small_config(drift_threshold=0.0)
        tight_store = RunStore(store.directory.parent / "runs-tight")
        run_once(strict, tight_store, generate_logs(default_scenario(seed=21), 400))
        flagged_strict = run_once(strict, tight_store, generate_logs(default_scenario(seed=22), 400))
        if flagged_loose.drift.flagged:
            assert flagged_strict.drift.flagged

    def test_run_files_round_trip(self, logs, store):
        run = run_once(small_config(), store, logs)
        loaded = store.read(1)
        assert loaded == run

    def test_unexpected_failure_is_persisted_as_aborted(self, logs, store, monkeypatch):
        import offab.orchestrator as orch

        def boom(*args, **kwargs):
            raise RuntimeError("unexpected")

        monkeypatch.setattr(orch, "evolve", boom)
        run = run_once(small_config(), store, logs)
        assert run.status == STATUS_ABORTED
        assert (store.directory / "run-1.json").exists()

    def test_degenerate_when_no_variant_evaluates(self, store):
        # every policy leaves probability 0 on the single logged action class
        from conftest import make_dataset

        window = make_dataset(
            timestamps=np.arange(3),
            contexts=np.full((3, 1), 400.0),
            actions=[1, 1, 1],
            propensities=[0.5, 0.5, 0.5],
            rewards=[1.0, 0.0, 1.0],
        )
        config = small_config(
            space=builtin_space(1, 2),
            window=WindowSpec(strategy="last_n", n=3),
            ga=GAConfig(population_size=4, generations=2, seed=0),
            probe_count=0,
        )

        import offab.orchestrator as orch

        def always_degenerate(space, fitness, ga):
            raise orch.SearchError("every individual in the initial population failed")

        # force the all-degenerate path deterministically
        with pytest.MonkeyPatch.context() as mp:
            mp.setattr(orch, "evolve", always_degenerate)
            run = run_once(config, RunStore(store.directory), window)
        assert run.status == STATUS_DEGENERATE

    def test_store_error_when_directory_is_a_file(self, logs, tmp_path):
        blocker = tmp_path / "blocked"
        blocker.write_text("not a directory")
        with pytest.raises(StoreError):
            run_once(small_config(), RunStore(blocker), logs)


class TestRunLoop:
    def test_fires_once_per_window_of_new_records(self, tmp_path, store):
        scenario = default_scenario(seed=31)
        log_path = tmp_path / "stream.jsonl"
        write_jsonl(generate_logs(scenario, 200, t0=0), log_path)
        config = small_config(trigger=TriggerPolicy(kind="every_n_records", n=200))

        appended = {"count": 0}

        def on_run(run):
            # grow the stream after each completed run, like a live product
            if appended["count"] < 2:
                appended["count"] += 1
                start = 200 * appended["count"]
                chunk = generate_logs(
                    dataclasses.replace(scenario, seed=31 + appended["count"]), 200, t0=start
                )
                write_jsonl(chunk, log_path, append=True)

        runs = run_loop(config, store, log_path, max_runs=3, poll_millis=1, on_run=on_run)
        assert [r.run_id for r in runs] == [1, 2, 3]
        assert all(r.status == STATUS_OK for r in runs)
        assert store.run_ids() == [1, 2, 3]

    def test_no_new_records_never_fires(self, tmp_path, store):
        log_path = tmp_path / "stream.jsonl"
        write_jsonl(generate_logs(default_scenario(seed=31), 50, t0=0), log_path)
        config = small_config(trigger=TriggerPolicy(kind="every_n_records", n=100))

        class Stop(Exception):
            pass

        polls = {"n": 0}

        def counting_sleep(_seconds):
            polls["n"] += 1
            if polls["n"] >= 3:
                raise Stop

        with pytest.raises(Stop):
            run_loop(config, store, log_path, max_runs=1, poll_millis=1, sleep=counting_sleep)
        assert store.next_run_id() == 1  # nothing was triggered

    def test_unreadable_log_file_retries(self, tmp_path, store):
        log_path = tmp_path / "missing.jsonl"
        config = small_config(trigger=TriggerPolicy(kind="every_n_records", n=10))

        class Stop(Exception):
            pass

        attempts = {"n": 0}

        def sleep_then_create(_seconds):
            attempts["n"] += 1
            if attempts["n"] == 2:
                write_jsonl(generate_logs(default_scenario(seed=31), 20, t0=0), log_path)
            if attempts["n"] > 10:
                raise Stop

        runs = run_loop(config, store, log_path, max_runs=1, poll_millis=1, sleep=sleep_then_create)
        assert len(runs) == 1
        assert attempts["n"] >= 2

    def test_time_trigger_fires_immediately_then_waits(self, tmp_path, store):
        log_path = tmp_path / "stream.jsonl"
        write_jsonl(generate_logs(default_scenario(seed=31), 50, t0=0), log_path)
        config = small_config(trigger=TriggerPolicy(kind="every_t_millis", t_millis=1))
        runs = run_loop(config, store, log_path, max_runs=2, poll_millis=1)
        assert [r.run_id for r in runs] == [1, 2]


class TestReport:
    def _populate(self, store, n_runs=3):
        config = small_config()
        logs = generate_logs(default_scenario(seed=11), 400)
        for _ in range(n_runs):
            run_once(config, store, logs)

    def test_lists_runs_in_order(self, store):
        self._populate(store, 3)
        doc = json.loads(report(store, "json"))
        assert doc["run_count"] == 3
        assert [r["run_id"] for r in doc["runs"]] == [1, 2, 3]

    def test_empty_store(self, tmp_path):
        store = RunStore(tmp_path / "empty")
        store.ensure()
        markdown = report(store, "markdown")
        assert "0 runs" in markdown
        assert json.loads(report(store, "json"))["run_count"] == 0

    def test_markdown_is_deterministic(self, store):
        self._populate(store, 2)
        assert report(store, "markdown") == report(store, "markdown")

    def test_report_does_not_mutate_store(self, store):
        self._populate(store, 2)
        before = sorted(p.name for p in store.directory.iterdir())
        bytes_before = [store.path_for(i).read_bytes() for i in store.run_ids()]
        report(store, "markdown")
        report(store, "json")
        assert sorted(p.name for p in store.directory.iterdir()) == before
        assert [store.path_for(i).read_bytes() for i in store.run_ids()] == bytes_before

    def test_drift_marker_present_when_flagged(self, store):
        config = small_config(drift_threshold=0.0)  # any probe movement flags
        run_once(config, store, generate_logs(default_scenario(seed=41), 400))
        second = run_once(config, store, generate_logs(default_scenario(seed=42), 400))
        assert second.drift.flagged
        markdown = report(store, "markdown")
        flagged_rows = [line for line in markdown.splitlines() if "| DRIFT |" in line]
        assert len(flagged_rows) == 1
        assert flagged_rows[0].startswith("| 2 ")

    def test_unknown_format_rejected(self, store):
        store.ensure()
        with pytest.raises(ValueError, match="format"):
            report(store, "yaml")

    def test_missing_store_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            report(RunStore(tmp_path / "nope"), "markdown")


class TestEvaluationRunSerialization:
    def test_dict_round_trip_preserves_inf_history(self, store, logs):
        run = run_once(small_config(), store, logs)
        patched = dataclasses.replace(
            run,
            search=dataclasses.replace(run.search, history=((1.0, float("-inf")), (2.0, 1.5))),
        )
        again = EvaluationRun.from_dict(json.loads(json.dumps(patched.to_dict())))
        assert again.search.history == ((1.0, float("-inf")), (2.0, 1.5))
