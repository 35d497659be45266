from __future__ import annotations

import json
import time
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import corpus
from eviact.agent import AgentRequest, AgentResponse, ScriptedAgent
from eviact.config import BudgetConfig
from eviact.controller import Budget, RunState, mediate, run_repair, should_relocalize
from eviact.errors import AgentUnreachable, BudgetExhausted, WallClockExpired
from eviact.report import counters_from_events
from eviact.trajectory import TrajectoryLog


class FakeClock:
    def __init__(self):
        self.now = 0.0

    def __call__(self) -> float:
        return self.now


class TestBudget:
    def test_fresh_charge_decrements(self):
        b = Budget()
        b.start()
        assert b.charge("localize") == 35
        assert b.used_localize == 1

    def test_boundary_36th_succeeds_37th_exhausts(self):
        b = Budget()
        b.start()
        for i in range(36):
            remaining = b.charge("localize")
        assert remaining == 0
        with pytest.raises(BudgetExhausted):
            b.charge("localize")
        assert b.used_localize == 36

    def test_patch_cap_20(self):
        b = Budget()
        b.start()
        for _ in range(20):
            b.charge("patch")
        with pytest.raises(BudgetExhausted):
            b.charge("patch")

    def test_defaults_sum_to_56(self):
        b = Budget()
        assert b.max_localize_calls + b.max_patch_calls == 56

    def test_wall_clock_checked_on_charge(self):
        clock = FakeClock()
        b = Budget(wall_clock_limit_s=10.0, clock=clock)
        b.start()
        b.charge("patch")
        clock.now = 10.5
        with pytest.raises(WallClockExpired):
            b.charge("patch")

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.sampled_from(["localize", "patch"]), max_size=90))
    def test_totals_never_exceed_caps(self, kinds):
        b = Budget()
        b.start()
        for kind in kinds:
            try:
                b.charge(kind)
            except BudgetExhausted:
                pass
            assert b.used_localize <= 36
            assert b.used_patch <= 20


class TestShouldRelocalize:
    def _state(self, failures: int) -> RunState:
        state = RunState(trajectory=TrajectoryLog())
        state.stage = "verify"
        state.consecutive_green_failures = failures
        return state

    def test_below_threshold(self):
        b = Budget()
        b.start()
        assert should_relocalize(self._state(2), b, threshold=3) is False

    def test_at_threshold_with_budget(self):
        b = Budget()
        b.start()
        assert should_relocalize(self._state(3), b, threshold=3) is True

    def test_at_threshold_without_budget(self):
        b = Budget()
        b.start()
        for _ in range(36):
            b.charge("localize")
        assert should_relocalize(self._state(3), b, threshold=3) is False


class TestRunState:
    def test_terminal_set_exactly_once(self):
        state = RunState(trajectory=TrajectoryLog())
        state.set_terminal("accepted")
        with pytest.raises(RuntimeError):
            state.set_terminal("timeout")


class _Stall:
    def __init__(self, sleep_s: float):
        self.sleep_s = sleep_s

    def complete(self, request: AgentRequest) -> AgentResponse:
        time.sleep(self.sleep_s)
        return AgentResponse(text="late")


class _Raising:
    def complete(self, request):
        raise RuntimeError("adapter is down")


class TestMediate:
    def _request(self) -> AgentRequest:
        return AgentRequest(phase="patch", prompt="p")

    def test_scripted_deterministic_replay(self):
        agent_a = ScriptedAgent({"patch": ["one", "two"]})
        agent_b = ScriptedAgent({"patch": ["one", "two"]})
        for agent in (agent_a, agent_b):
            assert mediate(agent, self._request()).text == "one"
        assert mediate(agent_a, self._request()).text == "two"
        # attempts past the end repeat the final entry
        assert mediate(agent_a, self._request()).text == "two"

    def test_empty_text_becomes_failure_marker(self):
        agent = ScriptedAgent({"patch": ["   "]})
        response = mediate(agent, self._request())
        assert response.failed
        assert "empty" in response.failure_reason

    def test_missing_phase_is_failure_marker(self):
        agent = ScriptedAgent({})
        response = mediate(agent, self._request())
        assert response.failed

    def test_timeout_yields_failure_marker(self):
        response = mediate(_Stall(1.0), self._request(), timeout_s=0.2)
        assert response.failed
        assert "timed out" in response.failure_reason

    def test_unreachable_after_retries(self):
        with pytest.raises(AgentUnreachable):
            mediate(_Raising(), self._request(), retries=2)

    def test_usage_is_deterministic(self):
        a = mediate(ScriptedAgent({"patch": ["xyz"]}), self._request())
        b = mediate(ScriptedAgent({"patch": ["xyz"]}), self._request())
        assert a.usage == b.usage


class TestRunRepair:
    def test_end_to_end_accepts_with_known_fix(self, tmp_path, calc_blueprint):
        repo = corpus.materialize(calc_blueprint, tmp_path / "repo")
        cfg = corpus.repair_config(calc_blueprint, repo, tmp_path / "runs")
        agent = ScriptedAgent(corpus.transcript(calc_blueprint))
        report = run_repair(cfg, agent)
        assert report.terminal == "accepted"
        assert report.accepted
        assert report.counters["localize_calls"] == 1
        assert report.counters["patch_calls"] == 1
        assert report.counters["comp_fail"] == 0
        assert report.counters["val_fail"] == 0
        assert report.patch is not None and report.patch["form"] == "structured"
        run_dir = tmp_path / "runs" / calc_blueprint.instance_id
        for artifact in ("red.log", "red.json", "green.log", "trajectory.jsonl",
                         "report.json", "report.txt", "index.json"):
            assert (run_dir / artifact).exists(), artifact

    def test_acceptance_event_order(self, tmp_path, calc_blueprint):
        repo = corpus.materialize(calc_blueprint, tmp_path / "repo")
        cfg = corpus.repair_config(calc_blueprint, repo, tmp_path / "runs")
        run_repair(cfg, ScriptedAgent(corpus.transcript(calc_blueprint)))
        events = TrajectoryLog.load(tmp_path / "runs" / calc_blueprint.instance_id
                                    / "trajectory.jsonl")
        names = [e["event"] for e in events]
        red = names.index("red")
        gate = names.index("compile_gate")
        green = names.index("green")
        regression = names.index("regression")
        assert red < gate < green < regression
        assert events[red]["outcome"] == "failed"
        assert events[gate]["passed"] is True
        assert events[green]["passed"] is True
        assert events[regression]["passed"] is True

    def test_red_unexpectedly_passed_aborts(self, tmp_path, calc_blueprint):
        repo = corpus.materialize(calc_blueprint, tmp_path / "repo")
        for rel, content in calc_blueprint.fixed.items():
            (repo / rel).write_text(content)
        cfg = corpus.repair_config(calc_blueprint, repo, tmp_path / "runs")
        report = run_repair(cfg, ScriptedAgent(corpus.transcript(calc_blueprint)))
        assert report.terminal == "aborted"
        assert "red-unexpectedly-passed" in report.terminal_reason

    def test_malformed_agent_exhausts_both_budgets(self, tmp_path, calc_blueprint):
        repo = corpus.materialize(calc_blueprint, tmp_path / "repo")
        cfg = corpus.repair_config(
            calc_blueprint, repo, tmp_path / "runs",
            budget=BudgetConfig(max_localize_calls=4, max_patch_calls=3),
        )
        agent = ScriptedAgent({"localize": ["not json"], "patch": ["garbage"]})
        report = run_repair(cfg, agent)
        assert report.terminal == "budget_exhausted"
        assert report.counters["localize_calls"] == 4
        assert report.counters["patch_calls"] == 3
        assert report.counters["comp_fail"] == 3  # every patch attempt malformed

    def test_green_failures_trigger_relocalization(self, tmp_path, calc_blueprint):
        repo = corpus.materialize(calc_blueprint, tmp_path / "repo")
        cfg = corpus.repair_config(
            calc_blueprint, repo, tmp_path / "runs",
            budget=BudgetConfig(max_localize_calls=3, max_patch_calls=4),
        )
        cfg.relocalize_threshold = 2
        wrong = json.dumps([{
            "path": "calc/core.py",
            "ops": [{"type": "replace", "start_line": 5, "end_line": 5,
                     "text": "    return 0\n"}],
        }])
        agent = ScriptedAgent({
            "localize": [corpus.localization_response(calc_blueprint)],
            "patch": [wrong],
        })
        report = run_repair(cfg, agent)
        events = TrajectoryLog.load(tmp_path / "runs" / calc_blueprint.instance_id
                                    / "trajectory.jsonl")
        relocalizes = [e for e in events if e["event"] == "relocalize"]
        assert relocalizes, "two consecutive GREEN failures should trigger re-localization"
        assert relocalizes[0]["consecutive_green_failures"] == 2
        assert report.terminal == "budget_exhausted"
        assert report.counters["val_fail"] > 0

    def test_wall_clock_expiry_yields_timeout(self, tmp_path, calc_blueprint):
        repo = corpus.materialize(calc_blueprint, tmp_path / "repo")
        cfg = corpus.repair_config(calc_blueprint, repo, tmp_path / "runs")
        cfg.budget.wall_clock_limit_s = 0.35
        cfg.agent.timeout_s = 0.3
        started = time.monotonic()
        report = run_repair(cfg, _Stall(1.2))
        elapsed = time.monotonic() - started
        assert report.terminal == "timeout"
        # bounded by limit + one request timeout (plus test slack)
        assert elapsed < 0.35 + 0.3 + 2.0

    def test_patch_context_carries_latest_diagnostics(self, tmp_path, calc_blueprint):
        repo = corpus.materialize(calc_blueprint, tmp_path / "repo")
        cfg = corpus.repair_config(
            calc_blueprint, repo, tmp_path / "runs",
            budget=BudgetConfig(max_localize_calls=1, max_patch_calls=3),
        )
        agent = ScriptedAgent({
            "localize": [corpus.localization_response(calc_blueprint)],
            "patch": ["garbage one", "garbage two", "garbage three"],
        })
        run_repair(cfg, agent)
        events = TrajectoryLog.load(tmp_path / "runs" / calc_blueprint.instance_id
                                    / "trajectory.jsonl")
        patch_calls = [e for e in events
                       if e["event"] == "agent_call" and e["phase"] == "patch"]
        assert len(patch_calls) == 3
        # after the first failed gate, context must carry its diagnostics
        for call in patch_calls[1:]:
            assert "compile gate failure" in call["diagnostic_context"]
            assert "malformed_candidate" in call["diagnostic_context"]

    def test_counters_reconstruct_from_trajectory(self, tmp_path, calc_blueprint):
        repo = corpus.materialize(calc_blueprint, tmp_path / "repo")
        cfg = corpus.repair_config(calc_blueprint, repo, tmp_path / "runs")
        report = run_repair(cfg, ScriptedAgent(corpus.transcript(calc_blueprint)))
        events = TrajectoryLog.load(tmp_path / "runs" / calc_blueprint.instance_id
                                    / "trajectory.jsonl")
        recomputed = counters_from_events(events)
        for key, value in recomputed.items():
            assert report.counters[key] == value, key

    def test_happy_path_event_sequence_matches_recorded_shape(self, tmp_path, calc_blueprint):
        """One localize lookup -> one patch -> accept, as a replayed trace."""
        repo = corpus.materialize(calc_blueprint, tmp_path / "repo")
        cfg = corpus.repair_config(calc_blueprint, repo, tmp_path / "runs")
        run_repair(cfg, ScriptedAgent(corpus.transcript(calc_blueprint)))
        events = TrajectoryLog.load(tmp_path / "runs" / calc_blueprint.instance_id
                                    / "trajectory.jsonl")
        assert [e["event"] for e in events] == [
            "run_started", "stage", "index", "red",            # setup
            "stage", "charge", "agent_call", "suspects",       # localize (1 call)
            "stage", "charge", "agent_call", "compile_gate",   # patch (1 call)
            "stage", "green", "regression", "td_gate",         # verify
            "terminal",
        ]

    def test_agent_credentials_never_leak_into_artifacts(self, tmp_path, calc_blueprint,
                                                         monkeypatch):
        from eviact.agent import CREDENTIALS_ENV_VAR

        secret = "sk-super-secret-value-12345"
        monkeypatch.setenv(CREDENTIALS_ENV_VAR, secret)
        repo = corpus.materialize(calc_blueprint, tmp_path / "repo")
        cfg = corpus.repair_config(calc_blueprint, repo, tmp_path / "runs")
        run_repair(cfg, ScriptedAgent(corpus.transcript(calc_blueprint)))
        for artifact in (tmp_path / "runs" / calc_blueprint.instance_id).rglob("*"):
            if artifact.is_file():
                assert secret not in artifact.read_text(errors="replace"), artifact

    def test_compile_rejected_candidate_never_reaches_green(self, tmp_path, calc_blueprint):
        repo = corpus.materialize(calc_blueprint, tmp_path / "repo")
        cfg = corpus.repair_config(
            calc_blueprint, repo, tmp_path / "runs",
            budget=BudgetConfig(max_localize_calls=1, max_patch_calls=2),
        )
        agent = ScriptedAgent({
            "localize": [corpus.localization_response(calc_blueprint)],
            "patch": ["garbage", corpus.fix_candidate(calc_blueprint)],
        })
        report = run_repair(cfg, agent)
        assert report.accepted
        events = TrajectoryLog.load(tmp_path / "runs" / calc_blueprint.instance_id
                                    / "trajectory.jsonl")
        green_attempts = {e["attempt"] for e in events if e["event"] == "green"}
        failed_gate_attempts = {e["attempt"] for e in events
                                if e["event"] == "compile_gate" and not e["passed"]}
        assert failed_gate_attempts == {1}
        assert green_attempts == {2}
