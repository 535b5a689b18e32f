"""Live session phase machine and wire protocol."""
from __future__ import annotations

import json
from random import Random

import pytest
from fastapi.testclient import TestClient

from cobot import build_benchmark
from cobot.model import NoiseConfig, WorldState
from cobot.planner import SearchConfig
from cobot.service import (
    PHASE_AWAITING,
    PHASE_PLANNING,
    PHASE_TERMINAL,
    PROTOCOL_VERSION,
    SessionError,
    create_app,
    create_session,
)
from conftest import single_leaf_htm, two_step_htm

from oracles import exact_filter

FAST = {"n_simulations": 192}
EXACT_NOISE = NoiseConfig.exact()


def make_session(htm=None, seed=0, prior=0.5, noise=EXACT_NOISE, sims=192):
    return create_session(
        htm if htm is not None else build_benchmark("table"),
        search=SearchConfig(n_simulations=sims),
        seed=seed,
        pref_prior=prior,
        noise=noise,
    )


class TestSessionMachine:
    def test_initial_belief_matches_prior(self):
        s = make_session(prior=1.0)
        assert s.snapshot()["marginals"]["prefs"]["hold"] == 1.0
        s2 = make_session(prior=0.5, seed=3)
        assert abs(s2.snapshot()["marginals"]["prefs"]["hold"] - 0.5) < 0.15

    def test_particle_count_follows_config(self):
        s = create_session(
            build_benchmark("table"),
            search=SearchConfig(n_simulations=64, particles=77),
            seed=0,
        )
        assert len(s.belief.particles) == 77

    def test_first_prompt_is_a_bring(self):
        s = make_session(seed=4)
        prompt = s.advance()
        assert prompt["action"].startswith("bring:")
        assert s.phase == PHASE_AWAITING

    def test_advance_requires_planning_phase(self):
        s = make_session()
        s.advance()
        with pytest.raises(SessionError, match="cannot plan"):
            s.advance()

    def test_wait_prompt_offers_done(self):
        s = make_session(htm=single_leaf_htm(), prior=0.0)
        prompt = s.advance()
        while prompt["action"] != "wait":
            s.handle_signal("ok")
            prompt = s.advance()
        assert prompt["legal_signals"] == ["done", "error"]

    def test_done_rejected_on_non_wait(self):
        s = make_session(seed=4)
        s.advance()  # a bring
        before = s.snapshot()
        with pytest.raises(SessionError, match="done"):
            s.handle_signal("done")
        after = s.snapshot()
        assert before == after  # session unchanged

    def test_hold_error_drops_preference_estimate(self):
        s = make_session(htm=single_leaf_htm(n_steps=2), seed=1)
        prompt = s.advance()
        while prompt["action"] != "hold":
            s.handle_signal("ok" if prompt["action"] != "wait" else "done")
            prompt = s.advance()
        p_before = s.snapshot()["marginals"]["prefs"]["hold"]
        s.handle_signal("error")
        p_after = s.snapshot()["marginals"]["prefs"]["hold"]
        assert p_after == 0.0 < p_before

    def test_hold_ok_raises_preference_estimate(self):
        s = make_session(htm=single_leaf_htm(n_steps=2), seed=1)
        prompt = s.advance()
        while prompt["action"] != "hold":
            s.handle_signal("ok" if prompt["action"] != "wait" else "done")
            prompt = s.advance()
        p_before = s.snapshot()["marginals"]["prefs"]["hold"]
        s.handle_signal("ok")
        p_after = s.snapshot()["marginals"]["prefs"]["hold"]
        assert p_after == 1.0 > p_before

    def test_bring_ok_forces_object_presence(self):
        s = make_session(seed=4)
        prompt = s.advance()
        assert prompt["action"].startswith("bring:")
        obj = prompt["action"].split(":", 1)[1]
        s.handle_signal("ok")
        assert s.snapshot()["marginals"]["objects"][obj] == 1.0

    def test_snapshot_log_grows_one_row_per_step(self):
        s = make_session(seed=4)
        assert s.snapshot()["log"] == []
        for _ in range(3):
            prompt = s.advance()
            s.handle_signal("done" if prompt["action"] == "wait" else "ok")
        snap = s.snapshot()
        assert len(snap["log"]) == 3
        assert snap["steps"] == 3

    def test_session_runs_to_terminal(self):
        s = make_session(htm=single_leaf_htm(), prior=1.0, seed=2)
        guard = 0
        while s.phase != PHASE_TERMINAL:
            prompt = s.advance()
            s.handle_signal("done" if prompt["action"] == "wait" else "ok")
            guard += 1
            assert guard < 20
        snap = s.snapshot()
        assert snap["phase"] == PHASE_TERMINAL
        assert snap["marginals"]["terminal_prob"] == 1.0

    def test_map_highlight_tracks_exact_filter(self):
        htm = two_step_htm()
        s = make_session(htm=htm, seed=6, prior=0.5)
        m = s.filter_model
        exact = {WorldState(0, 0, 0, p): 0.5 for p in (0, 1)}
        for _ in range(2):
            prompt = s.advance()
            action = s.plan_model.action_index(prompt["action"])
            s.handle_signal("done" if prompt["action"] == "wait" else "ok")
            exact = exact_filter(m, exact, action, 0)
        exact_map = max(sorted(exact), key=lambda k: exact[k])
        snap = s.snapshot()
        inst = m.instances[exact_map.instance]
        expected = (
            None if exact_map.pos >= len(inst) else inst[exact_map.pos].name
        )
        assert snap["htm_highlight"] == expected

    def test_replay_reproduces_rows(self):
        def drive(seed):
            s = make_session(htm=single_leaf_htm(n_steps=3), seed=seed, prior=0.5)
            rows = []
            guard = 0
            while s.phase != PHASE_TERMINAL and guard < 30:
                prompt = s.advance()
                sig = {"wait": "done", "hold": "error"}.get(prompt["action"], "ok")
                s.handle_signal(sig)
                rows.append(tuple(s.log[-1].__dict__.items()))
                guard += 1
            return rows

        assert drive(12) == drive(12)


class TestHttpApi:
    @pytest.fixture()
    def client(self):
        return TestClient(create_app())

    def _start(self, client, **config):
        payload = {
            "benchmark": "table",
            "seed": 5,
            "search": FAST,
            "noise": {"manipulation_success": 1.0},
        }
        payload.update(config)
        r = client.post("/sessions", json=payload)
        assert r.status_code == 200
        return r.json()

    def test_start_returns_versioned_state_with_prompt(self, client):
        msg = self._start(client)
        assert msg["v"] == PROTOCOL_VERSION
        assert msg["type"] == "state"
        state = msg["state"]
        assert state["phase"] == PHASE_AWAITING
        assert set(state["prompt"]) == {"action", "legal_signals"}
        assert state["log"] == []
        assert "htm" in state and "htm_highlight" in state

    def test_signal_round_trip(self, client):
        msg = self._start(client)
        sid = msg["state"]["session_id"]
        prompt = msg["state"]["prompt"]
        sig = "done" if prompt["action"] == "wait" else "ok"
        r = client.post(f"/sessions/{sid}/signal", json={"signal": sig})
        state = r.json()["state"]
        assert len(state["log"]) == 1
        assert state["log"][0]["action"] == prompt["action"]

    def test_illegal_signal_is_conflict(self, client):
        msg = self._start(client)
        sid = msg["state"]["session_id"]
        if msg["state"]["prompt"]["action"] == "wait":
            r = client.post(f"/sessions/{sid}/signal", json={"signal": "ok"})
        else:
            r = client.post(f"/sessions/{sid}/signal", json={"signal": "done"})
        assert r.status_code == 409

    def test_unknown_session_404(self, client):
        assert client.get("/sessions/missing").status_code == 404

    def test_reset_restores_fresh_state(self, client):
        msg = self._start(client)
        sid = msg["state"]["session_id"]
        prompt = msg["state"]["prompt"]
        client.post(
            f"/sessions/{sid}/signal",
            json={"signal": "done" if prompt["action"] == "wait" else "ok"},
        )
        r = client.post(f"/sessions/{sid}/reset")
        state = r.json()["state"]
        assert state["log"] == []
        assert state["session_id"] == sid

    def test_websocket_protocol(self, client):
        with client.websocket_connect("/ws") as ws:
            ws.send_json(
                {
                    "type": "start",
                    "config": {
                        "benchmark": "table",
                        "benchmark_params": {"legs": 1, "attach": False},
                        "seed": 1,
                        "search": FAST,
                    },
                }
            )
            state = ws.receive_json()
            prompt = ws.receive_json()
            assert state["type"] == "state" and prompt["type"] == "prompt"
            ws.send_json({"type": "signal", "signal": "bogus"})
            err = ws.receive_json()
            assert err["type"] == "error"
            sig = "done" if prompt["prompt"]["action"] == "wait" else "ok"
            ws.send_json({"type": "signal", "signal": sig})
            state2 = ws.receive_json()
            assert len(state2["state"]["log"]) == 1

    def test_golden_message_schema(self, client):
        # field names are part of the versioned protocol; renames are breaking
        msg = self._start(client)
        assert sorted(msg) == ["state", "type", "v"]
        state = msg["state"]
        assert sorted(state) == [
            "htm",
            "htm_highlight",
            "log",
            "marginals",
            "phase",
            "prompt",
            "seed",
            "session_id",
            "steps",
            "total_reward",
        ]
        assert sorted(state["marginals"]) == [
            "objects",
            "position",
            "prefs",
            "terminal_prob",
        ]
