"""HTTP service tests: endpoint contracts, idempotency, events, persistence."""

import json
import shutil

import numpy as np
import pytest
from fastapi.testclient import TestClient

from bayescat.rl import NetworkConfig, init_network, save_checkpoint_dict
from bayescat.service import create_app

BANK_PAYLOAD = {
    "loadings": [[2.5], [2.2], [2.0], [1.8], [1.6], [1.4]],
    "intercepts": [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    "names": ["q0", "q1", "q2", "q3", "q4", "q5"],
}


def _client(tmp_path, sub="svc"):
    return TestClient(create_app(tmp_path / sub))


def _make_bank(client, payload=None):
    r = client.post("/banks", json=payload or BANK_PAYLOAD)
    assert r.status_code == 201, r.text
    return r.json()["bank_id"]


def _make_session(client, bank_id, **over):
    cfg = {"tau2": 0.3, "factors": [0], "horizon": 6,
           "sample_count": 512, "seed": 11}
    cfg.update(over)
    r = client.post("/sessions", json={"bank_id": bank_id, "selector": "mi",
                                       "config": cfg})
    assert r.status_code == 201, r.text
    return r.json()


def _drive(client, sid, first_item, rule, max_steps=20):
    """Submit responses until the session terminates.

    rule(item, step) -> 0/1.  Returns the administered records and the
    final response body.
    """
    item, seq = first_item, 1
    records = []
    while True:
        value = rule(item, len(records))
        r = client.post(f"/sessions/{sid}/responses",
                        json={"sequence": seq, "item": item, "value": value})
        assert r.status_code == 200, r.text
        body = r.json()
        records.append((item, value))
        if body["terminated"]:
            return records, body
        item = body["item"]["index"]
        seq = body["sequence_next"]
        assert len(records) < max_steps


class TestHealthAndBanks:
    def test_healthz(self, tmp_path):
        client = _client(tmp_path)
        r = client.get("/healthz")
        assert r.status_code == 200
        assert r.json() == {"status": "ok"}

    def test_bank_round_trip(self, tmp_path):
        client = _client(tmp_path)
        bank_id = _make_bank(client)
        r = client.get(f"/banks/{bank_id}")
        assert r.status_code == 200
        doc = r.json()
        assert doc["num_items"] == 6
        assert doc["num_factors"] == 1
        assert doc["loadings"] == BANK_PAYLOAD["loadings"]
        assert doc["intercepts"] == BANK_PAYLOAD["intercepts"]
        assert doc["names"] == BANK_PAYLOAD["names"]

    def test_invalid_bank_rejected(self, tmp_path):
        client = _client(tmp_path)
        bad = {"loadings": [[0.0], [1.0]], "intercepts": [0.0, 0.0]}
        r = client.post("/banks", json=bad)
        assert r.status_code == 400
        assert r.json()["code"] == "invalid_bank"
        assert "message" in r.json()

    def test_unknown_bank(self, tmp_path):
        client = _client(tmp_path)
        r = client.get("/banks/deadbeef")
        assert r.status_code == 404
        assert r.json()["code"] == "unknown_bank"


class TestCreateSession:
    def test_valid_request(self, tmp_path):
        client = _client(tmp_path)
        bank_id = _make_bank(client)
        body = _make_session(client, bank_id)
        assert body["terminated"] is False
        assert body["sequence"] == 1
        item = body["item"]
        assert 0 <= item["index"] < 6
        assert item["name"] == f"q{item['index']}"
        assert body["session_id"]

    def test_unknown_selector(self, tmp_path):
        client = _client(tmp_path)
        bank_id = _make_bank(client)
        r = client.post("/sessions", json={
            "bank_id": bank_id, "selector": "psychic",
            "config": {"tau2": 0.3, "factors": [0], "horizon": 6}})
        assert r.status_code == 400
        assert r.json()["code"] == "unknown_selector"

    def test_unknown_bank(self, tmp_path):
        client = _client(tmp_path)
        r = client.post("/sessions", json={
            "bank_id": "nope", "selector": "mi",
            "config": {"tau2": 0.3, "factors": [0], "horizon": 6}})
        assert r.status_code == 404
        assert r.json()["code"] == "unknown_bank"

    @pytest.mark.parametrize("cfg", [
        {"tau2": 0.0, "factors": [0], "horizon": 6},
        {"tau2": -1.0, "factors": [0], "horizon": 6},
        {"tau2": 0.3, "factors": [3], "horizon": 6},
        {"tau2": 0.3, "factors": [], "horizon": 6},
        {"tau2": 0.3, "factors": [0], "horizon": 0},
        {"tau2": 0.3, "factors": [0], "horizon": 7},
        {"factors": [0], "horizon": 6},
        {"tau2": 0.3, "factors": [0], "horizon": 6, "sample_count": 1},
    ])
    def test_invalid_config(self, tmp_path, cfg):
        client = _client(tmp_path)
        bank_id = _make_bank(client)
        r = client.post("/sessions", json={"bank_id": bank_id,
                                           "selector": "mi", "config": cfg})
        assert r.status_code == 400
        assert r.json()["code"] == "invalid_config"

    def test_qlearning_without_policy(self, tmp_path):
        client = _client(tmp_path)
        bank_id = _make_bank(client)
        r = client.post("/sessions", json={
            "bank_id": bank_id, "selector": "qlearning",
            "config": {"tau2": 0.3, "factors": [0], "horizon": 6}})
        assert r.status_code == 409
        assert r.json()["code"] == "policy_not_loaded"

    def test_loose_target_terminates_immediately(self, tmp_path):
        # the N(0, I) prior already satisfies tau2 >= 1
        client = _client(tmp_path)
        bank_id = _make_bank(client)
        body = _make_session(client, bank_id, tau2=1.5)
        assert body["terminated"] is True
        assert body["item"] is None
        assert body["summary"]["steps_taken"] == 0
        r = client.get(f"/sessions/{body['session_id']}")
        assert r.json()["status"] == "terminated"
        assert r.json()["reason"] == "variance"
        assert r.json()["termination_step"] == 0


class TestSubmitResponse:
    def test_answer_until_variance_met(self, tmp_path):
        client = _client(tmp_path)
        bank_id = _make_bank(client)
        created = _make_session(client, bank_id, tau2=0.35, horizon=6)
        records, final = _drive(client, created["session_id"],
                                created["item"]["index"],
                                lambda item, step: step % 2)
        assert final["terminated"] is True
        assert final["reason"] == "variance"
        assert final["item"] is None
        assert final["steps_taken"] == len(records)
        summary = final["summary"]
        assert summary["administered"] == [[i, y] for i, y in records]
        assert summary["max_prioritized_variance"] <= 0.35

    def test_horizon_reason(self, tmp_path):
        client = _client(tmp_path)
        bank_id = _make_bank(client)
        created = _make_session(client, bank_id, tau2=0.001, horizon=2)
        records, final = _drive(client, created["session_id"],
                                created["item"]["index"],
                                lambda item, step: 1)
        assert len(records) == 2
        assert final["reason"] == "horizon"
        assert final["summary"]["remaining_budget"] == 0

    def test_duplicate_submit_idempotent(self, tmp_path):
        client = _client(tmp_path)
        bank_id = _make_bank(client)
        created = _make_session(client, bank_id)
        sid = created["session_id"]
        item = created["item"]["index"]
        payload = {"sequence": 1, "item": item, "value": 1}
        first = client.post(f"/sessions/{sid}/responses", json=payload)
        assert first.status_code == 200
        again = client.post(f"/sessions/{sid}/responses", json=payload)
        assert again.status_code == 200
        assert again.json() == first.json()
        # no double update happened
        state = client.get(f"/sessions/{sid}/state").json()
        assert state["steps_taken"] == 1
        assert len(state["administered"]) == 1

    def test_duplicate_of_final_response(self, tmp_path):
        client = _client(tmp_path)
        bank_id = _make_bank(client)
        created = _make_session(client, bank_id, tau2=0.001, horizon=2)
        records, final = _drive(client, created["session_id"],
                                created["item"]["index"], lambda item, step: 0)
        sid = created["session_id"]
        last_item, last_value = records[-1]
        r = client.post(f"/sessions/{sid}/responses",
                        json={"sequence": len(records), "item": last_item,
                              "value": last_value})
        assert r.status_code == 200
        assert r.json() == final

    def test_stale_sequence(self, tmp_path):
        client = _client(tmp_path)
        bank_id = _make_bank(client)
        created = _make_session(client, bank_id)
        sid = created["session_id"]
        item = created["item"]["index"]
        r = client.post(f"/sessions/{sid}/responses",
                        json={"sequence": 5, "item": item, "value": 1})
        assert r.status_code == 409
        assert r.json()["code"] == "stale_sequence"

    def test_item_mismatch(self, tmp_path):
        client = _client(tmp_path)
        bank_id = _make_bank(client)
        created = _make_session(client, bank_id)
        sid = created["session_id"]
        wrong = (created["item"]["index"] + 1) % 6
        r = client.post(f"/sessions/{sid}/responses",
                        json={"sequence": 1, "item": wrong, "value": 1})
        assert r.status_code == 409
        assert r.json()["code"] == "item_mismatch"

    def test_terminated_session_rejects_new_response(self, tmp_path):
        client = _client(tmp_path)
        bank_id = _make_bank(client)
        created = _make_session(client, bank_id, tau2=0.001, horizon=2)
        records, final = _drive(client, created["session_id"],
                                created["item"]["index"], lambda item, step: 1)
        sid = created["session_id"]
        unused = next(i for i in range(6) if i not in [it for it, _ in records])
        r = client.post(f"/sessions/{sid}/responses",
                        json={"sequence": len(records) + 1, "item": unused,
                              "value": 0})
        assert r.status_code == 410
        assert r.json()["code"] == "terminated"

    def test_invalid_value(self, tmp_path):
        client = _client(tmp_path)
        bank_id = _make_bank(client)
        created = _make_session(client, bank_id)
        r = client.post(f"/sessions/{created['session_id']}/responses",
                        json={"sequence": 1, "item": created["item"]["index"],
                              "value": 2})
        assert r.status_code == 400
        assert r.json()["code"] == "invalid_response"

    def test_unknown_session(self, tmp_path):
        client = _client(tmp_path)
        r = client.post("/sessions/ghost/responses",
                        json={"sequence": 1, "item": 0, "value": 1})
        assert r.status_code == 404
        assert r.json()["code"] == "unknown_session"


class TestState:
    def test_fresh_session_shows_prior(self, tmp_path):
        client = _client(tmp_path)
        bank_id = _make_bank(client)
        created = _make_session(client, bank_id, sample_count=2000)
        state = client.get(f"/sessions/{created['session_id']}/state").json()
        # prior is N(0, 1) per factor; 2000 draws put the mean within
        # about 3 / sqrt(2000) of zero
        assert abs(state["mean"][0]) < 0.07
        assert abs(state["variance"][0] - 1.0) < 0.15
        lo, hi = state["interval90"][0]
        assert lo < state["mean"][0] < hi
        assert state["steps_taken"] == 0
        assert state["remaining_budget"] == 6
        assert state["administered"] == []
        assert np.asarray(state["psi"]).shape == (6, 11)

    def test_consecutive_reads_identical(self, tmp_path):
        # summaries draw from a stream keyed by (seed, step), so two reads
        # of the same posterior agree exactly, well within the Monte Carlo
        # tolerance the contract asks for
        client = _client(tmp_path)
        bank_id = _make_bank(client)
        created = _make_session(client, bank_id)
        sid = created["session_id"]
        first = client.get(f"/sessions/{sid}/state").json()
        second = client.get(f"/sessions/{sid}/state").json()
        assert first == second

    def test_state_tracks_progress(self, tmp_path):
        client = _client(tmp_path)
        bank_id = _make_bank(client)
        created = _make_session(client, bank_id, tau2=0.05, horizon=4)
        sid = created["session_id"]
        item = created["item"]["index"]
        r = client.post(f"/sessions/{sid}/responses",
                        json={"sequence": 1, "item": item, "value": 1})
        state = client.get(f"/sessions/{sid}/state").json()
        assert state["steps_taken"] == 1
        assert state["remaining_budget"] == 3
        assert state["administered"] == [[item, 1]]
        assert state["variance"][0] < 1.0
        assert state["item"]["index"] == r.json()["item"]["index"]

    def test_terminated_state_includes_summary(self, tmp_path):
        client = _client(tmp_path)
        bank_id = _make_bank(client)
        created = _make_session(client, bank_id, tau2=0.001, horizon=2)
        _drive(client, created["session_id"], created["item"]["index"],
               lambda item, step: 1)
        state = client.get(f"/sessions/{created['session_id']}/state").json()
        assert state["status"] == "terminated"
        assert state["reason"] == "horizon"
        assert state["termination_step"] == 2
        assert "item" not in state

    def test_unknown_session(self, tmp_path):
        client = _client(tmp_path)
        r = client.get("/sessions/ghost/state")
        assert r.status_code == 404
        assert r.json()["code"] == "unknown_session"


def _events(data_dir, sid):
    path = data_dir / "sessions" / f"{sid}.events.jsonl"
    return [json.loads(line) for line in path.read_text().splitlines()]


class TestEvents:
    def test_one_event_per_mutation(self, tmp_path):
        data_dir = tmp_path / "svc"
        client = TestClient(create_app(data_dir))
        bank_id = _make_bank(client)
        created = _make_session(client, bank_id, tau2=0.001, horizon=3)
        sid = created["session_id"]
        records, _ = _drive(client, sid, created["item"]["index"],
                            lambda item, step: step % 2)
        # reads never append
        client.get(f"/sessions/{sid}")
        client.get(f"/sessions/{sid}/state")
        events = _events(data_dir, sid)
        assert len(events) == 1 + len(records)
        assert [e["sequence"] for e in events] == list(range(1, len(events) + 1))
        assert events[0]["kind"] == "item_selected"
        assert all(e["kind"] == "response_recorded" for e in events[1:-1])
        assert events[-1]["kind"] == "terminated"
        assert events[-1]["payload"]["reason"] == "horizon"

    def test_duplicate_submit_appends_nothing(self, tmp_path):
        data_dir = tmp_path / "svc"
        client = TestClient(create_app(data_dir))
        bank_id = _make_bank(client)
        created = _make_session(client, bank_id)
        sid = created["session_id"]
        payload = {"sequence": 1, "item": created["item"]["index"], "value": 0}
        client.post(f"/sessions/{sid}/responses", json=payload)
        before = len(_events(data_dir, sid))
        client.post(f"/sessions/{sid}/responses", json=payload)
        assert len(_events(data_dir, sid)) == before

    def test_rejected_requests_append_nothing(self, tmp_path):
        data_dir = tmp_path / "svc"
        client = TestClient(create_app(data_dir))
        bank_id = _make_bank(client)
        created = _make_session(client, bank_id)
        sid = created["session_id"]
        client.post(f"/sessions/{sid}/responses",
                    json={"sequence": 9, "item": 0, "value": 1})
        client.post(f"/sessions/{sid}/responses",
                    json={"sequence": 1, "item": created["item"]["index"],
                          "value": 7})
        events = _events(data_dir, sid)
        assert len(events) == 1
        assert events[0]["kind"] == "item_selected"

    def test_immediate_termination_logs_single_event(self, tmp_path):
        data_dir = tmp_path / "svc"
        client = TestClient(create_app(data_dir))
        bank_id = _make_bank(client)
        created = _make_session(client, bank_id, tau2=1.5)
        events = _events(data_dir, created["session_id"])
        assert [e["kind"] for e in events] == ["terminated"]
        assert events[0]["payload"]["termination_step"] == 0


class TestPersistence:
    def test_restart_resumes_exactly(self, tmp_path):
        """Kill/restart mid-session: posterior and next item must match."""
        dir_a = tmp_path / "a"
        client_a = TestClient(create_app(dir_a))
        bank_id = _make_bank(client_a)
        created = _make_session(client_a, bank_id, tau2=0.05, horizon=6,
                                seed=42)
        sid = created["session_id"]
        item, seq = created["item"]["index"], 1
        for step in range(2):
            r = client_a.post(f"/sessions/{sid}/responses",
                              json={"sequence": seq, "item": item,
                                    "value": step % 2})
            body = r.json()
            item, seq = body["item"]["index"], body["sequence_next"]

        # simulate the kill: copy the data directory and boot a second
        # service instance on the copy
        dir_b = tmp_path / "b"
        shutil.copytree(dir_a, dir_b)
        client_b = TestClient(create_app(dir_b))

        snap_a = json.loads((dir_a / "sessions" / f"{sid}.json").read_text())
        snap_b = json.loads((dir_b / "sessions" / f"{sid}.json").read_text())
        assert snap_a["posterior"] == snap_b["posterior"]

        got = client_b.get(f"/sessions/{sid}").json()
        assert got["status"] == "active"
        assert got["item"]["index"] == item
        assert got["sequence"] == seq

        # the same response now yields identical bodies on both instances
        payload = {"sequence": seq, "item": item, "value": 1}
        r_a = client_a.post(f"/sessions/{sid}/responses", json=payload)
        r_b = client_b.post(f"/sessions/{sid}/responses", json=payload)
        assert r_a.json() == r_b.json()

        post_a = json.loads((dir_a / "sessions" / f"{sid}.json").read_text())
        post_b = json.loads((dir_b / "sessions" / f"{sid}.json").read_text())
        for key in ("C1", "C2", "c3", "history"):
            assert post_a["posterior"][key] == post_b["posterior"][key]

    def test_snapshot_has_exact_posterior(self, tmp_path):
        data_dir = tmp_path / "svc"
        client = TestClient(create_app(data_dir))
        bank_id = _make_bank(client)
        created = _make_session(client, bank_id, tau2=0.05, horizon=3)
        sid = created["session_id"]
        item = created["item"]["index"]
        client.post(f"/sessions/{sid}/responses",
                    json={"sequence": 1, "item": item, "value": 1})
        snap = json.loads((data_dir / "sessions" / f"{sid}.json").read_text())
        post = snap["posterior"]
        assert post["T"] == 1
        assert post["history"] == [[item, 1]]
        row = np.asarray(post["C1"][0])
        np.testing.assert_array_equal(row, BANK_PAYLOAD["loadings"][item])
        assert post["c3"][0] == float(np.sqrt(row @ row + 1.0))


class TestConcurrentSessions:
    def test_interleaved_matches_serial(self, tmp_path):
        """Sessions share no mutable state.

        Running many sessions strictly one after another and running them
        interleaved round-robin must produce identical per-session records,
        because every step draws from a stream keyed by (session seed, step).
        """
        n = 100

        def rule(k, item):
            return (item + k) % 2

        def run_serial(client, bank_id):
            out = {}
            for k in range(n):
                created = _make_session(client, bank_id, tau2=0.25,
                                        sample_count=128, seed=1000 + k)
                records, final = _drive(client, created["session_id"],
                                        created["item"]["index"],
                                        lambda item, step, k=k: rule(k, item))
                out[k] = (records, final["reason"], final["steps_taken"])
            return out

        def run_interleaved(client, bank_id):
            live = {}
            for k in range(n):
                created = _make_session(client, bank_id, tau2=0.25,
                                        sample_count=128, seed=1000 + k)
                live[k] = (created["session_id"],
                           created["item"]["index"], 1, [])
            out = {}
            while live:
                for k in list(live):
                    sid, item, seq, records = live[k]
                    r = client.post(f"/sessions/{sid}/responses",
                                    json={"sequence": seq, "item": item,
                                          "value": rule(k, item)})
                    body = r.json()
                    records.append((item, rule(k, item)))
                    if body["terminated"]:
                        out[k] = (records, body["reason"],
                                  body["steps_taken"])
                        del live[k]
                    else:
                        live[k] = (sid, body["item"]["index"],
                                   body["sequence_next"], records)
            return out

        client_s = TestClient(create_app(tmp_path / "serial"))
        client_i = TestClient(create_app(tmp_path / "inter"))
        bank_s = _make_bank(client_s)
        bank_i = _make_bank(client_i)
        serial = run_serial(client_s, bank_s)
        interleaved = run_interleaved(client_i, bank_i)
        assert serial == interleaved


class TestPolicies:
    def _checkpoint(self):
        cfg = NetworkConfig(num_factors=1, num_items=6, l1=8, l2=8,
                            combiner_width=8, seed=3)
        return save_checkpoint_dict(init_network(cfg), 0, -6.0)

    def test_upload_and_run_qlearning_session(self, tmp_path):
        client = _client(tmp_path)
        bank_id = _make_bank(client)
        r = client.post("/policies", json=self._checkpoint())
        assert r.status_code == 201
        policy_id = r.json()["policy_id"]
        r = client.post("/sessions", json={
            "bank_id": bank_id, "selector": "qlearning",
            "policy_id": policy_id,
            "config": {"tau2": 0.3, "factors": [0], "horizon": 6,
                       "sample_count": 256, "seed": 5}})
        assert r.status_code == 201, r.text
        created = r.json()
        records, final = _drive(client, created["session_id"],
                                created["item"]["index"],
                                lambda item, step: 1)
        assert final["terminated"] is True
        assert len(records) >= 1

    def test_uploaded_policy_becomes_default(self, tmp_path):
        client = _client(tmp_path)
        bank_id = _make_bank(client)
        assert client.post("/policies", json=self._checkpoint()).status_code == 201
        r = client.post("/sessions", json={
            "bank_id": bank_id, "selector": "qlearning",
            "config": {"tau2": 0.3, "factors": [0], "horizon": 6,
                       "sample_count": 256, "seed": 5}})
        assert r.status_code == 201, r.text

    def test_invalid_policy_rejected(self, tmp_path):
        client = _client(tmp_path)
        r = client.post("/policies", json={"weights": "garbage"})
        assert r.status_code == 400
        assert r.json()["code"] == "invalid_policy"
