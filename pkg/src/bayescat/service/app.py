"""HTTP session service for live adaptive testing.

State is tiny (the posterior is T x (K+2) numbers), so persistence is a JSON
snapshot per session plus an append-only event log.  Every selection step T
draws with a generator seeded from (session seed, T): restarting the service
from disk therefore reproduces the exact posterior and the exact next item.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from ..bank import BankError, ItemBank
from ..harness import Selector, make_selector
from ..posterior import SunPosterior, moments, prediction_quantiles, sample, update
from ..rl.network import load_checkpoint_dict
from ..selection import RULE_NAMES

DEFAULT_SAMPLE_COUNT = 2000


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()) + "Z"


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


@dataclass
class LiveSession:
    session_id: str
    bank_id: str
    selector_id: str
    seed: int
    tau2: float
    factors: tuple[int, ...]
    horizon: int
    sample_count: int
    post: SunPosterior
    available: np.ndarray
    status: str = "active"                  # active | terminated | aborted
    pending_item: int | None = None
    sequence: int = 1                       # sequence of the pending item
    event_seq: int = 0
    reason: str | None = None
    termination_step: int | None = None
    created_at: str = field(default_factory=_now)
    updated_at: str = field(default_factory=_now)
    last_response_seq: int | None = None
    last_response_body: dict | None = None
    policy_id: str | None = None
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def to_snapshot(self) -> dict:
        return {
            "schema_version": 1,
            "session_id": self.session_id,
            "bank_id": self.bank_id,
            "selector": self.selector_id,
            "seed": self.seed,
            "config": {
                "tau2": self.tau2,
                "factors": list(self.factors),
                "horizon": self.horizon,
                "sample_count": self.sample_count,
            },
            "posterior": self.post.to_snapshot(),
            "available": self.available.tolist(),
            "status": self.status,
            "pending_item": self.pending_item,
            "sequence": self.sequence,
            "event_seq": self.event_seq,
            "reason": self.reason,
            "termination_step": self.termination_step,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "last_response_seq": self.last_response_seq,
            "last_response_body": self.last_response_body,
            "policy_id": self.policy_id,
        }

    @classmethod
    def from_snapshot(cls, doc: dict) -> "LiveSession":
        cfg = doc["config"]
        return cls(
            session_id=doc["session_id"],
            bank_id=doc["bank_id"],
            selector_id=doc["selector"],
            seed=int(doc["seed"]),
            tau2=float(cfg["tau2"]),
            factors=tuple(int(k) for k in cfg["factors"]),
            horizon=int(cfg["horizon"]),
            sample_count=int(cfg["sample_count"]),
            post=SunPosterior.from_snapshot(doc["posterior"]),
            available=np.asarray(doc["available"], dtype=bool),
            status=doc["status"],
            pending_item=doc["pending_item"],
            sequence=int(doc["sequence"]),
            event_seq=int(doc["event_seq"]),
            reason=doc.get("reason"),
            termination_step=doc.get("termination_step"),
            created_at=doc.get("created_at", _now()),
            updated_at=doc.get("updated_at", _now()),
            last_response_seq=doc.get("last_response_seq"),
            last_response_body=doc.get("last_response_body"),
            policy_id=doc.get("policy_id"),
        )


class ServiceStore:
    """Disk-backed registry of banks, policies, and sessions."""

    def __init__(self, data_dir: str | Path):
        self.root = Path(data_dir)
        for sub in ("banks", "policies", "sessions"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        self._banks: dict[str, ItemBank] = {}
        self._policies: dict[str, dict] = {}
        self._sessions: dict[str, LiveSession] = {}
        self._lock = threading.Lock()

    # banks -----------------------------------------------------------
    def save_bank(self, bank: ItemBank) -> str:
        bank_id = uuid.uuid4().hex
        (self.root / "banks" / f"{bank_id}.json").write_text(bank.to_json())
        with self._lock:
            self._banks[bank_id] = bank
        return bank_id

    def get_bank(self, bank_id: str) -> ItemBank | None:
        with self._lock:
            if bank_id in self._banks:
                return self._banks[bank_id]
        path = self.root / "banks" / f"{bank_id}.json"
        if not path.is_file():
            return None
        bank = ItemBank.from_json(path.read_text())
        with self._lock:
            self._banks[bank_id] = bank
        return bank

    # policies --------------------------------------------------------
    def save_policy(self, doc: dict) -> str:
        policy_id = uuid.uuid4().hex
        (self.root / "policies" / f"{policy_id}.json").write_text(json.dumps(doc))
        with self._lock:
            self._policies[policy_id] = doc
        return policy_id

    def get_policy(self, policy_id: str) -> dict | None:
        with self._lock:
            if policy_id in self._policies:
                return self._policies[policy_id]
        path = self.root / "policies" / f"{policy_id}.json"
        if not path.is_file():
            return None
        doc = json.loads(path.read_text())
        with self._lock:
            self._policies[policy_id] = doc
        return doc

    def default_policy_id(self) -> str | None:
        with self._lock:
            if self._policies:
                return sorted(self._policies)[0]
        files = sorted((self.root / "policies").glob("*.json"))
        return files[0].stem if files else None

    # sessions --------------------------------------------------------
    def persist_session(self, session: LiveSession) -> None:
        path = self.root / "sessions" / f"{session.session_id}.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(session.to_snapshot()))
        os.replace(tmp, path)

    def append_event(self, session: LiveSession, kind: str, payload: dict) -> None:
        session.event_seq += 1
        event = {
            "session_id": session.session_id,
            "sequence": session.event_seq,
            "kind": kind,
            "payload": payload,
            "at": _now(),
        }
        path = self.root / "sessions" / f"{session.session_id}.events.jsonl"
        with open(path, "a") as fh:
            fh.write(json.dumps(event) + "\n")

    def get_session(self, session_id: str) -> LiveSession | None:
        with self._lock:
            if session_id in self._sessions:
                return self._sessions[session_id]
        path = self.root / "sessions" / f"{session_id}.json"
        if not path.is_file():
            return None
        session = LiveSession.from_snapshot(json.loads(path.read_text()))
        with self._lock:
            return self._sessions.setdefault(session_id, session)

    def add_session(self, session: LiveSession) -> None:
        with self._lock:
            self._sessions[session.session_id] = session


def _session_selector(store: ServiceStore, session: LiveSession) -> Selector:
    if session.selector_id == "qlearning":
        doc = store.get_policy(session.policy_id or "")
        net, _ = load_checkpoint_dict(doc)
        return make_selector("qlearning", network=net)
    return make_selector(session.selector_id)


def _select_step(store: ServiceStore, bank: ItemBank, session: LiveSession):
    """Pick the next item with the deterministic per-step stream."""
    step = session.post.num_items
    rng = np.random.default_rng(np.random.SeedSequence((session.seed, step)))
    draws = sample(session.post, session.sample_count, rng)
    selector = _session_selector(store, session)
    item = selector.choose(bank, session.post, session.available, draws, rng,
                           (session.seed, step), session.factors)
    return int(item), draws


def _summary_payload(session: LiveSession, bank: ItemBank) -> dict:
    step = session.post.num_items
    rng = np.random.default_rng(np.random.SeedSequence((session.seed, step, 1)))
    draws = sample(session.post, session.sample_count, rng)
    mean, var = moments(draws)
    lo = np.quantile(draws.draws, 0.05, axis=0)
    hi = np.quantile(draws.draws, 0.95, axis=0)
    psi = prediction_quantiles(session.post, bank, draws).psi
    return {
        "mean": mean.tolist(),
        "variance": var.tolist(),
        "interval90": [[float(a), float(b)] for a, b in zip(lo, hi)],
        "psi": psi.tolist(),
        "administered": [[int(i), int(y)] for i, y in session.post.history],
        "steps_taken": step,
        "remaining_budget": max(0, session.horizon - step),
        "tau2": session.tau2,
        "factors": list(session.factors),
        "max_prioritized_variance": float(np.max(var[list(session.factors)])),
    }


def create_app(data_dir: str | Path | None = None,
               default_sample_count: int | None = None) -> FastAPI:
    data_dir = data_dir or os.environ.get("BAYESCAT_DATA_DIR", "bayescat_data")
    if default_sample_count is None:
        default_sample_count = int(os.environ.get("BAYESCAT_DEFAULT_M",
                                                  DEFAULT_SAMPLE_COUNT))
    store = ServiceStore(data_dir)
    app = FastAPI(title="adaptive testing service")
    app.state.store = store
    # the web console is served from its own origin
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/banks", status_code=201)
    def create_bank(payload: dict = Body(...)):
        try:
            bank = ItemBank.from_dict(payload)
        except (BankError, KeyError, TypeError, ValueError) as exc:
            return _error(400, "invalid_bank", str(exc))
        bank_id = store.save_bank(bank)
        return {"bank_id": bank_id, "num_items": bank.num_items,
                "num_factors": bank.num_factors}

    @app.get("/banks/{bank_id}")
    def get_bank(bank_id: str):
        bank = store.get_bank(bank_id)
        if bank is None:
            return _error(404, "unknown_bank", f"no bank {bank_id}")
        doc = bank.to_dict()
        doc.update({"bank_id": bank_id, "num_items": bank.num_items,
                    "num_factors": bank.num_factors})
        return doc

    @app.post("/policies", status_code=201)
    def create_policy(payload: dict = Body(...)):
        try:
            load_checkpoint_dict(payload)   # shape validation only
        except Exception as exc:
            return _error(400, "invalid_policy", str(exc))
        policy_id = store.save_policy(payload)
        return {"policy_id": policy_id}

    @app.post("/sessions", status_code=201)
    def create_session(payload: dict = Body(...)):
        bank_id = payload.get("bank_id", "")
        bank = store.get_bank(bank_id)
        if bank is None:
            return _error(404, "unknown_bank", f"no bank {bank_id}")
        selector_id = payload.get("selector", "")
        if selector_id not in RULE_NAMES and selector_id != "qlearning":
            return _error(400, "unknown_selector", f"no selector {selector_id!r}")
        policy_id = payload.get("policy_id")
        if selector_id == "qlearning":
            policy_id = policy_id or store.default_policy_id()
            if policy_id is None or store.get_policy(policy_id) is None:
                return _error(409, "policy_not_loaded",
                              "qlearning needs an uploaded policy checkpoint")
        cfg = payload.get("config", {})
        try:
            tau2 = float(cfg["tau2"])
            factors = tuple(sorted(set(int(k) for k in cfg["factors"])))
            horizon = int(cfg["horizon"])
            sample_count = int(cfg.get("sample_count", default_sample_count))
            seed = int(cfg.get("seed", uuid.uuid4().int % (2 ** 63)))
        except (KeyError, TypeError, ValueError) as exc:
            return _error(400, "invalid_config", f"bad config: {exc}")
        if tau2 <= 0.0:
            return _error(400, "invalid_config", "tau2 must be positive")
        if not factors or factors[0] < 0 or factors[-1] >= bank.num_factors:
            return _error(400, "invalid_config", "factors out of range")
        if not 1 <= horizon <= bank.num_items:
            return _error(400, "invalid_config", "horizon must be in [1, J]")
        if sample_count < 2:
            return _error(400, "invalid_config", "sample_count too small")

        session = LiveSession(
            session_id=uuid.uuid4().hex,
            bank_id=bank_id,
            selector_id=selector_id,
            seed=seed,
            tau2=tau2,
            factors=factors,
            horizon=horizon,
            sample_count=sample_count,
            post=SunPosterior.prior(bank.num_factors),
            available=np.ones(bank.num_items, dtype=bool),
            policy_id=policy_id,
        )
        # the N(0, I) prior meets the target exactly when tau2 >= 1
        if session.tau2 >= 1.0:
            session.status = "terminated"
            session.reason = "variance"
            session.termination_step = 0
            store.add_session(session)
            store.append_event(session, "terminated",
                               {"reason": "variance", "termination_step": 0})
            store.persist_session(session)
            return {"session_id": session.session_id, "terminated": True,
                    "item": None, "sequence": session.sequence,
                    "summary": _summary_payload(session, bank)}
        item, _ = _select_step(store, bank, session)
        session.pending_item = item
        store.add_session(session)
        store.append_event(session, "item_selected",
                           {"item": item, "step": 0, "sequence": session.sequence})
        store.persist_session(session)
        return {
            "session_id": session.session_id,
            "terminated": False,
            "item": {"index": item, "name": bank.item_name(item)},
            "sequence": session.sequence,
        }

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        session = store.get_session(session_id)
        if session is None:
            return _error(404, "unknown_session", f"no session {session_id}")
        bank = store.get_bank(session.bank_id)
        body = {
            "session_id": session.session_id,
            "bank_id": session.bank_id,
            "selector": session.selector_id,
            "status": session.status,
            "sequence": session.sequence,
            "created_at": session.created_at,
            "updated_at": session.updated_at,
            "config": {"tau2": session.tau2, "factors": list(session.factors),
                       "horizon": session.horizon,
                       "sample_count": session.sample_count},
        }
        if session.status == "active" and session.pending_item is not None:
            body["item"] = {"index": session.pending_item,
                            "name": bank.item_name(session.pending_item)}
        if session.status == "terminated":
            body["reason"] = session.reason
            body["termination_step"] = session.termination_step
        return body

    @app.get("/sessions/{session_id}/state")
    def get_state(session_id: str):
        session = store.get_session(session_id)
        if session is None:
            return _error(404, "unknown_session", f"no session {session_id}")
        bank = store.get_bank(session.bank_id)
        body = _summary_payload(session, bank)
        body["session_id"] = session.session_id
        body["status"] = session.status
        if session.status == "active" and session.pending_item is not None:
            body["item"] = {"index": session.pending_item,
                            "name": bank.item_name(session.pending_item)}
        if session.status != "active":
            body["reason"] = session.reason
            body["termination_step"] = session.termination_step
        return body

    @app.post("/sessions/{session_id}/responses")
    def submit_response(session_id: str, payload: dict = Body(...)):
        session = store.get_session(session_id)
        if session is None:
            return _error(404, "unknown_session", f"no session {session_id}")
        with session.lock:
            try:
                seq = int(payload["sequence"])
                item = int(payload["item"])
                value = int(payload["value"])
            except (KeyError, TypeError, ValueError) as exc:
                return _error(400, "invalid_response", f"bad response: {exc}")
            if value not in (0, 1):
                return _error(400, "invalid_response", "value must be 0 or 1")
            # duplicate delivery of the already-processed step: same body back
            if session.last_response_seq == seq and session.last_response_body is not None:
                if session.last_response_body.get("item_answered") == item:
                    return session.last_response_body
                return _error(409, "stale_sequence", "sequence already used for another item")
            if session.status != "active":
                return _error(410, "terminated", "session is no longer active")
            if seq != session.sequence:
                return _error(409, "stale_sequence",
                              f"expected sequence {session.sequence}")
            if item != session.pending_item:
                return _error(409, "item_mismatch",
                              f"pending item is {session.pending_item}")

            bank = store.get_bank(session.bank_id)
            session.post = update(session.post, bank.loadings[item],
                                  float(bank.intercepts[item]), value, item=item)
            session.available[item] = False
            steps = session.post.num_items
            rng = np.random.default_rng(np.random.SeedSequence((session.seed, steps)))
            draws = sample(session.post, session.sample_count, rng)
            _, var = moments(draws)
            met = float(np.max(var[list(session.factors)])) <= session.tau2
            body: dict = {
                "session_id": session.session_id,
                "sequence": seq,
                "item_answered": item,
                "steps_taken": steps,
            }
            # one event per mutation: the response and its consequence
            # (next item or termination) travel in a single record
            if met or steps >= session.horizon:
                session.status = "terminated"
                session.reason = "variance" if met else "horizon"
                session.termination_step = steps
                session.pending_item = None
                session.sequence = seq + 1
                store.append_event(session, "terminated",
                                   {"sequence": seq, "item": item, "value": value,
                                    "reason": session.reason,
                                    "termination_step": steps})
                body["terminated"] = True
                body["reason"] = session.reason
                body["summary"] = _summary_payload(session, bank)
                body["item"] = None
            else:
                selector = _session_selector(store, session)
                next_item = selector.choose(bank, session.post, session.available,
                                            draws, rng, (session.seed, steps),
                                            session.factors)
                next_item = int(next_item)
                session.pending_item = next_item
                session.sequence = seq + 1
                store.append_event(session, "response_recorded",
                                   {"sequence": seq, "item": item, "value": value,
                                    "next_item": next_item, "step": steps})
                body["terminated"] = False
                body["item"] = {"index": next_item,
                                "name": bank.item_name(next_item)}
                body["sequence_next"] = session.sequence
            session.updated_at = _now()
            session.last_response_seq = seq
            session.last_response_body = body
            store.persist_session(session)
            return body

    return app
