"""Durable study state: pair manifest, sessions, append-only response log.

The response log (responses.ndjson) is the source of truth: one JSON
line per accepted response, fsynced before the caller sees an ack.
Session bookkeeping lives in a snapshot (sessions.json) that is cheap to
rewrite at this scale; on load, responses are rebuilt from the log so a
torn snapshot can never lose an acknowledged response. StudyResult is
always recomputable from the log alone.
"""

from __future__ import annotations

import json
import os
import secrets
import time
from pathlib import Path

from ..errors import StudyError
from .pairs import TrialPair, load_pairs
from .stats import StudyResult, compute_results

LOG_NAME = "responses.ndjson"
SNAPSHOT_NAME = "sessions.json"


class SequenceError(StudyError):
    """Trial requested out of order."""


class SessionStateError(StudyError):
    """Operation invalid for the session's current state."""


class ConflictError(StudyError):
    """A different response for this pair was already recorded."""


class NotFoundError(StudyError):
    """Unknown session, pair, or image."""


class StudyStore:
    def __init__(self, root):
        self.root = Path(root)
        if not (self.root / "pairs.json").is_file():
            raise NotFoundError(f"{self.root} holds no pairs.json; generate pairs first")
        self.pairs: list[TrialPair] = load_pairs(self.root)
        self.by_pair = {p.pair_id: p for p in self.pairs}
        self.image_dir = self.root / "images"
        self.sessions: dict = {}
        self._load_sessions()

    # --- persistence ---------------------------------------------------------

    def _load_sessions(self):
        snap = self.root / SNAPSHOT_NAME
        if snap.is_file():
            for sid, s in json.loads(snap.read_text()).items():
                self.sessions[sid] = {**s, "responses": []}
        for record in self.log_records():
            session = self.sessions.get(record["session_id"])
            if session is not None:
                session["responses"].append(record)

    def _snapshot(self):
        payload = {
            sid: {k: v for k, v in s.items() if k != "responses"}
            for sid, s in self.sessions.items()
        }
        tmp = self.root / (SNAPSHOT_NAME + ".tmp")
        tmp.write_text(json.dumps(payload, indent=1, sort_keys=True))
        os.replace(tmp, self.root / SNAPSHOT_NAME)

    def _append_log(self, record: dict):
        with open(self.root / LOG_NAME, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def log_records(self) -> list:
        path = self.root / LOG_NAME
        if not path.is_file():
            return []
        records = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
        return records

    # --- sessions ------------------------------------------------------------

    def create_session(self, observer_id: str = "") -> dict:
        session_id = secrets.token_hex(8)
        session = {
            "session_id": session_id,
            "observer_id": observer_id,
            "order": [p.pair_id for p in self.pairs],
            "responses": [],
        }
        self.sessions[session_id] = session
        self._snapshot()
        return session

    def get_session(self, session_id: str) -> dict:
        session = self.sessions.get(session_id)
        if session is None:
            raise NotFoundError(f"unknown session {session_id}")
        return session

    def session_state(self, session) -> str:
        return "complete" if len(session["responses"]) >= len(session["order"]) else "in_progress"

    def trial(self, session_id: str, index: int) -> TrialPair:
        """Strictly sequential access: index must equal responses so far."""
        session = self.get_session(session_id)
        if self.session_state(session) == "complete":
            raise SessionStateError("session already complete")
        current = len(session["responses"])
        if index != current:
            raise SequenceError(f"trial {index} requested but current trial is {current}")
        return self.by_pair[session["order"][index]]

    def record_response(self, session_id: str, pair_id: str, chosen_position: str) -> dict:
        """Persist one forced choice; idempotent on exact retransmission."""
        session = self.get_session(session_id)
        if chosen_position not in ("left", "right"):
            raise StudyError(f"chosen_position must be left or right, got {chosen_position!r}")
        pair = self.by_pair.get(pair_id)
        if pair is None:
            raise NotFoundError(f"unknown pair {pair_id}")
        for existing in session["responses"]:
            if existing["pair_id"] == pair_id:
                if existing["chosen_position"] == chosen_position:
                    return {**existing, "replayed": True}
                raise ConflictError(
                    f"pair {pair_id} already answered with {existing['chosen_position']!r}"
                )
        current = len(session["responses"])
        if current >= len(session["order"]) or session["order"][current] != pair_id:
            raise SequenceError(
                f"pair {pair_id} is not the current trial for session {session_id}"
            )
        real_position = "left" if pair.altered_position == "right" else "right"
        record = {
            "session_id": session_id,
            "pair_id": pair_id,
            "model_id": pair.model_id,
            "chosen_position": chosen_position,
            "correct": chosen_position == real_position,
            "timestamp": time.time(),
        }
        self._append_log(record)  # durable before the ack
        session["responses"].append(record)
        self._snapshot()
        return {**record, "replayed": False}

    # --- results ---------------------------------------------------------------

    def results(self) -> StudyResult:
        return compute_results(self.log_records())

    def session_results(self, session_id: str) -> StudyResult:
        session = self.get_session(session_id)
        if self.session_state(session) != "complete":
            raise SessionStateError("session still in progress")
        return compute_results(session["responses"])

    def results_csv_rows(self):
        for r in self.log_records():
            yield r["pair_id"], r["model_id"], str(bool(r["correct"])).lower()
