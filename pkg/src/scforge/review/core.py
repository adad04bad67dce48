"""Review workflow engine: session assignment, ratings, consensus, export.

Sessions assign each item to one rater, plus a seeded sample of items to a
second rater for agreement measurement. Every mutation is durably appended
to the record log before it is acknowledged; restart rebuilds state from
the latest snapshot plus the log tail.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterator, Optional, Sequence

from scforge.evalharness import agreement_report
from scforge.judge import LIKERT_ANCHORS
from scforge.review.store import RecordLog

DIMENSIONS = ("correctness", "completeness", "conciseness")
PURPOSES = ("curation_verify", "likert_eval")
VERDICTS = ("approve", "edit")


class ReviewError(Exception):
    pass


class TooFewRaters(ReviewError):
    pass


class DuplicateItems(ReviewError):
    pass


class UnknownSession(ReviewError):
    pass


class UnknownRater(ReviewError):
    pass


class UnknownItem(ReviewError):
    pass


class NotAssigned(ReviewError):
    pass


class DuplicateRating(ReviewError):
    pass


class ScoreOutOfRange(ReviewError):
    pass


class SessionClosed(ReviewError):
    pass


class SessionNotClosed(ReviewError):
    pass


class NotFlagged(ReviewError):
    pass


class InvalidConsensus(ReviewError):
    pass


@dataclass(frozen=True)
class ReviewItem:
    item_id: str
    vuln_type: str
    code: str
    explanation: str
    locations: tuple[tuple[int, int], ...] = ()

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "vuln_type": self.vuln_type,
            "code": self.code,
            "explanation": self.explanation,
            "locations": [list(pair) for pair in self.locations],
        }

    @classmethod
    def from_dict(cls, row: dict) -> "ReviewItem":
        return cls(
            item_id=row["item_id"],
            vuln_type=row.get("vuln_type", ""),
            code=row.get("code", ""),
            explanation=row.get("explanation", ""),
            locations=tuple((int(a), int(b)) for a, b in row.get("locations", [])),
        )


@dataclass
class Session:
    session_id: str
    purpose: str
    item_ids: list[str]
    raters: list[str]
    overlap_fraction: float
    seed: int
    assignments: dict[str, list[str]]
    items: dict[str, ReviewItem]
    adjudicator: Optional[str] = None
    status: str = "open"

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "purpose": self.purpose,
            "item_ids": list(self.item_ids),
            "raters": list(self.raters),
            "overlap_fraction": self.overlap_fraction,
            "seed": self.seed,
            "assignments": {k: list(v) for k, v in self.assignments.items()},
            "items": {k: item.to_dict() for k, item in self.items.items()},
            "adjudicator": self.adjudicator,
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, row: dict) -> "Session":
        return cls(
            session_id=row["session_id"],
            purpose=row["purpose"],
            item_ids=list(row["item_ids"]),
            raters=list(row["raters"]),
            overlap_fraction=float(row["overlap_fraction"]),
            seed=int(row["seed"]),
            assignments={k: list(v) for k, v in row["assignments"].items()},
            items={k: ReviewItem.from_dict(v) for k, v in row["items"].items()},
            adjudicator=row.get("adjudicator"),
            status=row.get("status", "open"),
        )

    @property
    def overlapped_items(self) -> list[str]:
        return [item for item in self.item_ids if len(self.assignments[item]) == 2]


def overlap_count(n_items: int, fraction: float) -> int:
    """round(fraction * n_items) with deterministic half-up ties."""
    return int(fraction * n_items + 0.5)


def assign_items(
    item_ids: Sequence[str], raters: Sequence[str], overlap_fraction: float, seed: int
) -> dict[str, list[str]]:
    """Seeded round-robin assignment with a sampled double-rated subset."""
    rng = random.Random(seed)
    order = list(raters)
    rng.shuffle(order)
    n_raters = len(order)
    doubled = set(rng.sample(list(item_ids), overlap_count(len(item_ids), overlap_fraction)))
    assignments: dict[str, list[str]] = {}
    for idx, item in enumerate(item_ids):
        assigned = [order[idx % n_raters]]
        if item in doubled:
            assigned.append(order[(idx + 1) % n_raters])
        assignments[item] = assigned
    return assignments


class ReviewEngine:
    """All review operations over one durable record log."""

    def __init__(self, log: RecordLog):
        self.log = log
        self._sessions: dict[str, Session] = {}
        # (session_id, item_id, rater_id) -> revision chain of rating records
        self._ratings: dict[tuple[str, str, str], list[dict]] = {}
        self._consensus: dict[tuple[str, str], dict] = {}
        self._restore()

    # -- persistence ------------------------------------------------------

    def _restore(self) -> None:
        offset = 0
        snapshot = self.log.read_snapshot()
        if snapshot:
            offset = int(snapshot["offset"])
            state = snapshot["state"]
            self._sessions = {k: Session.from_dict(v) for k, v in state["sessions"].items()}
            self._ratings = {
                tuple(key.split("\x1f")): list(chain) for key, chain in state["ratings"].items()
            }
            self._consensus = {
                tuple(key.split("\x1f")): rec for key, rec in state["consensus"].items()
            }
        for record in self.log.replay(from_offset=offset):
            self._apply(record)

    def snapshot(self) -> None:
        state = {
            "sessions": {k: s.to_dict() for k, s in self._sessions.items()},
            "ratings": {"\x1f".join(key): chain for key, chain in self._ratings.items()},
            "consensus": {"\x1f".join(key): rec for key, rec in self._consensus.items()},
        }
        self.log.write_snapshot(state)

    def _commit(self, record: dict) -> None:
        self.log.append(record)
        self._apply(record)

    def _apply(self, record: dict) -> None:
        kind = record["type"]
        if kind == "session":
            session = Session.from_dict(record["session"])
            self._sessions[session.session_id] = session
        elif kind == "rating":
            key = (record["session_id"], record["item_id"], record["rater_id"])
            self._ratings.setdefault(key, []).append(record)
        elif kind == "consensus":
            self._consensus[(record["session_id"], record["item_id"])] = record
        elif kind == "close":
            self._sessions[record["session_id"]].status = "closed"

    # -- operations -------------------------------------------------------

    def create_session(
        self,
        purpose: str,
        items: Sequence[ReviewItem],
        raters: Sequence[str],
        overlap_fraction: Optional[float] = None,
        seed: int = 0,
        adjudicator: Optional[str] = None,
    ) -> Session:
        if purpose not in PURPOSES:
            raise ReviewError(f"unknown purpose {purpose!r}")
        if overlap_fraction is None:
            overlap_fraction = 0.2 if purpose == "likert_eval" else 0.0
        if not 0.0 <= overlap_fraction < 1.0:
            raise ReviewError("overlap_fraction must be in [0, 1)")
        if not items:
            raise ReviewError("item list must be non-empty")
        item_ids = [item.item_id for item in items]
        if len(set(item_ids)) != len(item_ids):
            raise DuplicateItems("item ids must be distinct")
        if not raters:
            raise TooFewRaters("at least one rater required")
        if overlap_fraction > 0 and len(raters) < 2:
            raise TooFewRaters("overlap requires at least two raters")

        session_id = hashlib.sha256(
            f"session:{purpose}:{seed}:{len(self._sessions)}:{','.join(item_ids)}".encode("utf-8")
        ).hexdigest()[:12]
        session = Session(
            session_id=session_id,
            purpose=purpose,
            item_ids=item_ids,
            raters=list(raters),
            overlap_fraction=overlap_fraction,
            seed=seed,
            assignments=assign_items(item_ids, raters, overlap_fraction, seed),
            items={item.item_id: item for item in items},
            adjudicator=adjudicator,
        )
        self._commit({"type": "session", "session": session.to_dict()})
        return session

    def _session(self, session_id: str) -> Session:
        if session_id not in self._sessions:
            raise UnknownSession(session_id)
        return self._sessions[session_id]

    def get_session(self, session_id: str) -> Session:
        return self._session(session_id)

    def _latest_rating(self, session_id: str, item_id: str, rater_id: str) -> Optional[dict]:
        chain = self._ratings.get((session_id, item_id, rater_id))
        return chain[-1] if chain else None

    def next_task(self, session_id: str, rater_id: str) -> Optional[dict]:
        """Lowest-ordinal assigned item still unrated by this rater; idempotent."""
        session = self._session(session_id)
        if rater_id not in session.raters:
            raise UnknownRater(rater_id)
        for item_id in session.item_ids:
            if rater_id not in session.assignments[item_id]:
                continue
            if self._latest_rating(session_id, item_id, rater_id) is not None:
                continue
            item = session.items[item_id]
            highlighted = set()
            for start, end in item.locations:
                highlighted.update(range(start, end + 1))
            code_lines = [
                [i, text, i in highlighted]
                for i, text in enumerate(item.code.splitlines(), 1)
            ]
            return {
                "session_id": session_id,
                "purpose": session.purpose,
                "item_id": item_id,
                "vuln_type": item.vuln_type,
                "code_lines": code_lines,
                "explanation": item.explanation,
                "rubric": {dim: list(LIKERT_ANCHORS[dim]) for dim in DIMENSIONS},
            }
        return None

    def submit_rating(
        self,
        session_id: str,
        item_id: str,
        rater_id: str,
        scores: Optional[dict] = None,
        verdict: Optional[str] = None,
        edited_explanation: Optional[str] = None,
        rationale: str = "",
        supersede: bool = False,
    ) -> dict:
        session = self._session(session_id)
        if session.status != "open":
            raise SessionClosed(session_id)
        if item_id not in session.items:
            raise UnknownItem(item_id)
        if rater_id not in session.raters:
            raise UnknownRater(rater_id)
        if rater_id not in session.assignments[item_id]:
            raise NotAssigned(f"rater {rater_id} is not assigned item {item_id}")

        if session.purpose == "likert_eval":
            if not scores:
                raise ScoreOutOfRange("likert rating requires scores")
            for dim in DIMENSIONS:
                value = scores.get(dim)
                if not isinstance(value, int) or isinstance(value, bool) or not 1 <= value <= 4:
                    raise ScoreOutOfRange(f"{dim} must be an integer in 1..4, got {value!r}")
            scores = {dim: scores[dim] for dim in DIMENSIONS}
            verdict = None
            edited_explanation = None
        else:
            if verdict not in VERDICTS:
                raise ReviewError(f"curation rating requires verdict in {VERDICTS}")
            if verdict == "edit" and not edited_explanation:
                raise ReviewError("verdict=edit requires edited_explanation")
            scores = None

        chain = self._ratings.get((session_id, item_id, rater_id), [])
        if chain and not supersede:
            raise DuplicateRating(f"{rater_id} already rated {item_id}")

        event_id = hashlib.sha256(
            f"rating:{session_id}:{item_id}:{rater_id}:{len(chain)}".encode("utf-8")
        ).hexdigest()[:16]
        record = {
            "type": "rating",
            "event_id": event_id,
            "session_id": session_id,
            "item_id": item_id,
            "rater_id": rater_id,
            "scores": scores,
            "verdict": verdict,
            "edited_explanation": edited_explanation,
            "rationale": rationale,
            "revision": len(chain),
            "submitted_at": datetime.now(timezone.utc).isoformat(),
        }
        self._commit(record)
        return {"event_id": event_id}

    def _rating_triples(self, session: Session) -> list[tuple[str, str, dict]]:
        triples = []
        for item_id in session.item_ids:
            for rater_id in session.assignments[item_id]:
                latest = self._latest_rating(session.session_id, item_id, rater_id)
                if latest is not None and latest.get("scores"):
                    triples.append((item_id, rater_id, latest["scores"]))
        return triples

    def flag_disagreements(self, session_id: str) -> dict:
        """Agreement report over double-rated items; partial data warns."""
        session = self._session(session_id)
        if session.purpose != "likert_eval":
            return {"items": {}, "flagged": [], "exact_agreement": {}, "warnings": []}
        report = agreement_report(
            session.overlapped_items, self._rating_triples(session), allow_partial=True
        )
        payload = report.to_dict()
        resolved = [
            item_id
            for item_id in payload["flagged"]
            if (session_id, item_id) in self._consensus
        ]
        payload["resolved"] = resolved
        payload["pending"] = [i for i in payload["flagged"] if i not in resolved]
        return payload

    def record_consensus(
        self,
        session_id: str,
        item_id: str,
        dimension_scores: dict,
        adjudicator_id: str,
        note: str = "",
    ) -> dict:
        session = self._session(session_id)
        if item_id not in session.items:
            raise UnknownItem(item_id)
        if adjudicator_id not in session.raters and adjudicator_id != session.adjudicator:
            raise UnknownRater(adjudicator_id)
        flags = self.flag_disagreements(session_id)
        if item_id not in flags["flagged"]:
            raise NotFlagged(f"item {item_id} is not flagged for consensus")

        ratings = [
            latest["scores"]
            for rater_id in session.assignments[item_id]
            if (latest := self._latest_rating(session_id, item_id, rater_id)) is not None
        ]
        for dim in DIMENSIONS:
            value = dimension_scores.get(dim)
            if not isinstance(value, int) or isinstance(value, bool) or not 1 <= value <= 4:
                raise ScoreOutOfRange(f"consensus {dim} must be an integer in 1..4")
            lo = min(r[dim] for r in ratings)
            hi = max(r[dim] for r in ratings)
            if not lo <= value <= hi and not note.strip():
                raise InvalidConsensus(
                    f"consensus {dim}={value} outside rated range [{lo}, {hi}] needs a justifying note"
                )
        record = {
            "type": "consensus",
            "session_id": session_id,
            "item_id": item_id,
            "dimension_scores": {dim: dimension_scores[dim] for dim in DIMENSIONS},
            "adjudicator_id": adjudicator_id,
            "note": note,
            "recorded_at": datetime.now(timezone.utc).isoformat(),
        }
        self._commit(record)
        return {"item_id": item_id, "status": "recorded"}

    def close_session(self, session_id: str) -> dict:
        session = self._session(session_id)
        if session.status != "closed":
            self._commit({"type": "close", "session_id": session_id})
            self.snapshot()
        return {"session_id": session_id, "status": "closed"}

    def export_session(self, session_id: str, force: bool = False) -> Iterator[dict]:
        """Rating rows, consensus rows, then (curation) explanation overrides.

        Consensus scores supersede the disagreeing pair for downstream use;
        the per-rater originals stay в the export as the audit trail.
        """
        session = self._session(session_id)
        if session.status != "closed" and not force:
            raise SessionNotClosed(f"session {session_id} is open; use force to export anyway")
        for item_id in session.item_ids:
            for rater_id in session.assignments[item_id]:
                latest = self._latest_rating(session_id, item_id, rater_id)
                if latest is None:
                    yield {
                        "type": "warning",
                        "session_id": session_id,
                        "item_id": item_id,
                        "rater_id": rater_id,
                        "detail": "missing rating",
                    }
                    continue
                row = dict(latest)
                consensus = self._consensus.get((session_id, item_id))
                if consensus is not None and row.get("scores"):
                    row["resolved_scores"] = consensus["dimension_scores"]
                yield row
        for item_id in session.item_ids:
            consensus = self._consensus.get((session_id, item_id))
            if consensus is not None:
                yield consensus
        if session.purpose == "curation_verify":
            for item_id in session.item_ids:
                for rater_id in session.assignments[item_id]:
                    latest = self._latest_rating(session_id, item_id, rater_id)
                    if latest is not None and latest.get("verdict") == "edit":
                        yield {
                            "type": "override",
                            "candidate_id": item_id,
                            "explanation": latest["edited_explanation"],
                            "provenance": "human_verified",
                        }
