"""Review queue service: durable case store plus its REST surface.

State lives in an append-only JSON-Lines event log; the full in-memory view
is rebuilt by replaying the log on startup. Every acknowledged mutation is
flushed and fsynced before the caller hears about it.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, replace
from typing import Any, Callable

from .errors import (
    BadValueKind,
    NotInReview,
    ScamlensError,
    SchemaParseError,
    UnknownBackend,
    UnknownCase,
    UnknownReason,
    WrongReviewer,
)
from .featurizer import BinningModel, bucketize, render_value
from .grammar import Evaluation, parse_evaluation
from .metrics import ScoredPrediction, build_report
from .model import (
    LABELS,
    POLARITIES,
    FeatureSchema,
    TransactionRecord,
    record_from_json,
    record_to_json,
)

CASE_STATUSES = ("pending", "in_review", "decided")
FEEDBACK_RATINGS = ("up", "down")

# binary thumb ratings projected onto the three-level quality scale
_RATING_PROJECTION = {"up": "excellent", "down": "poor"}

DEFAULT_LEASE_SECONDS = 30 * 60.0


@dataclass(frozen=True)
class ReasonFeedback:
    """A thumbs rating on one reason of one case."""

    case_id: str
    polarity: str
    reason_index: int
    rating: str
    note: str | None = None

    def __post_init__(self):
        if self.polarity not in POLARITIES:
            raise UnknownReason(f"unknown polarity {self.polarity!r}")
        if self.rating not in FEEDBACK_RATINGS:
            raise BadValueKind(f"rating must be one of {FEEDBACK_RATINGS}")
        if self.reason_index < 0:
            raise UnknownReason("reason_index must be non-negative")


@dataclass(frozen=True)
class ReviewCase:
    """Immutable snapshot of one queued transaction."""

    record: TransactionRecord
    evaluation: Evaluation | None
    evaluation_text: str
    status: str
    parse_error: str | None = None
    reviewer_id: str | None = None
    verdict: str | None = None
    enqueued_at: float = 0.0
    assigned_at: float | None = None
    decided_at: float | None = None

    def __post_init__(self):
        if self.status not in CASE_STATUSES:
            raise ValueError(f"bad case status {self.status!r}")
        if (self.status == "decided") != (self.verdict is not None):
            raise ValueError("decided status and verdict must appear together")
        if self.verdict is not None and self.verdict not in LABELS:
            raise ValueError(f"verdict must be one of {LABELS}")
        if self.status == "in_review" and self.reviewer_id is None:
            raise ValueError("in_review case needs a reviewer")

    @property
    def case_id(self) -> str:
        return self.record.id


class EventLog:
    """Append-only JSONL file; append returns only after flush + fsync."""

    def __init__(self, path: str):
        self.path = path
        self._f = open(path, "a", encoding="utf-8")

    def append(self, event: dict[str, Any]) -> None:
        self._f.write(json.dumps(event, sort_keys=True) + "\n")
        self._f.flush()
        os.fsync(self._f.fileno())

    def close(self) -> None:
        self._f.close()

    @staticmethod
    def read_all(path: str) -> list[dict[str, Any]]:
        events = []
        if not os.path.exists(path):
            return events
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    events.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise SchemaParseError(f"{path}:{lineno}: corrupt event: {exc}") from exc
        return events


@dataclass(frozen=True)
class EnqueueResult:
    record_id: str
    status: str  # created | existing | failed
    case_id: str | None = None
    error_code: str | None = None
    error_message: str | None = None

    def to_json(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"record_id": self.record_id, "status": self.status}
        if self.case_id is not None:
            doc["case_id"] = self.case_id
        if self.error_code is not None:
            doc["error"] = {"code": self.error_code, "message": self.error_message}
        return doc


CompletionFn = Callable[[TransactionRecord, str | None], str]


class ReviewService:
    """FIFO review queue over the event log.

    All mutations run under one lock and append their event before the
    in-memory state changes; reads hand out frozen snapshots.
    """

    def __init__(
        self,
        log_path: str,
        schema: FeatureSchema,
        completion_fn: CompletionFn | None = None,
        model: BinningModel | None = None,
        lease_seconds: float = DEFAULT_LEASE_SECONDS,
        clock: Callable[[], float] = time.time,
        template_version: str = "unknown",
    ):
        self.schema = schema
        self.model = model
        self.lease_seconds = lease_seconds
        self.template_version = template_version
        self._completion_fn = completion_fn
        self._clock = clock
        self._lock = threading.Lock()
        self._cases: dict[str, ReviewCase] = {}
        self._order: list[str] = []
        self._feedback: dict[str, list[ReasonFeedback]] = {}
        for event in EventLog.read_all(log_path):
            self._apply(event)
        self._log = EventLog(log_path)

    # -- replay --

    def _apply(self, event: dict[str, Any]) -> None:
        kind = event.get("event")
        if kind == "case_enqueued":
            record = record_from_json(event["record"])
            case = self._build_case(record, event["evaluation_text"], event["at"])
            self._cases[record.id] = case
            self._order.append(record.id)
        elif kind == "case_assigned":
            case = self._cases[event["case_id"]]
            self._cases[case.case_id] = replace(
                case, status="in_review", reviewer_id=event["reviewer_id"],
                assigned_at=event["at"],
            )
        elif kind == "case_released":
            case = self._cases[event["case_id"]]
            self._cases[case.case_id] = replace(
                case, status="pending", reviewer_id=None, assigned_at=None
            )
        elif kind == "verdict_submitted":
            case = self._cases[event["case_id"]]
            self._cases[case.case_id] = replace(
                case, status="decided", verdict=event["verdict"],
                reviewer_id=event["reviewer_id"], decided_at=event["at"],
            )
        elif kind == "feedback_submitted":
            feedback = ReasonFeedback(
                case_id=event["case_id"], polarity=event["polarity"],
                reason_index=event["reason_index"], rating=event["rating"],
                note=event.get("note"),
            )
            self._feedback.setdefault(feedback.case_id, []).append(feedback)
        else:
            raise SchemaParseError(f"unknown event type {kind!r} in log")

    def _build_case(self, record: TransactionRecord, text: str, at: float) -> ReviewCase:
        try:
            evaluation, _ = parse_evaluation(text, self.schema)
            parse_error = None
        except ScamlensError as exc:
            evaluation = None
            parse_error = f"{exc.code}: {exc.message}"
        return ReviewCase(
            record=record, evaluation=evaluation, evaluation_text=text,
            status="pending", parse_error=parse_error, enqueued_at=at,
        )

    # -- operations --

    def enqueue(self, records: list[TransactionRecord],
                backend_id: str | None = None) -> list[EnqueueResult]:
        results = []
        for record in records:
            with self._lock:
                if record.id in self._cases:
                    results.append(EnqueueResult(record_id=record.id, status="existing",
                                                 case_id=record.id))
                    continue
            if self._completion_fn is None:
                raise UnknownBackend("service has no completion backend configured")
            try:
                text = self._completion_fn(record, backend_id)
            except ScamlensError as exc:
                results.append(EnqueueResult(record_id=record.id, status="failed",
                                             error_code=exc.code, error_message=exc.message))
                continue
            with self._lock:
                if record.id in self._cases:  # lost a race to a concurrent enqueue
                    results.append(EnqueueResult(record_id=record.id, status="existing",
                                                 case_id=record.id))
                    continue
                at = self._clock()
                self._log.append({
                    "event": "case_enqueued", "at": at,
                    "record": record_to_json(record), "evaluation_text": text,
                })
                self._cases[record.id] = self._build_case(record, text, at)
                self._order.append(record.id)
            results.append(EnqueueResult(record_id=record.id, status="created",
                                         case_id=record.id))
        return results

    def next_case(self, reviewer_id: str) -> ReviewCase | None:
        if not reviewer_id:
            raise BadValueKind("reviewer id must be non-empty")
        with self._lock:
            now = self._clock()
            for cid in self._order:
                case = self._cases[cid]
                if (case.status == "in_review" and case.assigned_at is not None
                        and now - case.assigned_at > self.lease_seconds):
                    self._log.append({"event": "case_released", "at": now, "case_id": cid})
                    self._cases[cid] = replace(case, status="pending", reviewer_id=None,
                                               assigned_at=None)
            for cid in self._order:
                case = self._cases[cid]
                if case.status == "pending":
                    self._log.append({"event": "case_assigned", "at": now,
                                      "case_id": cid, "reviewer_id": reviewer_id})
                    assigned = replace(case, status="in_review", reviewer_id=reviewer_id,
                                       assigned_at=now)
                    self._cases[cid] = assigned
                    return assigned
            return None

    def submit_verdict(self, case_id: str, reviewer_id: str, verdict: str) -> ReviewCase:
        if verdict not in LABELS:
            raise BadValueKind(f"verdict must be one of {LABELS}")
        with self._lock:
            case = self._cases.get(case_id)
            if case is None:
                raise UnknownCase(f"no case {case_id!r}")
            if case.status != "in_review":
                raise NotInReview(f"case {case_id} is {case.status}, not in_review")
            if case.reviewer_id != reviewer_id:
                raise WrongReviewer(
                    f"case {case_id} is held by {case.reviewer_id!r}, not {reviewer_id!r}"
                )
            at = self._clock()
            self._log.append({"event": "verdict_submitted", "at": at, "case_id": case_id,
                              "reviewer_id": reviewer_id, "verdict": verdict})
            decided = replace(case, status="decided", verdict=verdict, decided_at=at)
            self._cases[case_id] = decided
            return decided

    def submit_feedback(self, feedback: ReasonFeedback) -> ReasonFeedback:
        with self._lock:
            case = self._cases.get(feedback.case_id)
            if case is None:
                raise UnknownCase(f"no case {feedback.case_id!r}")
            self._check_reason_exists(case, feedback)
            self._log.append({
                "event": "feedback_submitted", "at": self._clock(),
                "case_id": feedback.case_id, "polarity": feedback.polarity,
                "reason_index": feedback.reason_index, "rating": feedback.rating,
                "note": feedback.note,
            })
            self._feedback.setdefault(feedback.case_id, []).append(feedback)
            return feedback

    @staticmethod
    def _check_reason_exists(case: ReviewCase, feedback: ReasonFeedback) -> None:
        if case.evaluation is None:
            raise UnknownReason(f"case {feedback.case_id} has no parsed evaluation")
        reasons = (case.evaluation.fraud_reasons
                   if feedback.polarity == POLARITIES[0] else case.evaluation.legit_reasons)
        if feedback.reason_index >= len(reasons):
            raise UnknownReason(
                f"case {feedback.case_id} has no {feedback.polarity} reason "
                f"#{feedback.reason_index}"
            )

    def get_case(self, case_id: str) -> tuple[ReviewCase, list[ReasonFeedback]]:
        case = self._cases.get(case_id)
        if case is None:
            raise UnknownCase(f"no case {case_id!r}")
        return case, list(self._feedback.get(case_id, []))

    def counts(self) -> dict[str, int]:
        with self._lock:
            out = {status: 0 for status in CASE_STATUSES}
            for case in self._cases.values():
                out[case.status] += 1
            out["total"] = len(self._cases)
            return out

    # -- exports and reporting --

    def export_decisions(self) -> str:
        """Decided cases as annotation JSONL, one line per case after a header.

        Reviewer reasons come from note-bearing feedback: the note text is
        attached under the tag of the generated reason it rated. Thumb
        ratings project onto the quality scale as up=excellent, down=poor.
        """
        with self._lock:
            decided = [self._cases[cid] for cid in self._order
                       if self._cases[cid].status == "decided"]
            feedback = {cid: list(items) for cid, items in self._feedback.items()}
        lines = [json.dumps({"annotations_header": {
            "version": 1, "decided": len(decided), "source": "scamlens-review-service",
        }, }, sort_keys=True)]
        for case in decided:
            reasons = []
            ratings = []
            detail = []
            for item in feedback.get(case.case_id, []):
                ratings.append(_RATING_PROJECTION[item.rating])
                detail.append({
                    "polarity": item.polarity, "reason_index": item.reason_index,
                    "rating": item.rating, "note": item.note,
                })
                if item.note:
                    tagged = self._referenced_reason(case, item)
                    if tagged is not None and tagged.tag is not None:
                        reasons.append({
                            "signal_id": tagged.tag.signal_id,
                            "polarity": tagged.tag.polarity,
                            "text": item.note,
                        })
            doc = {
                "id": case.case_id,
                "reviewer_reasons": reasons,
                "quality_ratings": ratings,
                "verdict": case.verdict,
                "reviewer_id": case.reviewer_id,
                "decided_at": case.decided_at,
                "feedback": detail,
            }
            lines.append(json.dumps(doc, sort_keys=True))
        return "\n".join(lines) + "\n"

    @staticmethod
    def _referenced_reason(case: ReviewCase, item: ReasonFeedback):
        if case.evaluation is None:
            return None
        reasons = (case.evaluation.fraud_reasons
                   if item.polarity == POLARITIES[0] else case.evaluation.legit_reasons)
        if item.reason_index < len(reasons):
            return reasons[item.reason_index]
        return None

    def metrics_report(self) -> dict[str, Any]:
        with self._lock:
            decided = [self._cases[cid] for cid in self._order
                       if self._cases[cid].status == "decided"]
            queue = {status: 0 for status in CASE_STATUSES}
            for case in self._cases.values():
                queue[case.status] += 1
        rows = [
            ScoredPrediction(id=case.case_id, confidence=case.evaluation.confidence,
                             label=case.verdict, segments=frozenset())
            for case in decided if case.evaluation is not None
        ]
        doc: dict[str, Any] = {
            "queue": queue,
            "n_decided": len(decided),
            "n_unparsed_decided": len(decided) - len(rows),
            "report": None,
        }
        if rows:
            report = build_report(rows, corpus="review-service",
                                  template_version=self.template_version)
            doc["report"] = report.to_json()
        return doc

    def case_to_json(self, case: ReviewCase,
                     feedback: list[ReasonFeedback] | None = None) -> dict[str, Any]:
        evaluation = None
        if case.evaluation is not None:
            e = case.evaluation
            evaluation = {
                "verdict": e.verdict,
                "confidence": e.confidence,
                "mo": e.mo,
                "fraud_reasons": [_reason_json(r) for r in e.fraud_reasons],
                "legit_reasons": [_reason_json(r) for r in e.legit_reasons],
            }
        doc = {
            "case_id": case.case_id,
            "status": case.status,
            "record": record_to_json(case.record),
            "feature_table": self._feature_table(case.record),
            "evaluation": evaluation,
            "evaluation_text": case.evaluation_text,
            "parse_error": case.parse_error,
            "reviewer_id": case.reviewer_id,
            "verdict": case.verdict,
            "enqueued_at": case.enqueued_at,
            "decided_at": case.decided_at,
        }
        if feedback is not None:
            doc["feedback"] = [
                {"polarity": f.polarity, "reason_index": f.reason_index,
                 "rating": f.rating, "note": f.note}
                for f in feedback
            ]
        return doc

    def _feature_table(self, record: TransactionRecord) -> list[dict[str, Any]]:
        table = []
        for fid in self.schema.signal_priority:
            spec = self.schema.feature(fid)
            value = record.values.get(fid)
            if fid == "mode" and value is None:
                value = record.mode or None
            bucket = None
            if spec.kind == "numeric" and self.model is not None:
                try:
                    bucket = bucketize(value, fid, self.model)
                except ScamlensError:
                    bucket = None
            table.append({
                "id": fid,
                "description": spec.description,
                "value": render_value(value),
                "bucket": bucket,
            })
        return table

    def close(self) -> None:
        self._log.close()


def _reason_json(reason) -> dict[str, Any]:
    tag = reason.tag
    return {
        "signal_id": tag.signal_id if tag else None,
        "polarity": tag.polarity if tag else None,
        "text": reason.free_text,
    }


def build_app(service: ReviewService):
    """FastAPI application exposing the /v1 REST surface."""

    from fastapi import Body, FastAPI, Query, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.responses import JSONResponse, PlainTextResponse

    app = FastAPI(title="scamlens review service", docs_url=None, redoc_url=None)

    status_by_code = {"UnknownCase": 404, "NotInReview": 409, "WrongReviewer": 409}

    @app.exception_handler(ScamlensError)
    def scamlens_error(request: Request, exc: ScamlensError):
        status = status_by_code.get(exc.code, 422)
        return JSONResponse(status_code=status,
                            content={"code": exc.code, "message": exc.message})

    @app.exception_handler(RequestValidationError)
    def validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=422,
                            content={"code": "ValidationError", "message": str(exc.errors())})

    @app.post("/v1/transactions")
    def enqueue(payload: dict = Body(...)):
        raw_records = payload.get("records")
        if not isinstance(raw_records, list) or not raw_records:
            raise BadValueKind("body needs a non-empty 'records' array")
        records = [record_from_json(obj) for obj in raw_records]
        results = service.enqueue(records, payload.get("backend_id"))
        return {"results": [r.to_json() for r in results]}

    @app.get("/v1/review/next")
    def next_case(reviewer: str = Query(..., min_length=1)):
        case = service.next_case(reviewer)
        if case is None:
            return {"case": None}
        return {"case": service.case_to_json(case)}

    @app.post("/v1/review/{case_id}/verdict")
    def submit_verdict(case_id: str, payload: dict = Body(...)):
        reviewer = payload.get("reviewer_id")
        if not isinstance(reviewer, str) or not reviewer:
            raise BadValueKind("body needs a non-empty 'reviewer_id'")
        verdict = payload.get("verdict")
        if not isinstance(verdict, str):
            raise BadValueKind("body needs a 'verdict' string")
        case = service.submit_verdict(case_id, reviewer, verdict)
        return {"case": service.case_to_json(case)}

    @app.post("/v1/review/{case_id}/feedback")
    def submit_feedback(case_id: str, payload: dict = Body(...)):
        index = payload.get("reason_index")
        if not isinstance(index, int) or isinstance(index, bool):
            raise BadValueKind("body needs an integer 'reason_index'")
        note = payload.get("note")
        if note is not None and not isinstance(note, str):
            raise BadValueKind("'note' must be a string when present")
        feedback = ReasonFeedback(
            case_id=case_id,
            polarity=str(payload.get("polarity", "")),
            reason_index=index,
            rating=str(payload.get("rating", "")),
            note=note,
        )
        service.submit_feedback(feedback)
        return {"stored": True}

    @app.get("/v1/cases/{case_id}")
    def get_case(case_id: str):
        case, feedback = service.get_case(case_id)
        return {"case": service.case_to_json(case, feedback)}

    @app.get("/v1/metrics/report")
    def metrics_report():
        return service.metrics_report()

    @app.get("/v1/export/decisions")
    def export_decisions():
        return PlainTextResponse(service.export_decisions(),
                                 media_type="application/jsonl")

    return app
