"""Classification metrics, AUC-ROC, segment slices, and reasoning scoring.

Positive class is "scam"; a prediction is positive at threshold t iff its
confidence is >= t. Ratios with zero denominators are reported as the
explicit marker `undefined` (None in Python, the string "undefined" in JSON)
rather than silently coerced to 0.

Reasoning quality has two independent channels: the C/I/H/M/N categorization
of generated reasons against reviewer notes (computed here), and the
excellent/acceptable/poor quality ratings (always ingested from annotations,
never computed, because those judgments were human).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import (
    BadValueKind,
    EmptyCounts,
    EmptyPredictionSet,
    EmptyRatings,
    IdMismatch,
    SingleClassDataset,
)
from .featurizer import BinningModel, bucketize
from .grammar import CONSISTENT, INCONSISTENT, Evaluation, canonicalize_reason
from .model import (
    LABEL_SCAM,
    LABELS,
    FeatureSchema,
    ReasonTag,
    ReviewerReason,
    TransactionRecord,
)

UNDEFINED = "undefined"
RATINGS = ("excellent", "acceptable", "poor")
DEFAULT_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)

SEGMENT_EXTERNAL_MERCHANT = "external_merchant"
SEGMENT_HIGH_VALUE = "high_value"
SEGMENT_APP_INTENT = "app_intent"
SEGMENT_HAS_ORDER_TEXT = "has_order_text"


@dataclass(frozen=True)
class ScoredPrediction:
    """One model output joined with its gold label and segment memberships."""

    id: str
    confidence: float
    label: str
    segments: frozenset[str] = frozenset()

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence!r}")
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")

    def positive_at(self, threshold: float) -> bool:
        return self.confidence >= threshold

    @property
    def is_scam(self) -> bool:
        return self.label == LABEL_SCAM


@dataclass(frozen=True)
class ConfusionPRF:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float | None
    recall: float | None
    f1: float | None

    def to_json(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "precision": UNDEFINED if self.precision is None else self.precision,
            "recall": UNDEFINED if self.recall is None else self.recall,
            "f1": UNDEFINED if self.f1 is None else self.f1,
        }


@dataclass(frozen=True)
class ReasonCategoryCounts:
    c: int = 0
    i: int = 0
    h: int = 0
    m: int = 0
    n: int = 0

    def __post_init__(self):
        if min(self.c, self.i, self.h, self.m, self.n) < 0:
            raise ValueError("category counts must be non-negative")

    @property
    def total(self) -> int:
        return self.c + self.i + self.h + self.m + self.n

    def __add__(self, other: ReasonCategoryCounts) -> ReasonCategoryCounts:
        return ReasonCategoryCounts(
            self.c + other.c, self.i + other.i, self.h + other.h,
            self.m + other.m, self.n + other.n,
        )

    def to_json(self) -> dict:
        return {"C": self.c, "I": self.i, "H": self.h, "M": self.m, "N": self.n}


def confusion_and_prf(predictions: list[ScoredPrediction], threshold: float) -> ConfusionPRF:
    """Confusion counts and precision/recall/F1 at one decision threshold."""
    if not predictions:
        raise EmptyPredictionSet("no predictions to score")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold!r}")
    tp = fp = tn = fn = 0
    for p in predictions:
        positive = p.positive_at(threshold)
        if p.is_scam:
            tp, fn = (tp + 1, fn) if positive else (tp, fn + 1)
        else:
            fp, tn = (fp + 1, tn) if positive else (fp, tn + 1)
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    f1 = (
        2 * precision * recall / (precision + recall)
        if precision is not None and recall is not None and precision + recall > 0
        else None
    )
    return ConfusionPRF(tp, fp, tn, fn, precision, recall, f1)


def auc_roc(predictions: list[ScoredPrediction]) -> float:
    """Mann-Whitney AUC with average ranks over ties."""
    positives = sum(1 for p in predictions if p.is_scam)
    negatives = len(predictions) - positives
    if positives == 0 or negatives == 0:
        raise SingleClassDataset("AUC-ROC needs both classes present")
    ordered = sorted(predictions, key=lambda p: p.confidence)
    rank_sum_pos = 0.0
    index = 0
    while index < len(ordered):
        tied_end = index
        while (
            tied_end + 1 < len(ordered)
            and ordered[tied_end + 1].confidence == ordered[index].confidence
        ):
            tied_end += 1
        # ranks are 1-based; tied scores share the average rank of their run
        average_rank = (index + 1 + tied_end + 1) / 2
        for j in range(index, tied_end + 1):
            if ordered[j].is_scam:
                rank_sum_pos += average_rank
        index = tied_end + 1
    u_statistic = rank_sum_pos - positives * (positives + 1) / 2
    return u_statistic / (positives * negatives)


def default_segments(
    record: TransactionRecord, schema: FeatureSchema, model: BinningModel
) -> frozenset[str]:
    """Which report segments a record belongs to, per the schema's features."""
    flags = set()
    values = record.values
    if schema.has_feature("merchant_flag") and schema.has_feature("external_merchant_flag"):
        if values.get("merchant_flag") is True and values.get("external_merchant_flag") is True:
            flags.add(SEGMENT_EXTERNAL_MERCHANT)
    if schema.has_feature("amount"):
        amount = values.get("amount")
        if amount is not None and bucketize(float(amount), "amount", model) == "very high":
            flags.add(SEGMENT_HIGH_VALUE)
    if record.mode == "app_intent":
        flags.add(SEGMENT_APP_INTENT)
    if schema.has_feature("memo_text"):
        memo = values.get("memo_text")
        if isinstance(memo, str) and memo.strip():
            flags.add(SEGMENT_HAS_ORDER_TEXT)
    return frozenset(flags)


ALL_SEGMENTS = (
    SEGMENT_EXTERNAL_MERCHANT,
    SEGMENT_HIGH_VALUE,
    SEGMENT_APP_INTENT,
    SEGMENT_HAS_ORDER_TEXT,
)


def segment_metrics(
    predictions: list[ScoredPrediction],
    threshold: float,
    segment_ids: tuple[str, ...] = ALL_SEGMENTS,
) -> dict[str, ConfusionPRF | None]:
    """Per-segment confusion/PRF over each segment's members only.

    A segment with no members maps to None (an all-undefined row).
    """
    out: dict[str, ConfusionPRF | None] = {}
    for segment in segment_ids:
        members = [p for p in predictions if segment in p.segments]
        out[segment] = confusion_and_prf(members, threshold) if members else None
    return out


def categorize_reasons(
    generated: Evaluation,
    reviewer: list[ReviewerReason],
    record: TransactionRecord,
    schema: FeatureSchema,
    model: BinningModel,
) -> ReasonCategoryCounts:
    """Score generated reasons against reviewer notes by (signal, polarity) key.

    Each generated reason, in order (fraud section first), lands in exactly
    one bucket: Hallucination for unresolvable tags, Incorrect when its text
    contradicts the record, Correct when consistent and a reviewer reason
    with the same key is still unclaimed (that reviewer reason is consumed),
    New otherwise. Reviewer reasons never consumed end up Missed. Inconsistent
    reasons never consume a reviewer reason, which is what keeps
    C + M = len(reviewer) an identity.
    """
    consumed = [False] * len(reviewer)
    c = i = h = n = 0
    for reason in generated.reasons:
        if reason.tag is None:
            h += 1
            continue
        verdict = canonicalize_reason(reason, record, schema, model)
        if verdict == INCONSISTENT:
            i += 1
            continue
        assert verdict == CONSISTENT
        key = (reason.tag.signal_id, reason.tag.polarity)
        hit = None
        for j, note in enumerate(reviewer):
            if not consumed[j] and (note.signal_id, note.polarity) == key:
                hit = j
                break
        if hit is None:
            n += 1
        else:
            consumed[hit] = True
            c += 1
    m = consumed.count(False)
    return ReasonCategoryCounts(c=c, i=i, h=h, m=m, n=n)


def reasoning_accuracy(counts: ReasonCategoryCounts) -> float:
    """(C + N) / (C + I + H + M + N): generated-new counts as correct."""
    if counts.total == 0:
        raise EmptyCounts("reasoning accuracy needs at least one categorized reason")
    return (counts.c + counts.n) / counts.total


@dataclass(frozen=True)
class QualitySummary:
    histogram: dict[str, int]
    positive: float

    def to_json(self) -> dict:
        return {"histogram": dict(self.histogram), "positive": self.positive}


def quality_summary(ratings: list[str]) -> QualitySummary:
    """Histogram plus (excellent + acceptable) / total."""
    if not ratings:
        raise EmptyRatings("no quality ratings to summarize")
    histogram = {r: 0 for r in RATINGS}
    for rating in ratings:
        if rating not in histogram:
            raise BadValueKind(f"rating must be one of {RATINGS}, got {rating!r}")
        histogram[rating] += 1
    positive = (histogram["excellent"] + histogram["acceptable"]) / len(ratings)
    return QualitySummary(histogram=histogram, positive=positive)


# --- annotations and predictions files ---

@dataclass(frozen=True)
class Annotation:
    """One reviewed record: the reviewer's reasons and their quality ratings."""

    id: str
    reviewer_reasons: tuple[ReviewerReason, ...] = ()
    quality_ratings: tuple[str, ...] = ()


@dataclass(frozen=True)
class PredictionRow:
    """One line of the predictions file."""

    id: str
    confidence: float
    verdict: str
    evaluation_text: str


def annotation_to_json(a: Annotation) -> dict:
    return {
        "id": a.id,
        "reviewer_reasons": [
            {"signal_id": r.signal_id, "polarity": r.polarity, "text": r.free_text}
            for r in a.reviewer_reasons
        ],
        "quality_ratings": list(a.quality_ratings),
    }


def annotation_from_json(obj: dict) -> Annotation:
    if not isinstance(obj, dict) or not obj.get("id"):
        raise BadValueKind("annotation line needs an 'id'")
    reasons = []
    for entry in obj.get("reviewer_reasons", []) or []:
        try:
            tag = ReasonTag(str(entry.get("signal_id", "")), str(entry.get("polarity", "")))
        except ValueError as exc:
            raise BadValueKind(f"annotation {obj['id']}: {exc}") from exc
        reasons.append(ReviewerReason(tag=tag, free_text=str(entry.get("text", ""))))
    ratings = tuple(str(r) for r in obj.get("quality_ratings", []) or [])
    for rating in ratings:
        if rating not in RATINGS:
            raise BadValueKind(f"annotation {obj['id']}: bad rating {rating!r}")
    return Annotation(id=str(obj["id"]), reviewer_reasons=tuple(reasons), quality_ratings=ratings)


def read_annotations_jsonl(path: str) -> list[Annotation]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "annotations_header" in obj:
                continue
            out.append(annotation_from_json(obj))
    return out


def prediction_to_json(row: PredictionRow) -> dict:
    return {
        "id": row.id,
        "confidence": row.confidence,
        "verdict": row.verdict,
        "evaluation_text": row.evaluation_text,
    }


def prediction_from_json(obj: dict) -> PredictionRow:
    if not isinstance(obj, dict) or not obj.get("id"):
        raise BadValueKind("prediction line needs an 'id'")
    return PredictionRow(
        id=str(obj["id"]),
        confidence=float(obj.get("confidence", 0.5)),
        verdict=str(obj.get("verdict", "")),
        evaluation_text=str(obj.get("evaluation_text", "")),
    )


def read_predictions_jsonl(path: str) -> list[PredictionRow]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(prediction_from_json(json.loads(line)))
    return out


def write_predictions_jsonl(path: str, rows: list[PredictionRow]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(prediction_to_json(row), ensure_ascii=False) + "\n")


# --- the report ---

@dataclass(frozen=True)
class MetricsReport:
    corpus: str
    template_version: str
    n_predictions: int
    auc: float | None
    thresholds: dict[float, ConfusionPRF]
    segment_threshold: float
    segments: dict[str, ConfusionPRF | None]
    reason_counts: ReasonCategoryCounts | None = None
    accuracy: float | None = None
    quality: QualitySummary | None = None

    def to_json(self) -> dict:
        return {
            "corpus": self.corpus,
            "template_version": self.template_version,
            "n_predictions": self.n_predictions,
            "auc_roc": UNDEFINED if self.auc is None else self.auc,
            "thresholds": {
                format_threshold(t): prf.to_json() for t, prf in sorted(self.thresholds.items())
            },
            "segment_threshold": self.segment_threshold,
            "segments": {
                name: (UNDEFINED if prf is None else prf.to_json())
                for name, prf in self.segments.items()
            },
            "reason_counts": None if self.reason_counts is None else self.reason_counts.to_json(),
            "reasoning_accuracy": UNDEFINED if self.accuracy is None else self.accuracy,
            "quality": None if self.quality is None else self.quality.to_json(),
        }


def format_threshold(t: float) -> str:
    return f"{t:.2f}".rstrip("0").rstrip(".") if t != int(t) else f"{t:.1f}"


def aggregate_reason_counts(
    evaluations: dict[str, Evaluation],
    annotations: list[Annotation],
    records: dict[str, TransactionRecord],
    schema: FeatureSchema,
    model: BinningModel,
) -> ReasonCategoryCounts:
    """Sum per-record categorizations over every annotated record."""
    total = ReasonCategoryCounts()
    for annotation in annotations:
        if annotation.id not in evaluations or annotation.id not in records:
            raise IdMismatch(f"annotation {annotation.id!r} has no matching prediction/record")
        total = total + categorize_reasons(
            evaluations[annotation.id],
            list(annotation.reviewer_reasons),
            records[annotation.id],
            schema,
            model,
        )
    return total


def build_report(
    predictions: list[ScoredPrediction],
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS,
    segment_threshold: float = 0.9,
    reason_counts: ReasonCategoryCounts | None = None,
    quality: QualitySummary | None = None,
    corpus: str = "",
    template_version: str = "",
) -> MetricsReport:
    """Assemble the full report over a mandatory threshold grid.

    The grid must include 0.5 and 0.9; those are the operating points every
    downstream comparison quotes.
    """
    if not predictions:
        raise EmptyPredictionSet("cannot build a report over zero predictions")
    grid = tuple(sorted(set(thresholds)))
    if 0.5 not in grid or 0.9 not in grid:
        raise ValueError("threshold grid must include 0.5 and 0.9")
    try:
        auc = auc_roc(predictions)
    except SingleClassDataset:
        auc = None
    accuracy = None
    if reason_counts is not None and reason_counts.total > 0:
        accuracy = reasoning_accuracy(reason_counts)
    return MetricsReport(
        corpus=corpus,
        template_version=template_version,
        n_predictions=len(predictions),
        auc=auc,
        thresholds={t: confusion_and_prf(predictions, t) for t in grid},
        segment_threshold=segment_threshold,
        segments=segment_metrics(predictions, segment_threshold),
        reason_counts=reason_counts,
        accuracy=accuracy,
        quality=quality,
    )


def render_report_text(report: MetricsReport) -> str:
    """Plain-text table rendering of the report."""

    def cell(value):
        return UNDEFINED if value is None else f"{value:.4f}"

    lines = [
        f"corpus: {report.corpus or '-'}   template: {report.template_version or '-'}   "
        f"predictions: {report.n_predictions}",
        f"auc_roc: {cell(report.auc)}",
        "",
        "threshold    tp    fp    tn    fn  precision     recall         f1",
    ]
    for t, prf in sorted(report.thresholds.items()):
        lines.append(
            f"{format_threshold(t):>9} {prf.tp:>5} {prf.fp:>5} {prf.tn:>5} {prf.fn:>5} "
            f"{cell(prf.precision):>10} {cell(prf.recall):>10} {cell(prf.f1):>10}"
        )
    lines.append("")
    lines.append(f"segments at threshold {format_threshold(report.segment_threshold)}:")
    for name, prf in report.segments.items():
        if prf is None:
            lines.append(f"{name:>18}: {UNDEFINED}")
        else:
            lines.append(
                f"{name:>18}: tp={prf.tp} fp={prf.fp} tn={prf.tn} fn={prf.fn} "
                f"precision={cell(prf.precision)} recall={cell(prf.recall)} f1={cell(prf.f1)}"
            )
    if report.reason_counts is not None:
        rc = report.reason_counts
        lines.append("")
        lines.append(f"reasons: C={rc.c} I={rc.i} H={rc.h} M={rc.m} N={rc.n}")
        lines.append(f"reasoning_accuracy: {cell(report.accuracy)}")
    if report.quality is not None:
        h = report.quality.histogram
        lines.append(
            f"quality: excellent={h.get('excellent', 0)} acceptable={h.get('acceptable', 0)} "
            f"poor={h.get('poor', 0)} positive={report.quality.positive:.4f}"
        )
    return "\n".join(lines) + "\n"
