"""The canonical evaluation wire grammar (version token EVAL/1).

Every producer of evaluations (prompt exemplars, the rule-oracle backend,
real LLM completions) and every consumer (metrics, review console) speaks
this one line grammar:

    EVAL/1
    FRAUD_REASONS:
    - [signal_id] free text
    LEGIT_REASONS:
    - [signal_id] free text
    VERDICT: fraudulent
    MO: phishing
    CONFIDENCE: 0.73

Parsing is total over arbitrary text: it tolerates surrounding prose, blank
lines, markdown noise and case differences, and reports recoverable oddities
as warnings. Only a missing verdict or two conflicting verdicts are errors.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from .errors import ContradictoryVerdicts, NoVerdictFound
from .featurizer import BinningModel, bucketize, render_value
from .model import (
    MO_NONE,
    SUPPORTS_FRAUD,
    SUPPORTS_LEGITIMACY,
    FeatureSchema,
    ReasonTag,
    TransactionRecord,
)

VERSION_TOKEN = "EVAL/1"
VERDICT_FRAUDULENT = "fraudulent"
VERDICT_LEGITIMATE = "legitimate"
VERDICTS = (VERDICT_FRAUDULENT, VERDICT_LEGITIMATE)

CONSISTENT = "consistent"
INCONSISTENT = "inconsistent"
HALLUCINATED = "hallucinated"

_SECTION_RE = re.compile(r"^[\s#*>]*([A-Z_ ]+?)\s*:\s*(.*?)[\s*]*$", re.IGNORECASE)
_REASON_RE = re.compile(r"^\s*[-*]\s*\[([^\]]+)\]\s*(.+?)\s*$")
_NUMBER_RE = re.compile(r"\d+(?:\.\d+)?")
# longest keywords first so "very low" is never read as "low"
_BUCKET_RE = re.compile(r"\b(very low|very high|low|medium|high|unknown)\b", re.IGNORECASE)


@dataclass(frozen=True)
class Reason:
    """One extracted signal with its supporting sentence.

    ``tag`` is None when the completion named a signal the schema does not
    declare (the hallucination case); the original id survives only in the
    parser warning.
    """

    tag: ReasonTag | None
    free_text: str

    def __post_init__(self):
        if not self.free_text:
            raise ValueError("reason free_text must be non-empty")
        if self.free_text != self.free_text.strip() or "\n" in self.free_text:
            raise ValueError("reason free_text must be a single trimmed line")


@dataclass(frozen=True)
class Evaluation:
    fraud_reasons: tuple[Reason, ...]
    legit_reasons: tuple[Reason, ...]
    verdict: str
    mo: str = MO_NONE
    confidence: float = 0.5

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"verdict must be one of {VERDICTS}, got {self.verdict!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence!r}")
        if not self.mo or self.mo != self.mo.strip().lower() or "\n" in self.mo:
            raise ValueError(f"mo must be a non-empty lowercase identifier, got {self.mo!r}")
        if self.mo != MO_NONE and self.verdict != VERDICT_FRAUDULENT:
            raise ValueError("mo may be set only when the verdict is fraudulent")
        for reason in self.fraud_reasons:
            if reason.tag is not None and reason.tag.polarity != SUPPORTS_FRAUD:
                raise ValueError("fraud_reasons must carry supports_fraud tags")
        for reason in self.legit_reasons:
            if reason.tag is not None and reason.tag.polarity != SUPPORTS_LEGITIMACY:
                raise ValueError("legit_reasons must carry supports_legitimacy tags")

    @property
    def reasons(self) -> tuple[Reason, ...]:
        return self.fraud_reasons + self.legit_reasons


def parse_evaluation(text: str, schema: FeatureSchema) -> tuple[Evaluation, list[str]]:
    """Extract an Evaluation from completion text.

    Returns the evaluation plus a list of human-readable warnings for every
    recoverable oddity (unresolvable signal ids, missing or out-of-range
    confidence, MO given with a legitimate verdict, and so on).

    Raises:
        NoVerdictFound: no recognizable VERDICT line anywhere in the text.
        ContradictoryVerdicts: both verdicts stated.
    """
    warnings: list[str] = []
    fraud: list[Reason] = []
    legit: list[Reason] = []
    verdicts_seen: set[str] = set()
    mo: str | None = None
    confidence: float | None = None
    section: str | None = None

    for raw_line in text.splitlines():
        line = raw_line.strip()
        if not line or line.upper() == VERSION_TOKEN:
            continue
        header = _SECTION_RE.match(line)
        keyword = header.group(1).upper().replace(" ", "_") if header else ""
        if keyword == "FRAUD_REASONS":
            section = "fraud"
            continue
        if keyword == "LEGIT_REASONS":
            section = "legit"
            continue
        if keyword == "VERDICT":
            token = header.group(2).strip().rstrip(".!").lower()
            if token in VERDICTS:
                verdicts_seen.add(token)
                section = None
            else:
                warnings.append(f"unrecognized verdict {token!r} ignored")
            continue
        if keyword == "MO":
            token = header.group(2).strip().rstrip(".!").lower()
            if token:
                if mo is not None and token != mo:
                    warnings.append(f"extra MO line {token!r} ignored")
                else:
                    mo = token
            section = None
            continue
        if keyword == "CONFIDENCE":
            token = header.group(2).strip()
            value = _parse_confidence(token, warnings)
            if value is not None:
                if confidence is None:
                    confidence = value
                else:
                    warnings.append(f"extra CONFIDENCE line {token!r} ignored")
            section = None
            continue
        if section in ("fraud", "legit"):
            item = _REASON_RE.match(raw_line)
            if not item:
                continue
            signal_id, free_text = item.group(1).strip(), item.group(2)
            polarity = SUPPORTS_FRAUD if section == "fraud" else SUPPORTS_LEGITIMACY
            if schema.has_feature(signal_id):
                reason = Reason(ReasonTag(signal_id, polarity), free_text)
            else:
                warnings.append(f"reason names unknown signal {signal_id!r}; tagged unresolvable")
                reason = Reason(None, free_text)
            (fraud if section == "fraud" else legit).append(reason)

    if not verdicts_seen:
        raise NoVerdictFound("no VERDICT line found in completion text")
    if len(verdicts_seen) > 1:
        raise ContradictoryVerdicts("completion states both verdicts")
    verdict = verdicts_seen.pop()

    if mo is None:
        mo = MO_NONE
    if verdict != VERDICT_FRAUDULENT and mo != MO_NONE:
        warnings.append(f"MO {mo!r} ignored for a legitimate verdict")
        mo = MO_NONE
    if confidence is None:
        warnings.append("no CONFIDENCE line; defaulting to 0.5")
        confidence = 0.5

    evaluation = Evaluation(
        fraud_reasons=tuple(fraud),
        legit_reasons=tuple(legit),
        verdict=verdict,
        mo=mo,
        confidence=confidence,
    )
    return evaluation, warnings


def _parse_confidence(token: str, warnings: list[str]) -> float | None:
    try:
        value = float(token)
    except ValueError:
        warnings.append(f"unparseable confidence {token!r}; defaulting to 0.5")
        return 0.5
    if not math.isfinite(value):
        warnings.append(f"non-finite confidence {token!r}; defaulting to 0.5")
        return 0.5
    if value < 0.0 or value > 1.0:
        clamped = min(max(value, 0.0), 1.0)
        warnings.append(f"confidence {value!r} outside [0, 1]; clamped to {clamped!r}")
        return clamped
    return value


def render_evaluation(evaluation: Evaluation) -> str:
    """Emit the canonical text form; parse_evaluation inverts it exactly.

    Reasons tagged unresolvable cannot be rendered (their signal id is gone),
    so canonical text is only ever produced from fully resolved evaluations.
    """
    lines = [VERSION_TOKEN, "FRAUD_REASONS:"]
    for reason in evaluation.fraud_reasons:
        lines.append(_reason_line(reason))
    lines.append("LEGIT_REASONS:")
    for reason in evaluation.legit_reasons:
        lines.append(_reason_line(reason))
    lines.append(f"VERDICT: {evaluation.verdict}")
    lines.append(f"MO: {evaluation.mo}")
    lines.append(f"CONFIDENCE: {evaluation.confidence!r}")
    return "\n".join(lines) + "\n"


def _reason_line(reason: Reason) -> str:
    if reason.tag is None:
        raise ValueError("cannot render a reason with an unresolvable tag")
    return f"- [{reason.tag.signal_id}] {reason.free_text}"


def canonicalize_reason(
    reason: Reason,
    record: TransactionRecord,
    schema: FeatureSchema,
    model: BinningModel,
) -> str:
    """Classify one reason as consistent, inconsistent, or hallucinated.

    A resolvable reason is inconsistent when its free text makes a checkable
    claim that contradicts the record: a bucket keyword differing from the
    signal's actual category, or a number differing from the raw value (for
    non-numeric signals, a number absent from the value's text, or "unknown"
    claimed for a value that is present). Anything subtler counts consistent;
    semantic review belongs to humans.
    """
    if reason.tag is None:
        return HALLUCINATED
    spec = schema.feature(reason.tag.signal_id)
    value = record.values.get(spec.id)
    claimed_buckets = {m.group(1).lower() for m in _BUCKET_RE.finditer(reason.free_text)}
    claimed_numbers = [float(m.group(0)) for m in _NUMBER_RE.finditer(reason.free_text)]

    if spec.kind == "numeric":
        category = bucketize(None if value is None else float(value), spec.id, model)
        for claim in claimed_buckets:
            if claim != category:
                return INCONSISTENT
        if value is None:
            if claimed_numbers:
                return INCONSISTENT
        else:
            for number in claimed_numbers:
                if number != float(value):
                    return INCONSISTENT
        return CONSISTENT

    value_text = render_value(value)
    if "unknown" in claimed_buckets and value is not None:
        return INCONSISTENT
    for token in _NUMBER_RE.findall(reason.free_text):
        if token not in value_text:
            return INCONSISTENT
    return CONSISTENT
