"""Core domain types: feature schema, transaction records, labels, reason tags.

The feature schema is data, not code: it is loaded from a JSON document and
every downstream stage (serialization, prompts, parsing, metrics) is driven
by it. A bundled default schema ships in ``scamlens/data/default_schema.json``.

Schema file format (UTF-8 JSON):

    {
      "features": [
        {"id": "amount", "kind": "numeric", "description": "Transaction amount",
         "required": true, "non_negative": true},
        ...
      ],
      "signal_priority": ["amount", "memo_text", ...],
      "mo_types": ["impersonation", "phishing", ..., "none"],
      "modes": ["payer_initiated_lookup", "app_intent", "qr_scan", "payment_request"]
    }

Transactions are JSON-Lines, one object per line; ``id`` is mandatory:

    {"id": "t-1", "mode": "qr_scan", "timestamp": 1700000000000,
     "label": "scam", "values": {"amount": 4500, "memo_text": "lottery fee"},
     "reviewer_notes": [{"signal_id": "memo_text", "polarity": "supports_fraud",
                         "text": "memo mentions a lottery"}]}
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Any

from .errors import (
    BadMode,
    BadValueKind,
    DuplicateFeatureId,
    MissingRequired,
    PriorityReferencesUnknownFeature,
    SchemaParseError,
    UnknownFeature,
)

FEATURE_KINDS = ("numeric", "categorical", "text", "boolean")

LABEL_SCAM = "scam"
LABEL_NOT_SCAM = "not_scam"
LABELS = (LABEL_SCAM, LABEL_NOT_SCAM)

SUPPORTS_FRAUD = "supports_fraud"
SUPPORTS_LEGITIMACY = "supports_legitimacy"
POLARITIES = (SUPPORTS_FRAUD, SUPPORTS_LEGITIMACY)

REQUIRED_MODES = ("payer_initiated_lookup", "app_intent", "qr_scan", "payment_request")
REQUIRED_MO_TYPES = ("impersonation", "phishing", "none")
MO_NONE = "none"


@dataclass(frozen=True)
class FeatureSpec:
    """One declared transaction feature.

    ``description`` is embedded verbatim into prompts, so it must be a
    human-readable sentence fragment. Numeric features reject negative values
    unless ``non_negative`` is set false (amounts, counts and ages are all
    naturally non-negative in this domain).
    """

    id: str
    kind: str
    description: str
    required: bool = False
    non_negative: bool = True

    def __post_init__(self):
        if not self.id:
            raise SchemaParseError("feature id must be non-empty")
        if self.kind not in FEATURE_KINDS:
            raise SchemaParseError(
                f"feature {self.id!r}: kind must be one of {FEATURE_KINDS}, got {self.kind!r}"
            )
        if not self.description:
            raise SchemaParseError(f"feature {self.id!r}: description must be non-empty")


@dataclass(frozen=True)
class FeatureSchema:
    """Declares features, their prompt priority order, MO taxonomy and modes."""

    features: tuple[FeatureSpec, ...]
    signal_priority: tuple[str, ...]
    mo_types: tuple[str, ...]
    modes: tuple[str, ...]

    def __post_init__(self):
        ids = [f.id for f in self.features]
        seen: set[str] = set()
        for fid in ids:
            if fid in seen:
                raise DuplicateFeatureId(f"feature id {fid!r} declared more than once")
            seen.add(fid)
        pr_seen: set[str] = set()
        for fid in self.signal_priority:
            if fid in pr_seen:
                raise DuplicateFeatureId(f"signal_priority lists {fid!r} more than once")
            pr_seen.add(fid)
            if fid not in seen:
                raise PriorityReferencesUnknownFeature(
                    f"signal_priority references unknown feature {fid!r}"
                )
        for mode in REQUIRED_MODES:
            if mode not in self.modes:
                raise SchemaParseError(f"modes must contain {mode!r}")
        for mo in REQUIRED_MO_TYPES:
            if mo not in self.mo_types:
                raise SchemaParseError(f"mo_types must contain {mo!r}")

    @property
    def feature_ids(self) -> tuple[str, ...]:
        return tuple(f.id for f in self.features)

    def feature(self, feature_id: str) -> FeatureSpec:
        for f in self.features:
            if f.id == feature_id:
                return f
        raise UnknownFeature(f"no feature {feature_id!r} in schema")

    def has_feature(self, feature_id: str) -> bool:
        return any(f.id == feature_id for f in self.features)

    def numeric_feature_ids(self) -> tuple[str, ...]:
        return tuple(f.id for f in self.features if f.kind == "numeric")


@dataclass(frozen=True)
class ReasonTag:
    """Canonical key for matching generated reasons to reviewer reasons."""

    signal_id: str
    polarity: str

    def __post_init__(self):
        if self.polarity not in POLARITIES:
            raise ValueError(f"polarity must be one of {POLARITIES}, got {self.polarity!r}")


@dataclass(frozen=True)
class ReviewerReason:
    """A reviewer's note explaining part of their verdict, keyed to a signal."""

    tag: ReasonTag
    free_text: str

    @property
    def signal_id(self) -> str:
        return self.tag.signal_id

    @property
    def polarity(self) -> str:
        return self.tag.polarity


@dataclass(frozen=True)
class TransactionRecord:
    """One UPI-style transaction as named feature values.

    ``values`` maps feature id to a value or ``None`` (explicitly missing).
    Use :func:`validate_record` to enforce the governing schema's invariants.
    """

    id: str
    values: dict[str, Any]
    mode: str
    timestamp: int = 0


@dataclass(frozen=True)
class LabeledTransaction:
    record: TransactionRecord
    label: str
    reviewer_notes: tuple[ReviewerReason, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")


def validate_record(record: TransactionRecord, schema: FeatureSchema) -> TransactionRecord:
    """Check a record against the schema and return it unchanged.

    Idempotent by construction: the record is never modified, only checked.

    Raises:
        UnknownFeature: a value is keyed by an id the schema does not declare.
        MissingRequired: a required feature id has no entry in ``values``.
        BadValueKind: a value does not match its feature's declared kind,
            is non-finite, or is negative for a non_negative numeric feature.
        BadMode: the record's mode is not one of the schema's modes.
    """
    if not record.id:
        raise BadValueKind("record id must be a non-empty string")
    if not isinstance(record.timestamp, int) or isinstance(record.timestamp, bool) or record.timestamp < 0:
        raise BadValueKind(f"record {record.id}: timestamp must be a non-negative integer")
    if record.mode not in schema.modes:
        raise BadMode(f"record {record.id}: mode {record.mode!r} not in schema modes")
    known = set(schema.feature_ids)
    for fid in record.values:
        if fid not in known:
            raise UnknownFeature(f"record {record.id}: value for unknown feature {fid!r}")
    for spec in schema.features:
        if spec.required and spec.id not in record.values:
            raise MissingRequired(f"record {record.id}: required feature {spec.id!r} absent")
        value = record.values.get(spec.id)
        if value is None:
            continue
        _check_value_kind(record.id, spec, value)
    return record


def _check_value_kind(record_id: str, spec: FeatureSpec, value: Any) -> None:
    if spec.kind == "numeric":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise BadValueKind(
                f"record {record_id}: feature {spec.id!r} expects a number, got {type(value).__name__}"
            )
        if not math.isfinite(value):
            raise BadValueKind(f"record {record_id}: feature {spec.id!r} must be finite")
        if spec.non_negative and value < 0:
            raise BadValueKind(f"record {record_id}: feature {spec.id!r} must be >= 0, got {value}")
    elif spec.kind == "categorical":
        if not isinstance(value, str) or not value:
            raise BadValueKind(
                f"record {record_id}: feature {spec.id!r} expects a non-empty string"
            )
    elif spec.kind == "text":
        if not isinstance(value, str):
            raise BadValueKind(f"record {record_id}: feature {spec.id!r} expects a string")
    elif spec.kind == "boolean":
        if not isinstance(value, bool):
            raise BadValueKind(f"record {record_id}: feature {spec.id!r} expects a boolean")


# --- schema file round trip ---

def load_schema(document: str) -> FeatureSchema:
    """Parse schema file contents into a validated FeatureSchema."""
    try:
        raw = json.loads(document)
    except json.JSONDecodeError as exc:
        raise SchemaParseError(f"schema is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaParseError("schema document must be a JSON object")
    for key in ("features", "signal_priority", "mo_types", "modes"):
        if key not in raw:
            raise SchemaParseError(f"schema document missing key {key!r}")
    if not isinstance(raw["features"], list) or not raw["features"]:
        raise SchemaParseError("features must be a non-empty array")
    features = []
    for entry in raw["features"]:
        if not isinstance(entry, dict):
            raise SchemaParseError("each feature must be a JSON object")
        unknown = set(entry) - {"id", "kind", "description", "required", "non_negative"}
        if unknown:
            raise SchemaParseError(f"feature has unknown keys: {sorted(unknown)}")
        features.append(
            FeatureSpec(
                id=str(entry.get("id", "")),
                kind=str(entry.get("kind", "")),
                description=str(entry.get("description", "")),
                required=bool(entry.get("required", False)),
                non_negative=bool(entry.get("non_negative", True)),
            )
        )
    return FeatureSchema(
        features=tuple(features),
        signal_priority=tuple(str(s) for s in raw["signal_priority"]),
        mo_types=tuple(str(s) for s in raw["mo_types"]),
        modes=tuple(str(s) for s in raw["modes"]),
    )


def render_schema(schema: FeatureSchema) -> str:
    """Serialize a schema to its canonical JSON document form.

    ``load_schema(render_schema(s))`` reproduces an equal schema.
    """
    doc = {
        "features": [
            {
                "id": f.id,
                "kind": f.kind,
                "description": f.description,
                "required": f.required,
                "non_negative": f.non_negative,
            }
            for f in schema.features
        ],
        "signal_priority": list(schema.signal_priority),
        "mo_types": list(schema.mo_types),
        "modes": list(schema.modes),
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def load_schema_file(path: str) -> FeatureSchema:
    with open(path, encoding="utf-8") as f:
        return load_schema(f.read())


def default_schema() -> FeatureSchema:
    """The bundled 12-field schema used throughout the repo's examples."""
    text = resources.files("scamlens.data").joinpath("default_schema.json").read_text("utf-8")
    return load_schema(text)


# --- transaction JSON-Lines IO ---

def record_from_json(obj: dict[str, Any]) -> TransactionRecord:
    """Build a TransactionRecord from one parsed JSONL object (unvalidated)."""
    if not isinstance(obj, dict):
        raise BadValueKind("record line must be a JSON object")
    rid = obj.get("id")
    if not isinstance(rid, str) or not rid:
        raise BadValueKind("record field 'id' is mandatory and must be a non-empty string")
    values = obj.get("values", {})
    if not isinstance(values, dict):
        raise BadValueKind(f"record {rid}: 'values' must be an object")
    mode = obj.get("mode", "")
    timestamp = obj.get("timestamp", 0)
    if not isinstance(timestamp, int) or isinstance(timestamp, bool):
        raise BadValueKind(f"record {rid}: 'timestamp' must be an integer")
    return TransactionRecord(id=rid, values=dict(values), mode=str(mode), timestamp=timestamp)


def labeled_from_json(obj: dict[str, Any]) -> LabeledTransaction:
    record = record_from_json(obj)
    label = obj.get("label")
    if label not in LABELS:
        raise BadValueKind(f"record {record.id}: 'label' must be one of {LABELS}, got {label!r}")
    notes = []
    for note in obj.get("reviewer_notes", []) or []:
        if not isinstance(note, dict):
            raise BadValueKind(f"record {record.id}: reviewer note must be an object")
        try:
            tag = ReasonTag(str(note.get("signal_id", "")), str(note.get("polarity", "")))
        except ValueError as exc:
            raise BadValueKind(f"record {record.id}: {exc}") from exc
        notes.append(ReviewerReason(tag=tag, free_text=str(note.get("text", ""))))
    return LabeledTransaction(record=record, label=str(label), reviewer_notes=tuple(notes))


def record_to_json(record: TransactionRecord, label: str | None = None,
                   reviewer_notes: tuple[ReviewerReason, ...] = ()) -> dict[str, Any]:
    obj: dict[str, Any] = {
        "id": record.id,
        "mode": record.mode,
        "timestamp": record.timestamp,
        "values": dict(record.values),
    }
    if label is not None:
        obj["label"] = label
    if reviewer_notes:
        obj["reviewer_notes"] = [
            {"signal_id": n.signal_id, "polarity": n.polarity, "text": n.free_text}
            for n in reviewer_notes
        ]
    return obj


def labeled_to_json(item: LabeledTransaction) -> dict[str, Any]:
    return record_to_json(item.record, item.label, item.reviewer_notes)


def read_labeled_jsonl(path: str) -> list[LabeledTransaction]:
    """Read a labeled corpus, raising on the first malformed line."""
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BadValueKind(f"{path}:{lineno}: not valid JSON: {exc}") from exc
            try:
                out.append(labeled_from_json(obj))
            except BadValueKind as exc:
                raise BadValueKind(f"{path}:{lineno}: {exc.message}") from exc
    return out


def write_labeled_jsonl(path: str, dataset: list[LabeledTransaction]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for item in dataset:
            f.write(json.dumps(labeled_to_json(item), ensure_ascii=False, sort_keys=True) + "\n")
