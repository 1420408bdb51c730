"""Completion backends behind one interface: rule oracle, HTTP client, cache.

The rule-oracle backend is a deterministic stand-in for a tuned model: four
transparent rules over the serialized transaction, scored through a logistic.
It makes the whole pipeline (parsing, metrics, review flow, console)
verifiable offline. The HTTP backend speaks a minimal generic chat-completion
shape configured by field paths, so no vendor SDK enters the core.

Completed responses are cached on disk, one UTF-8 file per content hash of
(backend id, prompt text, temperature); identical requests never hit a
backend twice.
"""

from __future__ import annotations

import abc
import copy
import hashlib
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field

from .errors import BackendRefused, SchemaParseError, TransportError, UnknownBackend
from .featurizer import BinningModel, bucketize, render_value
from .grammar import (
    VERDICT_FRAUDULENT,
    VERDICT_LEGITIMATE,
    Evaluation,
    Reason,
    render_evaluation,
)
from .model import (
    MO_NONE,
    SUPPORTS_FRAUD,
    SUPPORTS_LEGITIMACY,
    FeatureSchema,
    ReasonTag,
    TransactionRecord,
)
from .prompts import Prompt

_RAW_SUFFIX_RE = re.compile(r"^(.*?) \(raw: ([^)]*)\)$")
_CATEGORY_WORDS = {"very low", "low", "medium", "high", "very high", "unknown"}


@dataclass(frozen=True)
class CompletionRequest:
    prompt: Prompt
    backend_id: str
    temperature: float = 0.0
    max_output_chars: int = 20000

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature!r}")
        if self.max_output_chars <= 0:
            raise ValueError(f"max_output_chars must be > 0, got {self.max_output_chars!r}")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    latency_ms: int
    backend_id: str
    cached: bool


class Backend(abc.ABC):
    """One completion provider. Implementations must be thread-safe."""

    id: str

    @abc.abstractmethod
    def complete(self, prompt_text: str, temperature: float, deadline_s: float) -> str:
        """Return raw completion text. Raise TransportError for retryable
        failures (network, timeout, 5xx, 429) and BackendRefused for
        permanent ones."""


# --- rule oracle ---

@dataclass(frozen=True)
class RuleOracleConfig:
    """Weights and bindings for the four scoring rules.

    Each rule fires on the serialized transaction content: high-bucket
    amount, spam reports above threshold, suspicious memo keyword, and no
    prior payer-to-payee history. Confidence is
    logistic(sum of fired weights - offset), rounded to two decimals.
    """

    suspicious_keywords: tuple[str, ...] = (
        "lottery", "prize", "kyc", "refund", "urgent", "blocked", "verify", "gift",
    )
    spam_report_threshold: int = 2
    amount_weight: float = 0.8
    spam_weight: float = 1.2
    keyword_weight: float = 1.4
    prior_weight: float = 0.6
    offset: float = 1.3
    amount_feature: str = "amount"
    spam_feature: str = "payee_spam_reports"
    memo_feature: str = "memo_text"
    prior_feature: str = "prior_txn_count"

    def __post_init__(self):
        weights = (self.amount_weight, self.spam_weight, self.keyword_weight,
                   self.prior_weight, self.offset)
        if not all(math.isfinite(w) for w in weights):
            raise ValueError("rule weights and offset must be finite")
        if self.spam_report_threshold < 0:
            raise ValueError("spam_report_threshold must be >= 0")
        for kw in self.suspicious_keywords:
            if kw != kw.lower():
                raise ValueError(f"suspicious keyword must be lowercase: {kw!r}")

    @classmethod
    def from_json(cls, obj: dict) -> RuleOracleConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise SchemaParseError(f"rule oracle config has unknown keys: {sorted(unknown)}")
        if "suspicious_keywords" in obj:
            obj = dict(obj, suspicious_keywords=tuple(obj["suspicious_keywords"]))
        return cls(**obj)

    def to_json(self) -> dict:
        doc = {name: getattr(self, name) for name in self.__dataclass_fields__}
        doc["suspicious_keywords"] = list(self.suspicious_keywords)
        return doc


def logistic(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


@dataclass(frozen=True)
class FeatureView:
    """What the oracle can see for one feature: bucket, raw number, text."""

    category: str | None = None
    raw: float | None = None
    text: str | None = None


def view_from_record(
    record: TransactionRecord, schema: FeatureSchema, model: BinningModel
) -> dict[str, FeatureView]:
    view = {}
    for spec in schema.features:
        value = record.values.get(spec.id)
        if spec.kind == "numeric":
            raw = None if value is None else float(value)
            view[spec.id] = FeatureView(
                category=bucketize(raw, spec.id, model), raw=raw, text=render_value(value)
            )
        else:
            view[spec.id] = FeatureView(text=None if value is None else render_value(value))
    return view


def view_from_prompt(prompt_text: str, schema: FeatureSchema) -> dict[str, FeatureView]:
    """Recover the feature view from the last TRANSACTION: block of a prompt.

    This is the only channel the oracle backend has when called through the
    gateway, which is what gives serialization ablations real teeth: whatever
    the serialized lines omit, the oracle cannot use.
    """
    marker = "TRANSACTION:\n"
    start = prompt_text.rfind(marker)
    if start < 0:
        return {}
    body = prompt_text[start + len(marker):]
    by_description = {spec.description: spec for spec in schema.features}
    view: dict[str, FeatureView] = {}
    for line in body.splitlines():
        if ":" not in line:
            continue
        description, _, rendered = line.partition(":")
        spec = by_description.get(description.strip())
        if spec is None:
            continue
        rendered = rendered.strip()
        if spec.kind != "numeric":
            view[spec.id] = FeatureView(text=None if rendered == "unknown" else rendered)
            continue
        raw_match = _RAW_SUFFIX_RE.match(rendered)
        if raw_match:
            category, raw_text = raw_match.group(1), raw_match.group(2)
            view[spec.id] = FeatureView(category=category, raw=_to_float(raw_text),
                                        text=raw_text)
        elif rendered in _CATEGORY_WORDS:
            view[spec.id] = FeatureView(category=rendered, text=rendered)
        else:
            view[spec.id] = FeatureView(raw=_to_float(rendered), text=rendered)
    return view


def _to_float(text: str) -> float | None:
    try:
        return float(text)
    except ValueError:
        return None


def evaluate_view(view: dict[str, FeatureView], config: RuleOracleConfig) -> Evaluation:
    """Apply the four rules to a feature view and build the Evaluation."""
    amount = view.get(config.amount_feature, FeatureView())
    spam = view.get(config.spam_feature, FeatureView())
    memo = view.get(config.memo_feature, FeatureView())
    prior = view.get(config.prior_feature, FeatureView())

    amount_fired = amount.category in ("high", "very high")
    spam_fired = spam.raw is not None and spam.raw > config.spam_report_threshold
    keyword_hit = None
    if memo.text:
        lowered = memo.text.lower()
        for kw in config.suspicious_keywords:
            if kw in lowered:
                keyword_hit = kw
                break
    prior_fired = prior.raw is not None and prior.raw == 0

    fraud: list[Reason] = []
    legit: list[Reason] = []

    def emit(fired: bool, signal: str, fraud_text: str, legit_text: str):
        if fired:
            fraud.append(Reason(ReasonTag(signal, SUPPORTS_FRAUD), fraud_text))
        else:
            legit.append(Reason(ReasonTag(signal, SUPPORTS_LEGITIMACY), legit_text))

    amount_cat = amount.category or "unknown"
    emit(
        amount_fired,
        config.amount_feature,
        f"transaction amount is {amount_cat}",
        f"transaction amount is {amount_cat}",
    )
    emit(
        spam_fired,
        config.spam_feature,
        f"payee has {render_value(spam.raw)} spam reports on file",
        "spam report count is unknown" if spam.raw is None
        else f"payee has {render_value(spam.raw)} spam reports on file",
    )
    emit(
        keyword_hit is not None,
        config.memo_feature,
        f"memo contains the suspicious term {keyword_hit}",
        "memo text is unknown" if memo.text is None else "memo has no suspicious terms",
    )
    emit(
        prior_fired,
        config.prior_feature,
        "payer has never paid this payee before",
        "prior transaction count is unknown" if prior.raw is None
        else f"payer has paid this payee {render_value(prior.raw)} times before",
    )

    score = -config.offset
    for fired, weight in (
        (amount_fired, config.amount_weight),
        (spam_fired, config.spam_weight),
        (keyword_hit is not None, config.keyword_weight),
        (prior_fired, config.prior_weight),
    ):
        if fired:
            score += weight
    confidence = round(logistic(score), 2)
    verdict = VERDICT_FRAUDULENT if confidence >= 0.5 else VERDICT_LEGITIMATE
    if verdict == VERDICT_FRAUDULENT:
        mo = "phishing" if keyword_hit is not None else ("impersonation" if spam_fired else MO_NONE)
    else:
        mo = MO_NONE
    return Evaluation(
        fraud_reasons=tuple(fraud),
        legit_reasons=tuple(legit),
        verdict=verdict,
        mo=mo,
        confidence=confidence,
    )


def rule_oracle_evaluate(
    record: TransactionRecord,
    schema: FeatureSchema,
    model: BinningModel,
    config: RuleOracleConfig = RuleOracleConfig(),
) -> tuple[str, float]:
    """Direct-path oracle: evaluation grammar text plus its confidence."""
    evaluation = evaluate_view(view_from_record(record, schema, model), config)
    return render_evaluation(evaluation), evaluation.confidence


class RuleOracleBackend(Backend):
    """Deterministic backend that reads the transaction back out of the prompt."""

    def __init__(self, schema: FeatureSchema, config: RuleOracleConfig = RuleOracleConfig(),
                 backend_id: str = "rule-oracle"):
        self.id = backend_id
        self._schema = schema
        self._config = config

    def complete(self, prompt_text: str, temperature: float, deadline_s: float) -> str:
        evaluation = evaluate_view(view_from_prompt(prompt_text, self._schema), self._config)
        return render_evaluation(evaluation)


# --- HTTP backend ---

@dataclass(frozen=True)
class HttpBackendConfig:
    """Generic chat-completion wiring: where the prompt goes in the request
    body and where the text comes back from in the response, as dotted paths
    (integers index into arrays)."""

    backend_id: str
    url: str
    prompt_path: str
    response_path: str
    temperature_path: str | None = None
    auth_header: str = "Authorization"
    bearer_token_env: str | None = None
    body_template: dict = field(default_factory=dict)


def set_path(obj, dotted: str, value):
    parts = dotted.split(".")
    here = obj
    for i, part in enumerate(parts):
        last = i == len(parts) - 1
        key = int(part) if part.isdigit() else part
        if last:
            here[key] = value
        else:
            if isinstance(key, str) and key not in here:
                here[key] = {}
            here = here[key]


def get_path(obj, dotted: str):
    here = obj
    for part in dotted.split("."):
        key = int(part) if part.isdigit() else part
        here = here[key]
    return here


class HttpBackend(Backend):
    def __init__(self, config: HttpBackendConfig):
        self.id = config.backend_id
        self._config = config

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self._config.bearer_token_env:
            token = os.environ.get(self._config.bearer_token_env, "")
            if not token:
                raise BackendRefused(
                    f"env var {self._config.bearer_token_env} is empty; cannot authenticate"
                )
            headers[self._config.auth_header] = f"Bearer {token}"
        return headers

    def complete(self, prompt_text: str, temperature: float, deadline_s: float) -> str:
        import httpx

        body = copy.deepcopy(self._config.body_template)
        set_path(body, self._config.prompt_path, prompt_text)
        if self._config.temperature_path:
            set_path(body, self._config.temperature_path, temperature)
        try:
            response = httpx.post(
                self._config.url, json=body, headers=self._headers(), timeout=deadline_s
            )
        except httpx.HTTPError as exc:
            raise TransportError(f"backend {self.id}: {exc}") from exc
        if response.status_code >= 500 or response.status_code == 429:
            raise TransportError(f"backend {self.id}: status {response.status_code}")
        if response.status_code >= 400:
            raise BackendRefused(
                f"backend {self.id}: status {response.status_code}: {response.text[:200]}"
            )
        try:
            return str(get_path(response.json(), self._config.response_path))
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise BackendRefused(
                f"backend {self.id}: response missing {self._config.response_path!r}"
            ) from exc


# --- the gateway ---

class Gateway:
    """Dispatch, retry, deadline, concurrency cap, and disk cache."""

    def __init__(
        self,
        backends: list[Backend],
        cache_dir: str | None = None,
        max_attempts: int = 3,
        base_delay_s: float = 0.1,
        deadline_s: float = 30.0,
        max_in_flight: int = 8,
    ):
        self._backends = {b.id: b for b in backends}
        self._cache_dir = cache_dir
        self._max_attempts = max(1, max_attempts)
        self._base_delay_s = base_delay_s
        self._deadline_s = deadline_s
        self._slots = threading.BoundedSemaphore(max_in_flight)
        if cache_dir:
            os.makedirs(cache_dir, exist_ok=True)

    def complete(self, request: CompletionRequest) -> CompletionResult:
        if request.backend_id not in self._backends:
            raise UnknownBackend(f"no backend registered as {request.backend_id!r}")
        backend = self._backends[request.backend_id]
        key = cache_key(request.backend_id, request.prompt.text, request.temperature)
        started = time.monotonic()
        cached = self._cache_read(key)
        if cached is not None:
            return CompletionResult(
                text=cached[: request.max_output_chars],
                latency_ms=int((time.monotonic() - started) * 1000),
                backend_id=request.backend_id,
                cached=True,
            )
        text = self._call_with_retry(backend, request)
        text = text[: request.max_output_chars]
        self._cache_write(key, text)
        return CompletionResult(
            text=text,
            latency_ms=int((time.monotonic() - started) * 1000),
            backend_id=request.backend_id,
            cached=False,
        )

    def _call_with_retry(self, backend: Backend, request: CompletionRequest) -> str:
        last: TransportError | None = None
        for attempt in range(self._max_attempts):
            try:
                with self._slots:
                    return backend.complete(
                        request.prompt.text, request.temperature, self._deadline_s
                    )
            except TransportError as exc:
                last = exc
                if attempt + 1 < self._max_attempts:
                    time.sleep(self._base_delay_s * (2 ** attempt))
        raise TransportError(
            f"backend {backend.id} failed after {self._max_attempts} attempts: {last.message}"
        ) from last

    def _cache_path(self, key: str) -> str:
        return os.path.join(self._cache_dir, f"{key}.txt")

    def _cache_read(self, key: str) -> str | None:
        if not self._cache_dir:
            return None
        try:
            with open(self._cache_path(key), encoding="utf-8") as f:
                return f.read()
        except FileNotFoundError:
            return None

    def _cache_write(self, key: str, text: str) -> None:
        if not self._cache_dir:
            return
        final = self._cache_path(key)
        tmp = f"{final}.tmp.{os.getpid()}.{threading.get_ident()}"
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, final)


def cache_key(backend_id: str, prompt_text: str, temperature: float) -> str:
    digest = hashlib.sha256()
    digest.update(backend_id.encode("utf-8"))
    digest.update(b"\x00")
    digest.update(repr(temperature).encode("utf-8"))
    digest.update(b"\x00")
    digest.update(prompt_text.encode("utf-8"))
    return digest.hexdigest()
