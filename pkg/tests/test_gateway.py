"""Rule oracle scoring, cache and retry behavior, HTTP backend against a stub."""

from __future__ import annotations

import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from scamlens.errors import BackendRefused, TransportError, UnknownBackend
from scamlens.featurizer import BinnedFeature, BinningModel
from scamlens.gateway import (
    Backend,
    CompletionRequest,
    Gateway,
    HttpBackend,
    HttpBackendConfig,
    RuleOracleBackend,
    RuleOracleConfig,
    cache_key,
    logistic,
    rule_oracle_evaluate,
    view_from_prompt,
    view_from_record,
)
from scamlens.grammar import parse_evaluation
from scamlens.model import TransactionRecord, default_schema
from scamlens.prompts import Prompt, PromptSettings, build_reasoning_prompt, default_exemplars

SCHEMA = default_schema()
MODEL = BinningModel(
    bins={fid: BinnedFeature((20.0, 40.0, 60.0, 80.0), 10) for fid in SCHEMA.numeric_feature_ids()}
)

UNIT_CONFIG = RuleOracleConfig(
    suspicious_keywords=("lottery",),
    spam_report_threshold=0,
    amount_weight=1.0,
    spam_weight=1.0,
    keyword_weight=1.0,
    prior_weight=1.0,
    offset=1.0,
)


def record_with(**values):
    base = {"amount": 50, "memo_text": "rent", "payee_spam_reports": 0, "prior_txn_count": 2}
    base.update(values)
    return TransactionRecord(id="t-1", values=base, mode="qr_scan")


def test_logistic_one_example():
    # keyword + spam fire with unit weights, offset 1 => logistic(1.0)
    record = record_with(memo_text="lottery fee", payee_spam_reports=3)
    text, confidence = rule_oracle_evaluate(record, SCHEMA, MODEL, UNIT_CONFIG)
    by_hand = 1.0 / (1.0 + math.exp(-1.0))
    assert round(by_hand, 2) == 0.73
    assert confidence == 0.73
    evaluation, warnings = parse_evaluation(text, SCHEMA)
    assert warnings == []
    assert evaluation.verdict == "fraudulent"
    assert evaluation.mo == "phishing"
    assert evaluation.confidence == 0.73


def test_no_rules_fired_is_legitimate_with_no_fraud_reasons():
    text, confidence = rule_oracle_evaluate(record_with(), SCHEMA, MODEL, UNIT_CONFIG)
    evaluation, warnings = parse_evaluation(text, SCHEMA)
    assert warnings == []
    assert evaluation.verdict == "legitimate"
    assert evaluation.fraud_reasons == ()
    assert len(evaluation.legit_reasons) == 4
    assert evaluation.mo == "none"
    assert confidence < 0.5


def test_spam_without_keyword_yields_impersonation():
    config = RuleOracleConfig(
        suspicious_keywords=("lottery",), spam_report_threshold=0,
        amount_weight=1.0, spam_weight=2.0, keyword_weight=1.0, prior_weight=1.0, offset=1.0,
    )
    text, _ = rule_oracle_evaluate(record_with(payee_spam_reports=5), SCHEMA, MODEL, config)
    evaluation, _ = parse_evaluation(text, SCHEMA)
    assert evaluation.verdict == "fraudulent"
    assert evaluation.mo == "impersonation"


def test_oracle_is_deterministic():
    record = record_with(memo_text="urgent lottery", amount=95)
    a = rule_oracle_evaluate(record, SCHEMA, MODEL, UNIT_CONFIG)
    b = rule_oracle_evaluate(record, SCHEMA, MODEL, UNIT_CONFIG)
    assert a == b


def test_missing_values_read_as_non_firing():
    record = TransactionRecord(id="t-1", values={"amount": 50}, mode="qr_scan")
    text, _ = rule_oracle_evaluate(record, SCHEMA, MODEL, UNIT_CONFIG)
    evaluation, warnings = parse_evaluation(text, SCHEMA)
    assert warnings == []
    assert evaluation.verdict == "legitimate"
    texts = [r.free_text for r in evaluation.legit_reasons]
    assert "spam report count is unknown" in texts
    assert "memo text is unknown" in texts


def reasoning_prompt_for(record):
    return build_reasoning_prompt(record, SCHEMA, MODEL, default_exemplars(SCHEMA))


def test_prompt_path_matches_direct_path_byte_for_byte():
    for values in (
        {},
        {"memo_text": "lottery fee", "payee_spam_reports": 3},
        {"amount": 95, "prior_txn_count": 0},
        {"amount": None, "memo_text": None},
        {"payee_spam_reports": 7, "amount": 81},
    ):
        record = record_with(**values)
        direct_text, _ = rule_oracle_evaluate(record, SCHEMA, MODEL, UNIT_CONFIG)
        backend = RuleOracleBackend(SCHEMA, UNIT_CONFIG)
        via_prompt = backend.complete(reasoning_prompt_for(record).text, 0.0, 30.0)
        assert via_prompt == direct_text


def test_view_reconstruction_matches_record_view():
    record = record_with(memo_text="lottery fee", payee_spam_reports=3, merchant_flag=True)
    direct = view_from_record(record, SCHEMA, MODEL)
    recovered = view_from_prompt(reasoning_prompt_for(record).text, SCHEMA)
    for fid in record.values:
        assert recovered[fid] == direct[fid]


def test_ablated_prompts_limit_what_the_oracle_sees():
    record = record_with(amount=95)  # amount bucket "very high" fires the amount rule
    config = RuleOracleConfig(
        suspicious_keywords=("lottery",), spam_report_threshold=0,
        amount_weight=2.0, spam_weight=1.0, keyword_weight=1.0, prior_weight=1.0, offset=1.0,
    )
    backend = RuleOracleBackend(SCHEMA, config)
    full = build_reasoning_prompt(record, SCHEMA, MODEL, default_exemplars(SCHEMA))
    evaluation, _ = parse_evaluation(backend.complete(full.text, 0.0, 30.0), SCHEMA)
    assert evaluation.verdict == "fraudulent"

    raw_only = build_reasoning_prompt(
        record, SCHEMA, MODEL, default_exemplars(SCHEMA),
        settings=PromptSettings(include_categorical=False),
    )
    evaluation, _ = parse_evaluation(backend.complete(raw_only.text, 0.0, 30.0), SCHEMA)
    assert evaluation.verdict == "legitimate"  # no category line, amount rule cannot fire

    cat_only = build_reasoning_prompt(
        record, SCHEMA, MODEL, default_exemplars(SCHEMA),
        settings=PromptSettings(include_raw_numeric=False),
    )
    evaluation, _ = parse_evaluation(backend.complete(cat_only.text, 0.0, 30.0), SCHEMA)
    assert evaluation.verdict == "fraudulent"  # category line alone still fires it


def test_gateway_caches_second_identical_request(tmp_path):
    gateway = Gateway([RuleOracleBackend(SCHEMA, UNIT_CONFIG)], cache_dir=str(tmp_path / "cache"))
    request = CompletionRequest(
        prompt=reasoning_prompt_for(record_with(memo_text="lottery")), backend_id="rule-oracle"
    )
    first = gateway.complete(request)
    second = gateway.complete(request)
    assert first.cached is False
    assert second.cached is True
    assert first.text == second.text


def test_gateway_unknown_backend(tmp_path):
    gateway = Gateway([], cache_dir=str(tmp_path / "cache"))
    request = CompletionRequest(prompt=reasoning_prompt_for(record_with()), backend_id="nope")
    with pytest.raises(UnknownBackend):
        gateway.complete(request)


def test_completion_request_invariants():
    prompt = reasoning_prompt_for(record_with())
    with pytest.raises(ValueError):
        CompletionRequest(prompt=prompt, backend_id="x", temperature=-0.1)
    with pytest.raises(ValueError):
        CompletionRequest(prompt=prompt, backend_id="x", max_output_chars=0)


def test_gateway_truncates_to_max_output_chars(tmp_path):
    gateway = Gateway([RuleOracleBackend(SCHEMA, UNIT_CONFIG)], cache_dir=str(tmp_path / "c"))
    request = CompletionRequest(
        prompt=reasoning_prompt_for(record_with()), backend_id="rule-oracle", max_output_chars=10
    )
    assert len(gateway.complete(request).text) == 10


def test_cache_key_separates_inputs():
    keys = {
        cache_key("a", "p", 0.0),
        cache_key("b", "p", 0.0),
        cache_key("a", "q", 0.0),
        cache_key("a", "p", 1.0),
    }
    assert len(keys) == 4


def test_rule_config_validation():
    with pytest.raises(ValueError):
        RuleOracleConfig(spam_report_threshold=-1)
    with pytest.raises(ValueError):
        RuleOracleConfig(suspicious_keywords=("Lottery",))
    with pytest.raises(ValueError):
        RuleOracleConfig(offset=float("inf"))


class FlakyBackend(Backend):
    def __init__(self, fail_times: int):
        self.id = "flaky"
        self.calls = 0
        self._fail_times = fail_times

    def complete(self, prompt_text, temperature, deadline_s):
        self.calls += 1
        if self.calls <= self._fail_times:
            raise TransportError("transient blip")
        return "ok"


def plain_prompt(text="hello"):
    return Prompt(kind="classifier", text=text, exemplar_ids=(), signal_order=(),
                  template_version="t")


def test_gateway_retries_transient_failures():
    backend = FlakyBackend(fail_times=2)
    gateway = Gateway([backend], max_attempts=3, base_delay_s=0.0)
    result = gateway.complete(CompletionRequest(prompt=plain_prompt(), backend_id="flaky"))
    assert result.text == "ok"
    assert backend.calls == 3


def test_gateway_gives_up_after_max_attempts():
    backend = FlakyBackend(fail_times=99)
    gateway = Gateway([backend], max_attempts=3, base_delay_s=0.0)
    with pytest.raises(TransportError):
        gateway.complete(CompletionRequest(prompt=plain_prompt(), backend_id="flaky"))
    assert backend.calls == 3


def test_gateway_concurrent_requests(tmp_path):
    gateway = Gateway(
        [RuleOracleBackend(SCHEMA, UNIT_CONFIG)],
        cache_dir=str(tmp_path / "cache"),
        max_in_flight=2,
    )
    prompts = [reasoning_prompt_for(record_with(amount=a)) for a in range(10, 90, 10)]
    with ThreadPoolExecutor(max_workers=8) as pool:
        results = list(
            pool.map(
                lambda p: gateway.complete(CompletionRequest(prompt=p, backend_id="rule-oracle")),
                prompts,
            )
        )
    for prompt, result in zip(prompts, results):
        parsed, warnings = parse_evaluation(result.text, SCHEMA)
        assert warnings == []


# --- HTTP backend against a local stub ---

class StubHandler(BaseHTTPRequestHandler):
    status_plan: list[int] = []
    body: dict = {}
    seen: list[dict] = []

    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        payload = json.loads(self.rfile.read(length) or b"{}")
        type(self).seen.append({"path": self.path, "payload": payload,
                                "auth": self.headers.get("Authorization")})
        status = type(self).status_plan.pop(0) if type(self).status_plan else 200
        response = json.dumps(type(self).body if status == 200 else {"error": "boom"})
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(response)))
        self.end_headers()
        self.wfile.write(response.encode("utf-8"))

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    StubHandler.status_plan = []
    StubHandler.body = {}
    StubHandler.seen = []
    server = ThreadingHTTPServer(("127.0.0.1", 0), StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    server.server_close()


def chat_config(url):
    return HttpBackendConfig(
        backend_id="chat",
        url=f"{url}/v1/complete",
        prompt_path="messages.0.content",
        response_path="choices.0.message.content",
        temperature_path="temperature",
        body_template={"model": "m1", "messages": [{"role": "user", "content": ""}]},
    )


def test_http_backend_returns_stub_body_verbatim(stub_server):
    StubHandler.body = {"choices": [{"message": {"content": "VERDICT: legitimate"}}]}
    gateway = Gateway([HttpBackend(chat_config(stub_server))])
    result = gateway.complete(
        CompletionRequest(prompt=plain_prompt("classify this"), backend_id="chat",
                          temperature=0.2)
    )
    assert result.text == "VERDICT: legitimate"
    sent = StubHandler.seen[0]["payload"]
    assert sent["messages"][0]["content"] == "classify this"
    assert sent["temperature"] == 0.2
    assert sent["model"] == "m1"


def test_http_backend_retries_5xx_then_succeeds(stub_server):
    StubHandler.status_plan = [500, 503]
    StubHandler.body = {"choices": [{"message": {"content": "ok"}}]}
    gateway = Gateway([HttpBackend(chat_config(stub_server))], max_attempts=3, base_delay_s=0.0)
    result = gateway.complete(CompletionRequest(prompt=plain_prompt(), backend_id="chat"))
    assert result.text == "ok"
    assert len(StubHandler.seen) == 3


def test_http_backend_exhausts_retries(stub_server):
    StubHandler.status_plan = [500, 500, 500]
    gateway = Gateway([HttpBackend(chat_config(stub_server))], max_attempts=3, base_delay_s=0.0)
    with pytest.raises(TransportError):
        gateway.complete(CompletionRequest(prompt=plain_prompt(), backend_id="chat"))
    assert len(StubHandler.seen) == 3


def test_http_backend_4xx_refuses_without_retry(stub_server):
    StubHandler.status_plan = [400]
    gateway = Gateway([HttpBackend(chat_config(stub_server))], max_attempts=3, base_delay_s=0.0)
    with pytest.raises(BackendRefused):
        gateway.complete(CompletionRequest(prompt=plain_prompt(), backend_id="chat"))
    assert len(StubHandler.seen) == 1


def test_http_backend_missing_response_field_refuses(stub_server):
    StubHandler.body = {"unexpected": True}
    gateway = Gateway([HttpBackend(chat_config(stub_server))])
    with pytest.raises(BackendRefused):
        gateway.complete(CompletionRequest(prompt=plain_prompt(), backend_id="chat"))


def test_http_backend_sends_bearer_token(stub_server, monkeypatch):
    monkeypatch.setenv("STUB_TOKEN", "sekrit")
    config = HttpBackendConfig(
        backend_id="chat",
        url=f"{stub_server}/v1/complete",
        prompt_path="prompt",
        response_path="text",
        bearer_token_env="STUB_TOKEN",
    )
    StubHandler.body = {"text": "fine"}
    gateway = Gateway([HttpBackend(config)])
    result = gateway.complete(CompletionRequest(prompt=plain_prompt(), backend_id="chat"))
    assert result.text == "fine"
    assert StubHandler.seen[0]["auth"] == "Bearer sekrit"


def test_http_backend_empty_token_refuses(stub_server, monkeypatch):
    monkeypatch.delenv("STUB_TOKEN", raising=False)
    config = HttpBackendConfig(
        backend_id="chat",
        url=f"{stub_server}/v1/complete",
        prompt_path="prompt",
        response_path="text",
        bearer_token_env="STUB_TOKEN",
    )
    gateway = Gateway([HttpBackend(config)])
    with pytest.raises(BackendRefused):
        gateway.complete(CompletionRequest(prompt=plain_prompt(), backend_id="chat"))
    assert StubHandler.seen == []


def test_logistic_midpoint():
    assert logistic(0.0) == 0.5
    assert 0 < logistic(-10) < 0.001
    assert 0.999 < logistic(10) < 1
