"""Record the console's REST contract against the real review service.

Drives an in-process service (the same FastAPI app `scamlens serve` runs)
through one reviewer session and writes every request/response pair to
tests/recordings/scenario.json. The vitest contract suite replays these
exchanges against the TypeScript client, so the client is tested against
genuine service behavior without a live server.

Re-run after any API change:

    python3 scripts/record_service.py
"""

from __future__ import annotations

import json
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from scamlens.featurizer import fit_bins
from scamlens.gateway import rule_oracle_evaluate
from scamlens.model import default_schema, record_to_json
from scamlens.service import ReviewService, build_app
from scamlens.synthetic import CorpusPlan, expected_label, generate_corpus, planted_config

OUT = Path(__file__).resolve().parent.parent / "tests" / "recordings" / "scenario.json"
REVIEWER = "rev-7"


def agreeing_verdict(assistant_verdict: str) -> str:
    return "scam" if assistant_verdict == "fraudulent" else "not_scam"


def main() -> None:
    schema = default_schema()
    corpus = generate_corpus(CorpusPlan(tp=3, fp=3, tn=3, fn=3, seed=41))
    model = fit_bins(corpus, schema)
    config = planted_config()

    def completion(record, backend_id=None):
        return rule_oracle_evaluate(record, schema, model, config)[0]

    by_prefix = {row.record.id.split("-")[0]: row.record for row in corpus}
    enqueued = [by_prefix["tp"], by_prefix["tn"], by_prefix["fn"]]

    steps: list[dict] = []
    with tempfile.TemporaryDirectory() as tmp:
        service = ReviewService(f"{tmp}/events.jsonl", schema,
                                completion_fn=completion, model=model)
        client = TestClient(build_app(service))

        def call(method: str, path: str, body=None, *, text=False):
            response = client.request(
                method, path, json=body if body is not None else None)
            recorded: dict = {"request": {"method": method, "path": path},
                              "response": {"status": response.status_code}}
            if body is not None:
                recorded["request"]["body"] = body
            if text:
                recorded["response"]["text"] = response.text
            else:
                recorded["response"]["json"] = response.json()
            steps.append(recorded)
            return recorded["response"]

        # setup (not replayed by the console; kept for provenance)
        setup = client.post("/v1/transactions", json={
            "records": [record_to_json(r) for r in enqueued]})
        assert setup.status_code == 200
        assert all(r["status"] == "created" for r in setup.json()["results"])

        # 1. claim case A
        response = call("GET", f"/v1/review/next?reviewer={REVIEWER}")
        case_a = response["json"]["case"]
        assert case_a is not None and case_a["status"] == "in_review"
        evaluation = case_a["evaluation"]
        assert evaluation["verdict"] == "fraudulent"  # tp enqueued first

        # 2. thumbs-down with a note on the first fraud reason
        call("POST", f"/v1/review/{case_a['case_id']}/feedback",
             {"polarity": "supports_fraud", "reason_index": 0, "rating": "down",
              "note": "bucket text contradicts the raw value"})

        # 3. thumbs-up on a distinct reason (legit side when one exists)
        if evaluation["legit_reasons"]:
            up = {"polarity": "supports_legitimacy", "reason_index": 0, "rating": "up"}
        else:
            up = {"polarity": "supports_fraud", "reason_index": 1, "rating": "up"}
        call("POST", f"/v1/review/{case_a['case_id']}/feedback", up)

        # 4. disagreeing verdict on A; payload mirrors the console exactly
        call("POST", f"/v1/review/{case_a['case_id']}/verdict",
             {"reviewer_id": REVIEWER, "verdict": "not_scam", "disagreement": True})

        # 5. queue advances to case B
        response = call("GET", f"/v1/review/next?reviewer={REVIEWER}")
        case_b = response["json"]["case"]
        assert case_b is not None and case_b["case_id"] != case_a["case_id"]

        # 6. agreeing verdict on B (tn: assistant says legitimate)
        assert case_b["evaluation"]["verdict"] == "legitimate"
        call("POST", f"/v1/review/{case_b['case_id']}/verdict",
             {"reviewer_id": REVIEWER,
              "verdict": agreeing_verdict(case_b["evaluation"]["verdict"])})

        # 7. claim case C (fn: a scam the assistant called legitimate)
        response = call("GET", f"/v1/review/next?reviewer={REVIEWER}")
        case_c = response["json"]["case"]
        assert case_c["evaluation"]["verdict"] == "legitimate"
        assert expected_label(case_c["case_id"]) == "scam"

        # 8. the reviewer catches it: disagreeing scam verdict
        call("POST", f"/v1/review/{case_c['case_id']}/verdict",
             {"reviewer_id": REVIEWER, "verdict": "scam", "disagreement": True})

        # 9. queue drained
        response = call("GET", f"/v1/review/next?reviewer={REVIEWER}")
        assert response["json"]["case"] is None

        # 10. reload case A: verdict and feedback must have persisted
        response = call("GET", f"/v1/cases/{case_a['case_id']}")
        reloaded = response["json"]["case"]
        assert reloaded["status"] == "decided"
        assert len(reloaded["feedback"]) == 2

        # 11. export carries the thumbs-down note and both quality ratings
        response = call("GET", "/v1/export/decisions", text=True)
        assert "bucket text contradicts the raw value" in response["text"]
        assert '"poor"' in response["text"] and '"excellent"' in response["text"]

        service.close()

    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps({
        "reviewer": REVIEWER,
        "setup": {"enqueued_record_ids": [r.id for r in enqueued]},
        "steps": steps,
    }, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    print(f"wrote {len(steps)} recorded exchanges to {OUT}")


if __name__ == "__main__":
    main()
