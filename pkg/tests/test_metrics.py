"""Metric correctness against counting and pairwise oracles."""

from __future__ import annotations

import random

import pytest

from scamlens.errors import (
    BadValueKind,
    EmptyCounts,
    EmptyPredictionSet,
    EmptyRatings,
    IdMismatch,
    SingleClassDataset,
)
from scamlens.featurizer import BinnedFeature, BinningModel
from scamlens.grammar import Evaluation, Reason
from scamlens.metrics import (
    Annotation,
    PredictionRow,
    ReasonCategoryCounts,
    ScoredPrediction,
    aggregate_reason_counts,
    annotation_from_json,
    annotation_to_json,
    auc_roc,
    build_report,
    categorize_reasons,
    confusion_and_prf,
    default_segments,
    prediction_from_json,
    prediction_to_json,
    quality_summary,
    read_annotations_jsonl,
    read_predictions_jsonl,
    reasoning_accuracy,
    render_report_text,
    segment_metrics,
    write_predictions_jsonl,
)
from scamlens.model import ReasonTag, ReviewerReason, TransactionRecord, default_schema

SCHEMA = default_schema()
MODEL = BinningModel(
    bins={fid: BinnedFeature((20.0, 40.0, 60.0, 80.0), 10) for fid in SCHEMA.numeric_feature_ids()}
)


def pred(rid, confidence, label, segments=()):
    return ScoredPrediction(id=rid, confidence=confidence, label=label,
                            segments=frozenset(segments))


def test_confusion_example():
    predictions = [
        pred("a", 0.9, "scam"),
        pred("b", 0.8, "scam"),
        pred("c", 0.7, "scam"),
        pred("d", 0.6, "not_scam"),
        pred("e", 0.2, "scam"),
        pred("f", 0.1, "not_scam"),
    ]
    prf = confusion_and_prf(predictions, 0.5)
    assert (prf.tp, prf.fp, prf.tn, prf.fn) == (3, 1, 1, 1)
    assert prf.precision == 0.75
    assert prf.recall == 0.75
    assert prf.f1 == 0.75


def test_no_positive_predictions_gives_undefined_precision():
    predictions = [pred("a", 0.4, "scam"), pred("b", 0.3, "not_scam")]
    prf = confusion_and_prf(predictions, 1.0)
    assert prf.tp == 0 and prf.fp == 0
    assert prf.precision is None
    assert prf.recall == 0.0
    assert prf.f1 is None


def test_no_scam_labels_gives_undefined_recall():
    predictions = [pred("a", 0.9, "not_scam"), pred("b", 0.1, "not_scam")]
    prf = confusion_and_prf(predictions, 0.5)
    assert prf.recall is None


def test_empty_prediction_set_rejected():
    with pytest.raises(EmptyPredictionSet):
        confusion_and_prf([], 0.5)


def test_recall_non_increasing_and_positives_constant_across_thresholds():
    rng = random.Random(41)
    for _ in range(30):
        predictions = [
            pred(f"r{i}", rng.random(), rng.choice(["scam", "not_scam"]))
            for i in range(rng.randrange(4, 60))
        ]
        if len({p.label for p in predictions}) < 2:
            continue
        last_recall = None
        for t in [x / 10 for x in range(0, 11)]:
            prf = confusion_and_prf(predictions, t)
            assert prf.tp + prf.fn == sum(1 for p in predictions if p.label == "scam")
            if prf.recall is not None and last_recall is not None:
                assert prf.recall <= last_recall + 1e-12
            if prf.recall is not None:
                last_recall = prf.recall


def brute_force_auc(predictions):
    positives = [p.confidence for p in predictions if p.label == "scam"]
    negatives = [p.confidence for p in predictions if p.label == "not_scam"]
    wins = sum(1 for sp in positives for sn in negatives if sp > sn)
    ties = sum(1 for sp in positives for sn in negatives if sp == sn)
    return (wins + 0.5 * ties) / (len(positives) * len(negatives))


def test_auc_perfect_separation():
    predictions = [pred("a", 0.9, "scam"), pred("b", 0.8, "scam"),
                   pred("c", 0.2, "not_scam"), pred("d", 0.1, "not_scam")]
    assert auc_roc(predictions) == 1.0


def test_auc_all_ties_is_half():
    predictions = [pred(f"r{i}", 0.5, "scam" if i % 2 else "not_scam") for i in range(10)]
    assert auc_roc(predictions) == 0.5


def test_auc_matches_pairwise_oracle():
    rng = random.Random(43)
    for _ in range(200):
        n = rng.randrange(4, 50)
        predictions = [
            pred(f"r{i}", rng.choice([rng.random(), round(rng.random(), 1)]),
                 rng.choice(["scam", "not_scam"]))
            for i in range(n)
        ]
        if len({p.label for p in predictions}) < 2:
            continue
        assert abs(auc_roc(predictions) - brute_force_auc(predictions)) < 1e-9


def test_auc_single_class_rejected():
    with pytest.raises(SingleClassDataset):
        auc_roc([pred("a", 0.5, "scam")])


def test_default_segments_flags():
    record = TransactionRecord(
        id="t",
        values={"amount": 95, "memo_text": "order 12", "merchant_flag": True,
                "external_merchant_flag": True},
        mode="app_intent",
    )
    flags = default_segments(record, SCHEMA, MODEL)
    assert flags == {"external_merchant", "high_value", "app_intent", "has_order_text"}
    plain = TransactionRecord(
        id="u", values={"amount": 30, "memo_text": "  ", "merchant_flag": True}, mode="qr_scan"
    )
    assert default_segments(plain, SCHEMA, MODEL) == frozenset()


def test_segment_metrics_use_members_only():
    predictions = [
        pred("a", 0.95, "scam", segments=["app_intent"]),
        pred("b", 0.92, "scam", segments=["app_intent"]),
        pred("c", 0.1, "not_scam", segments=["high_value"]),
        pred("d", 0.99, "scam"),
    ]
    rows = segment_metrics(predictions, 0.9)
    assert rows["app_intent"].recall == 1.0
    assert rows["app_intent"].tp == 2
    assert rows["high_value"].tn == 1
    assert rows["external_merchant"] is None  # no members -> all-undefined row


RECORD = TransactionRecord(
    id="t-1",
    values={"amount": 50, "prior_txn_count": 30, "payee_spam_reports": 10, "payer_txn_count": 70},
    mode="qr_scan",
)
# actual buckets: amount=medium, prior=low, spam=very low, payer_txn=high

CONSISTENT_TEXT = {
    "amount": "medium amount",
    "prior_txn_count": "low count of prior transactions",
    "payee_spam_reports": "very low spam reports",
    "payer_txn_count": "high payer activity",
}


def gen_reason(signal, polarity, consistent=True):
    text = CONSISTENT_TEXT[signal] if consistent else "very high " + signal.replace("_", " ")
    return Reason(ReasonTag(signal, polarity), text)


def reviewer_reason(signal, polarity):
    return ReviewerReason(ReasonTag(signal, polarity), f"note about {signal}")


def evaluation_with(fraud=(), legit=()):
    return Evaluation(fraud_reasons=tuple(fraud), legit_reasons=tuple(legit),
                      verdict="fraudulent", mo="none", confidence=0.9)


def test_categorize_set_comparison_example():
    generated = evaluation_with(fraud=[
        gen_reason("amount", "supports_fraud"),
        gen_reason("prior_txn_count", "supports_fraud"),
    ])
    reviewer = [
        reviewer_reason("amount", "supports_fraud"),
        reviewer_reason("payee_spam_reports", "supports_fraud"),
    ]
    counts = categorize_reasons(generated, reviewer, RECORD, SCHEMA, MODEL)
    assert (counts.c, counts.i, counts.h, counts.m, counts.n) == (1, 0, 0, 1, 1)


def test_categorize_identity_case():
    generated = evaluation_with(
        fraud=[gen_reason("amount", "supports_fraud")],
        legit=[gen_reason("prior_txn_count", "supports_legitimacy")],
    )
    reviewer = [
        reviewer_reason("amount", "supports_fraud"),
        reviewer_reason("prior_txn_count", "supports_legitimacy"),
    ]
    counts = categorize_reasons(generated, reviewer, RECORD, SCHEMA, MODEL)
    assert (counts.c, counts.i, counts.h, counts.m, counts.n) == (2, 0, 0, 0, 0)


def test_categorize_unresolvable_is_hallucination():
    generated = evaluation_with(fraud=[Reason(None, "made up signal")])
    counts = categorize_reasons(generated, [], RECORD, SCHEMA, MODEL)
    assert counts.h == 1
    assert counts.total == 1


def test_inconsistent_reason_never_consumes_reviewer_note():
    generated = evaluation_with(fraud=[gen_reason("amount", "supports_fraud", consistent=False)])
    reviewer = [reviewer_reason("amount", "supports_fraud")]
    counts = categorize_reasons(generated, reviewer, RECORD, SCHEMA, MODEL)
    assert (counts.c, counts.i, counts.m) == (0, 1, 1)


def test_duplicate_generated_keys_first_match_wins():
    generated = evaluation_with(fraud=[
        gen_reason("amount", "supports_fraud"),
        gen_reason("amount", "supports_fraud"),
    ])
    reviewer = [reviewer_reason("amount", "supports_fraud")]
    counts = categorize_reasons(generated, reviewer, RECORD, SCHEMA, MODEL)
    assert (counts.c, counts.n) == (1, 1)


def test_polarity_is_part_of_the_match_key():
    generated = evaluation_with(legit=[gen_reason("amount", "supports_legitimacy")])
    reviewer = [reviewer_reason("amount", "supports_fraud")]
    counts = categorize_reasons(generated, reviewer, RECORD, SCHEMA, MODEL)
    assert (counts.c, counts.m, counts.n) == (0, 1, 1)


def oracle_counts(gen, reviewer_keys):
    """Independent multiset oracle for the categorization."""
    h = sum(1 for key, _ in gen if key is None)
    i = sum(1 for key, ok in gen if key is not None and not ok)
    consistent = [key for key, ok in gen if key is not None and ok]
    c = 0
    for key in set(reviewer_keys):
        c += min(consistent.count(key), reviewer_keys.count(key))
    n = len(consistent) - c
    m = len(reviewer_keys) - c
    return c, i, h, m, n


def test_categorize_matches_multiset_oracle_on_random_cases():
    rng = random.Random(47)
    signals = list(CONSISTENT_TEXT)
    for _ in range(300):
        gen_spec = []
        fraud, legit = [], []
        for _ in range(rng.randrange(0, 7)):
            kind = rng.randrange(0, 4)
            if kind == 0:
                gen_spec.append((None, False))
                (fraud if rng.random() < 0.5 else legit).append(Reason(None, "mystery"))
            else:
                signal = rng.choice(signals)
                polarity = rng.choice(["supports_fraud", "supports_legitimacy"])
                consistent = kind != 1
                gen_spec.append(((signal, polarity), consistent))
                reason = gen_reason(signal, polarity, consistent)
                (fraud if polarity == "supports_fraud" else legit).append(reason)
        reviewer_keys = [
            (rng.choice(signals), rng.choice(["supports_fraud", "supports_legitimacy"]))
            for _ in range(rng.randrange(0, 5))
        ]
        reviewer = [reviewer_reason(s, p) for s, p in reviewer_keys]
        generated = evaluation_with(fraud=fraud, legit=legit)
        counts = categorize_reasons(generated, reviewer, RECORD, SCHEMA, MODEL)
        c, i, h, m, n = oracle_counts(gen_spec, reviewer_keys)
        assert (counts.c, counts.i, counts.h, counts.m, counts.n) == (c, i, h, m, n)
        assert counts.c + counts.i + counts.h + counts.n == len(fraud) + len(legit)
        assert counts.c + counts.m == len(reviewer)


def test_reasoning_accuracy_paper_arithmetic():
    counts = ReasonCategoryCounts(c=57, i=6, h=1, m=4, n=32)
    assert reasoning_accuracy(counts) == 0.89


def test_reasoning_accuracy_small_case():
    assert reasoning_accuracy(ReasonCategoryCounts(c=1, n=1, m=1)) == pytest.approx(2 / 3)


def test_reasoning_accuracy_empty_counts():
    with pytest.raises(EmptyCounts):
        reasoning_accuracy(ReasonCategoryCounts())


def test_reasoning_accuracy_always_in_unit_interval():
    rng = random.Random(53)
    for _ in range(200):
        counts = ReasonCategoryCounts(*(rng.randrange(0, 30) for _ in range(5)))
        if counts.total == 0:
            continue
        assert 0.0 <= reasoning_accuracy(counts) <= 1.0


def test_quality_summary_paper_arithmetic():
    ratings = ["excellent"] * 38 + ["acceptable"] * 41 + ["poor"] * 21
    summary = quality_summary(ratings)
    assert summary.positive == 0.79
    assert summary.histogram == {"excellent": 38, "acceptable": 41, "poor": 21}


def test_quality_summary_all_excellent():
    assert quality_summary(["excellent"] * 5).positive == 1.0


def test_quality_summary_empty_and_bad_values():
    with pytest.raises(EmptyRatings):
        quality_summary([])
    with pytest.raises(BadValueKind):
        quality_summary(["great"])


def sample_predictions():
    rng = random.Random(59)
    out = []
    for i in range(60):
        label = "scam" if i % 3 == 0 else "not_scam"
        base = 0.7 if label == "scam" else 0.3
        out.append(
            pred(f"r{i}", min(1.0, max(0.0, base + rng.uniform(-0.3, 0.3))), label,
                 segments=["app_intent"] if i % 2 == 0 else [])
        )
    return out


def test_build_report_requires_mandatory_thresholds():
    with pytest.raises(ValueError):
        build_report(sample_predictions(), thresholds=(0.1, 0.5))
    with pytest.raises(ValueError):
        build_report(sample_predictions(), thresholds=(0.9,))


def test_build_report_shape_and_markers():
    counts = ReasonCategoryCounts(c=5, i=1, h=0, m=2, n=3)
    report = build_report(
        sample_predictions(),
        reason_counts=counts,
        quality=quality_summary(["excellent", "poor"]),
        corpus="sample",
        template_version="v1",
    )
    doc = report.to_json()
    assert doc["corpus"] == "sample"
    assert set(doc["thresholds"]) == {"0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9"}
    assert doc["segments"]["external_merchant"] == "undefined"
    assert doc["reason_counts"] == {"C": 5, "I": 1, "H": 0, "M": 2, "N": 3}
    assert doc["reasoning_accuracy"] == pytest.approx(8 / 11)
    assert 0.0 <= doc["auc_roc"] <= 1.0
    assert build_report(sample_predictions()).to_json()["reason_counts"] is None


def test_report_text_rendering_mentions_all_rows():
    report = build_report(sample_predictions(), corpus="sample", template_version="v1")
    text = render_report_text(report)
    assert "0.9" in text and "0.5" in text
    assert "auc_roc" in text
    assert "app_intent" in text
    assert "undefined" in text  # empty segments render the marker


def test_prediction_jsonl_round_trip(tmp_path):
    rows = [
        PredictionRow(id="a", confidence=0.73, verdict="fraudulent", evaluation_text="EVAL/1\n..."),
        PredictionRow(id="b", confidence=0.08, verdict="legitimate", evaluation_text="x"),
    ]
    path = str(tmp_path / "predictions.jsonl")
    write_predictions_jsonl(path, rows)
    assert read_predictions_jsonl(path) == rows
    assert prediction_from_json(prediction_to_json(rows[0])) == rows[0]


def test_annotation_round_trip_and_header_skip(tmp_path):
    annotation = Annotation(
        id="a",
        reviewer_reasons=(ReviewerReason(ReasonTag("amount", "supports_fraud"), "too big"),),
        quality_ratings=("excellent", "poor"),
    )
    path = tmp_path / "annotations.jsonl"
    path.write_text(
        '{"annotations_header": {"version": 1}}\n'
        + __import__("json").dumps(annotation_to_json(annotation))
        + "\n"
    )
    assert read_annotations_jsonl(str(path)) == [annotation]


def test_annotation_rejects_bad_rating():
    with pytest.raises(BadValueKind):
        annotation_from_json({"id": "a", "quality_ratings": ["stellar"]})


def test_aggregate_reason_counts_id_mismatch():
    annotation = Annotation(id="ghost")
    with pytest.raises(IdMismatch):
        aggregate_reason_counts({}, [annotation], {}, SCHEMA, MODEL)


def test_aggregate_reason_counts_sums_per_record():
    evaluations = {
        "r1": evaluation_with(fraud=[gen_reason("amount", "supports_fraud")]),
        "r2": evaluation_with(fraud=[Reason(None, "mystery")]),
    }
    records = {"r1": RECORD, "r2": RECORD}
    annotations = [
        Annotation(id="r1", reviewer_reasons=(reviewer_reason("amount", "supports_fraud"),)),
        Annotation(id="r2"),
    ]
    counts = aggregate_reason_counts(evaluations, annotations, records, SCHEMA, MODEL)
    assert (counts.c, counts.h) == (1, 1)
