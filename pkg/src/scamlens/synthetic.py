"""Synthetic transaction corpora with a planted confusion matrix.

The generator writes records whose id prefix (tp-, fp-, tn-, fn-) states both
the ground-truth label and the verdict the planted rule configuration will
reach, so an end-to-end run over the corpus has a confusion matrix that is
known before any code executes.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .gateway import RuleOracleConfig
from .model import (
    FeatureSchema,
    LabeledTransaction,
    ReasonTag,
    ReviewerReason,
    TransactionRecord,
    default_schema,
)

PREFIXES = ("tp", "fp", "tn", "fn")

# memo fragments with no planted keyword as a substring
_ROUTINE_MEMOS = (
    "rent for march",
    "electricity bill",
    "grocery order 4821",
    "cab fare share",
    "monthly milk delivery",
    "school fees term two",
    "dinner split",
    "mobile recharge",
    "flat maintenance dues",
    "tuition april batch",
)

_BAIT_MEMOS = (
    "claim your lottery winnings today",
    "kyc update needed or account blocked",
    "refund pending please verify",
    "prize money transfer fee",
    "urgent electricity disconnection pay now",
)


def planted_config() -> RuleOracleConfig:
    """Rule weights under which the verdict tracks the two trigger rules alone.

    Keyword and spam carry weight 1.0 each; amount and prior-history carry
    0.25; the offset is 0.75. Without a trigger the score tops out at
    0.5 - 0.75, giving confidence at most 0.44; with any trigger it is at
    least 1.0 - 0.75, giving at least 0.56. Confidence therefore crosses the
    0.5 verdict line exactly when a trigger fires, independent of where the
    amount bucket boundaries land.
    """
    return RuleOracleConfig(
        amount_weight=0.25,
        spam_weight=1.0,
        keyword_weight=1.0,
        prior_weight=0.25,
        offset=0.75,
    )


@dataclass(frozen=True)
class CorpusPlan:
    """Counts per confusion cell plus generation knobs."""

    tp: int = 150
    fp: int = 350
    tn: int = 400
    fn: int = 100
    seed: int = 11
    note_fraction: float = 0.6
    start_timestamp: int = 1_700_000_000

    def __post_init__(self):
        cells = (self.tp, self.fp, self.tn, self.fn)
        if any(c < 0 for c in cells):
            raise ValueError("confusion cell counts must be non-negative")
        if sum(cells) == 0:
            raise ValueError("corpus plan is empty")
        if not 0.0 <= self.note_fraction <= 1.0:
            raise ValueError("note_fraction must lie in [0, 1]")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def expected_label(record_id: str) -> str:
    prefix = record_id.split("-", 1)[0]
    if prefix not in PREFIXES:
        raise ValueError(f"id without a planted prefix: {record_id!r}")
    return "scam" if prefix in ("tp", "fn") else "not_scam"


def expected_verdict(record_id: str) -> str:
    prefix = record_id.split("-", 1)[0]
    if prefix not in PREFIXES:
        raise ValueError(f"id without a planted prefix: {record_id!r}")
    return "fraudulent" if prefix in ("tp", "fp") else "legitimate"


def _amount(rng: random.Random) -> float:
    value = math.exp(rng.uniform(math.log(20.0), math.log(200000.0)))
    if rng.random() < 0.1:
        return round(value, 2)
    return float(int(value))


def _triggered_values(rng: random.Random, config: RuleOracleConfig) -> dict:
    route = rng.choice(("keyword", "spam", "both"))
    values = {}
    if route in ("keyword", "both"):
        values[config.memo_feature] = rng.choice(_BAIT_MEMOS)
        values[config.spam_feature] = rng.randrange(0, config.spam_report_threshold + 1)
    if route in ("spam", "both"):
        values[config.spam_feature] = rng.randrange(
            config.spam_report_threshold + 1, config.spam_report_threshold + 40
        )
    if route == "spam":
        values[config.memo_feature] = rng.choice(_ROUTINE_MEMOS) if rng.random() < 0.7 else None
    return values


def _quiet_values(rng: random.Random, config: RuleOracleConfig) -> dict:
    memo = rng.choice(_ROUTINE_MEMOS) if rng.random() < 0.7 else None
    spam = rng.randrange(0, config.spam_report_threshold + 1)
    if rng.random() < 0.1:
        spam = None
    return {config.memo_feature: memo, config.spam_feature: spam}


def _notes(
    rng: random.Random, values: dict, config: RuleOracleConfig
) -> tuple[ReviewerReason, ...]:
    """Reviewer reasons keyed the way the rule engine keys its own output.

    Keyword, spam, and prior polarities are computed from the record, so they
    line up with the generated side and count as consumed matches. The amount
    note guesses a polarity (the reviewer cannot see bucket boundaries), and
    the account-age note uses a signal the rule engine never emits; both feed
    the missed-reason count.
    """
    memo = values.get(config.memo_feature)
    spam = values.get(config.spam_feature)
    prior = values.get(config.prior_feature)
    hit = next(
        (kw for kw in config.suspicious_keywords if isinstance(memo, str) and kw in memo), None
    )
    pool = [
        ReviewerReason(
            ReasonTag(config.memo_feature,
                      "supports_fraud" if hit else "supports_legitimacy"),
            f"memo mentions {hit}" if hit else "memo reads like a routine payment",
        ),
        ReviewerReason(
            ReasonTag(
                config.spam_feature,
                "supports_fraud"
                if isinstance(spam, int) and spam > config.spam_report_threshold
                else "supports_legitimacy",
            ),
            "payee has a pile of spam complaints"
            if isinstance(spam, int) and spam > config.spam_report_threshold
            else "no meaningful spam history",
        ),
        ReviewerReason(
            ReasonTag(config.prior_feature,
                      "supports_fraud" if prior == 0 else "supports_legitimacy"),
            "payer never paid this payee before" if prior == 0 else "payer has paid them before",
        ),
        ReviewerReason(
            ReasonTag(config.amount_feature, rng.choice(("supports_fraud",
                                                         "supports_legitimacy"))),
            "amount looks off for this payer",
        ),
        ReviewerReason(
            ReasonTag("payee_account_age_days", "supports_legitimacy"),
            "payee account has been around a while",
        ),
    ]
    count = rng.randrange(1, 4)
    rng.shuffle(pool)
    return tuple(pool[:count])


def generate_corpus(
    plan: CorpusPlan,
    schema: FeatureSchema | None = None,
    config: RuleOracleConfig | None = None,
) -> list[LabeledTransaction]:
    schema = schema or default_schema()
    config = config or planted_config()
    rng = random.Random(plan.seed)
    modes = list(schema.modes)

    rows: list[LabeledTransaction] = []
    for prefix, count in (("tp", plan.tp), ("fp", plan.fp), ("tn", plan.tn), ("fn", plan.fn)):
        for i in range(count):
            triggered = prefix in ("tp", "fp")
            values = _triggered_values(rng, config) if triggered else _quiet_values(rng, config)
            values[config.amount_feature] = _amount(rng)
            values[config.prior_feature] = (
                None if rng.random() < 0.1 else rng.randrange(0, 25)
            )
            merchant = rng.random() < 0.5
            values["merchant_flag"] = merchant
            values["external_merchant_flag"] = merchant and rng.random() < 0.5
            values["payment_request_flag"] = rng.random() < 0.3
            values["payer_account_age_days"] = (
                None if rng.random() < 0.1 else rng.randrange(1, 3000)
            )
            values["payer_txn_count"] = rng.randrange(0, 500)
            values["payee_account_age_days"] = rng.randrange(1, 3000)
            values["payee_txn_count"] = None if rng.random() < 0.1 else rng.randrange(0, 2000)

            _check_trigger(values, config, triggered)
            record = TransactionRecord(
                id=f"{prefix}-{i + 1:04d}",
                values=values,
                mode=rng.choices(modes, weights=(5, 3, 2, 2))[0],
                timestamp=0,
            )
            notes = (
                _notes(rng, values, config) if rng.random() < plan.note_fraction else ()
            )
            rows.append(
                LabeledTransaction(record=record, label=expected_label(record.id),
                                   reviewer_notes=notes)
            )

    rng.shuffle(rows)
    out = []
    for i, row in enumerate(rows):
        record = TransactionRecord(
            id=row.record.id,
            values=row.record.values,
            mode=row.record.mode,
            timestamp=plan.start_timestamp + i * 60,
        )
        out.append(LabeledTransaction(record=record, label=row.label,
                                      reviewer_notes=row.reviewer_notes))
    return out


def _check_trigger(values: dict, config: RuleOracleConfig, triggered: bool) -> None:
    memo = values.get(config.memo_feature)
    spam = values.get(config.spam_feature)
    keyword_fires = isinstance(memo, str) and any(
        kw in memo for kw in config.suspicious_keywords
    )
    spam_fires = isinstance(spam, int) and spam > config.spam_report_threshold
    if (keyword_fires or spam_fires) != triggered:
        raise AssertionError(f"planted trigger violated for {values!r}")
