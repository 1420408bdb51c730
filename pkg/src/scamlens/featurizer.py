"""Data preparation: quantile binning, text serialization, splitting, balancing.

Numeric features are bucketized into five descriptive categories using
nearest-rank quantile boundaries fit on training data. Records serialize to
one `description: value` line per feature in signal-priority order, keeping
the raw number next to its category because both carry signal.

All randomized operations take an explicit 64-bit seed and draw from
``random.Random`` (CPython's Mersenne Twister). Determinism is promised
within this implementation, not bit-for-bit across languages.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass

from .errors import (
    InvalidSplitSpec,
    SchemaParseError,
    SingleClassDataset,
    TooFewSamples,
    UnbinnedFeature,
)
from .model import (
    LABEL_NOT_SCAM,
    LABEL_SCAM,
    FeatureSchema,
    LabeledTransaction,
    TransactionRecord,
)

CATEGORIES = ("very low", "low", "medium", "high", "very high")
MISSING_CATEGORY = "unknown"
MIN_FIT_SAMPLES = 5


@dataclass(frozen=True)
class BinnedFeature:
    """Four ascending quantile boundaries and the sample count they came from."""

    boundaries: tuple[float, float, float, float]
    n: int

    def __post_init__(self):
        b = self.boundaries
        if not (b[0] <= b[1] <= b[2] <= b[3]):
            raise SchemaParseError(f"boundaries must be non-decreasing, got {b}")
        if self.n < MIN_FIT_SAMPLES:
            raise SchemaParseError(f"fit count must be >= {MIN_FIT_SAMPLES}, got {self.n}")


@dataclass(frozen=True)
class BinningModel:
    bins: dict[str, BinnedFeature]

    def boundaries(self, feature_id: str) -> tuple[float, float, float, float]:
        try:
            return self.bins[feature_id].boundaries
        except KeyError:
            raise UnbinnedFeature(f"no boundaries fitted for feature {feature_id!r}") from None


@dataclass(frozen=True)
class SplitSpec:
    """(train, validation, test) fractions plus the shuffle seed."""

    ratios: tuple[float, float, float]
    seed: int

    def __post_init__(self):
        if len(self.ratios) != 3:
            raise InvalidSplitSpec(f"need exactly three ratios, got {len(self.ratios)}")
        if any(r <= 0 for r in self.ratios):
            raise InvalidSplitSpec(f"ratios must be positive, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise InvalidSplitSpec(f"ratios must sum to 1, got sum {sum(self.ratios)!r}")


def nearest_rank_boundaries(values: list[float]) -> tuple[float, float, float, float]:
    """Quantiles at p = .2/.4/.6/.8 as the sorted element at 1-based index ceil(p*n).

    The index is computed in integer arithmetic, (k*n + 4) // 5 for k in 1..4,
    so float rounding can never shift the rank.
    """
    ordered = sorted(values)
    n = len(ordered)
    return tuple(ordered[(k * n + 4) // 5 - 1] for k in range(1, 5))


def fit_bins(training: list[LabeledTransaction], schema: FeatureSchema) -> BinningModel:
    """Fit quantile boundaries for every numeric schema feature.

    Raises TooFewSamples when a numeric feature has fewer than five
    non-missing training values.
    """
    bins: dict[str, BinnedFeature] = {}
    for fid in schema.numeric_feature_ids():
        values = [
            float(item.record.values[fid])
            for item in training
            if item.record.values.get(fid) is not None
        ]
        if len(values) < MIN_FIT_SAMPLES:
            raise TooFewSamples(
                f"feature {fid!r} has {len(values)} non-missing training values, need {MIN_FIT_SAMPLES}"
            )
        bins[fid] = BinnedFeature(boundaries=nearest_rank_boundaries(values), n=len(values))
    return BinningModel(bins=bins)


def bucketize(value: float | None, feature_id: str, model: BinningModel) -> str:
    """Map a numeric value to its descriptive category ("unknown" for missing)."""
    if value is None:
        return MISSING_CATEGORY
    b1, b2, b3, b4 = model.boundaries(feature_id)
    v = float(value)
    if v <= b1:
        return "very low"
    if v <= b2:
        return "low"
    if v <= b3:
        return "medium"
    if v <= b4:
        return "high"
    return "very high"


def render_value(value: object) -> str:
    """Raw-value text used in serialized lines: booleans as yes/no, numbers bare."""
    if value is None:
        return MISSING_CATEGORY
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float) and value.is_integer() and math.isfinite(value):
        return str(int(value))
    return str(value)


def serialize_record(
    record: TransactionRecord,
    schema: FeatureSchema,
    model: BinningModel,
    *,
    include_raw_numeric: bool = True,
    include_categorical: bool = True,
    include_text_context: bool = True,
) -> str:
    """Render a record as `description: value` lines in signal-priority order.

    Numeric features show `<category> (raw: <value>)`. The keyword flags
    support ablations: dropping the raw number, the category, or (both off)
    the numeric lines entirely, and dropping text features wholesale.
    """
    lines = []
    for fid in schema.signal_priority:
        spec = schema.feature(fid)
        value = record.values.get(fid)
        if fid == "mode" and value is None:
            value = record.mode or None  # the record field is authoritative
        if spec.kind == "text" and not include_text_context:
            continue
        if spec.kind == "numeric":
            if not include_raw_numeric and not include_categorical:
                continue
            if value is None:
                rendered = MISSING_CATEGORY
            else:
                category = bucketize(float(value), fid, model)
                if include_raw_numeric and include_categorical:
                    rendered = f"{category} (raw: {render_value(value)})"
                elif include_categorical:
                    rendered = category
                else:
                    rendered = render_value(value)
        else:
            rendered = render_value(value)
        lines.append(f"{spec.description}: {rendered}")
    return "\n".join(lines)


def stratified_split(
    dataset: list[LabeledTransaction], spec: SplitSpec
) -> tuple[list[LabeledTransaction], list[LabeledTransaction], list[LabeledTransaction]]:
    """Split per label so each part mirrors the global class ratio.

    Each label group is shuffled, then sliced contiguously at the cumulative
    ratio cut points; corresponding slices are concatenated and reshuffled.
    Per-label counts in each part land within one record of ratio * total.
    """
    groups = {LABEL_SCAM: [], LABEL_NOT_SCAM: []}
    for item in dataset:
        groups[item.label].append(item)
    if not groups[LABEL_SCAM] or not groups[LABEL_NOT_SCAM]:
        raise SingleClassDataset("stratified split needs both labels present")
    rng = random.Random(spec.seed)
    r1, r2, _ = spec.ratios
    parts: tuple[list, list, list] = ([], [], [])
    for label in (LABEL_SCAM, LABEL_NOT_SCAM):
        group = list(groups[label])
        rng.shuffle(group)
        n = len(group)
        # epsilon guards against ratios like 1/3 flooring one rank short
        cut1 = int(math.floor(r1 * n + 1e-9))
        cut2 = int(math.floor((r1 + r2) * n + 1e-9))
        parts[0].extend(group[:cut1])
        parts[1].extend(group[cut1:cut2])
        parts[2].extend(group[cut2:])
    for part in parts:
        rng.shuffle(part)
    return parts


def balance(
    dataset: list[LabeledTransaction], target_scam_fraction: float, seed: int
) -> list[LabeledTransaction]:
    """Downsample the over-represented label toward the target scam fraction.

    The under-represented side is kept whole; the other side is sampled
    without replacement to the count that lands the fraction within
    1/len(result) of the target. Deterministic given the seed.
    """
    if not 0 < target_scam_fraction < 1:
        raise InvalidSplitSpec(
            f"target scam fraction must be in (0, 1), got {target_scam_fraction!r}"
        )
    scam = [item for item in dataset if item.label == LABEL_SCAM]
    legit = [item for item in dataset if item.label == LABEL_NOT_SCAM]
    if not scam or not legit:
        raise SingleClassDataset("balancing needs both labels present")
    rng = random.Random(seed)
    f = target_scam_fraction
    if len(scam) / len(dataset) > f:
        keep, sample_from = legit, scam
        want = round(len(keep) * f / (1 - f))
    else:
        keep, sample_from = scam, legit
        want = round(len(keep) * (1 - f) / f)
    want = min(want, len(sample_from))
    result = list(keep) + rng.sample(sample_from, want)
    rng.shuffle(result)
    return result


# --- boundary persistence ---

def render_bins(model: BinningModel) -> str:
    doc = {
        fid: {"boundaries": list(binned.boundaries), "n": binned.n}
        for fid, binned in sorted(model.bins.items())
    }
    return json.dumps(doc, indent=2) + "\n"


def load_bins(document: str) -> BinningModel:
    try:
        raw = json.loads(document)
    except json.JSONDecodeError as exc:
        raise SchemaParseError(f"binning model is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaParseError("binning model must be a JSON object")
    bins = {}
    for fid, entry in raw.items():
        if not isinstance(entry, dict) or "boundaries" not in entry or "n" not in entry:
            raise SchemaParseError(f"feature {fid!r}: expected keys 'boundaries' and 'n'")
        boundaries = entry["boundaries"]
        if not isinstance(boundaries, list) or len(boundaries) != 4:
            raise SchemaParseError(f"feature {fid!r}: boundaries must be a 4-element array")
        bins[fid] = BinnedFeature(
            boundaries=tuple(float(b) for b in boundaries), n=int(entry["n"])
        )
    return BinningModel(bins=bins)


def load_bins_file(path: str) -> BinningModel:
    with open(path, encoding="utf-8") as f:
        return load_bins(f.read())


def write_bins_file(path: str, model: BinningModel) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(render_bins(model))
