"""Prompt construction for the classifier and the reasoning evaluator.

Prose lives in a versioned template file with `## <section>` headers, never
in code, so prompt iterations stay attributable: every built Prompt carries
the template_version it was rendered from. Builders are pure functions;
identical inputs produce byte-identical text.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from .errors import PromptTooLong, TemplateError, WrongExemplarCount
from .featurizer import BinningModel, serialize_record
from .grammar import (
    VERDICT_FRAUDULENT,
    Evaluation,
    parse_evaluation,
    render_evaluation,
)
from .model import LABEL_SCAM, LABELS, FeatureSchema, TransactionRecord

KIND_CLASSIFIER = "classifier"
KIND_REASONING = "reasoning"

LABEL_TOKENS = {"scam": "scam", "not_scam": "not scam"}

TEMPLATE_SECTIONS = (
    "version",
    "classifier_context",
    "classifier_instructions",
    "reasoning_context",
    "reasoning_instruction",
)

MAX_CLASSIFIER_EXEMPLARS = 8


@dataclass(frozen=True)
class PromptTemplate:
    version: str
    sections: dict[str, str]

    def section(self, name: str) -> str:
        return self.sections[name]


@dataclass(frozen=True)
class PromptSettings:
    """Rendering knobs: signal truncation, exemplar counts, size guard."""

    top_n_signals: int | None = None
    reasoning_exemplar_count: int = 2
    max_prompt_chars: int = 60000
    include_raw_numeric: bool = True
    include_categorical: bool = True
    include_text_context: bool = True


@dataclass(frozen=True)
class Exemplar:
    """A worked example: serialized transaction plus its answer.

    ``evaluation`` drives reasoning prompts; ``explanation`` is the one-line
    answer for classifier prompts. The evaluation's verdict must agree with
    the label.
    """

    id: str
    serialized_record: str
    label: str
    explanation: str
    evaluation: Evaluation | None = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise TemplateError(f"exemplar {self.id}: label must be one of {LABELS}")
        if not self.serialized_record or not self.explanation:
            raise TemplateError(f"exemplar {self.id}: serialized_record and explanation required")
        if self.evaluation is not None:
            is_scam = self.label == LABEL_SCAM
            says_fraud = self.evaluation.verdict == VERDICT_FRAUDULENT
            if is_scam != says_fraud:
                raise TemplateError(
                    f"exemplar {self.id}: verdict {self.evaluation.verdict!r} "
                    f"contradicts label {self.label!r}"
                )


@dataclass(frozen=True)
class Prompt:
    kind: str
    text: str
    exemplar_ids: tuple[str, ...]
    signal_order: tuple[str, ...]
    template_version: str

    def __post_init__(self):
        if self.kind not in (KIND_CLASSIFIER, KIND_REASONING):
            raise ValueError(f"kind must be classifier or reasoning, got {self.kind!r}")
        if not self.text:
            raise ValueError("prompt text must be non-empty")


def load_template(text: str) -> PromptTemplate:
    """Parse a `## <section>` delimited template file."""
    sections: dict[str, str] = {}
    name: str | None = None
    lines: list[str] = []
    for raw in text.splitlines():
        if raw.startswith("## "):
            if name is not None:
                sections[name] = "\n".join(lines).strip()
            name = raw[3:].strip()
            if not name:
                raise TemplateError("empty section name after '## '")
            if name in sections:
                raise TemplateError(f"duplicate template section {name!r}")
            lines = []
        elif name is not None:
            lines.append(raw)
        elif raw.strip():
            raise TemplateError("template text before the first '## <section>' header")
    if name is not None:
        sections[name] = "\n".join(lines).strip()
    for required in TEMPLATE_SECTIONS:
        if required not in sections or not sections[required]:
            raise TemplateError(f"template missing section {required!r}")
    return PromptTemplate(version=sections["version"], sections=sections)


def default_template() -> PromptTemplate:
    text = resources.files("scamlens.data").joinpath("default_template.txt").read_text("utf-8")
    return load_template(text)


def load_template_file(path: str) -> PromptTemplate:
    with open(path, encoding="utf-8") as f:
        return load_template(f.read())


def load_exemplars(text: str, schema: FeatureSchema) -> tuple[Exemplar, ...]:
    """Parse the exemplar JSON array; evaluations arrive as canonical grammar text."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TemplateError(f"exemplar file is not valid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise TemplateError("exemplar file must be a JSON array")
    out = []
    for entry in raw:
        if not isinstance(entry, dict):
            raise TemplateError("each exemplar must be a JSON object")
        evaluation = None
        if entry.get("evaluation_text"):
            evaluation, warnings = parse_evaluation(str(entry["evaluation_text"]), schema)
            if warnings:
                raise TemplateError(
                    f"exemplar {entry.get('id')!r}: evaluation text is not canonical: {warnings}"
                )
        out.append(
            Exemplar(
                id=str(entry.get("id", "")),
                serialized_record=str(entry.get("serialized_record", "")),
                label=str(entry.get("label", "")),
                explanation=str(entry.get("explanation", "")),
                evaluation=evaluation,
            )
        )
    return tuple(out)


def default_exemplars(schema: FeatureSchema) -> tuple[Exemplar, ...]:
    text = resources.files("scamlens.data").joinpath("exemplars.json").read_text("utf-8")
    return load_exemplars(text, schema)


def build_classifier_prompt(
    record: TransactionRecord,
    schema: FeatureSchema,
    model: BinningModel,
    exemplars: tuple[Exemplar, ...] = (),
    template: PromptTemplate | None = None,
    settings: PromptSettings = PromptSettings(),
) -> Prompt:
    """Context, feature descriptions, instructions, optional examples, record."""
    template = template or default_template()
    if len(exemplars) > MAX_CLASSIFIER_EXEMPLARS:
        raise WrongExemplarCount(
            f"classifier prompts accept 0..{MAX_CLASSIFIER_EXEMPLARS} exemplars, got {len(exemplars)}"
        )
    blocks = [
        "CONTEXT:\n" + template.section("classifier_context"),
        "FEATURE DESCRIPTIONS:\n"
        + "\n".join(f"- {spec.description}" for spec in schema.features),
        "INSTRUCTIONS:\n" + template.section("classifier_instructions"),
    ]
    if exemplars:
        examples = []
        for ex in exemplars:
            examples.append(
                f"TRANSACTION:\n{ex.serialized_record}\n"
                f"LABEL: {LABEL_TOKENS[ex.label]}\nEXPLANATION: {ex.explanation}"
            )
        blocks.append("EXAMPLES:\n\n" + "\n\n".join(examples))
    serialized = serialize_record(
        record,
        schema,
        model,
        include_raw_numeric=settings.include_raw_numeric,
        include_categorical=settings.include_categorical,
        include_text_context=settings.include_text_context,
    )
    blocks.append(f"TRANSACTION:\n{serialized}\nLABEL:")
    return _finish(
        KIND_CLASSIFIER, blocks, exemplars, schema, template, settings
    )


def build_reasoning_prompt(
    record: TransactionRecord,
    schema: FeatureSchema,
    model: BinningModel,
    exemplars: tuple[Exemplar, ...],
    template: PromptTemplate | None = None,
    settings: PromptSettings = PromptSettings(),
) -> Prompt:
    """Context, instruction, worked examples, the transaction, an EVALUATION: cue."""
    template = template or default_template()
    if len(exemplars) != settings.reasoning_exemplar_count:
        raise WrongExemplarCount(
            f"reasoning prompts require exactly {settings.reasoning_exemplar_count} "
            f"exemplars, got {len(exemplars)}"
        )
    for ex in exemplars:
        if ex.evaluation is None:
            raise TemplateError(f"exemplar {ex.id} has no evaluation; reasoning prompts need one")
    top = schema.signal_priority
    if settings.top_n_signals is not None:
        top = top[: settings.top_n_signals]
    signal_lines = "\n".join(f"- [{fid}] {schema.feature(fid).description}" for fid in top)
    context = (
        "CONTEXT:\n"
        + template.section("reasoning_context")
        + "\n\nTransaction modes: "
        + ", ".join(schema.modes)
        + "\nMO types: "
        + ", ".join(schema.mo_types)
        + "\nSignals in priority order:\n"
        + signal_lines
    )
    blocks = [context, "INSTRUCTION:\n" + template.section("reasoning_instruction")]
    examples = []
    for ex in exemplars:
        examples.append(
            f"TRANSACTION:\n{ex.serialized_record}\nEVALUATION:\n"
            + render_evaluation(ex.evaluation).rstrip("\n")
        )
    blocks.append("EXAMPLES:\n\n" + "\n\n".join(examples))
    serialized = serialize_record(
        record,
        schema,
        model,
        include_raw_numeric=settings.include_raw_numeric,
        include_categorical=settings.include_categorical,
        include_text_context=settings.include_text_context,
    )
    blocks.append(f"TRANSACTION:\n{serialized}\nEVALUATION:")
    return _finish(KIND_REASONING, blocks, exemplars, schema, template, settings)


def _finish(kind, blocks, exemplars, schema, template, settings) -> Prompt:
    text = "\n\n".join(blocks) + "\n"
    if len(text) > settings.max_prompt_chars:
        raise PromptTooLong(
            f"rendered prompt is {len(text)} chars, limit {settings.max_prompt_chars}"
        )
    return Prompt(
        kind=kind,
        text=text,
        exemplar_ids=tuple(ex.id for ex in exemplars),
        signal_order=tuple(schema.signal_priority),
        template_version=template.version,
    )


def emit_finetune_pairs(dataset, schema: FeatureSchema, model: BinningModel,
                        template: PromptTemplate | None = None,
                        settings: PromptSettings = PromptSettings()) -> list[tuple[str, str]]:
    """One (prompt, completion) pair per labeled record.

    The completion starts with the bare label token; reviewer note texts,
    when present, follow on the next line.
    """
    template = template or default_template()
    pairs = []
    for item in dataset:
        prompt = build_classifier_prompt(
            item.record, schema, model, (), template, settings
        )
        completion = LABEL_TOKENS[item.label]
        if item.reviewer_notes:
            completion += "\n" + "; ".join(n.free_text for n in item.reviewer_notes)
        pairs.append((prompt.text, completion))
    return pairs


def write_finetune_jsonl(path: str, pairs: list[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for prompt_text, completion in pairs:
            f.write(json.dumps({"prompt": prompt_text, "completion": completion},
                               ensure_ascii=False) + "\n")


def read_finetune_jsonl(path: str) -> list[tuple[str, str]]:
    pairs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if not isinstance(obj, dict) or "prompt" not in obj or "completion" not in obj:
                raise TemplateError(f"{path}:{lineno}: expected keys 'prompt' and 'completion'")
            pairs.append((str(obj["prompt"]), str(obj["completion"])))
    return pairs
