"""Command-line driver for the whole pipeline.

Exit codes: 0 success, 1 user or configuration error, 2 internal error.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor

from .errors import (
    EmptyPredictionSet,
    IdMismatch,
    ScamlensError,
    SchemaParseError,
    UnknownBackend,
)
from .featurizer import (
    SplitSpec,
    balance,
    fit_bins,
    load_bins_file,
    stratified_split,
    write_bins_file,
)
from .gateway import (
    CompletionRequest,
    Gateway,
    HttpBackend,
    HttpBackendConfig,
    RuleOracleBackend,
    RuleOracleConfig,
)
from .grammar import parse_evaluation
from .metrics import (
    DEFAULT_THRESHOLDS,
    PredictionRow,
    ScoredPrediction,
    aggregate_reason_counts,
    build_report,
    confusion_and_prf,
    default_segments,
    quality_summary,
    read_annotations_jsonl,
    read_predictions_jsonl,
    render_report_text,
    write_predictions_jsonl,
)
from .model import (
    LABEL_NOT_SCAM,
    LABEL_SCAM,
    default_schema,
    labeled_from_json,
    load_schema_file,
    read_labeled_jsonl,
    validate_record,
    write_labeled_jsonl,
)
from .prompts import (
    LABEL_TOKENS,
    PromptSettings,
    build_classifier_prompt,
    build_reasoning_prompt,
    default_exemplars,
    default_template,
    load_template_file,
)
from .synthetic import CorpusPlan, generate_corpus, planted_config

log = logging.getLogger("scamlens")

DEFAULT_CONFIG_PATH = "./scamlens.json"


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors exit 1, reserving 2 for bugs."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def load_config(path: str | None) -> dict:
    if path is None:
        if not os.path.exists(DEFAULT_CONFIG_PATH):
            return {}
        path = DEFAULT_CONFIG_PATH
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if not isinstance(doc, dict):
        raise SchemaParseError(f"{path}: config file must hold a JSON object")
    return doc


def _load_schema(args, config):
    path = getattr(args, "schema", None) or config.get("schema")
    return load_schema_file(path) if path else default_schema()


def _load_template(args, config):
    path = getattr(args, "template", None) or config.get("template")
    return load_template_file(path) if path else default_template()


def build_backend(backend_id: str, config: dict, schema):
    """Construct the named backend from config; `mock` works unconfigured."""
    spec = (config.get("backends") or {}).get(backend_id)
    if spec is None:
        if backend_id == "mock":
            return RuleOracleBackend(schema, backend_id="mock")
        raise UnknownBackend(f"no backend {backend_id!r} in config")
    kind = spec.get("kind")
    if kind == "rule_oracle":
        oracle = RuleOracleConfig.from_json(spec.get("config", {}))
        return RuleOracleBackend(schema, oracle, backend_id=backend_id)
    if kind == "http":
        fields = {k: v for k, v in spec.items() if k != "kind"}
        return HttpBackend(HttpBackendConfig(backend_id=backend_id, **fields))
    raise UnknownBackend(f"backend {backend_id!r} has unknown kind {kind!r}")


def _settings_from(args) -> PromptSettings:
    return PromptSettings(
        include_raw_numeric=getattr(args, "raw_numeric", True),
        include_categorical=getattr(args, "categorical", True),
        include_text_context=getattr(args, "text_context", True),
    )


# -- commands --


def cmd_generate(args, config) -> int:
    try:
        tp, fp, tn, fn = (int(x) for x in args.counts.split(","))
    except ValueError:
        print("error: --counts needs four integers tp,fp,tn,fn", file=sys.stderr)
        return 1
    plan = CorpusPlan(tp=tp, fp=fp, tn=tn, fn=fn, seed=args.seed)
    corpus = generate_corpus(plan, schema=_load_schema(args, config))
    write_labeled_jsonl(args.output, corpus)
    if args.oracle_config:
        with open(args.oracle_config, "w", encoding="utf-8") as f:
            json.dump({"backends": {"mock": {"kind": "rule_oracle",
                                             "config": planted_config().to_json()}}},
                      f, indent=2, sort_keys=True)
            f.write("\n")
    print(f"wrote {len(corpus)} records to {args.output}")
    return 0


def cmd_ingest(args, config) -> int:
    schema = _load_schema(args, config)
    accepted = []
    errors = []
    with open(args.input, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                item = labeled_from_json(json.loads(line))
                validate_record(item.record, schema)
                accepted.append(item)
            except (json.JSONDecodeError, ScamlensError) as exc:
                errors.append((lineno, exc))
    for lineno, exc in errors:
        code = getattr(exc, "code", "ParseError")
        message = getattr(exc, "message", str(exc))
        print(f"{args.input}:{lineno}: {code}: {message}", file=sys.stderr)
    if not accepted and not errors:
        print(f"error: EmptyPredictionSet: {args.input} holds no records", file=sys.stderr)
        return 1
    if args.output:
        write_labeled_jsonl(args.output, accepted)
    print(f"{len(accepted)} accepted, {len(errors)} rejected")
    return 0 if not errors else 1


def _parse_ratios(text: str) -> tuple[float, float, float]:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise ValueError("need three comma-separated ratios")
    return (parts[0], parts[1], parts[2])


def cmd_prepare(args, config) -> int:
    schema = _load_schema(args, config)
    try:
        ratios = _parse_ratios(args.ratios)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    dataset = read_labeled_jsonl(args.corpus)
    for item in dataset:
        validate_record(item.record, schema)
    train, val, test = stratified_split(dataset, SplitSpec(ratios=ratios, seed=args.seed))
    if args.balance is not None:
        train = balance(train, args.balance, seed=args.seed)
    model = fit_bins(train, schema)
    os.makedirs(args.out_dir, exist_ok=True)
    for name, part in (("train", train), ("val", val), ("test", test)):
        write_labeled_jsonl(os.path.join(args.out_dir, f"{name}.jsonl"), part)
    write_bins_file(os.path.join(args.out_dir, "bins.json"), model)
    print(f"train={len(train)} val={len(val)} test={len(test)} "
          f"bins={len(model.bins)} -> {args.out_dir}")
    return 0


def _classify_rows(dataset, schema, model, template, settings, gateway, backend_id,
                   prompt_kind):
    exemplars = default_exemplars(schema)

    def run(item):
        record = item.record
        if prompt_kind == "classifier":
            prompt = build_classifier_prompt(record, schema, model,
                                             template=template, settings=settings)
        else:
            prompt = build_reasoning_prompt(
                record, schema, model,
                exemplars=exemplars[: settings.reasoning_exemplar_count],
                template=template, settings=settings,
            )
        result = gateway.complete(CompletionRequest(prompt=prompt, backend_id=backend_id))
        return record.id, result.text

    with ThreadPoolExecutor(max_workers=8) as pool:
        completions = list(pool.map(run, dataset))

    rows = []
    failures = []
    for record_id, text in completions:
        try:
            evaluation, _ = parse_evaluation(text, schema)
            rows.append(PredictionRow(id=record_id, confidence=evaluation.confidence,
                                      verdict=evaluation.verdict, evaluation_text=text))
            continue
        except ScamlensError as exc:
            error = exc
        if prompt_kind == "classifier":
            token = text.strip().splitlines()[0].strip().lower() if text.strip() else ""
            if token == LABEL_TOKENS[LABEL_SCAM]:
                rows.append(PredictionRow(id=record_id, confidence=1.0,
                                          verdict="fraudulent", evaluation_text=text))
                continue
            if token == LABEL_TOKENS[LABEL_NOT_SCAM]:
                rows.append(PredictionRow(id=record_id, confidence=0.0,
                                          verdict="legitimate", evaluation_text=text))
                continue
        failures.append((record_id, error))
    return rows, failures


def cmd_classify(args, config) -> int:
    schema = _load_schema(args, config)
    template = _load_template(args, config)
    model = load_bins_file(args.bins)
    dataset = read_labeled_jsonl(args.input)
    if args.limit is not None:
        dataset = dataset[: args.limit]
    backend = build_backend(args.backend, config, schema)
    cache_dir = args.cache_dir or config.get("cache_dir")
    gateway = Gateway([backend], cache_dir=cache_dir)
    settings = _settings_from(args)
    log.info("classify: prompt=%s backend=%s records=%d", args.prompt, args.backend,
             len(dataset))
    rows, failures = _classify_rows(dataset, schema, model, template, settings,
                                    gateway, args.backend, args.prompt)
    write_predictions_jsonl(args.output, rows)
    for record_id, exc in failures:
        print(f"error: {record_id}: {exc.code}: {exc.message}", file=sys.stderr)
    print(f"{len(rows)} predictions -> {args.output}"
          + (f" ({len(failures)} failed)" if failures else ""))
    return 0 if not failures else 1


def _parse_thresholds(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def cmd_evaluate(args, config) -> int:
    schema = _load_schema(args, config)
    model = load_bins_file(args.bins)
    gold = {item.record.id: item for item in read_labeled_jsonl(args.gold)}
    predictions = read_predictions_jsonl(args.pred)
    if not predictions:
        raise EmptyPredictionSet(f"{args.pred} holds no predictions")
    pred_ids = {row.id for row in predictions}
    if pred_ids != set(gold):
        missing = sorted(set(gold) - pred_ids)[:3]
        extra = sorted(pred_ids - set(gold))[:3]
        raise IdMismatch(
            f"prediction ids differ from gold ids (missing {missing}, extra {extra})"
        )

    scored = [
        ScoredPrediction(
            id=row.id, confidence=row.confidence, label=gold[row.id].label,
            segments=default_segments(gold[row.id].record, schema, model),
        )
        for row in predictions
    ]

    reason_counts = None
    quality = None
    if args.annotations:
        annotations = read_annotations_jsonl(args.annotations)
        evaluations = {}
        for row in predictions:
            evaluation, _ = parse_evaluation(row.evaluation_text, schema)
            evaluations[row.id] = evaluation
        records = {rid: item.record for rid, item in gold.items()}
        reason_counts = aggregate_reason_counts(evaluations, annotations, records,
                                                schema, model)
        ratings = [r for a in annotations for r in a.quality_ratings]
        if ratings:
            quality = quality_summary(ratings)
    else:
        print("notice: no annotations given; reasoning metrics omitted")

    thresholds = _parse_thresholds(args.thresholds) if args.thresholds else DEFAULT_THRESHOLDS
    report = build_report(
        scored, thresholds=thresholds, segment_threshold=args.segment_threshold,
        reason_counts=reason_counts, quality=quality,
        corpus=os.path.basename(args.gold), template_version=args.template_version,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    json_path = os.path.join(args.out_dir, "report.json")
    text_path = os.path.join(args.out_dir, "report.txt")
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(report.to_json(), f, indent=2, sort_keys=True)
        f.write("\n")
    text = render_report_text(report)
    with open(text_path, "w", encoding="utf-8") as f:
        f.write(text)
    print(text, end="")
    return 0


def cmd_experiment(args, config) -> int:
    exp = config
    for key in ("corpus",):
        if key not in exp:
            print(f"error: experiment config needs {key!r}", file=sys.stderr)
            return 1
    schema = _load_schema(args, exp)
    template = _load_template(args, exp)
    dataset = read_labeled_jsonl(exp["corpus"])
    limit = exp.get("limit")
    if limit is not None:
        dataset = dataset[:limit]
    ratios = tuple(exp.get("ratios", (0.7, 0.15, 0.15)))
    seed = int(exp.get("seed", 0))
    train, _, test = stratified_split(dataset, SplitSpec(ratios=ratios, seed=seed))
    if exp.get("balance") is not None:
        train = balance(train, float(exp["balance"]), seed=seed)
    model = fit_bins(train, schema)
    backend_id = exp.get("backend", "mock")
    backend = build_backend(backend_id, exp, schema)
    gateway = Gateway([backend], cache_dir=exp.get("cache_dir"))

    ablate = list(exp.get("ablate", ["include_raw_numeric", "include_categorical"]))
    allowed = {"include_raw_numeric", "include_categorical", "include_text_context"}
    bad = set(ablate) - allowed
    if bad:
        print(f"error: unknown ablation flags {sorted(bad)}", file=sys.stderr)
        return 1

    matrix = []
    for combo in itertools.product((True, False), repeat=len(ablate)):
        flags = {name: True for name in allowed}
        flags.update(dict(zip(ablate, combo)))
        settings = PromptSettings(**flags)
        rows, failures = _classify_rows(test, schema, model, template, settings,
                                        gateway, backend_id, exp.get("prompt", "reasoning"))
        if failures:
            print(f"error: {len(failures)} classifications failed", file=sys.stderr)
            return 1
        gold = {item.record.id: item for item in test}
        scored = [
            ScoredPrediction(id=r.id, confidence=r.confidence, label=gold[r.id].label,
                             segments=frozenset())
            for r in rows
        ]
        at_half = confusion_and_prf(scored, 0.5)
        at_strict = confusion_and_prf(scored, 0.9)
        matrix.append({
            "flags": {name: flags[name] for name in sorted(allowed)},
            "n": len(scored),
            "precision_0.5": at_half.precision,
            "recall_0.5": at_half.recall,
            "f1_0.5": at_half.f1,
            "precision_0.9": at_strict.precision,
            "recall_0.9": at_strict.recall,
        })
    output = exp.get("output", "experiment_report.json")
    with open(output, "w", encoding="utf-8") as f:
        json.dump({"rows": matrix, "ablate": ablate, "corpus": exp["corpus"]},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    for row in matrix:
        toggles = " ".join(f"{name}={'on' if row['flags'][name] else 'off'}"
                           for name in ablate)
        print(f"{toggles or 'baseline'}: recall@0.5={row['recall_0.5']} "
              f"precision@0.5={row['precision_0.5']}")
    print(f"{len(matrix)} rows -> {output}")
    return 0


def build_service(args, config):
    """Wire schema, bins, prompts, and gateway into a ReviewService + app."""
    from .service import ReviewService, build_app

    schema = _load_schema(args, config)
    template = _load_template(args, config)
    model = load_bins_file(args.bins)
    backend = build_backend(args.backend, config, schema)
    gateway = Gateway([backend], cache_dir=args.cache_dir or config.get("cache_dir"))
    exemplars = default_exemplars(schema)
    settings = PromptSettings()

    def completion_fn(record, backend_id=None):
        prompt = build_reasoning_prompt(record, schema, model, exemplars=exemplars,
                                        template=template, settings=settings)
        result = gateway.complete(CompletionRequest(prompt=prompt,
                                                    backend_id=backend_id or args.backend))
        return result.text

    service = ReviewService(
        args.events, schema, completion_fn=completion_fn, model=model,
        lease_seconds=args.lease_seconds, template_version=template.version,
    )
    app = build_app(service)
    console_dir = getattr(args, "console", None)
    if console_dir:
        from starlette.staticfiles import StaticFiles

        app.mount("/console", StaticFiles(directory=console_dir, html=True),
                  name="console")
    return service, app


def cmd_serve(args, config) -> int:
    import uvicorn

    service, app = build_service(args, config)
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    except SystemExit as exc:
        return 1 if exc.code else 0
    finally:
        service.close()
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="scamlens", description=__doc__)
    parser.add_argument("--config", default=None,
                        help=f"tool config JSON (default {DEFAULT_CONFIG_PATH} if present)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic corpus with planted outcomes")
    p.add_argument("--output", required=True)
    p.add_argument("--counts", default="150,350,400,100",
                   help="tp,fp,tn,fn cell counts")
    p.add_argument("--seed", type=int, default=11)
    p.add_argument("--schema")
    p.add_argument("--oracle-config", help="also write a config wiring the planted weights")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ingest", help="validate a corpus file")
    p.add_argument("--input", required=True)
    p.add_argument("--schema")
    p.add_argument("--output", help="write accepted records here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("prepare", help="split the corpus and fit bucket boundaries")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ratios", default="0.7,0.15,0.15")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--balance", type=float, default=None,
                   help="resample the train split to this scam fraction")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--schema")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("classify", help="run a split through a backend")
    p.add_argument("--input", required=True, help="split file from prepare")
    p.add_argument("--bins", required=True)
    p.add_argument("--backend", default="mock")
    p.add_argument("--prompt", choices=("classifier", "reasoning"), default="reasoning")
    p.add_argument("--output", required=True)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--schema")
    p.add_argument("--template")
    p.add_argument("--cache-dir")
    p.add_argument("--no-raw-numeric", dest="raw_numeric", action="store_false")
    p.add_argument("--no-categorical", dest="categorical", action="store_false")
    p.add_argument("--no-text-context", dest="text_context", action="store_false")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="score predictions against gold labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--bins", required=True)
    p.add_argument("--annotations")
    p.add_argument("--thresholds", help="comma-separated grid; must cover 0.5 and 0.9")
    p.add_argument("--segment-threshold", type=float, default=0.9)
    p.add_argument("--template-version", default="unknown")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--schema")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="ablation matrix over serialization flags")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("serve", help="run the review service")
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--backend", default="mock")
    p.add_argument("--events", required=True, help="event log path")
    p.add_argument("--bins", required=True)
    p.add_argument("--lease-seconds", type=float, default=1800.0)
    p.add_argument("--schema")
    p.add_argument("--template")
    p.add_argument("--cache-dir")
    p.add_argument("--console",
                   help="directory with the review console bundle, served at /console/")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    config = None
    try:
        config = load_config(args.config)
        return args.func(args, config)
    except ScamlensError as exc:
        print(f"error: {exc.code}: {exc.message}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
