"""Command-line pipeline: ingest, split, export-sft, manifest, infer, evaluate,
agree, and report subcommands with file artifacts between stages.

Values can come from a config file (--config, INI sections) with explicit
flags taking precedence. Every command logs the SHA-256 of its inputs so runs
are auditable.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import agreement as ag
from . import report as rp
from .config import ConfigError, load_run_config, unescape
from .corpus import (
    ScreeningLabel,
    SplitSpec,
    ingest_corpus,
    partition,
    read_partition_manifest,
    write_corpus,
    write_partition_manifest,
)
from .errors import ScreenKitError
from .inference import (
    ChatCompletionTransport,
    InferenceConfig,
    RecordingTransport,
    ReplayTransport,
    load_ledger,
    run_multi_pass,
)
from .prompts import (
    ChatMarkers,
    PromptTemplate,
    default_template_text,
    emit_training_manifest,
    export_sft_dataset,
    parse_chat,
    read_sft_dataset,
)

log = logging.getLogger("screenkit")


def _sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _log_input(path: str | Path) -> None:
    log.info("input %s sha256=%s", path, _sha256(path)[:16])


def _bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")


def _fill_from_config(args: argparse.Namespace, mapping: dict[str, tuple[str, str, object]]) -> None:
    """Backfill unset args from the config file; flags always win."""
    config = load_run_config(args.config) if args.config else {}
    for attr, (section, key, cast) in mapping.items():
        if getattr(args, attr, None) is None and key in config.get(section, {}):
            setattr(args, attr, cast(config[section][key]))


def _markers(args: argparse.Namespace) -> ChatMarkers:
    config = load_run_config(args.config) if args.config else {}
    chat = config.get("chat", {})
    kwargs = {}
    for field in ("user_open", "assistant_open", "turn_close"):
        if field in chat:
            kwargs[field] = unescape(chat[field])
    return ChatMarkers(**kwargs)


def _temperatures(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise ScreenKitError(f"cannot parse temperatures {text!r}: {exc}") from exc


def cmd_ingest(args: argparse.Namespace) -> int:
    _fill_from_config(args, {"corpus": ("paths", "corpus", str), "out": ("paths", "out", str)})
    if not args.corpus:
        raise ScreenKitError("ingest needs --corpus (or [paths] corpus in the config)")
    _log_input(args.corpus)
    corpus = ingest_corpus(args.corpus, format=args.format)
    flagged = sum(1 for r in corpus if r.abstract_missing)
    log.info(
        "ingested %d records (%d include / %d exclude, inclusion rate %.4f, "
        "%d missing abstracts)",
        len(corpus), corpus.n_include, corpus.n_exclude, corpus.inclusion_rate, flagged,
    )
    if args.out:
        write_corpus(corpus, args.out)
        log.info("wrote normalized corpus %s sha256=%s", args.out, _sha256(args.out)[:16])
    print(
        f"corpus ok: {len(corpus)} records, {corpus.n_include} include, "
        f"{corpus.n_exclude} exclude, inclusion rate {corpus.inclusion_rate:.4f}"
    )
    return 0


def cmd_split(args: argparse.Namespace) -> int:
    _fill_from_config(
        args,
        {
            "corpus": ("paths", "corpus", str),
            "out": ("paths", "manifest", str),
            "train_size": ("split", "train_size", int),
            "seed": ("split", "seed", int),
            "mode": ("split", "mode", str),
            "enrichment_target": ("split", "enrichment_target", float),
        },
    )
    for required in ("corpus", "out", "train_size", "seed"):
        if getattr(args, required) is None:
            raise ScreenKitError(f"split needs --{required.replace('_', '-')}")
    _log_input(args.corpus)
    corpus = ingest_corpus(args.corpus)
    spec = SplitSpec(
        train_size=args.train_size,
        seed=args.seed,
        mode=args.mode or "stratified",
        enrichment_target=args.enrichment_target,
    )
    result = partition(corpus, spec)
    write_partition_manifest(result, spec, args.out)
    log.info("wrote partition manifest %s sha256=%s", args.out, _sha256(args.out)[:16])
    print(
        f"train {result.train_counts.total} "
        f"({result.train_counts.n_exclude} exclude / {result.train_counts.n_include} include), "
        f"test {result.test_counts.total} "
        f"({result.test_counts.n_exclude} exclude / {result.test_counts.n_include} include)"
    )
    return 0


def cmd_export_sft(args: argparse.Namespace) -> int:
    _fill_from_config(
        args,
        {
            "corpus": ("paths", "corpus", str),
            "manifest": ("paths", "manifest", str),
            "template": ("paths", "template", str),
            "criteria": ("paths", "criteria", str),
            "out": ("paths", "sft", str),
        },
    )
    for required in ("corpus", "criteria", "out"):
        if getattr(args, required) is None:
            raise ScreenKitError(f"export-sft needs --{required}")
    _log_input(args.corpus)
    corpus = ingest_corpus(args.corpus)
    if args.template:
        _log_input(args.template)
        template = PromptTemplate.load(args.template, args.criteria)
    else:
        template = PromptTemplate(
            template_text=default_template_text(),
            criteria_text=Path(args.criteria).read_text(encoding="utf-8").strip(),
        )
    markers = _markers(args)

    records = list(corpus.records)
    if args.manifest:
        _log_input(args.manifest)
        manifest = read_partition_manifest(args.manifest)
        wanted = set(manifest.train_ids if args.split == "train" else manifest.test_ids)
        records = [r for r in records if r.id in wanted]

    summary = export_sft_dataset(records, template, markers, args.out)
    log.info("wrote SFT dataset %s sha256=%s", args.out, _sha256(args.out)[:16])
    print(
        f"exported {summary.total} examples "
        f"({summary.n_exclude} exclude / {summary.n_include} include) to {summary.path}"
    )
    return 0


def cmd_manifest(args: argparse.Namespace) -> int:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ScreenKitError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            overrides[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key.strip()] = raw
    manifest, payload = emit_training_manifest(overrides, args.out)
    log.info("wrote training manifest %s sha256=%s", args.out, _sha256(args.out)[:16])
    print(
        f"training manifest: {manifest.base_model}, lr {manifest.learning_rate:g}, "
        f"{manifest.max_steps} steps, effective batch {payload['effective_batch']}"
    )
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    _fill_from_config(
        args,
        {
            "sft": ("paths", "sft", str),
            "out": ("paths", "ledger", str),
            "record": ("paths", "record", str),
            "replay": ("paths", "replay", str),
            "endpoint": ("inference", "endpoint", str),
            "model": ("inference", "model", str),
            "temperatures": ("inference", "temperatures", str),
            "max_new_tokens": ("inference", "max_new_tokens", int),
            "majority_class": ("inference", "majority_class", str),
            "timeout": ("inference", "request_timeout", float),
            "max_retries": ("inference", "max_retries", int),
            "concurrency": ("inference", "concurrency_limit", int),
            "greedy": ("inference", "greedy", _bool),
        },
    )
    if not args.sft:
        raise ScreenKitError("infer needs --sft <dataset.jsonl>")
    if args.record and args.replay:
        raise ScreenKitError("--record and --replay are mutually exclusive")

    _log_input(args.sft)
    markers = _markers(args)
    items = []
    for row in read_sft_dataset(args.sft):
        user_text, _ = parse_chat(row["chat_text"], markers)
        items.append((row["id"], user_text))

    config = InferenceConfig(
        temperatures=_temperatures(args.temperatures) if args.temperatures else (0.1, 0.4, 0.8),
        max_new_tokens=args.max_new_tokens if args.max_new_tokens is not None else 8,
        greedy=bool(args.greedy),
        majority_class=ScreeningLabel.parse(args.majority_class or "exclude"),
        request_timeout=args.timeout if args.timeout is not None else 30.0,
        max_retries=args.max_retries if args.max_retries is not None else 3,
        concurrency_limit=args.concurrency if args.concurrency is not None else 4,
    )

    if args.replay:
        transport = ReplayTransport(args.replay)
    else:
        if not args.endpoint:
            raise ScreenKitError("infer needs --endpoint (or --replay <record file>)")
        transport = ChatCompletionTransport(
            args.endpoint, args.model or "default", timeout=config.request_timeout
        )
        if args.record:
            transport = RecordingTransport(transport, args.record)

    ledger_path = args.resume or args.out
    if not ledger_path:
        raise ScreenKitError("infer needs --out <ledger.jsonl> (or --resume <ledger>)")
    ledger = run_multi_pass(
        items, config, transport, ledger_path=ledger_path, resume=bool(args.resume)
    )
    routes: dict[str, int] = {}
    for record in ledger.records:
        routes[record.parse_route] = routes.get(record.parse_route, 0) + 1
    log.info("wrote ledger %s sha256=%s", ledger_path, _sha256(ledger_path)[:16])
    print(
        f"run {ledger.run_id}: {len(ledger.records)} predictions over "
        f"{len(items)} items x {len(config.temperatures)} temperatures "
        f"(routes: {json.dumps(routes, sort_keys=True)})"
    )
    return 0


def _bootstrap_spec(args: argparse.Namespace) -> ag.BootstrapSpec | None:
    if not args.ci:
        return None
    return ag.BootstrapSpec(
        replicates=args.bootstrap_replicates if args.bootstrap_replicates is not None else 2000,
        seed=args.bootstrap_seed if args.bootstrap_seed is not None else 0,
        confidence=args.confidence if args.confidence is not None else 0.95,
    )


def cmd_evaluate(args: argparse.Namespace) -> int:
    _fill_from_config(
        args,
        {
            "ledger": ("paths", "ledger", str),
            "corpus": ("paths", "corpus", str),
            "out_dir": ("paths", "out_dir", str),
            "ci": ("report", "ci", _bool),
            "figures": ("report", "figures", _bool),
            "bootstrap_replicates": ("bootstrap", "replicates", int),
            "bootstrap_seed": ("bootstrap", "seed", int),
            "confidence": ("bootstrap", "confidence", float),
        },
    )
    for required in ("ledger", "corpus", "out_dir"):
        if getattr(args, required) is None:
            raise ScreenKitError(f"evaluate needs --{required.replace('_', '-')}")
    _log_input(args.ledger)
    _log_input(args.corpus)
    corpus = ingest_corpus(args.corpus)
    ledger = load_ledger(args.ledger)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = rp.build_evaluation_report(corpus, ledger, _bootstrap_spec(args))
    rp.write_report_json(report, out_dir / "report.json")
    text = rp.render_report_text(report)
    (out_dir / "report.txt").write_text(text, encoding="utf-8")
    n_disagreements = rp.write_disagreements_csv(corpus, ledger, out_dir / "disagreements.csv")
    if args.figures is None or args.figures:
        for figure in rp.render_report_figures(report, out_dir):
            log.info("wrote figure %s", figure)
    log.info(
        "wrote report %s sha256=%s (%d disagreement rows)",
        out_dir / "report.json", _sha256(out_dir / "report.json")[:16], n_disagreements,
    )
    print(text)
    return 0


def cmd_agree(args: argparse.Namespace) -> int:
    _fill_from_config(
        args,
        {
            "ratings": ("paths", "ratings", str),
            "ledger": ("paths", "ledger", str),
            "corpus": ("paths", "corpus", str),
            "out_dir": ("paths", "out_dir", str),
            "ci": ("report", "ci", _bool),
            "figures": ("report", "figures", _bool),
            "bootstrap_replicates": ("bootstrap", "replicates", int),
            "bootstrap_seed": ("bootstrap", "seed", int),
            "confidence": ("bootstrap", "confidence", float),
        },
    )
    if args.out_dir is None:
        raise ScreenKitError("agree needs --out-dir")
    if args.ratings:
        _log_input(args.ratings)
        matrix = ag.read_rating_matrix(args.ratings)
    elif args.ledger and args.corpus:
        _log_input(args.ledger)
        _log_input(args.corpus)
        corpus = ingest_corpus(args.corpus)
        ledger = load_ledger(args.ledger)
        items = rp.evaluation_items(corpus, ledger)
        item_ids = [record.id for record in items]
        human = [int(record.human_label) for record in items]
        columns = ledger.decision_columns(item_ids)
        matrix = ag.RatingMatrix.from_columns({"human": human, **columns}, item_ids=item_ids)
    else:
        raise ScreenKitError("agree needs --ratings, or both --ledger and --corpus")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = rp.build_agreement_report(matrix, _bootstrap_spec(args))
    rp.write_report_json(report, out_dir / "agreement.json")
    text = rp.render_agreement_text(report)
    (out_dir / "agreement.txt").write_text(text, encoding="utf-8")
    if args.figures is None or args.figures:
        for figure in rp.render_agreement_figure(report, out_dir):
            log.info("wrote figure %s", figure)
    log.info(
        "wrote agreement report %s sha256=%s",
        out_dir / "agreement.json", _sha256(out_dir / "agreement.json")[:16],
    )
    print(text)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    _fill_from_config(
        args,
        {
            "report": ("paths", "report", str),
            "out_dir": ("paths", "out_dir", str),
            "figures": ("report", "figures", _bool),
        },
    )
    for required in ("report", "out_dir"):
        if getattr(args, required) is None:
            raise ScreenKitError(f"report needs --{required.replace('_', '-')}")
    _log_input(args.report)
    payload = rp.read_report_json(args.report)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if payload["kind"] == rp.REPORT_KIND:
        text = rp.render_report_text(payload)
        (out_dir / "report.txt").write_text(text, encoding="utf-8")
        if args.figures is None or args.figures:
            rp.render_report_figures(payload, out_dir)
    else:
        text = rp.render_agreement_text(payload)
        (out_dir / "agreement.txt").write_text(text, encoding="utf-8")
        if args.figures is None or args.figures:
            rp.render_agreement_figure(payload, out_dir)
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="screenkit",
        description="Screening harness: corpus partitioning, SFT export, "
        "multi-temperature inference, and evaluation reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="INI config file; explicit flags win")

    p = sub.add_parser("ingest", help="validate a corpus file and normalize it")
    common(p)
    p.add_argument("--corpus", help="corpus file (csv or jsonl)")
    p.add_argument("--format", choices=("auto", "csv", "jsonl"), default="auto")
    p.add_argument("--out", help="write the normalized corpus here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="partition a corpus into train/test")
    common(p)
    p.add_argument("--corpus")
    p.add_argument("--train-size", type=int, dest="train_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=("stratified", "enriched"))
    p.add_argument("--enrichment-target", type=float, dest="enrichment_target")
    p.add_argument("--out", help="partition manifest path")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("export-sft", help="write chat-formatted training examples")
    common(p)
    p.add_argument("--corpus")
    p.add_argument("--manifest", help="partition manifest; omit to export the whole corpus")
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--template", help="prompt template file; omit for the built-in default")
    p.add_argument("--criteria", help="inclusion criteria text file")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_sft)

    p = sub.add_parser("manifest", help="emit the training manifest for an external trainer")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a manifest field")
    p.set_defaults(func=cmd_manifest)

    p = sub.add_parser("infer", help="run multi-temperature screening inference")
    common(p)
    p.add_argument("--sft", help="SFT dataset providing ids and prompts")
    p.add_argument("--out", help="ledger output path")
    p.add_argument("--endpoint", help="chat-completion endpoint base URL")
    p.add_argument("--model", help="model name sent to the endpoint")
    p.add_argument("--temperatures", help="comma-separated list, e.g. 0.1,0.4,0.8")
    p.add_argument("--max-new-tokens", type=int, dest="max_new_tokens")
    p.add_argument("--majority-class", dest="majority_class", help="fallback decision")
    p.add_argument("--record", help="record live responses to this replay file")
    p.add_argument("--replay", help="serve responses from this replay file (offline)")
    p.add_argument("--resume", help="continue an interrupted ledger")
    p.add_argument("--timeout", type=float)
    p.add_argument("--max-retries", type=int, dest="max_retries")
    p.add_argument("--concurrency", type=int)
    p.add_argument("--greedy", action="store_const", const=True, help="force temperature 0")
    p.set_defaults(func=cmd_infer)

    def report_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--ci", action="store_const", const=True, help="bootstrap CIs for multi-rater stats")
        p.add_argument("--bootstrap-replicates", type=int, dest="bootstrap_replicates")
        p.add_argument("--bootstrap-seed", type=int, dest="bootstrap_seed")
        p.add_argument("--confidence", type=float)
        figures = p.add_mutually_exclusive_group()
        figures.add_argument("--figures", dest="figures", action="store_const", const=True)
        figures.add_argument("--no-figures", dest="figures", action="store_const", const=False)

    p = sub.add_parser("evaluate", help="score a ledger against human labels")
    common(p)
    p.add_argument("--ledger")
    p.add_argument("--corpus")
    p.add_argument("--out-dir", dest="out_dir")
    report_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("agree", help="agreement statistics from ratings or a ledger")
    common(p)
    p.add_argument("--ratings", help="wide CSV: id column then one column per rater")
    p.add_argument("--ledger")
    p.add_argument("--corpus")
    p.add_argument("--out-dir", dest="out_dir")
    report_flags(p)
    p.set_defaults(func=cmd_agree)

    p = sub.add_parser("report", help="re-render text/figures from a saved report")
    common(p)
    p.add_argument("--report", help="report.json or agreement.json")
    p.add_argument("--out-dir", dest="out_dir")
    figures = p.add_mutually_exclusive_group()
    figures.add_argument("--figures", dest="figures", action="store_const", const=True)
    figures.add_argument("--no-figures", dest="figures", action="store_const", const=False)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScreenKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
