"""Command-line interface: ``citeintent <subcommand> [options]``.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 model error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import CiteIntentError, ConfigError, DataError

log = logging.getLogger("citeintent")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _global_flags(parser, suppress: bool):
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    parser.add_argument("--config", help="YAML/JSON run config", **kw)
    parser.add_argument("--seed", type=int, help="single seed (overrides train.seeds)", **kw)
    parser.add_argument("--out", help="output file or directory", **kw)
    parser.add_argument("--mlm", help="mock | toy-bow | hf:<name> | checkpoint directory", **kw)
    parser.add_argument("--schema", help="acl_arc | scicite", **kw)
    parser.add_argument("--json-errors", action="store_true", help="print errors as JSON on stderr", **kw)
    parser.add_argument("-v", "--verbose", action="count", help="more logging", **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="citeintent", description="Prompt-based citation intent classification")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest-corpus", parents=[common], help="build per-section word corpora")
    p.add_argument("--input", required=True, help="parsed-paper JSONL ('-' for stdin)")
    p.add_argument("--quota", type=int, default=100_000, help="words per section")
    p.add_argument("--field-of-study", help="keep only papers tagged with this field")
    p.add_argument("--aliases", help="JSON {section: [headings]} extending the alias table")
    p.set_defaults(func=cmd_ingest_corpus)

    p = sub.add_parser("build-verbalizer", parents=[common], help="expand anchors into label words")
    p.add_argument("--corpus", help="corpus archive directory")
    p.add_argument("--embeddings", help="word vectors file (text or .bin)")
    p.add_argument("--k", type=int, help="neighbours per (anchor, section) pair")
    p.add_argument("--anchors", help="JSON {label: [anchor words]}")
    p.add_argument("--section-map", help="JSON {label: [sections]}")
    p.add_argument("--vectors-limit", type=int, help="read only the first N vectors")
    p.set_defaults(func=cmd_build_verbalizer)

    p = sub.add_parser("refine-verbalizer", parents=[common], help="frequency/relevance refinement")
    p.add_argument("--verbalizer", help="input verbalizer JSON")
    p.add_argument("--train", help="train split providing unlabelled support texts")
    p.add_argument("--frequency-quantile", type=float)
    p.add_argument("--relevance-threshold", type=float)
    p.add_argument("--min-words-per-label", type=int)
    p.add_argument("--support-size", type=int)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("train", parents=[common], help="fine-tune model and verbalizer weights")
    p.add_argument("--verbalizer")
    p.add_argument("--train")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--k", type=int, help="train on a k-shot sample")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="seed-averaged experiment run")
    p.add_argument("--verbalizer")
    p.add_argument("--train")
    p.add_argument("--test")
    p.add_argument("--regime", choices=["supervised", "k_shot", "zero_shot"])
    p.add_argument("--k", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seeds", help="comma-separated seeds")
    cal = p.add_mutually_exclusive_group()
    cal.add_argument("--calibrate", dest="calibrate", action="store_true", default=None)
    cal.add_argument("--no-calibrate", dest="calibrate", action="store_false")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", parents=[common], help="label citation sentences")
    p.add_argument("--verbalizer")
    p.add_argument("--input", default="-", help="one sentence per line ('-' for stdin)")
    p.add_argument("--priors", help="priors JSON from refine-verbalizer, enables calibration")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", parents=[common], help="render a report JSON as a table and CSV")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_report)
    return parser


_PATH_KEYS = {"out", "verbalizer", "data.train", "data.dev", "data.test", "build.corpus", "build.embeddings",
              "build.anchors", "build.section_map"}


def _config(args, **extra):
    from .config import load_config

    overrides = {
        "mlm": getattr(args, "mlm", None),
        "schema": getattr(args, "schema", None),
        "out": getattr(args, "out", None),
    }
    if getattr(args, "seed", None) is not None:
        overrides["train.seeds"] = [args.seed]
    overrides.update(extra)
    # flag paths are relative to the working directory, config-file paths to the config file
    for key, value in overrides.items():
        if value is not None and key in _PATH_KEYS:
            overrides[key] = str(Path(value).absolute())
    if overrides.get("mlm") and Path(overrides["mlm"]).exists():
        overrides["mlm"] = str(Path(overrides["mlm"]).absolute())
    return load_config(getattr(args, "config", None), **overrides)


def _out(cfg, default: str) -> Path:
    return cfg.resolve(cfg.out) if cfg.out else Path(default)


def _seed(cfg) -> int:
    return cfg.train.seeds[0]


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_ingest_corpus(args) -> int:
    from .corpus import SectionAliases, ingest_sections, iter_jsonl

    cfg = _config(args)
    if args.quota <= 0:
        raise ConfigError("--quota must be a positive integer")
    aliases = None
    if args.aliases:
        aliases = SectionAliases().extend(json.loads(Path(args.aliases).read_text()))
    if args.input == "-":
        stream = (line for line in sys.stdin if line.strip())
    else:
        if not Path(args.input).is_file():
            raise DataError(f"input {args.input} does not exist")
        stream = iter_jsonl(args.input)
    corpus = ingest_sections(stream, args.quota, field_of_study=args.field_of_study, aliases=aliases)
    corpus.meta.update({
        "input": args.input, "field_of_study": args.field_of_study, "config": cfg.to_dict(),
    })
    out = corpus.save(_out(cfg, "corpus"))
    for section, n in corpus.fill_counts().items():
        print(f"{section:<14} {n:>9} / {corpus.quota}")
    print(f"papers read: {corpus.papers_read}, skipped: {corpus.records_skipped}, archive: {out}")
    return 0


def _load_json_arg(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None


def cmd_build_verbalizer(args) -> int:
    from .corpus import LabelSectionMap, SectionCorpus, default_section_map
    from .dataset_io import get_schema
    from .embeddings import load_provider
    from .verbalizer import AnchorSet, build_verbalizer, default_anchors, save_verbalizer

    cfg = _config(args, **{"build.corpus": args.corpus, "build.embeddings": args.embeddings,
                           "build.k": args.k, "build.anchors": args.anchors,
                           "build.section_map": args.section_map})
    cfg.require_paths("build.corpus", "build.embeddings")
    schema = get_schema(cfg.schema)
    corpus = SectionCorpus.load(cfg.resolve(cfg.build["corpus"]))
    provider = load_provider(str(cfg.resolve(cfg.build["embeddings"])), limit=args.vectors_limit)
    anchors = (AnchorSet({k: tuple(v) for k, v in _load_json_arg(cfg.resolve(cfg.build["anchors"])).items()})
               if cfg.build.get("anchors") else default_anchors(schema))
    smap = (LabelSectionMap({k: tuple(v) for k, v in _load_json_arg(cfg.resolve(cfg.build["section_map"])).items()})
            if cfg.build.get("section_map") else default_section_map(schema))
    verb = build_verbalizer(schema, anchors, smap, corpus, provider, int(cfg.build.get("k") or 100),
                            extra_manifest={"config": cfg.to_dict()})
    out = _out(cfg, "verbalizer.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_verbalizer(verb, out)
    for label, n in verb.set_sizes().items():
        print(f"{label:<18} {n:>6} words")
    print(f"verbalizer: {out}")
    return 0


def _mlm_for(cfg, verbalizer, seed):
    from .mlm import load_mlm

    return load_mlm(cfg.mlm_identity(), verbalizer.all_words(), seed=seed, max_length=cfg.train.max_sequence_length)


def cmd_refine(args) -> int:
    from .dataset_io import get_schema, load_dataset
    from .experiment import support_texts
    from .prompt import PromptTemplate
    from .refine import refine_pipeline
    from .verbalizer import load_verbalizer, save_verbalizer

    cfg = _config(args, **{
        "verbalizer": args.verbalizer, "data.train": args.train,
        "refinement.frequency_quantile": args.frequency_quantile,
        "refinement.relevance_threshold": args.relevance_threshold,
        "refinement.min_words_per_label": args.min_words_per_label,
        "refinement.support_size": args.support_size,
    })
    cfg.require_paths("verbalizer", "data.train")
    schema = get_schema(cfg.schema)
    verb = load_verbalizer(cfg.resolve(cfg.verbalizer))
    train = load_dataset(cfg.data_path("train"), schema, "train")
    seed = _seed(cfg)
    mlm = _mlm_for(cfg, verb, seed)
    support = support_texts(train, cfg.refinement.support_size, seed)
    refined, priors = refine_pipeline(verb, mlm, PromptTemplate.from_pattern(cfg.template), support,
                                      cfg.refinement, cfg.train.max_sequence_length)
    refined.manifest["config"] = cfg.to_dict()
    out = _out(cfg, "verbalizer.refined.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_verbalizer(refined, out)
    priors_path = out.with_name(out.stem + ".priors.json")
    _write_json(priors_path, {"tool_version": __version__, "config": cfg.to_dict(), "mlm": mlm.identity,
                              **priors.to_dict()})
    for label in schema.labels:
        print(f"{label:<18} {len(verb.entries[label]):>6} -> {len(refined.entries[label]):>6} words")
    print(f"verbalizer: {out}\npriors: {priors_path}")
    return 0


def cmd_train(args) -> int:
    from .dataset_io import get_schema, load_dataset, sample_few_shot
    from .prompt import PromptTemplate
    from .training import fine_tune
    from .verbalizer import load_verbalizer, save_verbalizer

    regime = {"train.regime": "k_shot", "train.k": args.k} if args.k else {}
    cfg = _config(args, **{"verbalizer": args.verbalizer, "data.train": args.train, "train.epochs": args.epochs,
                           "train.batch_size": args.batch_size, "train.learning_rate": args.learning_rate,
                           **regime})
    cfg.require_paths("verbalizer", "data.train")
    if cfg.train.regime == "zero_shot":
        raise ConfigError("the zero-shot regime has nothing to train")
    schema = get_schema(cfg.schema)
    verb = load_verbalizer(cfg.resolve(cfg.verbalizer))
    train = load_dataset(cfg.data_path("train"), schema, "train")
    seed = _seed(cfg)
    if cfg.train.regime == "k_shot":
        train = sample_few_shot(train, cfg.train.k, seed)
    mlm = _mlm_for(cfg, verb, seed)
    if cfg.train.epochs == 0:
        print("warning: --epochs 0, model parameters are left unchanged", file=sys.stderr)
    result = fine_tune(mlm, verb, PromptTemplate.from_pattern(cfg.template), train, cfg.train, seed=seed)
    out = _out(cfg, "trained")
    model_dir = result.mlm.save(out / "model")
    trained = result.verbalizer
    trained.manifest["config"] = cfg.to_dict()
    save_verbalizer(trained, out / "verbalizer.json")
    _write_json(out / "train_log.json", {"tool_version": __version__, "config": cfg.to_dict(), "seed": seed,
                                         "n_train": len(train), "epoch_losses": result.epoch_losses,
                                         "model": str(model_dir)})
    for i, loss in enumerate(result.epoch_losses, 1):
        print(f"epoch {i}: loss {loss:.6f}")
    print(f"model: {model_dir}\nverbalizer: {out / 'verbalizer.json'}")
    return 0


def cmd_evaluate(args) -> int:
    from .experiment import run_experiment

    extra = {"verbalizer": args.verbalizer, "data.train": args.train, "data.test": args.test,
             "train.regime": args.regime, "train.k": args.k, "train.epochs": args.epochs,
             "train.calibrate": args.calibrate}
    if args.seeds:
        try:
            extra["train.seeds"] = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
    cfg = _config(args, **extra)
    cfg.require_paths("verbalizer", "data.test")
    report = run_experiment(cfg)
    out = _out(cfg, "report")
    report.write(out)
    sys.stdout.write(report.to_text())
    print(f"report: {out / 'report.json'}")
    return 0


def cmd_predict(args) -> int:
    from .dataset_io import get_schema, normalize_whitespace
    from .classify import classify_batch
    from .prompt import PromptTemplate
    from .refine import PriorEstimate
    from .verbalizer import load_verbalizer

    cfg = _config(args, verbalizer=args.verbalizer)
    cfg.require_paths("verbalizer")
    schema = get_schema(cfg.schema)
    verb = load_verbalizer(cfg.resolve(cfg.verbalizer))
    if verb.schema.labels != schema.labels:
        raise DataError(f"verbalizer schema {verb.schema.name!r} does not match {schema.name!r}")
    priors = PriorEstimate.from_dict(_load_json_arg(args.priors)) if args.priors else None
    if args.input == "-":
        lines = sys.stdin.read().splitlines()
    else:
        try:
            lines = Path(args.input).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise DataError(f"cannot read {args.input}: {exc.strerror}") from None
    texts = [normalize_whitespace(t) for t in lines if t.strip()]
    mlm = _mlm_for(cfg, verb, _seed(cfg))
    labels, scores = classify_batch(texts, PromptTemplate.from_pattern(cfg.template), verb, mlm, priors,
                                    cfg.train.max_sequence_length, cfg.train.eval_batch_size)
    rows = [
        json.dumps({"text": t, "label": lab, "scores": dict(zip(schema.labels, map(float, s)))}, ensure_ascii=False)
        for t, lab, s in zip(texts, labels, scores)
    ]
    if cfg.out:
        out = cfg.resolve(cfg.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("".join(r + "\n" for r in rows), encoding="utf-8")
        _write_json(out.with_name(out.name + ".meta.json"),
                    {"tool_version": __version__, "config": cfg.to_dict(), "mlm": mlm.identity,
                     "calibrated": priors is not None})
    else:
        for r in rows:
            print(r)
    return 0


def cmd_report(args) -> int:
    from .experiment import EvalReport

    report = EvalReport.from_dict(_load_json_arg(args.report))
    sys.stdout.write(report.to_text())
    if getattr(args, "out", None):
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(report.to_text())
        (out / "confusion_mean.csv").write_text(report.confusion_csv())
    return 0


def _emit_error(exc: Exception, code: int, as_json: bool) -> None:
    if as_json:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    else:
        print(f"citeintent: error: {exc}", file=sys.stderr)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    as_json = "--json-errors" in argv
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        _emit_error(exc, 2, as_json)
        return 2
    level = logging.WARNING - 10 * min(getattr(args, "verbose", None) or 0, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CiteIntentError as exc:
        _emit_error(exc, exc.exit_code, as_json)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        _emit_error(exc, DataError.exit_code, as_json)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
