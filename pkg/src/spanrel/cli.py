"""Command-line entry points: ``generate``, ``train``, ``extract`` and ``eval``.

Every command prints its resolved configuration to stderr before doing any
work. Machine-readable results go to stdout (or ``--out``). Exit codes:
0 success, 1 user error (bad arguments, config, data or checkpoint),
2 internal error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from collections import Counter
from pathlib import Path
from typing import List, Optional, Sequence

from .checkpoint import CheckpointError, load_model, save_model
from .config import ConfigurationError, ModelConfig, default_config, desk_config, load_config, to_ini
from .evaluation import DatasetError, evaluate, load_dataset, save_dataset, write_report
from .grammar import GrammarError, default_grammar, generate_corpus, load_grammar
from .model import entity_to_dict, relation_to_dict
from .training import TrainingError, build_model, dataset_loss, label_inventory, train, write_trace

log = logging.getLogger("spanrel")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2
USER_ERRORS = (ConfigurationError, DatasetError, GrammarError, CheckpointError, OSError)
PRESETS = {"desk": desk_config, "pretrained": default_config}


class UsageError(Exception):
    """Bad command-line usage; reported with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with status 2
        raise UsageError(message)


def _echo_config(config: ModelConfig, extra: Optional[dict] = None) -> None:
    print("# resolved configuration", file=sys.stderr)
    for key, value in (extra or {}).items():
        print(f"# {key} = {value}", file=sys.stderr)
    print(to_ini(config).rstrip(), file=sys.stderr)
    print("# end configuration", file=sys.stderr, flush=True)


def _resolve_config(args) -> ModelConfig:
    config = load_config(args.config) if args.config else PRESETS[args.preset]()
    if getattr(args, "seed", None) is not None:
        config.training.seed = args.seed
    if getattr(args, "epochs", None) is not None:
        config.stage1.epochs = config.stage2.epochs = args.epochs
    if getattr(args, "stages", None) is not None:
        config.training.stages = args.stages
    if config.training.stages not in (1, 2):
        raise ConfigurationError("training.stages must be 1 or 2")
    return config.validate()


def _read_labels(inline: Optional[Sequence[str]], path: Optional[str]) -> List[str]:
    labels = list(inline or [])
    if path:
        with open(path, encoding="utf-8") as fh:
            labels += [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    seen = set()
    return [lab for lab in labels if not (lab in seen or seen.add(lab))]


def _read_texts(args) -> List[List[str]]:
    texts = list(args.text or [])
    if args.input == "-":
        texts += [ln.rstrip("\n") for ln in sys.stdin if ln.strip()]
    elif args.input:
        with open(args.input, encoding="utf-8") as fh:
            texts += [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not texts:
        raise UsageError("no input text: pass --text and/or --input")
    return [t.split() for t in texts]


def _open_out(path: Optional[str]):
    return contextlib.nullcontext(sys.stdout) if not path or path == "-" else open(path, "w", encoding="utf-8")


# -- commands ---------------------------------------------------------------------


def cmd_generate(args) -> int:
    if args.size < 1:
        raise UsageError("--size must be >= 1")
    spec = load_grammar(args.grammar) if args.grammar else default_grammar(args.seed)
    _echo_config(default_config(), {"grammar": args.grammar or "built-in", "size": args.size, "seed": args.seed})
    corpus = generate_corpus(spec, args.size, seed=args.seed)
    n = save_dataset(corpus, args.out)
    ents = Counter(lab for ex in corpus for _, _, lab in ex.gold_entities)
    rels = Counter(lab for ex in corpus for _, _, lab in ex.gold_relations)
    summary = {
        "records": n,
        "entities": sum(ents.values()),
        "relations": sum(rels.values()),
        "entity_labels": dict(sorted(ents.items())),
        "relation_labels": dict(sorted(rels.items())),
        "out": str(args.out),
    }
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    config = _resolve_config(args)
    _echo_config(config, {"data": args.data, "stage2_data": args.stage2_data or args.data, "out": args.out})
    stage1 = load_dataset(args.data)
    stage2 = load_dataset(args.stage2_data) if args.stage2_data else stage1
    if not stage1 or not stage2:
        raise DatasetError("training data is empty")
    corpora = [stage1, stage2][: config.training.stages]
    everything = [ex for corpus in corpora for ex in corpus]
    ents, rels = label_inventory(everything)
    if not ents:
        raise DatasetError("training data has no entity annotations")
    if args.dry_run:
        print(json.dumps({"dry_run": True, "examples": [len(c) for c in corpora],
                          "entity_labels": ents, "relation_labels": rels}))
        return EXIT_OK

    model = build_model(config, everything, seed=config.training.seed)
    trace = train(model, corpora, config, entity_labels=ents, relation_labels=rels)
    final_corpus = corpora[-1]
    final_loss = dataset_loss(model, final_corpus, ents, rels)
    out = Path(args.out)
    trace_path = Path(args.trace) if args.trace else out.with_suffix(".trace.csv")
    save_model(model, out, ents, rels, extra={"final_training_loss": final_loss,
                                              "final_training_examples": len(final_corpus),
                                              "seed": config.training.seed})
    write_trace(trace, trace_path)
    print(json.dumps({"checkpoint": str(out), "trace": str(trace_path), "steps": len(trace),
                      "final_training_loss": final_loss}))
    return EXIT_OK


def cmd_extract(args) -> int:
    model, manifest = load_model(args.checkpoint)
    entity_labels = _read_labels(args.entity_label, args.entity_labels_file) or list(manifest["entity_labels"])
    relation_labels = [] if args.no_relations else (
        _read_labels(args.relation_label, args.relation_labels_file) or list(manifest["relation_labels"]))
    if not entity_labels:
        raise UsageError("entity labels must be nonempty")
    threshold = args.threshold
    relation_threshold = args.relation_threshold
    for name, value in (("threshold", threshold), ("relation-threshold", relation_threshold)):
        if not 0.0 < value <= 1.0:
            raise UsageError(f"--{name} must lie in (0, 1]")
    texts = _read_texts(args)
    _echo_config(model.config, {"checkpoint": args.checkpoint, "threshold": threshold,
                                "relation_threshold": relation_threshold, "flat_ner": args.flat_ner,
                                "entity_labels": entity_labels, "relation_labels": relation_labels})
    ents, rels = model.predict(texts, entity_labels, relation_labels, threshold, relation_threshold, args.flat_ner)
    with _open_out(args.out) as fh:
        for i, (words, es, rs) in enumerate(zip(texts, ents, rels)):
            record = {
                "index": i,
                "text": " ".join(words),
                "entities": [entity_to_dict(e, words) for e in es],
                "relations": [relation_to_dict(r, words) for r in rs],
            }
            fh.write(_pretty(record) if args.pretty else json.dumps(record) + "\n")
    return EXIT_OK


def _pretty(record: dict) -> str:
    lines = [f"[{record['index']}] {record['text']}"]
    for e in record["entities"]:
        lines.append(f"  {e['label']:<16} {e['text']:<28} ({e['start']}-{e['end']})  {e['score']:.3f}")
    for r in record["relations"]:
        lines.append(f"  {r['head']['text']} --{r['relation']}--> {r['tail']['text']}  {r['score']:.3f}")
    return "\n".join(lines) + "\n\n"


def cmd_eval(args) -> int:
    model, manifest = load_model(args.checkpoint)
    data = load_dataset(args.data)
    if not data:
        raise DatasetError(f"{args.data}: dataset is empty")
    inv_e, inv_r = label_inventory(data)
    entity_labels = _read_labels(args.entity_label, args.entity_labels_file) or list(manifest["entity_labels"]) or inv_e
    relation_labels = (_read_labels(args.relation_label, args.relation_labels_file)
                       or list(manifest["relation_labels"]) or inv_r)
    inf = model.config.inference
    threshold = inf.entity_threshold if args.threshold is None else args.threshold
    relation_threshold = inf.relation_threshold if args.relation_threshold is None else args.relation_threshold
    for name, value in (("threshold", threshold), ("relation-threshold", relation_threshold)):
        if not 0.0 < value <= 1.0:
            raise UsageError(f"--{name} must lie in (0, 1]")
    _echo_config(model.config, {"checkpoint": args.checkpoint, "data": args.data, "threshold": threshold,
                                "relation_threshold": relation_threshold, "typed": args.typed,
                                "max_words": model.config.encoder.max_sequence_length_words})
    ents, rels = model.predict([ex.tokens for ex in data], entity_labels, relation_labels,
                               threshold, relation_threshold)
    # Gold annotations past the word budget cannot be predicted; they stay as misses.
    report = evaluate(ents, rels, data, typed=args.typed)
    print(report.table(), file=sys.stderr)
    print(json.dumps(report.to_dict(), sort_keys=True))
    if args.report:
        write_report(report, args.report)
    return EXIT_OK


# -- parser -----------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file (overrides --preset)")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk",
                   help="built-in defaults: 'pretrained' (large pretrained-backbone values) or 'desk' (toy encoder)")


def _add_label_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--entity-label", action="append", metavar="LABEL", help="entity type (repeatable)")
    p.add_argument("--entity-labels-file", metavar="PATH", help="one entity type per line")
    p.add_argument("--relation-label", action="append", metavar="LABEL", help="relation type (repeatable)")
    p.add_argument("--relation-labels-file", metavar="PATH", help="one relation type per line")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spanrel", description="Joint entity and relation extraction at desk scale.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="sample a synthetic annotated corpus")
    g.add_argument("--grammar", help="grammar JSON file (default: built-in news grammar)")
    g.add_argument("--size", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model and write a checkpoint plus loss trace")
    _add_config_flags(t)
    t.add_argument("--data", required=True, help="stage-1 dataset (JSONL)")
    t.add_argument("--stage2-data", help="stage-2 dataset (default: --data)")
    t.add_argument("--out", required=True, help="checkpoint path (.npz)")
    t.add_argument("--trace", help="loss trace CSV (default: <out>.trace.csv)")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int, help="override the epoch count of both stages")
    t.add_argument("--stages", type=int, choices=(1, 2), help="override the number of stages")
    t.add_argument("--dry-run", action="store_true", help="validate config and data, then stop")
    t.set_defaults(func=cmd_train)

    x = sub.add_parser("extract", help="extract entities and relations from text")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--text", action="append", help="input text (repeatable)")
    x.add_argument("--input", help="file with one text per line ('-' for stdin)")
    _add_label_flags(x)
    x.add_argument("--no-relations", action="store_true", help="extract entities only")
    x.add_argument("--threshold", type=float, default=0.3, help="entity threshold")
    x.add_argument("--relation-threshold", type=float, default=0.5)
    flat = x.add_mutually_exclusive_group()
    flat.add_argument("--flat-ner", dest="flat_ner", action="store_true", default=True)
    flat.add_argument("--nested", dest="flat_ner", action="store_false")
    x.add_argument("--pretty", action="store_true", help="human-readable output instead of JSONL")
    x.add_argument("--out", help="output file (default: stdout)")
    x.set_defaults(func=cmd_extract)

    e = sub.add_parser("eval", help="score a checkpoint on an annotated dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    _add_label_flags(e)
    e.add_argument("--threshold", type=float)
    e.add_argument("--relation-threshold", type=float)
    e.add_argument("--typed", action="store_true", help="also require head/tail entity types to match")
    e.add_argument("--report", help="write the metrics JSON here as well")
    e.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"spanrel: error: {exc}", file=sys.stderr)
        return EXIT_USER
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"spanrel {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except TrainingError as exc:
        print(f"spanrel {args.command}: training aborted: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except USER_ERRORS as exc:
        print(f"spanrel {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        log.debug("internal error", exc_info=True)
        print(f"spanrel {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
