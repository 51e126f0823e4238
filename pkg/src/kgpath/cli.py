"""Command-line entry point: split, pretrain-conve, train, eval, explain."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .explain import explain
from .kg import InductiveSplit, ParseError, SplitError, Triple, Vocab, load_triples, make_inductive_split
from .reward import ConvE, train_conve
from .search import beam_search
from .training import Checkpoint, evaluate, inference_setup, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 1, 2

logger = logging.getLogger("kgpath")


class DataError(RuntimeError):
    pass


def _require(path: Path | None, what: str) -> Path:
    if path is None:
        raise ConfigError(f"--{what} is required for this command")
    return path


def _config(args) -> RunConfig:
    overrides = {}
    if args.seed is not None:
        overrides["train.seed"] = args.seed
    return load_config(args.config, overrides)


def _load_split(data_dir: Path) -> tuple[InductiveSplit, Vocab]:
    try:
        return InductiveSplit.load(data_dir)
    except FileNotFoundError as exc:
        raise DataError(f"missing split file: {exc.filename}") from exc


def cmd_split(args) -> int:
    cfg = _config(args)
    out = _require(args.data_dir, "data-dir")
    vocab = Vocab()
    try:
        triples = load_triples(_require(args.input, "input"), vocab)
    except FileNotFoundError as exc:
        raise DataError(f"cannot read {exc.filename}") from exc
    split = make_inductive_split(triples, vocab.num_entities, vocab.num_relations,
                                 cfg.train.unseen_fraction, cfg.train.dev_fraction, cfg.train.seed)
    split.save(out, vocab)
    print(json.dumps(split.manifest()["counts"], indent=2))
    return EXIT_OK


def cmd_pretrain_conve(args) -> int:
    cfg = _config(args)
    split, _ = _load_split(_require(args.data_dir, "data-dir"))
    model = train_conve(split.train, cfg.conve, split.num_entities, split.num_base_relations,
                        seed=cfg.train.seed, dev=split.dev)
    model.save(_require(args.checkpoint, "checkpoint"), model.train_hash, cfg.train.seed)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    split, _ = _load_split(_require(args.data_dir, "data-dir"))
    conve = None
    if cfg.train.use_reward_shaping:
        if args.conve is None or not (args.conve / "conve.manifest.json").exists():
            raise ConfigError("reward shaping is enabled but no ConvE checkpoint was found (--conve)")
        conve = ConvE.load(args.conve)
    train(split, cfg, conve, checkpoint_dir=_require(args.checkpoint, "checkpoint"))
    return EXIT_OK


def cmd_eval(args) -> int:
    split, _ = _load_split(_require(args.data_dir, "data-dir"))
    ckpt = Checkpoint.load(_require(args.checkpoint, "checkpoint"))
    if args.seed is not None:
        ckpt.config.train.seed = args.seed
    report = evaluate(split, ckpt, width=args.beam_width)
    text = report.to_json()
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_explain(args) -> int:
    split, vocab = _load_split(_require(args.data_dir, "data-dir"))
    ckpt = Checkpoint.load(_require(args.checkpoint, "checkpoint"))
    if args.seed is not None:
        ckpt.config.train.seed = args.seed
    if args.head not in vocab.entities:
        raise DataError(f"unknown entity {args.head!r}")
    if args.relation not in vocab.relations:
        raise DataError(f"unknown relation {args.relation!r}")
    if args.tail is not None and args.tail not in vocab.entities:
        raise DataError(f"unknown entity {args.tail!r}")
    tail = vocab.entities[args.tail] if args.tail is not None else None
    query = (vocab.entities[args.head], vocab.relations[args.relation], tail)
    agent, env, table = inference_setup(split, ckpt)
    preds = beam_search([query], env, args.beam_width or ckpt.config.train.beam_width,
                        agent=agent, base_table=table)[0]
    text = explain(preds, env.graph.relations, vocab.entity_labels(), vocab.relation_labels(), top=args.top)
    sys.stdout.write(text + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgpath", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None, help="key = value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--data-dir", type=Path, default=None)
        p.add_argument("--checkpoint", type=Path, default=None)
        return p

    p = common(sub.add_parser("split", help="raw triples -> inductive split directory"))
    p.add_argument("--input", type=Path, default=None, help="head<TAB>relation<TAB>tail file")
    p.set_defaults(func=cmd_split)

    p = common(sub.add_parser("pretrain-conve", help="train the reward-shaping scorer"))
    p.set_defaults(func=cmd_pretrain_conve)

    p = common(sub.add_parser("train", help="train the path-finding agent"))
    p.add_argument("--conve", type=Path, default=None, help="ConvE checkpoint directory")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("eval", help="filtered MRR/Hits@k on the test set"))
    p.add_argument("--beam-width", type=int, default=None)
    p.add_argument("--output", type=Path, default=None)
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("explain", help="reasoning paths for one query"))
    p.add_argument("--head", required=True)
    p.add_argument("--relation", required=True)
    p.add_argument("--tail", default=None, help="known answer; hides the queried edge")
    p.add_argument("--top", type=int, default=1)
    p.add_argument("--beam-width", type=int, default=None)
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ParseError, SplitError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
