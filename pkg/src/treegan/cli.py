"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import datasets as ds
from . import discriminator as disc
from . import generator as gen
from . import training as tr
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, resolve
from .earley import ParseFailure, parse_sequence
from .grammar import Grammar, GrammarError, build_mask, load_grammar
from .metrics import evaluate
from .parse_tree import ActionSequence, ReplayError, actions_to_tree, yield_of


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _out(msg: str) -> None:
    print(msg, flush=True)


# ---------------------------------------------------------------------------
# helpers


def _grammar(path) -> Grammar:
    try:
        return load_grammar(path)
    except OSError as e:
        raise DataError(f"cannot read grammar {path}: {e}") from None


def _config(args) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in ("seed", "batch_size", "budget", "lr_gen", "lr_disc")}
    overrides["preset"] = getattr(args, "preset", None)
    return resolve(None, getattr(args, "config", None), overrides)


def _load_sequences(path, g: Grammar) -> list[ActionSequence]:
    """Token corpus (one sequence per line) or parsed JSON-lines corpus."""
    out = []
    text = Path(path).read_text(encoding="utf-8")
    parsed = str(path).endswith(".jsonl")
    for line_no, line in enumerate(text.splitlines(), start=1):
        try:
            out.append(ActionSequence.from_json(line, g) if parsed else parse_sequence(line.split(), g))
        except (ParseFailure, ReplayError, ValueError) as e:
            raise DataError(f"{path}:{line_no}: {e}") from None
    if not out:
        raise DataError(f"{path}: empty corpus")
    return out


def _ckpt_in(path, g: Grammar) -> Checkpoint:
    if path is None:
        return Checkpoint()
    return load_checkpoint(path, g)


def _budget(cfg: RunConfig, ck: Checkpoint, seqs=None) -> int:
    if cfg.budget is not None:
        return cfg.budget
    if "budget" in ck.meta:
        return int(ck.meta["budget"])
    if seqs is None:
        raise DataError("no action budget: pass --budget or use a checkpoint trained on a corpus")
    return gen.default_budget(seqs)


def _logger(path):
    if path is None:
        return _out_record
    fh = open(path, "a", encoding="utf-8")

    def log(rec):
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
        fh.flush()
        _out_record(rec)
    return log


def _out_record(rec: dict) -> None:
    _out(" ".join(f"{k}={v:.5f}" if isinstance(v, float) else f"{k}={v}" for k, v in rec.items()))


# ---------------------------------------------------------------------------
# subcommands


def cmd_grammar_check(args) -> int:
    g = _grammar(args.file)
    s = g.summary()
    _out(f"ok: |V|={s['nonterminals']} |T|={s['terminals']} |P|={s['productions']} L={s['actions']}")
    return 0


def cmd_corpus_gen(args) -> int:
    if args.preset not in ds.PRESETS:
        raise UsageError(f"unknown corpus preset {args.preset!r}; choose from {sorted(ds.PRESETS)}")
    spec = ds.PRESETS[args.preset]
    changes = {"seed": args.seed}
    if args.n_train is not None:
        changes["n_train"] = args.n_train
    if args.n_test is not None:
        changes["n_test"] = args.n_test
    from dataclasses import replace
    spec = replace(spec, **changes)
    data = ds.generate_dataset(spec)
    paths = data.write(args.out)
    _out(f"wrote {len(data.train)} train / {len(data.test)} test lines to {args.out}")
    for k, p in paths.items():
        _out(f"  {k}: {p}")
    return 0


def cmd_corpus_parse(args) -> int:
    g = _grammar(args.grammar)
    seqs = _load_sequences(args.input, g)
    with open(args.out, "w", encoding="utf-8") as fh:
        for s in seqs:
            fh.write(s.to_json() + "\n")
    _out(f"parsed {len(seqs)} lines -> {args.out}")
    return 0


def cmd_pretrain_gen(args) -> int:
    g = _grammar(args.grammar)
    cfg = _config(args)
    ck = _ckpt_in(args.checkpoint, g)
    seqs = _load_sequences(args.train, g)
    rng = ck.rng(cfg.seed) if args.checkpoint else np.random.default_rng(cfg.seed)
    if ck.gen is None:
        ck.gen = gen.GeneratorModel.create(g, cfg.gen_embed, cfg.gen_hidden, rng)
    epochs = args.epochs if args.epochs is not None else cfg.pretrain_epochs
    tr.pretrain_generator(ck.gen, g, seqs, cfg.train_config(), rng, epochs=epochs, log=_logger(args.log))
    ck.meta["budget"] = _budget(cfg, ck, seqs)
    ck.rng_state = rng.bit_generator.state
    save_checkpoint(args.out, g, ck)
    _out(f"saved {args.out}")
    return 0


def cmd_pretrain_disc(args) -> int:
    g = _grammar(args.grammar)
    cfg = _config(args)
    ck = _ckpt_in(args.checkpoint, g)
    seqs = _load_sequences(args.train, g)
    rng = ck.rng(cfg.seed) if args.checkpoint else np.random.default_rng(cfg.seed)
    if ck.disc is None:
        ck.disc = disc.DiscriminatorModel.create(g, cfg.disc_embed, cfg.disc_hidden, rng, cfg.disc_rule_ids)
    trees = [actions_to_tree(s, g) for s in seqs]
    negatives = tr.twisted_negatives(trees, g, rng)
    epochs = args.epochs if args.epochs is not None else cfg.disc_epochs
    tr.pretrain_discriminator(ck.disc, g, trees, negatives, cfg.train_config(), rng, epochs=epochs,
                              log=_logger(args.log))
    ck.meta.setdefault("budget", _budget(cfg, ck, seqs))
    ck.rng_state = rng.bit_generator.state
    save_checkpoint(args.out, g, ck)
    _out(f"saved {args.out}")
    return 0


def cmd_train_adv(args) -> int:
    g = _grammar(args.grammar)
    cfg = _config(args)
    ck = _ckpt_in(args.checkpoint, g)
    seqs = _load_sequences(args.train, g)
    rng = ck.rng(cfg.seed) if args.checkpoint else np.random.default_rng(cfg.seed)
    if ck.gen is None:
        ck.gen = gen.GeneratorModel.create(g, cfg.gen_embed, cfg.gen_hidden, rng)
    if ck.disc is None:
        ck.disc = disc.DiscriminatorModel.create(g, cfg.disc_embed, cfg.disc_hidden, rng, cfg.disc_rule_ids)
    budget = _budget(cfg, ck, seqs)
    state = tr.AdversarialState.from_dict(ck.meta["adv_state"]) if "adv_state" in ck.meta else None
    trees = [actions_to_tree(s, g) for s in seqs]
    _, state = tr.adversarial_train(ck.gen, ck.disc, g, trees, cfg.train_config(), rng, budget, state,
                                    epochs=args.epochs, log=_logger(args.log))
    ck.meta["budget"] = budget
    ck.meta["adv_state"] = state.to_dict()
    ck.epoch = state.epoch
    ck.rng_state = rng.bit_generator.state
    save_checkpoint(args.out, g, ck)
    _out(f"saved {args.out} (epoch {state.epoch}{', converged' if state.converged else ''})")
    return 0


def cmd_generate(args) -> int:
    g = _grammar(args.grammar)
    cfg = _config(args)
    ck = load_checkpoint(args.checkpoint, g)
    if ck.gen is None:
        raise DataError(f"{args.checkpoint} holds no generator")
    budget = _budget(cfg, ck)
    rng = np.random.default_rng(cfg.seed)
    n = args.n if args.n is not None else cfg.n_samples
    mask = build_mask(g)
    with open(args.out, "w", encoding="utf-8") as fh:
        for _ in range(n):
            tree, _ = gen.generate(ck.gen, g, mask, budget, rng)
            fh.write(" ".join(yield_of(tree, g)) + "\n")
    _out(f"wrote {n} samples to {args.out}")
    return 0


def cmd_eval(args) -> int:
    g = _grammar(args.grammar)
    refs = ds.read_corpus(args.refs)
    cands = ds.read_corpus(args.cands)
    schema = ds.Schema.load(args.schema) if args.schema else None
    if not refs or not cands:
        raise DataError("empty reference or candidate file")
    report = evaluate(cands, refs, g, schema)
    _out(report.to_json())
    _out(report.to_table())
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="treegan", description="Grammar-constrained tree generation with adversarial training.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    gp = sub.add_parser("grammar", help="grammar utilities")
    gsub = gp.add_subparsers(dest="action", parser_class=_Parser)
    gsub.required = True
    c = gsub.add_parser("check", help="validate a grammar file")
    c.add_argument("file")
    c.set_defaults(func=cmd_grammar_check)

    cp = sub.add_parser("corpus", help="corpus generation and parsing")
    csub = cp.add_subparsers(dest="action", parser_class=_Parser)
    csub.required = True
    c = csub.add_parser("gen", help="synthesise a dataset")
    c.add_argument("--preset", required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--n-train", type=int)
    c.add_argument("--n-test", type=int)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_corpus_gen)
    c = csub.add_parser("parse", help="parse a token corpus into action sequences (JSON lines)")
    c.add_argument("--grammar", required=True)
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_corpus_parse)

    def training_args(c, checkpoint_required=False):
        c.add_argument("--grammar", required=True)
        c.add_argument("--train", required=True, help="token corpus, or .jsonl parsed corpus")
        c.add_argument("--checkpoint", required=checkpoint_required, help="checkpoint to start from")
        c.add_argument("--out", required=True, help="checkpoint to write")
        c.add_argument("--epochs", type=int)
        c.add_argument("--log", help="append JSON-lines history here")
        common(c)

    def common(c):
        c.add_argument("--config")
        c.add_argument("--preset")
        c.add_argument("--seed", type=int)
        c.add_argument("--batch-size", type=int)
        c.add_argument("--budget", type=int)
        c.add_argument("--lr-gen", type=float)
        c.add_argument("--lr-disc", type=float)

    for name, fn, helptext in (("pretrain-gen", cmd_pretrain_gen, "MLE pre-training of the generator"),
                               ("pretrain-disc", cmd_pretrain_disc, "discriminator pre-training on twisted trees"),
                               ("train-adv", cmd_train_adv, "adversarial training")):
        c = sub.add_parser(name, help=helptext)
        training_args(c)
        c.set_defaults(func=fn)

    c = sub.add_parser("generate", help="sample sequences from a trained generator")
    c.add_argument("--grammar", required=True)
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--n", type=int)
    c.add_argument("--out", required=True)
    common(c)
    c.set_defaults(func=cmd_generate)

    c = sub.add_parser("eval", help="score candidates against references")
    c.add_argument("--grammar", required=True)
    c.add_argument("--refs", required=True)
    c.add_argument("--cands", required=True)
    c.add_argument("--schema")
    c.add_argument("--out")
    c.set_defaults(func=cmd_eval)
    return p


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (DataError, GrammarError, CheckpointError, ParseFailure, ReplayError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
