"""Command-line entry point: ``zsnmt <subcommand> [options]``.

Every subcommand accepts ``--config FILE`` (``key = value`` lines whose keys
are option names); explicit flags override the file. Each run that writes
files also writes a manifest next to them.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from .errors import ConfigError, NMTError, UsageError
from .runconfig import default_seed, read_config, write_manifest

log = logging.getLogger("zsnmt")


def _csv(text: str) -> list[str]:
    return [t for t in text.split(",") if t]


def manifest_path(args) -> Path | None:
    """Where a run's manifest goes; ``None`` for runs without file outputs."""
    if args.command == "param-count":
        return None
    if args.command == "translate":
        return Path(args.output + ".manifest.txt") if args.output else None
    if args.command == "build-vocab":
        return Path(args.out + ".manifest.txt")
    return Path(args.out) / "manifest.txt"


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------
def cmd_sample_corpus(args) -> dict:
    from .corpus import sample_corpus_dir
    stats = sample_corpus_dir(args.raw, args.out, args.cap_train, args.n_valid, args.n_test, args.seed, args.pivot)
    print(stats.report(), end="")
    return {"filtered": stats.filtered, "dropped": ",".join(stats.dropped), **stats.coverage()}


def cmd_gen_synthetic(args) -> dict:
    from .synthetic import generate_synthetic_suite
    suite = generate_synthetic_suite(args.k, args.sentences, (args.min_len, args.max_len), args.seed,
                                     args.concepts, args.n_valid, args.n_test, not args.no_reorder, args.grammar)
    suite.write(args.out)
    print(f"wrote {len(suite.pairs)} English-centric pairs and {len(suite.zero_shot)} zero-shot test pairs to {args.out}")
    return {"languages": ",".join(suite.languages)}


def _languages_of(data) -> list[str]:
    langs = sorted({l for pair in data.values() for split in pair.values() for l in split})
    if "en" in langs:
        langs.remove("en")
        langs.insert(0, "en")
    return langs


def cmd_build_vocab(args) -> dict:
    from .corpus import load_data_dir
    from .vocab import build_vocab
    data = load_data_dir(args.data)
    corpus = [line for pair in data.values() for lang_lines in pair.get("train", {}).values() for line in lang_lines]
    vocab = build_vocab(corpus, args.size, _languages_of(data), args.mode, args.merges)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    vocab.save(args.out)
    print(f"vocabulary: {len(vocab)} entries, {len(vocab.languages)} languages -> {args.out}")
    return {"entries": len(vocab)}


def cmd_train(args) -> dict:
    from .corpus import load_data_dir
    from .experiment import english_centric_instances
    from .model import ModelConfig, NMTModel
    from .trainer import TrainConfig, Trainer, average_checkpoints
    from .checkpoint import save_checkpoint
    from .vocab import Vocabulary
    vocab = Vocabulary.load(args.vocab)
    data = load_data_dir(args.data)
    instances = english_centric_instances(data, vocab)
    if not instances:
        raise ConfigError(f"no English-centric training data under {args.data}")
    config = ModelConfig(len(vocab), vocab.languages, vocab.tag_ids, d_model=args.d, d_ff=args.d_ff, heads=args.heads,
                         layers=args.layers, use_laln=args.laln, use_lalt=args.lalt, dropout=args.dropout,
                         attention_dropout=args.dropout)
    tcfg = TrainConfig(max_steps=args.steps, batch_tokens=args.batch_tokens, warmup=args.warmup,
                       lr_scale=args.lr_scale, label_smoothing=args.label_smoothing,
                       checkpoint_every=args.checkpoint_every, keep_checkpoints=args.average, seed=args.seed)
    trainer = Trainer(NMTModel(config, seed=args.seed), tcfg, args.out)
    losses = trainer.train(instances)
    if not trainer.checkpoints or trainer.checkpoints[-1].name != f"ckpt.{trainer.opt.step}.bin":
        trainer.save(Path(args.out) / f"ckpt.{trainer.opt.step}.bin")
    final = average_checkpoints(trainer.checkpoints[-args.average:])
    final.tensors.update(trainer.opt.state_arrays())
    final.step = trainer.opt.step
    save_checkpoint(Path(args.out) / "model.bin", final)
    print(f"trained {trainer.opt.step} steps, final loss {losses[-1]:.4f}; averaged "
          f"{min(args.average, len(trainer.checkpoints))} checkpoints -> {Path(args.out) / 'model.bin'}")
    return {"steps": trainer.opt.step, "final_loss": round(losses[-1], 6)}


def _load_model(path, dtype=None):
    from .checkpoint import load_checkpoint
    from .trainer import model_from_checkpoint
    ckpt = load_checkpoint(path)
    return ckpt, model_from_checkpoint(ckpt, dtype)


def _test_sets(data, split="test", limit=None):
    from .experiment import test_directions
    return test_directions(data, split=split, limit=limit)


def _detector(kind, data):
    from .experiment import make_detector
    by_lang: dict[str, list[str]] = {}
    for pair in data.values():
        for split in pair.values():
            for lang, lines in split.items():
                by_lang.setdefault(lang, []).extend(lines)
    return make_detector(kind, by_lang)


def cmd_finetune_robt(args) -> dict:
    from .corpus import load_data_dir
    from .evaluation import EvalReport
    from .experiment import english_centric_instances, evaluate_directions, write_curve
    from .robt import RobtConfig, robt_finetune
    from .trainer import TrainConfig, Trainer
    from .vocab import Vocabulary
    vocab = Vocabulary.load(args.vocab)
    ckpt, model = _load_model(args.checkpoint)
    data = load_data_dir(args.data)
    instances = english_centric_instances(data, vocab)
    tcfg = TrainConfig(max_steps=args.steps, warmup=args.warmup, lr_scale=args.lr_scale, seed=args.seed)
    trainer = Trainer(model, tcfg, args.out)
    trainer.opt.load_arrays(ckpt.tensors, ckpt.step)
    langs = None
    if args.languages:
        langs = tuple(vocab.lang_index(l) for l in _csv(args.languages))
    sets, zero = _test_sets(data, args.eval_split, args.eval_sentences)
    evaluate = None
    if zero:
        detector = _detector("vocab", data)
        subset = {k: sets[k] for k in zero}

        def evaluate(m):
            rep: EvalReport = evaluate_directions(m, vocab, subset, zero, detector, greedy=True)
            return {"acc_zero": rep.acc_zero, "bleu_zero": rep.bleu_zero}
    rcfg = RobtConfig(args.steps, args.batch, langs, args.eval_every, args.patience, args.min_improvement, args.seed)
    run = robt_finetune(trainer, instances, rcfg, evaluate, Path(args.out) / "robt_log.jsonl")
    if run.curve:
        write_curve(Path(args.out) / "curve.tsv", run.curve)
    path = trainer.save(Path(args.out) / "model.bin")
    print(f"ROBT: {run.steps} steps, converged={run.converged} -> {path}")
    return {"steps": run.steps, "converged": run.converged}


def _beam_cfg(args):
    from .decoding import BeamConfig
    return BeamConfig(args.beam, args.alpha, args.max_len_a, args.max_len_b)


def cmd_translate(args) -> dict:
    from .decoding import pivot_translate, translate
    from .vocab import Vocabulary
    vocab = Vocabulary.load(args.vocab)
    _, model = _load_model(args.checkpoint)
    vocab.lang_index(args.to)
    text = Path(args.input).read_text(encoding="utf-8") if args.input != "-" else sys.stdin.read()
    lines = text.splitlines()
    sources = [vocab.encode(l) for l in lines]
    cfg = _beam_cfg(args)
    greedy = args.greedy or args.beam == 1
    if args.pivot:
        if not args.source_lang:
            raise UsageError("--pivot needs --from")
        ids = pivot_translate(model, sources, args.source_lang, args.to, cfg, pivot=args.pivot, greedy=greedy)
    else:
        ids = translate(model, sources, [args.to], cfg, greedy=greedy)
    out = "".join(vocab.decode(h) + "\n" for h in ids)
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(out, encoding="utf-8")
    else:
        sys.stdout.write(out)
    return {"sentences": len(lines)}


def cmd_evaluate(args) -> dict:
    from .corpus import load_data_dir
    from .evaluation import DirectionResult, EvalReport
    from .experiment import evaluate_directions
    from .vocab import Vocabulary
    vocab = Vocabulary.load(args.vocab)
    _, model = _load_model(args.checkpoint)
    data = load_data_dir(args.data)
    sets, zero = _test_sets(data, args.split, args.limit)
    if not sets:
        raise ConfigError(f"no {args.split} split under {args.data}")
    detector = _detector(args.detector, data)
    report = evaluate_directions(model, vocab, sets, zero, detector, _beam_cfg(args), args.greedy or args.beam == 1,
                                 pivot_via=args.pivot, label=args.label, tokenize=args.tokenize)
    reference = None
    if args.reference:
        import json
        ref = json.loads(Path(args.reference).read_text(encoding="utf-8"))
        reference = EvalReport([DirectionResult(**d) for d in ref["directions"]], ref["zero_shot"], ref["label"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.to_records(reference), encoding="utf-8")
    (out / "table.txt").write_text(report.table(), encoding="utf-8")
    import json
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(report.table(), end="")
    return {k: v for k, v in report.aggregates().items() if v is not None}


def cmd_param_count(args) -> dict:
    from .model import ModelConfig, param_count
    langs = tuple(f"l{i}" for i in range(args.languages))
    tags = tuple(range(4, 4 + args.languages))
    def count(laln, lalt):
        cfg = ModelConfig(args.vocab_size, langs, tags, d_model=args.d, d_ff=args.d_ff, heads=args.heads,
                          layers=args.layers, use_laln=laln, use_lalt=lalt)
        return param_count(cfg)
    chosen = count(args.laln, args.lalt)
    base = count(False, False)
    print(f"configuration: d={args.d} d_ff={args.d_ff} layers={args.layers} languages={args.languages} "
          f"vocab={args.vocab_size} laln={args.laln} lalt={args.lalt}")
    for name, value in chosen.items():
        print(f"  {name:<20} {value:>14,}")
    lalt = args.languages * args.d * args.d
    laln_extra = count(True, False)["laln"] - base["layer_norm"]
    print("accounting:")
    print(f"  lalt component = |T|*d*d = {args.languages}*{args.d}*{args.d} = {lalt:,}")
    print(f"  laln extra over shared LN = 2*d*(|T|-1)*{5 * args.layers} sites = {laln_extra:,}")
    lo, hi = 99, 126
    delta = (hi - lo) * 1_000_000
    print(f"  reported totals {lo}M -> {hi}M give a printed delta of {delta:,}; "
          f"residual vs lalt = {delta - lalt:,}")
    print(f"  each total is rounded to the nearest 1M, so the true delta lies in ({delta - 1_000_000:,}, "
          f"{delta + 1_000_000:,}); lalt {'is' if delta - 1_000_000 < lalt < delta + 1_000_000 else 'is NOT'} "
          f"inside, residual explained by rounding")
    print(f"  adding laln on top (126M -> 129M) adds {laln_extra:,} (~{laln_extra / 1e6:.1f}M), consistent with +3M")
    return {"total": chosen["total"], "lalt": chosen.get("lalt", 0)}


COMMANDS = {
    "sample-corpus": cmd_sample_corpus,
    "gen-synthetic": cmd_gen_synthetic,
    "build-vocab": cmd_build_vocab,
    "train": cmd_train,
    "finetune-robt": cmd_finetune_robt,
    "translate": cmd_translate,
    "evaluate": cmd_evaluate,
    "param-count": cmd_param_count,
}


class _Parser(argparse.ArgumentParser):
    """Raises UsageError instead of exiting; required options may come from ``--config``."""

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.required_dests: list[str] = []

    def add_argument(self, *a, **kw):
        required = kw.pop("required", False)
        action = super().add_argument(*a, **kw)
        if required:
            self.required_dests.append(action.dest)
        return action

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _decoding_flags(p):
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--alpha", type=float, default=0.6, help="length penalty exponent")
    p.add_argument("--max-len-a", type=float, default=2.0)
    p.add_argument("--max-len-b", type=int, default=10)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="zsnmt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    seed = default_seed()

    def add(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="key = value file; flags override it")
        p.add_argument("--seed", type=int, default=seed)
        return p

    p = add("sample-corpus", "sample train/valid/test splits from raw <pair>.<lang> files")
    p.add_argument("--raw", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cap-train", type=int, default=1_000_000)
    p.add_argument("--n-valid", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=2000)
    p.add_argument("--pivot", default="en")

    p = add("gen-synthetic", "generate a synthetic English-centric suite")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=6, help="languages including English")
    p.add_argument("--sentences", type=int, default=5000)
    p.add_argument("--min-len", type=int, default=4)
    p.add_argument("--max-len", type=int, default=12)
    p.add_argument("--concepts", type=int, default=80)
    p.add_argument("--n-valid", type=int, default=200)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--no-reorder", action="store_true")
    p.add_argument("--grammar", action="store_true", help="draw concept sequences from a shared Markov grammar")

    p = add("build-vocab", "build a joint vocabulary from a data directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--mode", choices=("word", "bpe"), default="word")
    p.add_argument("--merges", type=int, default=0)

    p = add("train", "train a multilingual model")
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--batch-tokens", type=int, default=2000)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--d-ff", type=int, default=256)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--laln", action="store_true")
    p.add_argument("--lalt", action="store_true")
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--lr-scale", type=float, default=1.0)
    p.add_argument("--warmup", type=int, default=500)
    p.add_argument("--label-smoothing", type=float, default=0.1)
    p.add_argument("--checkpoint-every", type=int, default=100)
    p.add_argument("--average", type=int, default=5, help="average the last N checkpoints")

    p = add("finetune-robt", "finetune with random online backtranslation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=32, help="sampled instances per step (trains on twice this)")
    p.add_argument("--languages", default="", help="comma-separated ROBT languages (default: all)")
    p.add_argument("--eval-every", type=int, default=50)
    p.add_argument("--eval-split", default="test")
    p.add_argument("--eval-sentences", type=int, default=25)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--min-improvement", type=float, default=0.005)
    p.add_argument("--warmup", type=int, default=500)
    p.add_argument("--lr-scale", type=float, default=1.0)

    p = add("translate", "translate sentences from a file or stdin")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--to", required=True, help="target language")
    p.add_argument("--from", dest="source_lang", default=None)
    p.add_argument("--pivot", default=None, help="translate via this language (needs --from)")
    p.add_argument("--input", default="-")
    p.add_argument("--output", default=None)
    _decoding_flags(p)

    p = add("evaluate", "score a model on every direction of a data directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--detector", choices=("vocab", "char"), default="vocab")
    p.add_argument("--tokenize", choices=("none", "13a"), default="none")
    p.add_argument("--pivot", default=None, help="route zero-shot directions through this language")
    p.add_argument("--reference", default=None, help="report.json of a reference system for the win ratio")
    p.add_argument("--label", default="")
    _decoding_flags(p)

    p = add("param-count", "print per-component parameter counts")
    p.add_argument("--d", type=int, default=512)
    p.add_argument("--d-ff", type=int, default=2048)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--layers", type=int, default=6)
    p.add_argument("--languages", type=int, default=100)
    p.add_argument("--vocab-size", type=int, default=64000)
    p.add_argument("--laln", action="store_true")
    p.add_argument("--lalt", action="store_true")
    return parser


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    if getattr(args, "config", None):
        values = read_config(args.config)
        if "subcommand" in values:
            # a run manifest: replay its resolved configuration
            if values["subcommand"] != args.command:
                raise ConfigError(f"{args.config} is a manifest of '{values['subcommand']}', not '{args.command}'")
            values = {k[len("config."):]: v for k, v in values.items() if k.startswith("config.")}
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown keys in {args.config}: {', '.join(unknown)}")
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    missing = [d for d in sub.required_dests if getattr(args, d) is None]
    if missing:
        raise UsageError(f"{args.command}: missing required option(s) "
                         + ", ".join("--" + d.replace("_", "-") for d in missing))
    if getattr(args, "beam", 1) < 1:
        raise UsageError("--beam must be >= 1")
    return args


def run(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except NMTError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        result = COMMANDS[args.command](args)
        path = manifest_path(args)
        if path is not None:
            config = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
            write_manifest(path, args.command, config, args.seed, args.config, result, argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except (NMTError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
