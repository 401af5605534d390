"""Command-line entry point: ``fusedec <subcommand> ...``.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .core import DataError, FusionWeights, NumericError, Vocabulary
from .corpus import corpus_stats, extract_files, load_patterns
from .evaluation import evaluate, format_report, iter_lines, parse_eval_set
from .fusion import DEFAULT_BEAM, DEFAULT_MAX_LEN, IlmContext, compute_ilm_context
from .ngram import DEFAULT_K, DEFAULT_ORDER, NGramLM, train_ngram
from .seq2seq import ToySeq2Seq, TrainConfig, fine_tune, train

log = logging.getLogger("fusedec")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_lines(path) -> list[str]:
    return list(iter_lines(path))


def _write_lines(path, lines) -> None:
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _pairs(model: ToySeq2Seq, src_path, tgt_path, gender_path=None, gender=None):
    src, tgt = _read_lines(src_path), _read_lines(tgt_path)
    if len(src) != len(tgt):
        raise DataError(f"{src_path} has {len(src)} lines but {tgt_path} has {len(tgt)}")
    keep = [True] * len(src)
    if gender is not None:
        if gender_path is None:
            raise UsageError("--gender needs --gender-file")
        labels = _read_lines(gender_path)
        if len(labels) != len(src):
            raise DataError(f"{gender_path} is not line-aligned with {src_path}")
        keep = [lab.strip() == gender for lab in labels]
    return [(model.src_vocab.encode(s), model.tgt_vocab.encode(t)) for s, t, k in zip(src, tgt, keep) if k]


def _train_config(args) -> TrainConfig:
    return TrainConfig(learning_rate=args.lr, epochs=args.epochs, rng_seed=args.seed,
                       grad_clip=args.grad_clip, batch_size=args.batch_size)


def _write_trace(path, trace) -> None:
    if path:
        Path(path).write_text(json.dumps({"epoch_loss": trace}) + "\n", encoding="utf-8")


# -- subcommands ------------------------------------------------------------------


def cmd_gen_task(args) -> None:
    from .synth import SynthTaskConfig, write_task

    cfg = SynthTaskConfig(
        rng_seed=args.seed, n_train=args.n_train, skew_rho=args.skew_rho, voice_match_q=args.voice_match_q,
        lexicon_size=args.lexicon_size, gendered_lexicon=args.gendered_lexicon,
        gendered_slots=args.gendered_slots, n_eval=args.n_eval, n_mono=args.n_mono,
        content_len=args.content_len,
    )
    write_task(cfg, args.out)


def cmd_train_base(args) -> None:
    model = ToySeq2Seq(Vocabulary.load(args.src_vocab), Vocabulary.load(args.tgt_vocab),
                       args.d, args.h, rng_seed=args.seed)
    data = _pairs(model, args.src, args.tgt)
    model, trace = train(model, data, _train_config(args))
    model.save(args.out)
    _write_trace(args.loss_log, trace)


def cmd_fine_tune(args) -> None:
    model = ToySeq2Seq.load(args.model)
    data = _pairs(model, args.src, args.tgt, args.gender_file, args.gender)
    model, trace = fine_tune(model, data, _train_config(args))
    model.save(args.out)
    _write_trace(args.loss_log, trace)


def cmd_train_elm(args) -> None:
    vocab = Vocabulary.load(args.vocab)
    corpus = [vocab.encode(line) for line in iter_lines(args.corpus)]
    train_ngram(corpus, vocab, args.order, args.k).save(args.out)


def cmd_estimate_ilm(args) -> None:
    model = ToySeq2Seq.load(args.model)
    sources = [model.src_vocab.encode(line) for line in iter_lines(args.src) if line.strip()]
    compute_ilm_context(model, sources).save(args.out)


def _decode_setup(args):
    from .tuning import DecodeSetup

    model = ToySeq2Seq.load(args.model)
    ctx = IlmContext.load(args.ilm_context) if args.ilm_context else None
    elm = NGramLM.load(args.elm, model.tgt_vocab) if args.elm else None
    return DecodeSetup(model, ctx, elm, args.beam, args.max_len, args.length_norm, not args.no_fuse_eos)


def cmd_decode(args) -> None:
    w = FusionWeights(args.beta_ilm, args.beta_elm)
    if w.beta_ilm > 0 and not args.ilm_context:
        raise UsageError("--beta-ilm > 0 needs --ilm-context")
    if w.beta_elm > 0 and not args.elm:
        raise UsageError("--beta-elm > 0 needs --elm")
    setup = _decode_setup(args)
    _write_lines(args.output, setup.decode_all(_read_lines(args.input), w))


def cmd_evaluate(args) -> None:
    eval_set = parse_eval_set(args.eval_set)
    report = evaluate(_read_lines(args.hyp), eval_set)
    text = format_report(report)
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.jsonl:
        with open(args.jsonl, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"record": "evaluate", "hyp": str(args.hyp), **report.as_dict()},
                                sort_keys=True) + "\n")


def cmd_tune_betas(args) -> None:
    from .plotting import plot_heatmaps
    from .tuning import cross_validated_tune, heatmap_csv, make_grid, sweep_decode

    if not args.no_ilm and not args.ilm_context:
        raise UsageError("tuning beta_ilm needs --ilm-context (or pass --no-ilm)")
    setup = _decode_setup(args)
    eval_set = parse_eval_set(args.eval_set)
    table = sweep_decode(setup, eval_set, make_grid(args.grid_step, ilm=not args.no_ilm))
    points = table.points(range(len(eval_set)))
    Path(args.csv).write_text(heatmap_csv(points), encoding="utf-8")
    if args.plot:
        plot_heatmaps(points, args.plot)
    records = []
    if args.folds:
        cv = cross_validated_tune(setup, eval_set, args.folds, table=table)
        mean = cv.mean
        stitched = evaluate(cv.hypotheses, eval_set)
        records.append({"record": "folds", "selections": [[w.beta_ilm, w.beta_elm] for w in cv.selections]})
        records.append({"record": "mean_betas", "beta_ilm": mean.beta_ilm, "beta_elm": mean.beta_elm})
        records.append({"record": "stitched", **stitched.as_dict()})
        if args.output:
            _write_lines(args.output, cv.hypotheses)
    if args.report:
        Path(args.report).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records),
                                     encoding="utf-8")


def cmd_extract_corpus(args) -> None:
    patterns = load_patterns(args.patterns)
    with open(args.input, encoding="utf-8") as src, \
            open(args.out_f, "w", encoding="utf-8") as out_f, \
            open(args.out_m, "w", encoding="utf-8") as out_m:
        counts = extract_files(src, patterns, out_f, out_m)
    if args.stats:
        stats = corpus_stats(iter_lines(args.out_f), iter_lines(args.out_m))
        extra = (f"lines\t{counts.lines}\nambiguous\t{counts.ambiguous}\n"
                 f"unmatched\t{counts.unmatched}\n")
        Path(args.stats).write_text(stats.dumps() + extra, encoding="utf-8")


def cmd_run_experiment(args) -> None:
    from .experiment import ExperimentConfig, format_table, run, write_outputs
    from .synth import SynthTaskConfig

    task = SynthTaskConfig(
        rng_seed=args.seed, n_train=args.n_train, skew_rho=args.skew_rho, voice_match_q=args.voice_match_q,
        lexicon_size=args.lexicon_size, gendered_lexicon=args.gendered_lexicon,
        gendered_slots=args.gendered_slots, n_eval=args.n_eval, n_mono=args.n_mono,
        content_len=args.content_len,
    )
    cfg = ExperimentConfig(
        task=task,
        train=TrainConfig(learning_rate=args.lr, epochs=args.epochs, rng_seed=args.seed,
                          grad_clip=args.grad_clip, batch_size=args.batch_size),
        fine_tune=TrainConfig(learning_rate=args.ft_lr, epochs=args.ft_epochs, rng_seed=args.seed,
                              grad_clip=args.grad_clip, batch_size=args.batch_size),
        d=args.d, h=args.h, grid_step=args.grid_step, folds=args.folds, beam=args.beam, max_len=args.max_len,
    )
    result = run(cfg)
    write_outputs(result, args.out, command=" ".join(args.argv))
    sys.stdout.write(format_table(result))


# -- parser -------------------------------------------------------------------------


def _add_task_flags(p) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=10000)
    p.add_argument("--skew-rho", type=float, default=0.8, help="fraction of male-speaker training samples")
    p.add_argument("--voice-match-q", type=float, default=0.85,
                   help="probability that the voice marker matches the speaker gender")
    p.add_argument("--lexicon-size", type=int, default=20)
    p.add_argument("--gendered-lexicon", type=int, default=6)
    p.add_argument("--gendered-slots", type=int, default=2, help="maximum gendered slots per sentence")
    p.add_argument("--n-eval", type=int, default=300)
    p.add_argument("--n-mono", type=int, default=5000)
    p.add_argument("--content-len", type=int, default=14, help="content words per sentence")


def _add_train_flags(p, lr=0.1, epochs=30) -> None:
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grad-clip", type=float, default=5.0)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--loss-log", help="write the per-epoch loss trace as JSON")


def _add_decode_flags(p) -> None:
    p.add_argument("--model", required=True)
    p.add_argument("--ilm-context")
    p.add_argument("--elm")
    p.add_argument("--beam", type=int, default=DEFAULT_BEAM)
    p.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)
    p.add_argument("--length-norm", action="store_true", help="rank finished hypotheses by score per token")
    p.add_argument("--no-fuse-eos", action="store_true", help="score the EOS step with the base model only")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fusedec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-task", help="write a synthetic task (parallel, monolingual, eval sets)")
    _add_task_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_task)

    p = sub.add_parser("train-base", help="train the base encoder-decoder")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--h", type=int, default=32)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_base)

    p = sub.add_parser("fine-tune", help="fine-tune a trained model on one speaker gender")
    p.add_argument("--model", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--gender-file", help="line-aligned F/M speaker labels")
    p.add_argument("--gender", choices=["F", "M"])
    p.add_argument("--out", required=True)
    _add_train_flags(p, lr=0.05, epochs=7)
    p.set_defaults(func=cmd_fine_tune)

    p = sub.add_parser("train-elm", help="train an add-k n-gram external LM")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--order", type=int, default=DEFAULT_ORDER)
    p.add_argument("--k", type=float, default=DEFAULT_K)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_elm)

    p = sub.add_parser("estimate-ilm", help="average encoder frames over training sources")
    p.add_argument("--model", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate_ilm)

    p = sub.add_parser("decode", help="fused beam search")
    _add_decode_flags(p)
    p.add_argument("--beta-ilm", type=float, default=0.0)
    p.add_argument("--beta-elm", type=float, default=0.0)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("evaluate", help="BLEU, coverage and gender accuracy")
    p.add_argument("--eval-set", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--report", help="key=value report (default: stdout)")
    p.add_argument("--jsonl", help="append a JSON-lines record here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("tune-betas", help="grid sweep, cross-validation and heatmap CSV")
    _add_decode_flags(p)
    p.add_argument("--eval-set", required=True)
    p.add_argument("--grid-step", type=float, default=0.05)
    p.add_argument("--folds", type=int, default=10, help="0 disables cross-validation")
    p.add_argument("--no-ilm", action="store_true", help="sweep beta_elm only (beta_ilm = 0)")
    p.add_argument("--csv", required=True)
    p.add_argument("--plot", help="heatmap PNG")
    p.add_argument("--report", help="JSON-lines tuning report")
    p.add_argument("--output", help="stitched cross-validated hypotheses")
    p.set_defaults(func=cmd_tune_betas)

    p = sub.add_parser("extract-corpus", help="split a corpus into F/M subsets by regex")
    p.add_argument("--patterns", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out-f", required=True)
    p.add_argument("--out-m", required=True)
    p.add_argument("--stats")
    p.set_defaults(func=cmd_extract_corpus)

    p = sub.add_parser("run-experiment", help="end-to-end four-system comparison on a synthetic task")
    _add_task_flags(p)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--ft-lr", type=float, default=0.05)
    p.add_argument("--ft-epochs", type=int, default=7)
    p.add_argument("--grad-clip", type=float, default=5.0)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--h", type=int, default=32)
    p.add_argument("--grid-step", type=float, default=0.05)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--beam", type=int, default=DEFAULT_BEAM)
    p.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run_experiment)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"fusedec: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"fusedec: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, OSError, UnicodeDecodeError) as exc:
        print(f"fusedec: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
