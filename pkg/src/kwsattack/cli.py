"""
Command-line entry point: ``kwsattack {train,attack,evaluate,classify,mfcc-dump}``.

Exit status: 0 success, 1 usage/config/input error, 2 attack failed within
``--max-iter``. A ``--config FILE`` of ``key=value`` lines (keys are the
long flag names with ``_`` or ``-``) supplies defaults; explicit flags win.
``KWSATTACK_MODEL`` names the default model file.
"""
from __future__ import annotations

import argparse
import logging
import os
import secrets
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .attack import AttackConfig, run_targeted_attack, run_untargeted_attack
from .audio_io import read_wav, write_wav
from .corpus import DEFAULT_LABELS, clips_of, load_corpus_dir, split_corpus, synthetic_corpus
from .dsp import DspConfig, mfcc, write_feature_csv
from .errors import InsufficientCorpus, KwsAttackError
from .evaluate import (export_attacks_csv, export_matrix_csv, matrix_from_records,
                       run_targeted_evaluation, run_untargeted_evaluation, summarize,
                       write_summary)
from .victim import TrainConfig, accuracy, load_model, save_model, train

MODEL_ENV = "KWSATTACK_MODEL"
EXIT_OK, EXIT_USAGE, EXIT_ATTACK_FAILED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(prog):
    return argparse.ArgumentDefaultsHelpFormatter(prog, max_help_position=36)


def _add_attack_flags(p):
    d = AttackConfig()
    g = p.add_argument_group("genetic search")
    g.add_argument("--population-size", type=int, default=d.population_size,
                   help="candidates per generation")
    g.add_argument("--max-iter", type=int, default=d.max_iter,
                   help="generations before declaring failure")
    g.add_argument("--temperature", type=float, default=d.temperature,
                   help="softmax temperature for parent selection")
    g.add_argument("--mutation-prob", type=float, default=d.mutation_prob,
                   help="per-sample mutation probability")
    g.add_argument("--mutation-span", type=int, default=d.mutation_span,
                   help="max |delta| of one mutation (<= 255)")
    g.add_argument("--perturb-fraction", type=float, default=d.perturb_fraction,
                   help="fraction of samples perturbed at initialisation")
    g.add_argument("--elite-count", type=int, default=d.elite_count,
                   help="best members copied unchanged (0 disables)")


def _add_dsp_flags(p):
    d = DspConfig()
    g = p.add_argument_group("MFCC front-end")
    g.add_argument("--frame-length", type=int, default=d.frame_length, help="samples")
    g.add_argument("--hop-length", type=int, default=d.hop_length, help="samples")
    g.add_argument("--fft-size", type=int, default=d.fft_size, help="power of two")
    g.add_argument("--num-mel-filters", type=int, default=d.num_mel_filters, help="filters")
    g.add_argument("--num-cepstra", type=int, default=d.num_cepstra, help="kept coefficients")
    g.add_argument("--fmin", type=float, default=d.fmin, help="Hz")
    g.add_argument("--fmax", type=float, default=d.fmax, help="Hz")
    g.add_argument("--log-floor", type=float, default=d.log_floor,
                   help="added before the log")


def _add_corpus_flags(p):
    g = p.add_argument_group("corpus")
    src = g.add_mutually_exclusive_group()
    src.add_argument("--corpus", type=Path, help="directory laid out as <label>/<clip>.wav")
    src.add_argument("--synthetic", action="store_true",
                     help="use the built-in synthetic tone/chirp corpus")
    g.add_argument("--labels", default=",".join(DEFAULT_LABELS[:4]),
                   help="comma-separated labels for --synthetic")
    g.add_argument("--synthetic-clips", type=int, default=60,
                   help="clips per label for --synthetic")
    g.add_argument("--corpus-seed", type=int, default=0, help="seed for --synthetic")


def _add_seed(p):
    p.add_argument("--seed", type=int, default=None,
                   help="master seed; a random one is chosen and printed when omitted")
    p.add_argument("--config", type=Path, help="key=value defaults file")


def _model_flag(p):
    p.add_argument("--model", type=Path, default=os.environ.get(MODEL_ENV),
                   help=f"model file (default from ${MODEL_ENV})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kwsattack", description="Black-box genetic adversarial attacks on a keyword-spotting model.",
                     formatter_class=_fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log skipped clips etc.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = TrainConfig()
    p = sub.add_parser("train", help="train the victim classifier", formatter_class=_fmt)
    _add_corpus_flags(p)
    p.add_argument("--model-out", type=Path, required=True, help="model file to write")
    p.add_argument("--held-out", type=float, default=0.25,
                   help="fraction of each label kept for held-out accuracy")
    p.add_argument("--epochs", type=int, default=t.epochs, help="passes over the data")
    p.add_argument("--learning-rate", type=float, default=t.learning_rate, help="SGD step")
    p.add_argument("--batch-size", type=int, default=t.batch_size, help="clips per step")
    p.add_argument("--hidden", type=int, default=t.hidden, help="hidden dense units")
    p.add_argument("--n-filters", type=int, default=t.n_filters, help="conv channels")
    p.add_argument("--export-corpus", type=Path, help="also write the corpus as WAVs here")
    _add_dsp_flags(p)
    _add_seed(p)

    p = sub.add_parser("attack", help="run one adversarial attack", formatter_class=_fmt)
    _model_flag(p)
    p.add_argument("input_wav", type=Path)
    goal = p.add_mutually_exclusive_group(required=True)
    goal.add_argument("--target", help="label the attack should produce")
    goal.add_argument("--untargeted", action="store_true", help="any label but the source")
    p.add_argument("--out", type=Path, required=True, help="adversarial WAV (written on success)")
    _add_attack_flags(p)
    _add_seed(p)

    p = sub.add_parser("evaluate", help="source x target attack matrix", formatter_class=_fmt)
    _model_flag(p)
    _add_corpus_flags(p)
    p.add_argument("--clips-per-label", type=int, default=50,
                   help="correctly classified clips attacked per source label")
    p.add_argument("--out-dir", type=Path, default=Path("out"),
                   help="WAVs, matrix.csv, attacks.csv, summary.txt")
    p.add_argument("--untargeted", action="store_true",
                   help="one untargeted attack per selected clip instead of K-1 targeted")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    _add_attack_flags(p)
    _add_seed(p)

    p = sub.add_parser("classify", help="print label probabilities", formatter_class=_fmt)
    _model_flag(p)
    p.add_argument("wav", type=Path)

    p = sub.add_parser("mfcc-dump", help="write MFCC frames as CSV", formatter_class=_fmt)
    p.add_argument("wav", type=Path)
    p.add_argument("csv_out", type=Path)
    _add_dsp_flags(p)
    return parser


def _read_config_file(path: Path) -> dict:
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    values = {}
    for n, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in subparser._actions}
        defaults = {}
        for key, raw in _read_config_file(args.config).items():
            if key not in known or key in ("config", "help"):
                raise UsageError(f"unknown config key {key!r} for {args.command}")
            action = known[key]
            if action.const is True and action.nargs == 0:  # store_true
                defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            else:
                defaults[key] = action.type(raw) if action.type else raw
        subparser.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _seed(args) -> int:
    if args.seed is None:
        args.seed = secrets.randbelow(2 ** 31)
        print(f"seed: {args.seed}")
    return args.seed


def _dsp_config(args) -> DspConfig:
    return DspConfig(**{f.name: getattr(args, f.name) for f in fields(DspConfig)
                        if hasattr(args, f.name)})


def _attack_config(args) -> AttackConfig:
    return AttackConfig(**{f.name: getattr(args, f.name) for f in fields(AttackConfig)
                           if hasattr(args, f.name)})


def _corpus(args):
    if args.corpus is not None:
        if not args.corpus.is_dir():
            raise UsageError(f"corpus directory not found: {args.corpus}")
        return load_corpus_dir(args.corpus)
    if not args.synthetic:
        raise UsageError("pass --corpus DIR or --synthetic")
    labels = tuple(s.strip() for s in args.labels.split(",") if s.strip())
    return synthetic_corpus(labels, args.synthetic_clips, args.corpus_seed)


def _load_model(args):
    if args.model is None:
        raise UsageError(f"no model file: pass --model or set ${MODEL_ENV}")
    if not Path(args.model).is_file():
        raise UsageError(f"model file not found: {args.model}")
    return load_model(args.model)


def _print_noise(noise):
    for k, v in noise.as_dict().items():
        print(f"{k}: {v}")


def cmd_train(args) -> int:
    seed = _seed(args)
    corpus = _corpus(args)
    if args.export_corpus is not None:
        from .corpus import write_corpus_dir
        write_corpus_dir(corpus, args.export_corpus)
    train_set, held = split_corpus(corpus, args.held_out, seed)
    hyper = TrainConfig(epochs=args.epochs, learning_rate=args.learning_rate,
                        batch_size=args.batch_size, seed=seed, hidden=args.hidden,
                        n_filters=args.n_filters)
    model = train(clips_of(train_set), hyper, _dsp_config(args))
    print(f"labels: {','.join(model.label_set.labels)}")
    print(f"train_accuracy: {accuracy(model, clips_of(train_set)):.4f}")
    if held:
        print(f"held_out_accuracy: {accuracy(model, clips_of(held)):.4f}")
    save_model(model, args.model_out)
    print(f"model: {args.model_out}")
    return EXIT_OK


def cmd_attack(args) -> int:
    model = _load_model(args)
    seed = _seed(args)
    clip = read_wav(args.input_wav)
    config = _attack_config(args)
    config = AttackConfig(**{**config.__dict__, "seed": seed})
    if args.untargeted:
        result = run_untargeted_attack(clip, model, config)
    else:
        result = run_targeted_attack(clip, model.label_set.index(args.target), model, config)
    labels = model.label_set.labels
    print(f"source: {labels[result.source_label]}")
    print(f"target: {labels[result.target_label] if result.target_label is not None else '(any)'}")
    print(f"success: {result.success}")
    print(f"iterations: {result.iterations_used}")
    print(f"queries: {result.queries_used}")
    _print_noise(result.noise)
    if not result.success:
        return EXIT_ATTACK_FAILED
    write_wav(result.adversarial, args.out)
    print(f"adversarial: {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = _load_model(args)
    seed = _seed(args)
    corpus = _corpus(args)
    config = AttackConfig(**{**_attack_config(args).__dict__, "seed": seed})
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    if args.untargeted:
        records = run_untargeted_evaluation(corpus, model, config, args.clips_per_label,
                                            args.jobs, out)
    else:
        records = run_targeted_evaluation(corpus, model, config, args.clips_per_label,
                                          args.jobs, out)
        export_matrix_csv(matrix_from_records(model.label_set, records), out / "matrix.csv")
    export_attacks_csv(records, out / "attacks.csv")
    summary = summarize(records)
    write_summary(summary, out / "summary.txt")
    print(f"attacks: {summary['attacks']}")
    print(f"overall_success_rate: {summary['overall_success_rate']:.4f}")
    print(f"median_iterations: {summary['median_iterations']}")
    print(f"out_dir: {out}")
    return EXIT_OK


def cmd_classify(args) -> int:
    model = _load_model(args)
    probs = model.predict(read_wav(args.wav))
    print(f"label: {model.label_set.labels[int(np.argmax(probs))]}")
    for lab, p in zip(model.label_set.labels, probs):
        print(f"{lab}: {p:.6f}")
    return EXIT_OK


def cmd_mfcc_dump(args) -> int:
    feats = mfcc(read_wav(args.wav), _dsp_config(args))
    write_feature_csv(feats, args.csv_out)
    print(f"frames: {feats.num_frames}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "attack": cmd_attack, "evaluate": cmd_evaluate,
            "classify": cmd_classify, "mfcc-dump": cmd_mfcc_dump}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"kwsattack: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (KwsAttackError, UsageError, OSError, ValueError) as exc:
        print(f"kwsattack: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
