# -*- coding: utf-8 -*-

"""
The ``songshield`` command line: corpus generation, encoder training,
protection, evaluation and adversary runs.
"""

import argparse
import logging
import os
import sys

import numpy as np

from songshield.adversary import ADVERSARY_FIELDS, attack_harness
from songshield.audio import Song, fit_length, load_waveform, save_waveform
from songshield.config import load_config, worker_count
from songshield.const import (
    EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, GENDERS, NumericalError, ValidationError
)
from songshield.corpus import SyntheticCorpus, open_corpus, save_corpus
from songshield.encoders import SingerProfile
from songshield.metrics import Evaluator, build_pairs, save_report
from songshield.optimizer import build_context, build_profiles, protect, protect_corpus
from songshield.training import train_toy
from songshield.utils import (
    open_registry, save_adversary_trace, save_registry, save_summary, save_trace, write_csv
)

logger = logging.getLogger(__name__)

TRAINING_REPORT = 'training_report.csv'


def _manifest(args, cfg):
    manifest = args.manifest or cfg.paths['manifest'] or os.path.join(cfg.paths['corpus_dir'],
                                                                      'manifest.csv')
    if not os.path.isfile(manifest):
        raise ValidationError('Manifest %s does not exist' % (manifest,))
    return manifest


def _encoders_dir(args, cfg):
    return args.encoders or cfg.paths['encoders_dir']


def open_protected(corpus, directory):
    """Protected voices written by ``protect --manifest``, by clip name."""
    protected = {}
    for clip in corpus:
        path = os.path.join(directory, '%s_voice.wav' % clip.name)
        if not os.path.isfile(path):
            raise ValidationError('Missing protected voice %s' % (path,))
        protected[clip.name] = load_waveform(path)
    return protected


def cmd_gen_corpus(args, cfg):
    """Synthesizes a corpus and writes its WAVs and manifest."""
    c = cfg.corpus
    corpus = SyntheticCorpus(singers=c['singers'] if args.singers is None else args.singers,
                             symbols=c['symbols'] if args.symbols is None else args.symbols,
                             clips_per_singer=(c['clips_per_singer'] if args.clips_per_singer is None
                                               else args.clips_per_singer),
                             seed=cfg.seed, sample_rate=cfg.audio['sample_rate'],
                             clip_seconds=cfg.audio['clip_seconds'],
                             symbols_per_clip=c['symbols_per_clip'])
    manifest = save_corpus(corpus, args.out_dir or cfg.paths['corpus_dir'])
    print(manifest)
    return manifest


def cmd_train(args, cfg):
    """Trains the toy encoders and writes them with a training report."""
    corpus = open_corpus(_manifest(args, cfg))
    t = cfg.training
    registry = train_toy(corpus, seed=cfg.seed, ensemble_size=t['ensemble_size'],
                         epochs=t['epochs'], learning_rate=t['learning_rate'],
                         accuracy_floor=t['accuracy_floor'],
                         held_in_fraction=t['held_in_fraction'],
                         front_end=cfg.front_end_spec(), sample_rate=cfg.audio['sample_rate'],
                         n_mels=cfg.audio['n_mels'])
    out_dir = args.out_dir or cfg.paths['encoders_dir']
    save_registry(registry, out_dir)
    rows = [{'id': h.id, 'kind': h.kind, 'held_out': int(h.held_out),
             'accuracy': '%.6f' % registry.accuracies[h.id]} for h in registry]
    write_csv(rows, os.path.join(out_dir, TRAINING_REPORT), ['id', 'kind', 'held_out', 'accuracy'])
    return out_dir


def _protection_config(args, cfg):
    return cfg.protection_config(protect_target=args.protect_target,
                                 protect_source=args.protect_source,
                                 transfer_identity=args.transfer_identity,
                                 transfer_lyric=args.transfer_lyric,
                                 iterations=args.iterations)


def cmd_protect(args, cfg):
    """Protects one song, or every clip of a corpus."""
    pcfg = _protection_config(args, cfg)
    registry = open_registry(_encoders_dir(args, cfg))
    corpus = open_corpus(_manifest(args, cfg))

    if args.voice is None:
        out_dir = args.out_dir or cfg.paths['protected_dir']
        snapshots = protect_corpus(corpus, registry, pcfg, out_dir, worker_count())
        logger.info('Protected %d clips into %s', len(snapshots), out_dir)
        return out_dir

    if args.backing is None or args.out is None:
        raise ValidationError('--voice needs --backing and --out')
    voice = load_waveform(args.voice)
    song = Song(voice, fit_length(load_waveform(args.backing), len(voice)))
    source = SingerProfile('input', args.gender, [voice])
    ctx = build_context(song, source, corpus, registry, pcfg, np.random.default_rng(cfg.seed),
                        profiles=build_profiles(corpus))
    result = protect(song, ctx, pcfg)

    out = args.out
    if os.path.dirname(out):
        os.makedirs(os.path.dirname(out), exist_ok=True)
    save_waveform(result.protected, out)
    stem = os.path.splitext(out)[0]
    save_trace(result, stem + '.trace.csv')
    save_summary(dict([('voice', args.voice),
                       ('destination', ctx.destination.id if ctx.destination else '')] +
                      sorted(result.snapshot.items())), stem + '.summary.txt')
    return out


def cmd_evaluate(args, cfg):
    """Evaluates protected voices, once per protect ratio."""
    corpus = open_corpus(_manifest(args, cfg))
    registry = open_registry(_encoders_dir(args, cfg))
    protected = open_protected(corpus, args.protected_dir or cfg.paths['protected_dir'])
    e = cfg.evaluation
    pairs = build_pairs(corpus, e['pairs'], np.random.default_rng(cfg.seed))
    evaluator = Evaluator(corpus, registry, pairs, cfg.srr_thresholds(), e['min_run'])

    ratios = args.protect_ratio or e['protect_ratios']
    out_dir = args.out_dir or cfg.paths['reports_dir']
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for ratio in ratios:
        if not 0.0 <= ratio <= 1.0:
            raise ValidationError('Protect ratio must lie in [0, 1], got %r' % (ratio,))
        report = evaluator.run(protected, ratio, label='ratio_%.2f' % ratio)
        stem = os.path.join(out_dir, 'eval_%s' % report.label)
        save_report(report, stem + '.csv', stem + '.summary.txt')
        rows.append(report.summary())
    write_csv(rows, os.path.join(out_dir, 'eval_sweep.csv'), list(rows[0]))
    return rows


def cmd_attack(args, cfg):
    """Runs the adversary harness against protected voices."""
    corpus = open_corpus(_manifest(args, cfg))
    registry = open_registry(_encoders_dir(args, cfg))
    protected = open_protected(corpus, args.protected_dir or cfg.paths['protected_dir'])
    pairs = build_pairs(corpus, cfg.evaluation['pairs'], np.random.default_rng(cfg.seed))
    adversaries = cfg.attack['adversaries'] if args.adversary is None else args.adversary
    traces = {}

    rows, reports = attack_harness(corpus, registry, protected, pairs, adversaries,
                                   nes=cfg.nes_config(), finetune=cfg.finetune_config(),
                                   gaussian_snr_db=cfg.attack['gaussian_snr_db'],
                                   requantize_bits=cfg.attack['requantize_bits'],
                                   thresholds=cfg.srr_thresholds(),
                                   min_run=cfg.evaluation['min_run'], seed=cfg.seed,
                                   traces=traces)
    out_dir = args.out_dir or cfg.paths['reports_dir']
    os.makedirs(out_dir, exist_ok=True)
    write_csv(rows, os.path.join(out_dir, 'attack.csv'), ADVERSARY_FIELDS)
    if traces:
        save_adversary_trace(traces, os.path.join(out_dir, 'attack_nes_trace.csv'))
    for report in reports:
        stem = os.path.join(out_dir, 'attack_%s' % report.label)
        save_report(report, stem + '.csv', stem + '.summary.txt')
    return rows


def build_parser():
    parser = argparse.ArgumentParser(
        prog='songshield',
        description='Protect singing voices against voice conversion.')
    parser.add_argument('--config', help='JSON run configuration')
    parser.add_argument('--seed', type=int, help='overrides the configured seed')
    parser.add_argument('--log-level', default='INFO',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    sub = parser.add_subparsers(dest='command')
    sub.required = True

    gen = sub.add_parser('gen-corpus', help='synthesize a training corpus')
    gen.add_argument('--out-dir')
    gen.add_argument('--singers', type=int)
    gen.add_argument('--symbols', type=int)
    gen.add_argument('--clips-per-singer', type=int)
    gen.set_defaults(func=cmd_gen_corpus)

    train = sub.add_parser('train', help='train the toy encoders')
    train.add_argument('--manifest')
    train.add_argument('--out-dir')
    train.set_defaults(func=cmd_train)

    prot = sub.add_parser('protect', help='protect one song or a whole corpus')
    prot.add_argument('--manifest', help='auxiliary corpus; protected whole without --voice')
    prot.add_argument('--encoders')
    prot.add_argument('--voice')
    prot.add_argument('--backing')
    prot.add_argument('--out')
    prot.add_argument('--gender', default=GENDERS[0])
    prot.add_argument('--out-dir')
    prot.add_argument('--iterations', type=int)
    for flag in ('protect-target', 'protect-source', 'transfer-identity', 'transfer-lyric'):
        prot.add_argument('--' + flag, action=argparse.BooleanOptionalAction, default=None)
    prot.set_defaults(func=cmd_protect)

    ev = sub.add_parser('evaluate', help='success-rate reductions of protected voices')
    ev.add_argument('--manifest')
    ev.add_argument('--encoders')
    ev.add_argument('--protected-dir')
    ev.add_argument('--out-dir')
    ev.add_argument('--protect-ratio', type=float, action='append')
    ev.set_defaults(func=cmd_evaluate)

    att = sub.add_parser('attack', help='run adversaries against protected voices')
    att.add_argument('--manifest')
    att.add_argument('--encoders')
    att.add_argument('--protected-dir')
    att.add_argument('--out-dir')
    att.add_argument('--adversary', action='append')
    att.set_defaults(func=cmd_attack)
    return parser


def main(argv=None):
    """
    Entry point.

    :arg list argv:
        Optional. Arguments without the program name; ``sys.argv`` by default.

    :returns:
        The exit code: 0 on success, 2 on invalid input, 3 on runtime or
        numerical failure.

    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format='%(asctime)s %(name)s %(levelname)s %(message)s')
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        logger.info('Running %s with %r', args.command, cfg)
        args.func(args, cfg)
    except ValueError as e:
        logger.error('%s', e)
        return EXIT_VALIDATION
    except (NumericalError, OSError, RuntimeError) as e:
        logger.error('%s', e)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
