# -*- coding: utf-8 -*-

"""
This module contains the adaptive adversaries a protection is tested
against: audio transformations (Gaussian noise, requantization), a
query-limited optimization adversary driven by NES gradient estimates, and
encoder fine-tuning.
"""

import logging

import numpy as np
import torch

from songshield.audio import Waveform
from songshield.const import (
    F1_PLUS_F2, FINETUNE, FINETUNE_MODES, GAUSSIAN, IDENTITY, LYRIC, NES,
    NES_ITERATIONS, NES_SAMPLES_PER_DRAW, NES_SIGMA, NES_STEP_SIZE, REQUANTIZE,
    NumericalError, ValidationError
)
from songshield.corpus import render_reference
from songshield.encoders import ensemble
from songshield.losses import LyricTargetSet, cosine_sim, high_hierarchy_loss, seq_dist
from songshield.metrics import Evaluator
from songshield.training import build_vocabulary, classification_loss

logger = logging.getLogger(__name__)

ADVERSARY_FIELDS = ['adversary', 'srr_i', 'srr_l', 'srr_t', 'mean_is_defended',
                    'mean_wer_defended', 'queries_per_song', 'attacked_songs']


def gaussian_at(w, target_snr_db, seed=0):
    """
    Adds white Gaussian noise scaled to an exact SNR, then clips.

    :arg Waveform w:
        The voice.
    :arg float target_snr_db:
        The SNR, finite.
    :arg int seed:
        Optional. Noise seed.

    :returns:
        A new ``Waveform``.

    """
    if not np.isfinite(target_snr_db):
        raise ValidationError('Target SNR must be finite, got %r' % (target_snr_db,))
    p_x = float(np.mean(w.samples ** 2))
    if p_x == 0:
        raise ValidationError('Cannot set the SNR of a silent signal')
    noise = np.random.default_rng(seed).standard_normal(len(w))
    noise *= np.sqrt(p_x / 10.0 ** (target_snr_db / 10.0) / np.mean(noise ** 2))
    return Waveform(np.clip(w.samples + noise, -1.0, 1.0), w.sample_rate)


def requantize(w, bits):
    """
    Uniform quantization to ``2**bits`` levels over [-1, 1).

    :arg Waveform w:
        The voice.
    :arg int bits:
        Bit depth, 4 to 16.

    :returns:
        A new ``Waveform``.

    """
    bits = int(bits)
    if not 4 <= bits <= 16:
        raise ValidationError('Bit depth must lie in [4, 16], got %r' % (bits,))
    step = 2.0 ** (1 - bits)
    q = np.clip(np.round(w.samples / step) * step, -1.0, 1.0 - step)
    return Waveform(q, w.sample_rate)


class NesConfig(object):
    """
    NES settings.

    :arg int samples_per_draw:
        Optional. Oracle queries per gradient estimate, even (default 50).
    :arg int iterations:
        Optional. Gradient estimates per run (default 1000).
    :arg float sigma:
        Optional. Smoothing scale.
    :arg float step_size:
        Optional. Signed step per iteration.
    :arg int songs:
        Optional. Protected clips attacked by the harness; all by default.
    :arg int budget:
        Optional. Query cap; ``samples_per_draw * iterations`` by default.

    """
    def __init__(self, samples_per_draw=NES_SAMPLES_PER_DRAW, iterations=NES_ITERATIONS,
                 sigma=NES_SIGMA, step_size=NES_STEP_SIZE, songs=None, budget=None):
        if int(samples_per_draw) < 2 or int(samples_per_draw) % 2:
            raise ValidationError('samples_per_draw must be even and at least 2, got %r' % (samples_per_draw,))
        if int(iterations) < 0:
            raise ValidationError('NES iterations must be non-negative, got %r' % (iterations,))
        if not sigma > 0 or not step_size > 0:
            raise ValidationError('NES sigma and step size must be positive')
        self.samples_per_draw = int(samples_per_draw)
        self.iterations = int(iterations)
        self.sigma = float(sigma)
        self.step_size = float(step_size)
        self.songs = songs
        self.budget = int(budget) if budget is not None else self.samples_per_draw * self.iterations


    def __repr__(self):
        return "NesConfig(samples_per_draw=%d, iterations=%d, budget=%d)" % (
            self.samples_per_draw, self.iterations, self.budget)


class FinetuneConfig(object):
    """
    Fine-tuning settings.

    :arg str loss_mode:
        Optional. ``'f1'`` or ``'f1_plus_f2'``.
    :arg int epochs:
        Optional. Full-batch steps; 0 returns an unchanged copy.
    :arg float learning_rate:
        Optional. Step size.
    :arg bool retrain_decoder_analog:
        Optional. Re-derive centroids and templates with the tuned encoders.

    """
    def __init__(self, loss_mode=F1_PLUS_F2, epochs=50, learning_rate=1e-3,
                 retrain_decoder_analog=False):
        if loss_mode not in FINETUNE_MODES:
            raise ValidationError('Unknown fine-tuning mode %r' % (loss_mode,))
        if int(epochs) < 0:
            raise ValidationError('Fine-tuning epochs must be non-negative, got %r' % (epochs,))
        if not learning_rate > 0:
            raise ValidationError('Fine-tuning learning rate must be positive')
        self.loss_mode = loss_mode
        self.epochs = int(epochs)
        self.learning_rate = float(learning_rate)
        self.retrain_decoder_analog = bool(retrain_decoder_analog)


    def __repr__(self):
        return "FinetuneConfig(loss_mode=%r, epochs=%d)" % (self.loss_mode, self.epochs)


class QueryCounter(object):
    """Wraps a batch score oracle and counts every scored waveform."""
    def __init__(self, oracle):
        self.oracle = oracle
        self.calls = 0


    def __call__(self, batch):
        batch = np.atleast_2d(batch)
        self.calls += batch.shape[0]
        return np.asarray(self.oracle(batch), dtype=np.float64)


class SpeakerOracle(object):
    """
    Black-box score: similarity of each waveform to a singer's centroid
    under a speaker encoder the attacker cannot differentiate.

    :arg EncoderHandle handle:
        An identity encoder.
    :arg centroid:
        The singer's identity feature under ``handle``.

    """
    def __init__(self, handle, centroid):
        self.handle = handle
        self.centroid = torch.as_tensor(np.asarray(centroid, dtype=np.float64))


    def __call__(self, batch):
        with torch.no_grad():
            embeddings = self.handle.embed(torch.as_tensor(np.asarray(batch, dtype=np.float64)))
            return cosine_sim(embeddings, self.centroid).numpy()


def nes_gradient(oracle, w, cfg, rng):
    """
    Antithetic NES estimate of the oracle's gradient: ``samples_per_draw``
    queries, half at ``x + sigma u``, half at ``x - sigma u``.

    :arg oracle:
        Batch score callable, ``(B, L)`` to ``(B,)``.
    :arg w:
        The point, a ``Waveform`` or a 1-d array.
    :arg NesConfig cfg:
        The settings.
    :arg numpy.random.Generator rng:
        Draws the sampling directions.

    :returns:
        A numpy gradient estimate, same length as ``w``.

    """
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    half = cfg.samples_per_draw // 2
    u = rng.standard_normal((half, x.shape[-1]))
    scores = oracle(np.concatenate([x + cfg.sigma * u, x - cfg.sigma * u]))
    diff = scores[:half] - scores[half:]
    return (diff[:, None] * u).sum(axis=0) / (cfg.sigma * cfg.samples_per_draw)


def optimization_adversary(protected, expected, oracle, lyric_handles, cfg, seed=0, trace=None):
    """
    Tries to undo a protection: signed steps that raise the black-box
    speaker score (NES estimate) and pull the lyric features toward a clean
    rendering of the expected lyrics (white-box gradient).

    :arg Song protected:
        The protected song.
    :arg Waveform expected:
        A clean voice carrying the expected symbols.
    :arg QueryCounter oracle:
        The counted speaker oracle.
    :arg list lyric_handles:
        White-box lyric encoders.
    :arg NesConfig cfg:
        The settings.
    :arg int seed:
        Optional. NES seed.
    :arg list trace:
        Optional. Receives ``(iteration, score, lyric loss)`` tuples.

    :returns:
        The song with the attacked voice.

    """
    rng = np.random.default_rng(seed)
    targets = LyricTargetSet([expected])
    x = protected.voice.samples.copy()
    for n in range(1, cfg.iterations + 1):
        if oracle.calls + cfg.samples_per_draw > cfg.budget:
            logger.warning('NES query budget of %d exhausted after %d iterations', cfg.budget, n - 1)
            break
        g_id = -nes_gradient(oracle, x, cfg, rng)

        point = torch.tensor(x, requires_grad=True)
        lyric_loss = ensemble(high_hierarchy_loss(point, targets, h) for h in lyric_handles)
        if not bool(torch.isfinite(lyric_loss)):
            raise NumericalError('Adversary lyric loss is not finite at iteration %d' % (n,))
        g_ly, = torch.autograd.grad(lyric_loss, point)
        g_ly = g_ly.numpy()

        direction = g_id / (np.linalg.norm(g_id) + 1e-12) + g_ly / (np.linalg.norm(g_ly) + 1e-12)
        x = np.clip(x - cfg.step_size * np.sign(direction), -1.0, 1.0)
        if trace is not None:
            # uncounted: a measurement, not an attack query
            trace.append((n, float(oracle.oracle(x[None])[0]), float(lyric_loss)))
    logger.info('NES adversary used %d oracle queries', oracle.calls)
    return protected.with_voice(Waveform(x, protected.sample_rate))


def finetune_encoder(h, pairs, cfg, labeled=None, classes=None):
    """
    Fine-tunes a copy of an encoder so protected voices map close to their
    clean versions, optionally keeping the classification loss alive.

    :arg EncoderHandle h:
        The encoder to adapt; left untouched.
    :arg list pairs:
        ``(clean, protected)`` waveform pairs.
    :arg FinetuneConfig cfg:
        The settings.
    :arg list labeled:
        Clean clips for the classification term; required in ``f1_plus_f2``.
    :arg list classes:
        Class names in head order.

    :returns:
        A frozen tuned ``EncoderHandle`` with id ``<id>_ft``.

    """
    if not pairs:
        raise ValidationError('Fine-tuning needs at least one clean/protected pair')
    if cfg.loss_mode == F1_PLUS_F2 and (not labeled or classes is None):
        raise ValidationError('f1_plus_f2 fine-tuning needs labelled clips and classes')

    tuned = h.thaw()
    tuned.id = '%s_ft' % h.id
    clean = torch.stack([a.as_tensor() for a, _ in pairs])
    guarded = torch.stack([b.as_tensor() for _, b in pairs])
    optimizer = torch.optim.Adam(tuned.parameters(), lr=cfg.learning_rate)
    for epoch in range(cfg.epochs):
        optimizer.zero_grad()
        if tuned.kind == IDENTITY:
            loss = (1.0 - cosine_sim(tuned.embed(clean), tuned.embed(guarded))).mean()
        else:
            loss = seq_dist(tuned.frames(clean), tuned.frames(guarded)).mean()
        if cfg.loss_mode == F1_PLUS_F2:
            loss = loss + classification_loss(tuned, labeled, classes)
        if not bool(torch.isfinite(loss)):
            raise NumericalError('Fine-tuning of %s diverged at epoch %d' % (h.id, epoch))
        loss.backward()
        optimizer.step()
    logger.info('Fine-tuned %s for %d epochs (%s)', h.id, cfg.epochs, cfg.loss_mode)
    return tuned.freeze()


def _summary_row(label, report, queries=0, songs=0):
    return {'adversary': label, 'srr_i': report.srr_i, 'srr_l': report.srr_l,
            'srr_t': report.srr_t, 'mean_is_defended': report.mean('is_defended'),
            'mean_wer_defended': report.mean('wer_defended'), 'queries_per_song': queries,
            'attacked_songs': songs}


def attack_harness(corpus, registry, protected, pairs, adversaries, nes=None, finetune=None,
                   gaussian_snr_db=30.0, requantize_bits=8, thresholds=None, min_run=None,
                   seed=0, traces=None):
    """
    Evaluates the protection unattacked, then once per adversary.

    :arg Corpus corpus:
        The clean corpus.
    :arg EncoderRegistry registry:
        Trained encoders; the held-out ones act as the conversion model.
    :arg dict protected:
        Clip name to protected voice.
    :arg list pairs:
        Evaluation pairs.
    :arg list adversaries:
        Names from ``const.ADVERSARIES``.
    :arg NesConfig nes:
        Optional. NES settings.
    :arg FinetuneConfig finetune:
        Optional. Fine-tuning settings.
    :arg dict traces:
        Optional. Receives the NES adversary trace of every attacked clip,
        keyed by clip name.

    :returns:
        ``(rows, reports)``: one summary dict and one ``EvalReport`` per run,
        the baseline first.

    """
    extra = {} if min_run is None else {'min_run': min_run}
    evaluator = Evaluator(corpus, registry, pairs, thresholds, **extra)
    reports = [evaluator.run(protected, label='baseline')]
    rows = [_summary_row('baseline', reports[0])]
    names = sorted(protected)

    for name in adversaries:
        queries, songs = 0, 0
        if name == GAUSSIAN:
            attacked = dict((clip, gaussian_at(protected[clip], gaussian_snr_db, seed + i))
                            for i, clip in enumerate(names))
            report = evaluator.run(attacked, label='gaussian_%gdB' % gaussian_snr_db)
            songs = len(names)
        elif name == REQUANTIZE:
            attacked = dict((clip, requantize(protected[clip], requantize_bits)) for clip in names)
            report = evaluator.run(attacked, label='requantize_%dbit' % requantize_bits)
            songs = len(names)
        elif name == NES:
            nes = nes or NesConfig()
            attacked = dict(protected)
            speaker = registry.held_out(IDENTITY)
            lyric = [registry.held_out(LYRIC)]
            chosen = names if nes.songs is None else names[:int(nes.songs)]
            for i, clip_name in enumerate(chosen):
                clip = corpus[clip_name]
                centroid = evaluator.profiles[clip.singer].centroid(speaker)
                counter = QueryCounter(SpeakerOracle(speaker, centroid))
                expected = render_reference(clip.symbols, len(clip.voice), clip.voice.sample_rate,
                                            seed + i, corpus.formant_table())
                trace = None if traces is None else traces.setdefault(clip_name, [])
                song = optimization_adversary(clip.song.with_voice(protected[clip_name]), expected,
                                              counter, lyric, nes, seed + i, trace)
                attacked[clip_name] = song.voice
                # every run draws the same count unless the budget cuts it short
                queries = max(queries, counter.calls)
            songs = len(chosen)
            report = evaluator.run(attacked, label='nes')
        elif name == FINETUNE:
            finetune = finetune or FinetuneConfig()
            clips = [c for c in corpus if c.name in protected]
            pair_list = [(c.voice, protected[c.name]) for c in clips]
            tuned_id = finetune_encoder(registry.held_out(IDENTITY), pair_list, finetune,
                                        clips, corpus.singers())
            tuned_ly = finetune_encoder(registry.held_out(LYRIC), pair_list, finetune,
                                        clips, corpus.vocabulary())
            retrain = finetune.retrain_decoder_analog
            tuned_eval = Evaluator(corpus, registry, pairs, thresholds,
                                   identity_encoder=tuned_id, lyric_encoder=tuned_ly,
                                   vocabulary=build_vocabulary(tuned_ly, corpus) if retrain else None,
                                   reference_encoder=tuned_id if retrain else None, **extra)
            report = tuned_eval.run(protected, label='finetune_%s' % finetune.loss_mode)
            songs = len(clips)
        else:
            raise ValidationError('Unknown adversary %r' % (name,))
        reports.append(report)
        rows.append(_summary_row(report.label, report, queries, songs))
    return rows, reports
