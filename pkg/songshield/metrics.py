# -*- coding: utf-8 -*-

"""
This module contains the objective metrics (identity similarity, word error
rate, SNR, success-rate reduction) and the feature-level voice conversion
proxy the protection is evaluated against.
"""

import logging
import math

import numpy as np
import torch

from songshield.audio import mix_to_mono
from songshield.const import IDENTITY, LYRIC, MIN_RUN, NUM_PAIRS, XI_I, ValidationError
from songshield.encoders import SingerProfile, identity_embed, lyric_features
from songshield.utils import save_summary, write_csv

logger = logging.getLogger(__name__)

REPORT_FIELDS = ['pair', 'target', 'source', 'reference', 'is_undefended', 'wer_undefended',
                 'transcript_undefended', 'is_defended', 'wer_defended', 'transcript_defended']


def _cosine(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    norm = np.linalg.norm(a) * np.linalg.norm(b)
    if norm == 0:
        raise ValidationError('Cosine similarity of a zero-norm vector is undefined')
    return float(np.dot(a, b) / norm)


def identity_similarity(output_embedding, target, eval_encoder):
    """
    Cosine between an output identity feature and the target singer's
    centroid, both taken under a held-out encoder.

    :arg output_embedding:
        The output's identity feature.
    :arg SingerProfile target:
        The imitated singer.
    :arg EncoderHandle eval_encoder:
        A held-out identity encoder.

    :returns:
        A float in [-1, 1].

    """
    if not eval_encoder.held_out:
        raise ValidationError('Identity similarity needs a held-out encoder, got %s' % (eval_encoder.id,))
    centroid = target.centroid(eval_encoder)
    if isinstance(centroid, torch.Tensor):
        centroid = centroid.numpy()
    return _cosine(output_embedding, centroid)


def _symbols(sequence):
    if isinstance(sequence, str):
        return sequence.split()
    return list(sequence)


def wer(reference, hypothesis):
    """
    Word error rate ``(D + I + S) / N`` from a Levenshtein alignment over
    symbols. May exceed 1.

    :arg reference:
        The reference symbols, a sequence or a space-separated string.
    :arg hypothesis:
        The hypothesis symbols.

    :returns:
        A float.

    """
    ref, hyp = _symbols(reference), _symbols(hypothesis)
    if not ref:
        raise ValidationError('Word error rate needs a non-empty reference')

    costs = np.zeros((len(hyp) + 1, len(ref) + 1))
    costs[:, 0] = np.arange(len(hyp) + 1)
    costs[0, :] = np.arange(len(ref) + 1)
    for j in range(1, len(ref) + 1):
        for i in range(1, len(hyp) + 1):
            cost = 0 if hyp[i - 1] == ref[j - 1] else 1
            costs[i, j] = min(costs[i - 1, j] + 1,
                              costs[i, j - 1] + 1,
                              costs[i - 1, j - 1] + cost)
    return costs[-1, -1] / len(ref)


def transcribe(features, vocabulary, min_run=1):
    """
    Nearest-template (cosine) symbol per frame, runs shorter than
    ``min_run`` frames dropped, then repeated symbols collapsed.

    :arg features:
        A ``(T, d)`` lyric feature sequence.
    :arg dict vocabulary:
        Symbol to template vector.
    :arg int min_run:
        Optional. Shortest run kept; 1 keeps every run (the default). The
        evaluator passes 3.

    :returns:
        A list of symbols.

    """
    if not vocabulary:
        raise ValidationError('Transcription needs a non-empty vocabulary')
    symbols = sorted(vocabulary)
    templates = np.stack([np.asarray(vocabulary[s], dtype=np.float64) for s in symbols])
    feats = np.asarray(features, dtype=np.float64)
    templates = templates / np.maximum(np.linalg.norm(templates, axis=1, keepdims=True), 1e-12)
    feats = feats / np.maximum(np.linalg.norm(feats, axis=1, keepdims=True), 1e-12)
    labels = np.argmax(feats @ templates.T, axis=1)

    runs = []
    for label in labels:
        if runs and runs[-1][0] == label:
            runs[-1][1] += 1
        else:
            runs.append([label, 1])

    out = []
    for label, length in runs:
        if length < min_run:
            continue
        if not out or out[-1] != label:
            out.append(label)
    return [symbols[i] for i in out]


def snr(original, perturbed):
    """
    ``10 log10(P_x / P_delta)`` with mean-square powers.

    :arg Waveform original:
        The clean signal.
    :arg Waveform perturbed:
        The perturbed signal, same length.

    :returns:
        The SNR in dB; ``math.inf`` when nothing was perturbed.

    """
    delta = perturbed.perturbation(original)
    p_x = float(np.mean(original.samples ** 2))
    if p_x == 0:
        raise ValidationError('SNR of a silent signal is undefined')
    p_delta = float(np.mean(delta ** 2))
    if p_delta == 0:
        return math.inf
    return 10.0 * math.log10(p_x / p_delta)


class SrrThresholds(object):
    """
    Success thresholds.

    :arg float xi_i:
        Optional. Identity similarity a successful imitation reaches.
    :arg float xi_l:
        Optional. Highest WER of a successful lyric transfer; ``None``
        means the mean undefended WER of the batch.

    """
    def __init__(self, xi_i=XI_I, xi_l=None):
        if not -1.0 < xi_i < 1.0:
            raise ValidationError('xi_I must lie in (-1, 1), got %r' % (xi_i,))
        if xi_l is not None and xi_l < 0:
            raise ValidationError('xi_L must be non-negative, got %r' % (xi_l,))
        self.xi_i = float(xi_i)
        self.xi_l = None if xi_l is None else float(xi_l)


    def __repr__(self):
        return "SrrThresholds(xi_i=%r, xi_l=%r)" % (self.xi_i, self.xi_l)


def srr(undefended, defended, thresholds=None):
    """
    Success-rate reductions for identity, lyrics and both.

    :arg list undefended:
        ``(IS, WER)`` outcome per pair without protection.
    :arg list defended:
        ``(IS, WER)`` outcome per pair with protection.
    :arg SrrThresholds thresholds:
        Optional. The thresholds.

    :returns:
        ``(srr_i, srr_l, srr_t, xi_l)``, the last being the WER threshold
        actually applied.

    """
    thresholds = thresholds or SrrThresholds()
    if len(undefended) != len(defended):
        raise ValidationError('Outcome batches differ in size: %d vs %d' % (len(undefended), len(defended)))
    if not undefended:
        raise ValidationError('SRR needs at least one pair')
    und, dfd = np.asarray(undefended, dtype=np.float64), np.asarray(defended, dtype=np.float64)
    xi_l = thresholds.xi_l if thresholds.xi_l is not None else float(np.mean(und[:, 1]))

    def success(outcomes):
        ident = outcomes[:, 0] >= thresholds.xi_i
        lyric = outcomes[:, 1] <= xi_l
        return ident, lyric, ident & lyric

    pairs = zip(success(und), success(dfd))
    srr_i, srr_l, srr_t = [float(np.mean(a.astype(float) - b.astype(float))) for a, b in pairs]
    return srr_i, srr_l, srr_t, xi_l


def mix_at_ratio(clean, protected, ratio):
    """
    The first ``round(ratio * n)`` voices protected, the rest clean.

    :arg list clean:
        Clean voices.
    :arg list protected:
        Their protected versions, same order.
    :arg float ratio:
        In [0, 1].

    """
    if not 0.0 <= ratio <= 1.0:
        raise ValidationError('Protect ratio must lie in [0, 1], got %r' % (ratio,))
    if len(clean) != len(protected):
        raise ValidationError('Clean and protected voice lists differ in length')
    n = int(round(ratio * len(clean)))
    return list(protected[:n]) + list(clean[n:])


def svc_proxy(target_voices, source, identity_encoder, lyric_encoder, vocabulary, min_run=1):
    """
    Feature-level stand-in for a voice conversion model: the output
    identity is the centroid of the target voices' identity features, the
    output lyrics the transcription of the source.

    :arg list target_voices:
        The target singer's voices handed to the model.
    :arg Waveform source:
        The source voice whose lyrics are kept.
    :arg EncoderHandle identity_encoder:
        Identity encoder of the model.
    :arg EncoderHandle lyric_encoder:
        Lyric encoder of the model.
    :arg dict vocabulary:
        Symbol templates of the recognizer.

    :returns:
        ``(embedding, symbols)``.

    """
    if not target_voices:
        raise ValidationError('The conversion proxy needs at least one target voice')
    embedding = np.mean([identity_embed(identity_encoder, v) for v in target_voices], axis=0)
    symbols = transcribe(lyric_features(lyric_encoder, source), vocabulary, min_run)
    return embedding, symbols


def build_pairs(corpus, num_pairs=NUM_PAIRS, rng=None):
    """
    ``(target singer, source clip name)`` pairs, the source always sung by
    another singer.

    :arg Corpus corpus:
        The corpus.
    :arg int num_pairs:
        Optional. ``Q``.
    :arg numpy.random.Generator rng:
        Optional. The random generator.

    """
    if num_pairs < 1:
        raise ValidationError('Need at least one evaluation pair, got %r' % (num_pairs,))
    singers = corpus.singers()
    if len(singers) < 2:
        raise ValidationError('Evaluation pairs need at least two singers')
    rng = rng or np.random.default_rng(0)
    pairs = []
    for _ in range(num_pairs):
        target = singers[int(rng.integers(len(singers)))]
        sources = [c for c in corpus if c.singer != target]
        pairs.append((target, sources[int(rng.integers(len(sources)))].name))
    return pairs


class EvalReport(object):
    """
    Per-pair outcomes and the aggregate success-rate reductions of one
    evaluation run.
    """
    def __init__(self, rows, srr_i, srr_l, srr_t, thresholds, xi_l, ratio,
                 snr_voice_db, snr_song_db, label='baseline'):
        self.rows = rows
        self.srr_i = srr_i
        self.srr_l = srr_l
        self.srr_t = srr_t
        self.thresholds = thresholds
        self.xi_l = xi_l
        self.ratio = ratio
        self.snr_voice_db = snr_voice_db
        self.snr_song_db = snr_song_db
        self.label = label


    def __repr__(self):
        return "EvalReport(label=%r, Q=%d, srr=(%.3f, %.3f, %.3f))" % (
            self.label, self.q, self.srr_i, self.srr_l, self.srr_t)


    @property
    def q(self):
        return len(self.rows)


    def mean(self, column):
        return float(np.mean([row[column] for row in self.rows]))


    def summary(self):
        """The aggregates, in report order."""
        return dict([
            ('label', self.label),
            ('pairs', self.q),
            ('protect_ratio', self.ratio),
            ('xi_i', self.thresholds.xi_i),
            ('xi_l', self.xi_l),
            ('srr_i', self.srr_i),
            ('srr_l', self.srr_l),
            ('srr_t', self.srr_t),
            ('mean_is_undefended', self.mean('is_undefended')),
            ('mean_is_defended', self.mean('is_defended')),
            ('mean_wer_undefended', self.mean('wer_undefended')),
            ('mean_wer_defended', self.mean('wer_defended')),
            ('median_snr_voice_db', self.snr_voice_db),
            ('median_snr_song_db', self.snr_song_db),
        ])


class Evaluator(object):
    """
    Runs the conversion proxy over fixed pairs, clean against protected.

    :arg Corpus corpus:
        The clean corpus.
    :arg EncoderRegistry registry:
        Provides the held-out encoders and the vocabulary.
    :arg list pairs:
        ``(target singer, source clip name)`` pairs.
    :arg SrrThresholds thresholds:
        Optional. Success thresholds.
    :arg int min_run:
        Optional. Transcription run floor.

    The proxy's encoders default to the held-out ones; ``identity_encoder``,
    ``lyric_encoder``, ``vocabulary`` and ``reference_encoder`` (the one
    target centroids are taken under) override them.
    """
    def __init__(self, corpus, registry, pairs, thresholds=None, min_run=MIN_RUN,
                 identity_encoder=None, lyric_encoder=None, vocabulary=None,
                 reference_encoder=None):
        self.corpus = corpus
        self.pairs = list(pairs)
        self.thresholds = thresholds or SrrThresholds()
        self.min_run = int(min_run)
        self.identity_encoder = identity_encoder or registry.held_out(IDENTITY)
        self.lyric_encoder = lyric_encoder or registry.held_out(LYRIC)
        self.vocabulary = vocabulary or registry.vocabulary
        self.reference_encoder = reference_encoder or registry.held_out(IDENTITY)
        self.profiles = dict((singer, SingerProfile(singer, corpus.gender_of(singer),
                                                    [c.voice for c in corpus.find_clips(singer=singer)]))
                             for singer in corpus.singers())


    def _protected(self, protected, clip):
        if clip.name not in protected:
            raise ValidationError('No protected voice for clip %s' % (clip.name,))
        return protected[clip.name]


    def run(self, protected, ratio=1.0, label='baseline'):
        """
        Evaluates every pair undefended and defended.

        :arg dict protected:
            Clip name to protected voice ``Waveform``.
        :arg float ratio:
            Optional. Share of the target singer's voices that are protected.
        :arg str label:
            Optional. Report label.

        :returns:
            An ``EvalReport``.

        """
        rows, undefended, defended = [], [], []
        for i, (target, source_name) in enumerate(self.pairs):
            clips = self.corpus.find_clips(singer=target)
            clean = [c.voice for c in clips]
            guarded = [self._protected(protected, c) for c in clips]
            source = self.corpus[source_name]

            outcomes = []
            for voices, source_voice in ((clean, source.voice),
                                         (mix_at_ratio(clean, guarded, ratio),
                                          self._protected(protected, source))):
                embedding, symbols = svc_proxy(voices, source_voice, self.identity_encoder,
                                               self.lyric_encoder, self.vocabulary, self.min_run)
                similarity = identity_similarity(embedding, self.profiles[target], self.reference_encoder)
                outcomes.append((similarity, wer(source.symbols, symbols), symbols))

            undefended.append(outcomes[0][:2])
            defended.append(outcomes[1][:2])
            rows.append({'pair': i, 'target': target, 'source': source_name,
                         'reference': ' '.join(source.symbols),
                         'is_undefended': outcomes[0][0], 'wer_undefended': outcomes[0][1],
                         'transcript_undefended': ' '.join(outcomes[0][2]),
                         'is_defended': outcomes[1][0], 'wer_defended': outcomes[1][1],
                         'transcript_defended': ' '.join(outcomes[1][2])})

        srr_i, srr_l, srr_t, xi_l = srr(undefended, defended, self.thresholds)
        voice_snrs, song_snrs = [], []
        for clip in self.corpus:
            if clip.name in protected:
                voice_snrs.append(snr(clip.voice, protected[clip.name]))
                song_snrs.append(snr(mix_to_mono(clip.song),
                                     mix_to_mono(clip.song.with_voice(protected[clip.name]))))
        report = EvalReport(rows, srr_i, srr_l, srr_t, self.thresholds, xi_l, ratio,
                            float(np.median(voice_snrs)) if voice_snrs else math.nan,
                            float(np.median(song_snrs)) if song_snrs else math.nan, label)
        logger.info('%s at ratio %.2f: SRR-I %.3f, SRR-L %.3f, SRR-T %.3f',
                    label, ratio, srr_i, srr_l, srr_t)
        return report


def evaluate(corpus, protected, registry, num_pairs=NUM_PAIRS, ratio=1.0, thresholds=None,
             seed=0, min_run=MIN_RUN):
    """
    One evaluation over ``num_pairs`` seeded pairs.

    :returns:
        An ``EvalReport``.

    """
    pairs = build_pairs(corpus, num_pairs, np.random.default_rng(seed))
    return Evaluator(corpus, registry, pairs, thresholds, min_run).run(protected, ratio)


def ratio_sweep(evaluator, protected, ratios):
    """An ``EvalReport`` per protect ratio."""
    return [evaluator.run(protected, ratio, label='ratio_%.2f' % ratio) for ratio in ratios]


def save_report(report, csv_path, summary_path):
    """
    Writes the per-pair rows as CSV and the aggregates as ``key: value``
    lines.

    :arg EvalReport report:
        The report.
    :arg str csv_path:
        The per-pair CSV filename.
    :arg str summary_path:
        The summary filename.

    """
    write_csv(report.rows, csv_path, REPORT_FIELDS)
    save_summary(report.summary(), summary_path)
