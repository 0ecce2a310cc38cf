# -*- coding: utf-8 -*-

"""
This module contains the disruption losses: identity (untargeted, targeted,
gender transformation), lyric (high and low hierarchy), the frame-level
interaction reduction losses used for transferability, and the selection of
destination singers and lyric targets.

Every loss accepts samples of shape ``(..., L)`` and returns one value per
leading index, as a torch tensor carrying the input gradient.
"""

import logging

import numpy as np
import torch

from songshield.audio import FrameSpec, Waveform, frame_boundaries
from songshield.const import (
    FLIR_DIVISOR, FLIR_SAMPLES, IDENTITY, LYRIC, ValidationError
)
from songshield.encoders import as_batch, log_mel

logger = logging.getLogger(__name__)


def _tensor(x):
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def cosine_sim(a, b):
    """
    Cosine similarity along the last axis.

    :arg a:
        Vectors, shape ``(..., d)``.
    :arg b:
        Vectors, broadcastable against ``a``.

    :returns:
        A tensor of similarities in [-1, 1].

    """
    a, b = _tensor(a), _tensor(b)
    norm_a, norm_b = a.norm(dim=-1), b.norm(dim=-1)
    if bool((norm_a.detach() == 0).any()) or bool((norm_b.detach() == 0).any()):
        raise ValidationError('Cosine similarity of a zero-norm vector is undefined')
    return (a * b).sum(dim=-1) / (norm_a * norm_b)


def seq_dist(a, b):
    """
    Mean of ``1 - cos`` over aligned frames, both sequences truncated to the
    shorter length.

    :arg a:
        Sequence of shape ``(..., T_a, d)``.
    :arg b:
        Sequence of shape ``(..., T_b, d)``.

    :returns:
        A tensor of distances in [0, 2].

    """
    a, b = _tensor(a), _tensor(b)
    if a.shape[-2] == 0 or b.shape[-2] == 0:
        raise ValidationError('Cannot compare an empty feature sequence')
    n = min(a.shape[-2], b.shape[-2])
    return (1.0 - cosine_sim(a[..., :n, :], b[..., :n, :])).mean(dim=-1)


class DestinationSinger(object):
    """
    The singer a protected voice is pushed toward.

    :arg SingerProfile profile:
        The destination singer.
    :arg Waveform voice:
        Optional. When given, the destination identity is this single
        voice's embedding instead of the centroid.

    """
    def __init__(self, profile, voice=None):
        self.profile = profile
        self.voice = voice
        self._embeddings = {}


    def __repr__(self):
        return "DestinationSinger(id=%r, gender=%r)" % (self.profile.id, self.profile.gender)


    @property
    def id(self):
        return self.profile.id


    @property
    def gender(self):
        return self.profile.gender


    def centroid(self, h):
        """The destination identity feature under ``h``, detached."""
        if self.voice is None:
            return self.profile.centroid(h)
        if h.id not in self._embeddings:
            with torch.no_grad():
                self._embeddings[h.id] = h.embed(as_batch(self.voice))
        return self._embeddings[h.id]


def _check_pool(target, pool):
    if not pool:
        raise ValidationError('Destination pool is empty')
    for profile in pool:
        if profile.gender == target.gender:
            raise ValidationError('Destination %s shares the gender of %s' % (profile.id, target.id))


def select_destination(target, pool, h):
    """
    The pool singer whose centroid is least similar to the target's; ties go
    to the lowest id.

    :arg SingerProfile target:
        The protected singer.
    :arg list pool:
        Opposite-gender ``SingerProfile`` instances.
    :arg EncoderHandle h:
        The identity encoder centroids are taken under.

    :returns:
        A ``DestinationSinger``.

    """
    _check_pool(target, pool)
    reference = target.centroid(h)
    ranked = sorted(pool, key=lambda p: p.id)
    sims = [float(cosine_sim(p.centroid(h), reference)) for p in ranked]
    best = ranked[int(np.argmin(sims))]
    logger.debug('Destination for %s is %s (similarity %.4f)', target.id, best.id, min(sims))
    return DestinationSinger(best)


def select_random_destination(target, pool, rng):
    """A uniformly drawn opposite-gender destination."""
    _check_pool(target, pool)
    ranked = sorted(pool, key=lambda p: p.id)
    return DestinationSinger(ranked[int(rng.integers(len(ranked)))])


def select_voice_destination(target, pool, h, rng):
    """
    The least similar destination, represented by one of its voices drawn
    at random instead of its centroid.
    """
    dest = select_destination(target, pool, h)
    voice = dest.profile.voices[int(rng.integers(len(dest.profile.voices)))]
    return DestinationSinger(dest.profile, voice)


def untargeted_identity_loss(x, x0, h, anchor=None):
    """
    ``Sim(Θ(x), Θ(x0))``.

    :arg x:
        Samples, shape ``(..., L)``.
    :arg x0:
        The original samples.
    :arg EncoderHandle h:
        An identity encoder.
    :arg torch.Tensor anchor:
        Optional. A precomputed ``Θ(x0)``.

    """
    if anchor is None:
        with torch.no_grad():
            anchor = h.embed(as_batch(x0))
    return cosine_sim(h.embed(as_batch(x)), anchor)


def targeted_identity_loss(x, dest, h):
    """``-Sim(Θ(x), Θ^c_des)``."""
    return -cosine_sim(h.embed(as_batch(x)), dest.centroid(h))


def gender_transformation_loss(x, x0, dest, h):
    """
    The untargeted and targeted identity losses, kept as two terms so each
    is normalized on its own.

    :returns:
        A ``(untargeted, targeted)`` tuple.

    """
    return untargeted_identity_loss(x, x0, h), targeted_identity_loss(x, dest, h)


class LyricTargetSet(object):
    """
    The lyric targets a protected voice is pulled toward, with their lyric
    and acoustic features cached per encoder.

    :arg list targets:
        Target ``Waveform`` instances, all of one length.
    :arg list symbols:
        Optional. The symbol sequence of every target.

    """
    def __init__(self, targets, symbols=None):
        if not targets:
            raise ValidationError('A lyric target set needs at least one target')
        lengths = set(len(t) for t in targets)
        if len(lengths) != 1:
            raise ValidationError('Lyric targets must share one length, got %s' % (sorted(lengths),))
        self.targets = list(targets)
        self.symbols = [tuple(s) for s in symbols] if symbols is not None else None
        self._batch = torch.stack([t.as_tensor() for t in self.targets])
        self._lyric = {}
        self._acoustic = {}


    def __len__(self):
        return len(self.targets)


    def __repr__(self):
        return "LyricTargetSet(K=%d)" % (len(self),)


    @property
    def sample_rate(self):
        return self.targets[0].sample_rate


    def lyric(self, h):
        """Cached ``Φ(χ_k)``, shape ``(K, T, d)``."""
        if h.id not in self._lyric:
            with torch.no_grad():
                self._lyric[h.id] = h.frames(self._batch)
        return self._lyric[h.id]


    def acoustic(self, spec):
        """Cached ``A(χ_k)``, shape ``(K, T, n_mels)``."""
        key = spec.as_tuple()
        if key not in self._acoustic:
            with torch.no_grad():
                self._acoustic[key] = log_mel(self._batch, spec, self.sample_rate)
        return self._acoustic[key]


def select_lyric_targets(source_symbols, corpus, num_targets, rng, exclude=None):
    """
    Draws ``num_targets`` corpus voices whose symbol sequence differs from
    the source's.

    :arg source_symbols:
        The protected voice's symbol sequence, or ``None`` when unknown.
    :arg Corpus corpus:
        The candidates.
    :arg int num_targets:
        ``K``, at least 1.
    :arg numpy.random.Generator rng:
        The random generator.
    :arg str exclude:
        Optional. A clip name never drawn.

    :returns:
        A ``LyricTargetSet``.

    """
    if num_targets < 1:
        raise ValidationError('Need at least one lyric target, got %r' % (num_targets,))
    terms = {} if source_symbols is None else {'exclude_symbols': source_symbols}
    pool = [c for c in corpus.find_clips(**terms) if c.name != exclude]
    if not pool:
        raise ValidationError('No corpus clip carries lyrics different from the source')
    if len(pool) < num_targets:
        logger.warning('Only %d lyric targets available, %d requested', len(pool), num_targets)
    picked = pool if len(pool) <= num_targets else \
        [pool[i] for i in sorted(rng.choice(len(pool), size=num_targets, replace=False))]
    return LyricTargetSet([c.voice for c in picked], [c.symbols for c in picked])


def high_hierarchy_loss(x, targets, h):
    """
    ``(1/K) sum_k Dist(Φ(x), Φ(χ_k))``.

    :arg x:
        Samples, shape ``(..., L)``.
    :arg LyricTargetSet targets:
        The lyric targets.
    :arg EncoderHandle h:
        A lyric encoder.

    """
    if h.kind != LYRIC:
        raise ValidationError('High-hierarchy loss needs a lyric encoder, got %s' % (h.kind,))
    frames = h.frames(as_batch(x)).unsqueeze(-3)
    return seq_dist(frames, targets.lyric(h)).mean(dim=-1)


def low_hierarchy_loss(x, targets, spec):
    """
    ``(1/K) sum_k Dist(A(x), A(χ_k))`` over log-mel features.

    :arg x:
        Samples, shape ``(..., L)``.
    :arg LyricTargetSet targets:
        The lyric targets.
    :arg FrameSpec spec:
        The acoustic front-end framing.

    """
    feats = log_mel(as_batch(x), spec, targets.sample_rate).unsqueeze(-3)
    return seq_dist(feats, targets.acoustic(spec)).mean(dim=-1)


class FlirConfig(object):
    """
    Frame-level interaction reduction settings.

    :arg int samples:
        Optional. ``R``, frames drawn per evaluation (default 32).
    :arg int divisor:
        Optional. Frame length and shift are ``L // divisor`` (default 200).

    """
    def __init__(self, samples=FLIR_SAMPLES, divisor=FLIR_DIVISOR):
        if int(samples) < 1:
            raise ValidationError('FL-IR sample count must be at least 1, got %r' % (samples,))
        if int(divisor) < 1:
            raise ValidationError('FL-IR divisor must be at least 1, got %r' % (divisor,))
        self.samples = int(samples)
        self.divisor = int(divisor)


    def __repr__(self):
        return "FlirConfig(samples=%d, divisor=%d)" % (self.samples, self.divisor)


    def frame_spec(self, length):
        return FrameSpec.for_length(length, self.divisor)


    def frame_masks(self, length):
        """One 0/1 mask row of ``length`` samples per frame."""
        bounds = frame_boundaries(length, self.frame_spec(length))
        masks = torch.zeros(len(bounds), length, dtype=torch.float64)
        for i, (start, end) in enumerate(bounds):
            masks[i, start:end] = 1.0
        return masks


    def draw(self, length, rng):
        """``min(R, frames)`` distinct frame indices."""
        n = len(frame_boundaries(length, self.frame_spec(length)))
        return np.sort(rng.choice(n, size=min(self.samples, n), replace=False))


def interaction_inputs(x, x0, masks):
    """
    For every mask row ``m``: ``x`` with the frame reverted to ``x0``, and
    ``x0`` with only the frame perturbed.

    :returns:
        A ``(reverted, isolated)`` tuple, each of shape ``(R, L)``.

    """
    x, x0 = as_batch(x), as_batch(x0)
    reverted = x * (1.0 - masks) + x0 * masks
    isolated = x0 * (1.0 - masks) + x * masks
    return reverted, isolated


def _frame_masks(x, cfg, rng, indices):
    length = as_batch(x).shape[-1]
    masks = cfg.frame_masks(length)
    if indices is None:
        indices = cfg.draw(length, rng)
    if len(indices) == 0:
        raise ValidationError('FL-IR needs at least one frame')
    return masks[torch.as_tensor(np.asarray(indices, dtype=np.int64))]


def flir_identity_loss(x, x0, h, cfg, rng=None, indices=None, anchor=None):
    """
    Mean over ``R`` sampled frames ``i`` of
    ``f_UT(x) + 1 - f_UT(x^{i,π}) - f_UT(x^{i,φ})``, the 1 standing for
    ``f_UT(x0, x0)``.

    :arg x:
        The protected samples, shape ``(L,)``.
    :arg x0:
        The original samples.
    :arg EncoderHandle h:
        An identity encoder.
    :arg FlirConfig cfg:
        Sampling settings.
    :arg numpy.random.Generator rng:
        Draws the frames; unused when ``indices`` is given.
    :arg indices:
        Optional. Frame indices to use instead of a draw.
    :arg torch.Tensor anchor:
        Optional. A precomputed ``Θ(x0)``.

    """
    if h.kind != IDENTITY:
        raise ValidationError('FL-IR identity loss needs an identity encoder, got %s' % (h.kind,))
    if anchor is None:
        with torch.no_grad():
            anchor = h.embed(as_batch(x0))
    masks = _frame_masks(x, cfg, rng, indices)
    reverted, isolated = interaction_inputs(x, x0, masks)
    whole = untargeted_identity_loss(x, x0, h, anchor)
    parts = untargeted_identity_loss(torch.cat([reverted, isolated]), x0, h, anchor)
    n = masks.shape[0]
    return (whole + 1.0 - parts[:n] - parts[n:]).mean()


def flir_lyric_loss(x, x0, targets, h, cfg, rng=None, indices=None, base=None):
    """
    Mean over ``R`` sampled frames ``i`` of
    ``f_H(x) + f_H(x0) - f_H(x^{i,π}) - f_H(x^{i,φ})``.

    :arg LyricTargetSet targets:
        The lyric targets.
    :arg EncoderHandle h:
        A lyric encoder.
    :arg base:
        Optional. A precomputed ``f_H(x0)``.

    See ``flir_identity_loss`` for the other arguments.

    """
    if base is None:
        with torch.no_grad():
            base = high_hierarchy_loss(x0, targets, h)
    masks = _frame_masks(x, cfg, rng, indices)
    reverted, isolated = interaction_inputs(x, x0, masks)
    whole = high_hierarchy_loss(x, targets, h)
    parts = high_hierarchy_loss(torch.cat([reverted, isolated]), targets, h)
    n = masks.shape[0]
    return (whole + base - parts[:n] - parts[n:]).mean()
