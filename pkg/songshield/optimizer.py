# -*- coding: utf-8 -*-

"""
This module runs the protection: every iteration evaluates the enabled
disruption and utility losses, normalizes each with running statistics,
sums them, and takes one clipped Adam step on the voice samples.
"""

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import torch

from songshield.audio import FrameSpec, Waveform, mix_to_mono, save_waveform
from songshield.const import (
    ADAM_BETA1, ADAM_BETA2, ADAM_EPS, ANALYSIS_FRAME_LENGTH, ANALYSIS_FRAME_SHIFT,
    AUTO, BOTH, F_H, F_ID_TE, F_L, F_LY_TE, F_T, F_U, F_UT, FULL, HIGH,
    IDENTITY, IDENTITY_VARIANTS, ITERATIONS, JOINT, LEARNING_RATE, LOSSES, LOW,
    LYRIC, LYRIC_HIERARCHIES, NORMALIZE_EPS, NUM_TARGETS, RANDOM_DESTINATION,
    UNTARGETED, UTILITY_MASKERS, VOICE_DESTINATION, NumericalError,
    ValidationError
)
from songshield.encoders import SingerProfile, ensemble
from songshield.losses import (
    FlirConfig, flir_identity_loss, flir_lyric_loss, high_hierarchy_loss,
    low_hierarchy_loss, select_destination, select_lyric_targets,
    select_random_destination, select_voice_destination, targeted_identity_loss,
    untargeted_identity_loss
)
from songshield.metrics import snr
from songshield.psychoacoustic import song_thresholds, utility_loss
from songshield.utils import save_summary, save_trace

logger = logging.getLogger(__name__)


class ProtectionConfig(object):
    """
    Protection settings.

    :arg int iterations:
        Optional. ``N`` (default 1000).
    :arg float learning_rate:
        Optional. Adam step size (default 0.001).
    :arg bool protect_target:
        Optional. Enables the identity losses (default ``True``).
    :arg bool protect_source:
        Optional. Enables the lyric losses (default ``True``).
    :arg bool transfer_identity:
        Optional. Enables the identity interaction loss (default ``False``).
    :arg bool transfer_lyric:
        Optional. Enables the lyric interaction loss (default ``False``).
    :arg int num_targets:
        Optional. ``K`` lyric targets (default 10).
    :arg FlirConfig flir:
        Optional. Interaction sampling settings.
    :arg FrameSpec analysis:
        Optional. Psychoacoustic framing (256/128).
    :arg int seed:
        Optional. Seeds target selection and frame draws.
    :arg list identity_ids:
        Optional. Identity ensemble ids; every non-held-out one by default.
    :arg list lyric_ids:
        Optional. Lyric ensemble ids.
    :arg balance:
        Optional. ``'auto'`` for running normalization, or a dict of loss
        name to weight for raw weighted sums.
    :arg str identity_variant:
        Optional. One of ``const.IDENTITY_VARIANTS``.
    :arg str lyric_hierarchy:
        Optional. One of ``const.LYRIC_HIERARCHIES``.
    :arg str utility_masker:
        Optional. ``'joint'`` masks with voice and backing, ``'voice'`` with
        the voice alone.

    """
    def __init__(self, iterations=ITERATIONS, learning_rate=LEARNING_RATE,
                 protect_target=True, protect_source=True, transfer_identity=False,
                 transfer_lyric=False, num_targets=NUM_TARGETS, flir=None, analysis=None,
                 seed=0, identity_ids=None, lyric_ids=None, balance=AUTO,
                 identity_variant=FULL, lyric_hierarchy=BOTH, utility_masker=JOINT):
        self.iterations = int(iterations)
        self.learning_rate = float(learning_rate)
        self.protect_target = bool(protect_target)
        self.protect_source = bool(protect_source)
        self.transfer_identity = bool(transfer_identity)
        self.transfer_lyric = bool(transfer_lyric)
        self.num_targets = int(num_targets)
        self.flir = flir or FlirConfig()
        self.analysis = analysis or FrameSpec(ANALYSIS_FRAME_LENGTH, ANALYSIS_FRAME_SHIFT)
        self.seed = int(seed)
        self.identity_ids = identity_ids
        self.lyric_ids = lyric_ids
        self.balance = balance
        self.identity_variant = identity_variant
        self.lyric_hierarchy = lyric_hierarchy
        self.utility_masker = utility_masker
        self.validate()


    def __repr__(self):
        return ("ProtectionConfig(iterations=%d, learning_rate=%g, flags=%s)" %
                (self.iterations, self.learning_rate, self.enabled_losses()))


    def validate(self):
        if self.iterations < 1:
            raise ValidationError('Iterations must be at least 1, got %d' % (self.iterations,))
        if not self.learning_rate > 0:
            raise ValidationError('Learning rate must be positive, got %r' % (self.learning_rate,))
        if self.num_targets < 1:
            raise ValidationError('K must be at least 1, got %d' % (self.num_targets,))
        if self.identity_variant not in IDENTITY_VARIANTS:
            raise ValidationError('Unknown identity variant %r' % (self.identity_variant,))
        if self.lyric_hierarchy not in LYRIC_HIERARCHIES:
            raise ValidationError('Unknown lyric hierarchy %r' % (self.lyric_hierarchy,))
        if self.utility_masker not in UTILITY_MASKERS:
            raise ValidationError('Unknown utility masker %r' % (self.utility_masker,))
        if self.balance != AUTO:
            if not isinstance(self.balance, dict):
                raise ValidationError("Balance must be 'auto' or a dict of weights")
            unknown = set(self.balance) - set(LOSSES)
            if unknown:
                raise ValidationError('Unknown losses in balance: %s' % (', '.join(sorted(unknown)),))
            for name, weight in self.balance.items():
                if not math.isfinite(float(weight)):
                    raise ValidationError('Balance weight of %s is not finite' % (name,))


    @property
    def protective(self):
        return self.protect_target or self.protect_source


    def enabled_losses(self):
        """Enabled loss names, in evaluation order."""
        enabled = set([F_U])
        if self.protect_target:
            enabled.add(F_UT)
            if self.identity_variant != UNTARGETED:
                enabled.add(F_T)
        if self.protect_source:
            if self.lyric_hierarchy in (BOTH, HIGH):
                enabled.add(F_H)
            if self.lyric_hierarchy in (BOTH, LOW):
                enabled.add(F_L)
        if self.transfer_identity:
            enabled.add(F_ID_TE)
        if self.transfer_lyric:
            enabled.add(F_LY_TE)
        return [name for name in LOSSES if name in enabled]


    def weight(self, name):
        if self.balance == AUTO:
            return 1.0
        return float(self.balance.get(name, 1.0))


    def replace(self, **changes):
        """A copy with some settings changed."""
        params = dict(vars(self))
        params.update(changes)
        return ProtectionConfig(**params)


class LossStats(object):
    """
    Running mean and variance of every loss.

    :arg float eps:
        Optional. Floor under the square root.

    """
    def __init__(self, eps=NORMALIZE_EPS):
        self.eps = eps
        self.mu = {}
        self.sigma = {}


    def __repr__(self):
        return "LossStats(mu=%r, sigma=%r)" % (self.mu, self.sigma)


def normalize_loss(stats, k, f_k, n):
    """
    Updates the running mean, then the running variance with the updated
    mean, and returns ``(f_k - mu_k) / sqrt(sigma_k + eps)``. Both
    statistics start at ``mu = 0``, ``sigma = 1`` and are constants for the
    gradient.

    :arg LossStats stats:
        The running statistics, updated in place.
    :arg str k:
        The loss name.
    :arg f_k:
        The loss value, a float or a tensor.
    :arg int n:
        The iteration, from 1.

    :returns:
        The normalized value, the same type as ``f_k``.

    """
    if n < 1:
        raise ValidationError('Iteration count must start at 1, got %r' % (n,))
    value = float(f_k.detach()) if isinstance(f_k, torch.Tensor) else float(f_k)
    mu = stats.mu.get(k, 0.0)
    sigma = stats.sigma.get(k, 1.0)
    mu = mu + (value - mu) / n
    sigma = sigma + ((value - mu) ** 2 - sigma) / n
    stats.mu[k], stats.sigma[k] = mu, sigma
    return (f_k - mu) / math.sqrt(sigma + stats.eps)


class AdamState(object):
    """First and second moment estimates plus the step count."""
    def __init__(self, shape, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        self.m = torch.zeros(shape, dtype=torch.float64)
        self.v = torch.zeros(shape, dtype=torch.float64)
        self.t = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps


def adam_step(state, params, grad, learning_rate):
    """
    One bias-corrected Adam update.

    :arg AdamState state:
        The moments, updated in place.
    :arg torch.Tensor params:
        The current parameters.
    :arg torch.Tensor grad:
        The gradient, same shape.
    :arg float learning_rate:
        The step size.

    :returns:
        The updated parameters, a new tensor.

    """
    grad = torch.as_tensor(grad, dtype=torch.float64)
    if tuple(grad.shape) != tuple(params.shape) or tuple(state.m.shape) != tuple(params.shape):
        raise ValidationError('Adam shapes differ: params %s, grad %s, state %s' % (
            tuple(params.shape), tuple(grad.shape), tuple(state.m.shape)))
    if not bool(torch.isfinite(grad).all()):
        raise NumericalError('Non-finite gradient at Adam step %d' % (state.t + 1,))

    state.t += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = state.m / (1 - state.beta1 ** state.t)
    v_hat = state.v / (1 - state.beta2 ** state.t)
    return params - learning_rate * m_hat / (torch.sqrt(v_hat) + state.eps)


class ProtectionContext(object):
    """
    Everything a protection job needs besides the song and the config.

    :arg tuple thresholds:
        ``(voice, backing, joint)`` masking thresholds of the song.
    :arg list identity_handles:
        The identity ensemble.
    :arg list lyric_handles:
        The lyric ensemble.
    :arg DestinationSinger destination:
        Optional. Required when identities are protected.
    :arg LyricTargetSet targets:
        Optional. Required when lyrics are protected.
    :arg SingerProfile source:
        Optional. The protected singer.

    """
    def __init__(self, thresholds, identity_handles, lyric_handles,
                 destination=None, targets=None, source=None):
        self.thresholds = thresholds
        self.identity_handles = list(identity_handles)
        self.lyric_handles = list(lyric_handles)
        self.destination = destination
        self.targets = targets
        self.source = source


    def __repr__(self):
        return "ProtectionContext(identity=%r, lyric=%r, destination=%r, targets=%r)" % (
            [h.id for h in self.identity_handles], [h.id for h in self.lyric_handles],
            self.destination, self.targets)


    def threshold(self, cfg):
        voice, _, joint = self.thresholds
        return joint if cfg.utility_masker == JOINT else voice


    def check(self, cfg):
        enabled = cfg.enabled_losses()
        if set(enabled) & set([F_UT, F_T, F_ID_TE]) and not self.identity_handles:
            raise ValidationError('Identity losses enabled without identity encoders')
        if F_T in enabled and self.destination is None:
            raise ValidationError('Targeted identity loss needs a destination singer')
        if set(enabled) & set([F_H, F_L, F_LY_TE]) and self.targets is None:
            raise ValidationError('Lyric losses need a lyric target set')
        if set(enabled) & set([F_H, F_LY_TE]) and not self.lyric_handles:
            raise ValidationError('Lyric losses enabled without lyric encoders')
        if self.source is not None and self.destination is not None and \
                self.source.gender == self.destination.gender:
            raise ValidationError('Destination %s shares the gender of %s' % (
                self.destination.id, self.source.id))


class ProtectionResult(object):
    """
    The protected voice plus per-iteration traces.

    ``raw`` and ``normalized`` map every enabled loss name to ``N`` values;
    ``seconds`` holds the wall time of each iteration; ``snapshot`` the
    final metrics.
    """
    def __init__(self, protected, raw, normalized, seconds, snapshot):
        self.protected = protected
        self.raw = raw
        self.normalized = normalized
        self.seconds = seconds
        self.snapshot = snapshot


    def __repr__(self):
        return "ProtectionResult(iterations=%d, losses=%r)" % (len(self.seconds), list(self.raw))


    def trace_rows(self):
        """One dict per iteration and enabled loss."""
        rows = []
        for i, seconds in enumerate(self.seconds):
            for name in self.raw:
                rows.append({'iteration': i + 1, 'loss': name,
                             'raw': '%.10g' % self.raw[name][i],
                             'normalized': '%.10g' % self.normalized[name][i],
                             'seconds': '%.6f' % seconds})
        return rows


class _Objective(object):
    """Evaluates the enabled losses at one point, reusing anchors at x0."""
    def __init__(self, x0, ctx, cfg):
        self.x0 = x0
        self.ctx = ctx
        self.cfg = cfg
        self.theta = ctx.threshold(cfg)
        with torch.no_grad():
            self.anchors = dict((h.id, h.embed(x0)) for h in ctx.identity_handles)
            self.bases = {}
            if ctx.targets is not None:
                self.bases = dict((h.id, high_hierarchy_loss(x0, ctx.targets, h))
                                  for h in ctx.lyric_handles)


    def __call__(self, name, x, rng):
        ctx, cfg = self.ctx, self.cfg
        if name == F_U:
            return utility_loss(x, self.x0, self.theta, cfg.analysis)
        if name == F_UT:
            return ensemble(untargeted_identity_loss(x, self.x0, h, self.anchors[h.id])
                            for h in ctx.identity_handles)
        if name == F_T:
            return ensemble(targeted_identity_loss(x, ctx.destination, h)
                            for h in ctx.identity_handles)
        if name == F_H:
            return ensemble(high_hierarchy_loss(x, ctx.targets, h) for h in ctx.lyric_handles)
        if name == F_L:
            spec = (ctx.lyric_handles or ctx.identity_handles)[0].front_end
            return low_hierarchy_loss(x, ctx.targets, spec)
        if name == F_ID_TE:
            indices = cfg.flir.draw(x.shape[-1], rng)
            return ensemble(flir_identity_loss(x, self.x0, h, cfg.flir, indices=indices,
                                               anchor=self.anchors[h.id])
                            for h in ctx.identity_handles)
        if name == F_LY_TE:
            indices = cfg.flir.draw(x.shape[-1], rng)
            return ensemble(flir_lyric_loss(x, self.x0, ctx.targets, h, cfg.flir,
                                            indices=indices, base=self.bases[h.id])
                            for h in ctx.lyric_handles)
        raise ValidationError('Unknown loss %r' % (name,))


def protect(song, ctx, cfg):
    """
    Protects the voice of ``song``.

    :arg Song song:
        The song; only the voice is perturbed.
    :arg ProtectionContext ctx:
        Encoders, destination, lyric targets and thresholds.
    :arg ProtectionConfig cfg:
        The settings.

    :returns:
        A ``ProtectionResult``.

    """
    ctx.check(cfg)
    enabled = cfg.enabled_losses()
    rng = np.random.default_rng(cfg.seed)
    x0 = song.voice.as_tensor()
    x = x0.clone()
    objective = _Objective(x0, ctx, cfg)
    stats = LossStats()
    adam = AdamState(x.shape)
    raw = dict((name, []) for name in enabled)
    normalized = dict((name, []) for name in enabled)
    seconds = []

    logger.info('Protecting %d samples for %d iterations with %s',
                x.shape[-1], cfg.iterations, ', '.join(enabled))
    for n in range(1, cfg.iterations + 1):
        start = time.perf_counter()
        point = x.clone().requires_grad_(True)
        total = torch.zeros((), dtype=torch.float64)
        for name in enabled:
            value = objective(name, point, rng)
            if not bool(torch.isfinite(value).all()):
                raise NumericalError('Loss %s is not finite at iteration %d' % (name, n))
            if cfg.balance == AUTO:
                term = normalize_loss(stats, name, value, n)
            else:
                term = cfg.weight(name) * value
            total = total + term
            raw[name].append(float(value.detach()))
            normalized[name].append(float(term.detach()))

        if total.requires_grad:
            grad, = torch.autograd.grad(total, point, allow_unused=True)
            if grad is None:
                grad = torch.zeros_like(x)
        else:
            grad = torch.zeros_like(x)
        x = adam_step(adam, x, grad, cfg.learning_rate).clamp(-1.0, 1.0)

        seconds.append(time.perf_counter() - start)
        logger.debug('Iteration %d: %s (%.3fs)', n,
                     ' '.join('%s=%.5f' % (name, raw[name][-1]) for name in enabled), seconds[-1])
        if n % max(1, cfg.iterations // 10) == 0:
            logger.info('Iteration %d/%d, total %.5f', n, cfg.iterations, float(total.detach()))

    protected = Waveform.from_tensor(x, song.sample_rate)
    snapshot = snapshot_metrics(song, protected, raw)
    logger.info('Protection done: voice SNR %.2f dB', snapshot['snr_voice_db'])
    return ProtectionResult(protected, raw, normalized, seconds, snapshot)


def snapshot_metrics(song, protected, raw):
    """Final SNRs and final raw loss values."""
    snapshot = {
        'snr_voice_db': snr(song.voice, protected),
        'snr_song_db': snr(mix_to_mono(song), mix_to_mono(song.with_voice(protected))),
    }
    for name, values in raw.items():
        snapshot['final_%s' % name] = values[-1] if values else float('nan')
    return snapshot


def build_profiles(corpus):
    """A ``SingerProfile`` per corpus singer over all its clean voices."""
    return dict((singer, SingerProfile(singer, corpus.gender_of(singer),
                                       [c.voice for c in corpus.find_clips(singer=singer)]))
                for singer in corpus.singers())


def build_context(song, source, corpus, registry, cfg, rng, symbols=None, exclude=None,
                  profiles=None):
    """
    Assembles the protection context of one song.

    :arg Song song:
        The song to protect.
    :arg SingerProfile source:
        The protected singer.
    :arg Corpus corpus:
        Auxiliary singers and lyric targets.
    :arg EncoderRegistry registry:
        The trained encoders.
    :arg ProtectionConfig cfg:
        The settings.
    :arg numpy.random.Generator rng:
        Draws lyric targets and random destinations.
    :arg symbols:
        Optional. The song's symbol sequence; targets never repeat it.
    :arg str exclude:
        Optional. A corpus clip name never used as a target.
    :arg dict profiles:
        Optional. Precomputed singer profiles.

    :returns:
        A ``ProtectionContext``.

    """
    identity_handles = registry.ensemble(IDENTITY, cfg.identity_ids)
    lyric_handles = registry.ensemble(LYRIC, cfg.lyric_ids)
    destination, targets = None, None

    if cfg.protect_target:
        profiles = profiles or build_profiles(corpus)
        pool = [p for p in profiles.values() if p.gender != source.gender]
        if cfg.identity_variant == RANDOM_DESTINATION:
            destination = select_random_destination(source, pool, rng)
        elif cfg.identity_variant == VOICE_DESTINATION:
            destination = select_voice_destination(source, pool, identity_handles[0], rng)
        else:
            destination = select_destination(source, pool, identity_handles[0])

    if cfg.protect_source or cfg.transfer_lyric:
        targets = select_lyric_targets(symbols, corpus, cfg.num_targets, rng, exclude)

    thresholds = song_thresholds(song, cfg.analysis)
    return ProtectionContext(thresholds, identity_handles, lyric_handles,
                             destination, targets, source)


def clip_seed(seed, index):
    """An independent seed for job ``index``."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _protect_clip(job):
    index, clip, corpus, registry, cfg, out_dir, profiles = job

    seed = clip_seed(cfg.seed, index)
    rng = np.random.default_rng(seed)
    source = profiles[clip.singer]
    ctx = build_context(clip.song, source, corpus, registry, cfg, rng,
                        symbols=clip.symbols, exclude=clip.name, profiles=profiles)
    job_cfg = cfg.replace(seed=seed)
    result = protect(clip.song, ctx, job_cfg)

    save_waveform(result.protected, os.path.join(out_dir, '%s_voice.wav' % clip.name))
    save_trace(result, os.path.join(out_dir, '%s.trace.csv' % clip.name))
    save_summary(dict([('clip', clip.name), ('singer', clip.singer),
                       ('destination', ctx.destination.id if ctx.destination else '')] +
                      sorted(result.snapshot.items())),
                 os.path.join(out_dir, '%s.summary.txt' % clip.name))
    return clip.name, result.snapshot


def protect_corpus(corpus, registry, cfg, out_dir, workers=1):
    """
    Protects every clip of a corpus as an independent job and writes the
    protected voices, traces and summaries to ``out_dir``.

    :arg Corpus corpus:
        The clips, also the auxiliary singers and lyric targets.
    :arg EncoderRegistry registry:
        The trained encoders.
    :arg ProtectionConfig cfg:
        The settings; every job derives its own seed from ``cfg.seed``.
    :arg str out_dir:
        The output folder, created when missing.
    :arg int workers:
        Optional. Parallel worker processes.

    :returns:
        A dict of clip name to final metrics snapshot.

    """
    os.makedirs(out_dir, exist_ok=True)
    profiles = build_profiles(corpus)
    jobs = [(i, clip, corpus, registry, cfg, out_dir, profiles) for i, clip in enumerate(corpus)]
    logger.info('Protecting %d clips with %d worker(s)', len(jobs), workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_protect_clip, jobs))
    else:
        results = [_protect_clip(job) for job in jobs]
    return dict(results)
