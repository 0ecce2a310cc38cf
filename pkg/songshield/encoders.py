# -*- coding: utf-8 -*-

"""
This module contains the differentiable toy encoders: the log-mel acoustic
front end, the identity encoder, the lyric encoder, singer profiles, and the
registry that keeps held-out evaluation encoders out of protection
ensembles.

Every encoder works on batches: samples of shape ``(..., L)`` give frame
outputs of shape ``(..., T, d)``.
"""

import copy
import functools
import logging

import librosa
import numpy as np
import torch

from songshield.audio import FrameSpec, Waveform, stft_tensor
from songshield.const import (
    ACOUSTIC, EMBEDDING_DIM, FRONT_END_FRAME_LENGTH, FRONT_END_FRAME_SHIFT,
    GENDERS, HIDDEN_UNITS, IDENTITY, LOG_EPS, LYRIC, N_MELS, SAMPLE_RATE,
    ValidationError
)

logger = logging.getLogger(__name__)


def default_front_end():
    """The shipped encoder framing: 512-sample frames every 128 samples."""
    return FrameSpec(FRONT_END_FRAME_LENGTH, FRONT_END_FRAME_SHIFT)


@functools.lru_cache(maxsize=16)
def _mel_basis(sample_rate, fft_size, n_mels):
    basis = librosa.filters.mel(sr=sample_rate, n_fft=fft_size, n_mels=n_mels,
                                fmin=0.0, fmax=sample_rate / 2.0)
    return basis.astype(np.float64)


def mel_basis(sample_rate, fft_size, n_mels):
    """The ``(n_mels, F)`` mel filterbank as a float64 tensor."""
    return torch.tensor(_mel_basis(int(sample_rate), int(fft_size), int(n_mels)))


def log_mel(x, spec, sample_rate=SAMPLE_RATE, n_mels=N_MELS, eps=LOG_EPS):
    """
    Differentiable log-mel filterbank energies, ``log(mel + eps)``.

    :arg torch.Tensor x:
        Samples of shape ``(..., L)``.
    :arg FrameSpec spec:
        The framing.
    :arg int sample_rate:
        Optional. Samples per second.
    :arg int n_mels:
        Optional. Number of mel bands (default 64).
    :arg float eps:
        Optional. Floor inside the log; silence maps to ``log(eps)``.

    :returns:
        Tensor of shape ``(..., T, n_mels)``.

    """
    bins = stft_tensor(x, spec) / spec.frame_length
    power = bins.real ** 2 + bins.imag ** 2
    return torch.log(power @ mel_basis(sample_rate, spec.fft_size, n_mels).T + eps)


def as_batch(x):
    """Returns samples as a float64 tensor; accepts Waveforms and arrays."""
    if isinstance(x, Waveform):
        return x.as_tensor()
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def acoustic_features(w, spec=None, sample_rate=None, n_mels=N_MELS):
    """
    Low-level acoustic features: the log-mel front end itself.

    :arg Waveform w:
        The waveform, at least one frame long.
    :arg FrameSpec spec:
        Optional. The framing; defaults to the encoder front end.
    :arg int sample_rate:
        Optional. Defaults to the waveform's.
    :arg int n_mels:
        Optional. Number of mel bands.

    :returns:
        A ``(T, n_mels)`` numpy array.

    """
    spec = spec or default_front_end()
    sample_rate = sample_rate or w.sample_rate
    with torch.no_grad():
        return log_mel(as_batch(w), spec, sample_rate, n_mels).numpy()


class EncoderHandle(torch.nn.Module):
    """
    A toy encoder: standardized log-mel, two tanh layers, a linear output.
    Identity encoders mean-pool the frame outputs into one embedding; lyric
    encoders keep one row per frame. Acoustic handles are the bare front end.

    The classification head used in training is kept on the handle but is
    not part of the forward map.

    :arg str kind:
        ``const.IDENTITY``, ``const.LYRIC`` or ``const.ACOUSTIC``.
    :arg str encoder_id:
        Unique id within a registry.
    :arg int n_classes:
        Optional. Outputs of the classification head.
    :arg int seed:
        Optional. Seed the parameters are initialized from.
    :arg bool held_out:
        Optional. Marks an evaluation-only encoder.

    """
    def __init__(self, kind, encoder_id, n_classes=2, seed=0, held_out=False,
                 front_end=None, sample_rate=SAMPLE_RATE, n_mels=N_MELS,
                 hidden=HIDDEN_UNITS, out_dim=EMBEDDING_DIM):
        super(EncoderHandle, self).__init__()
        if kind not in (IDENTITY, LYRIC, ACOUSTIC):
            raise ValidationError('Unknown encoder kind %r' % (kind,))

        self.kind = kind
        self.id = str(encoder_id)
        self.seed = int(seed)
        self.held_out = bool(held_out)
        self.front_end = front_end or default_front_end()
        self.sample_rate = int(sample_rate)
        self.n_mels = int(n_mels)
        self.hidden = int(hidden)
        self.out_dim = int(out_dim) if kind != ACOUSTIC else int(n_mels)
        self.n_classes = int(n_classes)

        generator = torch.Generator().manual_seed(self.seed)
        self.register_buffer('feature_mean', torch.zeros(self.n_mels, dtype=torch.float64))
        self.register_buffer('feature_std', torch.ones(self.n_mels, dtype=torch.float64))
        if kind != ACOUSTIC:
            self.layer1 = self._linear(self.n_mels, self.hidden, generator)
            self.layer2 = self._linear(self.hidden, self.hidden, generator)
            self.output = self._linear(self.hidden, self.out_dim, generator)
            self.head = self._linear(self.out_dim, self.n_classes, generator)


    @staticmethod
    def _linear(n_in, n_out, generator):
        layer = torch.nn.Linear(n_in, n_out, dtype=torch.float64)
        bound = 1.0 / np.sqrt(n_in)
        with torch.no_grad():
            layer.weight.uniform_(-bound, bound, generator=generator)
            layer.bias.uniform_(-bound, bound, generator=generator)
        return layer


    def __repr__(self):
        return "EncoderHandle(kind=%r, id=%r, held_out=%r)" % (self.kind, self.id, self.held_out)


    def features(self, x):
        """Log-mel front end, shape ``(..., T, n_mels)``."""
        return log_mel(as_batch(x), self.front_end, self.sample_rate, self.n_mels)


    def frames(self, x):
        """
        Per-frame network outputs.

        :arg x:
            Samples of shape ``(..., L)``.

        :returns:
            Tensor of shape ``(..., T, out_dim)``.

        """
        feats = self.features(x)
        if self.kind == ACOUSTIC:
            return feats
        h = (feats - self.feature_mean) / self.feature_std
        h = torch.tanh(self.layer1(h))
        h = torch.tanh(self.layer2(h))
        return self.output(h)


    def embed(self, x):
        """Mean-pooled frame outputs, shape ``(..., out_dim)``."""
        return self.frames(x).mean(dim=-2)


    def forward(self, x):
        if self.kind == IDENTITY:
            return self.embed(x)
        return self.frames(x)


    def logits(self, x):
        """Classification-head logits: per clip for identity, per frame for lyric."""
        return self.head(self.forward(x))


    def freeze(self):
        """Stops parameter gradients; input gradients still flow."""
        self.eval()
        for param in self.parameters():
            param.requires_grad_(False)
        return self


    def thaw(self):
        """A trainable deep copy of this handle."""
        clone = copy.deepcopy(self)
        clone.train()
        for param in clone.parameters():
            param.requires_grad_(True)
        return clone


def _require(h, kind):
    if h.kind != kind:
        raise ValidationError('Expected a %s encoder, got %s (%s)' % (kind, h.kind, h.id))


def identity_embed(h, w):
    """
    The identity feature of a waveform.

    :arg EncoderHandle h:
        An identity encoder.
    :arg Waveform w:
        The waveform.

    :returns:
        A numpy vector of ``h.out_dim`` reals.

    """
    _require(h, IDENTITY)
    with torch.no_grad():
        return h.embed(w).numpy()


def lyric_features(h, w):
    """
    The lyric feature sequence of a waveform, one row per analysis frame.

    :arg EncoderHandle h:
        A lyric encoder.
    :arg Waveform w:
        The waveform.

    :returns:
        A ``(T, out_dim)`` numpy array.

    """
    _require(h, LYRIC)
    with torch.no_grad():
        return h.frames(w).numpy()


def input_gradient(h, w, cotangent):
    """
    Vector-Jacobian product of the encoder, front end included, with respect
    to the input samples.

    :arg EncoderHandle h:
        Any encoder.
    :arg Waveform w:
        The point of linearization.
    :arg cotangent:
        Array matching the forward output's shape.

    :returns:
        A numpy array of ``len(w)`` reals.

    """
    x = as_batch(w).clone().requires_grad_(True)
    out = h(x)
    cotangent = torch.as_tensor(np.asarray(cotangent, dtype=np.float64))
    if tuple(cotangent.shape) != tuple(out.shape):
        raise ValidationError('Cotangent shape %s does not match output %s' % (
            tuple(cotangent.shape), tuple(out.shape)))
    grad, = torch.autograd.grad((out * cotangent).sum(), x)
    return grad.numpy()


def ensemble(losses):
    """
    Arithmetic mean of per-encoder losses; gradients average with them.

    :arg list losses:
        One loss (tensor or float) per encoder.

    :returns:
        The mean, a tensor.

    """
    losses = list(losses)
    if not losses:
        raise ValidationError('Cannot average an empty encoder ensemble')
    return torch.stack([torch.as_tensor(loss, dtype=torch.float64) for loss in losses]).mean(dim=0)


class SingerProfile(object):
    """
    A singer: id, gender and clean voices. Centroid identity features are
    computed per encoder on first use and cached.

    :arg str singer_id:
        The singer id.
    :arg str gender:
        ``const.FEMALE`` or ``const.MALE``.
    :arg list voices:
        The singer's ``Waveform`` instances.

    """
    def __init__(self, singer_id, gender, voices):
        if gender not in GENDERS:
            raise ValidationError('Unknown gender %r' % (gender,))
        if not voices:
            raise ValidationError('Singer %s has no voices' % (singer_id,))
        self.id = str(singer_id)
        self.gender = gender
        self.voices = list(voices)
        self._centroids = {}


    def __repr__(self):
        return "SingerProfile(id=%r, gender=%r, voices=%d)" % (self.id, self.gender, len(self.voices))


    @classmethod
    def build(cls, singer_id, gender, voices, h=None):
        """
        A profile with its centroid under ``h`` computed up front.

        :arg EncoderHandle h:
            Optional. An identity encoder.

        """
        profile = cls(singer_id, gender, voices)
        if h is not None:
            profile.centroid(h)
        return profile


    def centroid(self, h):
        """
        Mean identity embedding of the singer's voices under ``h``.

        :arg EncoderHandle h:
            An identity encoder.

        :returns:
            A detached tensor of ``h.out_dim`` reals.

        """
        _require(h, IDENTITY)
        if h.id not in self._centroids:
            with torch.no_grad():
                batch = torch.stack([as_batch(v) for v in self.voices])
                self._centroids[h.id] = h.embed(batch).mean(dim=0)
        return self._centroids[h.id]


class EncoderRegistry(object):
    """
    Trained encoders by id. Held-out encoders are only reachable through
    ``held_out``; ``ensemble`` refuses them.
    """
    def __init__(self, handles=None, vocabulary=None):
        self.handles = {}
        self.vocabulary = vocabulary or {}
        self.accuracies = {}
        for h in handles or []:
            self.add(h)


    def __len__(self):
        return len(self.handles)


    def __iter__(self):
        return iter(self.handles[key] for key in sorted(self.handles))


    def __repr__(self):
        return "EncoderRegistry(ids=%r)" % (sorted(self.handles),)


    def add(self, h):
        if h.id in self.handles:
            raise ValidationError('Duplicate encoder id %r' % (h.id,))
        self.handles[h.id] = h


    def get(self, encoder_id):
        if encoder_id not in self.handles:
            raise ValidationError('No encoder with id %r' % (encoder_id,))
        return self.handles[encoder_id]


    def ensemble(self, kind, ids=None):
        """
        Protection ensemble of one kind.

        :arg str kind:
            ``const.IDENTITY`` or ``const.LYRIC``.
        :arg list ids:
            Optional. Encoder ids to pick; defaults to every non-held-out
            encoder of ``kind``.

        :returns:
            A list of ``EncoderHandle`` instances, sorted by id.

        """
        if ids is None:
            picked = [h for h in self if h.kind == kind and not h.held_out]
        else:
            picked = [self.get(i) for i in ids]
            for h in picked:
                if h.held_out:
                    raise ValidationError('Held-out encoder %s cannot join an ensemble' % (h.id,))
                _require(h, kind)
        if not picked:
            raise ValidationError('No %s encoders available for an ensemble' % (kind,))
        return picked


    def held_out(self, kind):
        """The evaluation-only encoder of ``kind``."""
        for h in self:
            if h.kind == kind and h.held_out:
                return h
        raise ValidationError('No held-out %s encoder in the registry' % (kind,))


def classify(h, w):
    """
    Class indices from the classification head: one per clip for identity
    encoders, one per frame for lyric encoders.

    :arg EncoderHandle h:
        An identity or lyric encoder.
    :arg w:
        A ``Waveform`` or samples of shape ``(..., L)``.

    :returns:
        An int array.

    """
    if h.kind == ACOUSTIC:
        raise ValidationError('Acoustic handles have no classification head')
    with torch.no_grad():
        return h.logits(as_batch(w)).argmax(dim=-1).numpy()


def accuracy(h, clips, classes):
    """
    Share of clips (identity) or of single-symbol frames (lyric) the head
    gets right.

    :arg EncoderHandle h:
        An identity or lyric encoder.
    :arg list clips:
        ``corpus.Clip`` instances.
    :arg list classes:
        Class names in head order: singer ids or symbols.

    :returns:
        A float in [0, 1].

    """
    clips = list(clips)
    if not clips:
        raise ValidationError('Cannot measure accuracy on zero clips')
    batch = torch.stack([c.voice.as_tensor() for c in clips])
    predicted = classify(h, batch)
    if h.kind == IDENTITY:
        truth = np.array([classes.index(c.singer) for c in clips])
        return float(np.mean(predicted == truth))

    hits, total = 0, 0
    for row, clip in zip(predicted, clips):
        for t, label in enumerate(clip.frame_labels(h.front_end)):
            if label < 0:
                continue
            total += 1
            hits += int(row[t] == classes.index(clip.symbols[label]))
    if total == 0:
        raise ValidationError('No single-symbol frames to score')
    return hits / float(total)
