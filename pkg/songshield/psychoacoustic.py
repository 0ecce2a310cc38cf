# -*- coding: utf-8 -*-

"""
This module contains the simultaneous-masking model: power spectral density,
masking thresholds of a masker (voice, backing track, or both), and the
hinge utility loss that keeps a perturbation under a threshold.

The threshold follows an MPEG-1 model-1 style pipeline:

1. STFT analysis and normalization to a 96 dB reference
2. Identification of tonal and non-tonal maskers
3. Filtering against the absolute threshold of hearing and 0.5 Bark decimation
4. Individual two-slope spreading across the Bark scale
5. Power-sum of individual thresholds and the threshold of hearing
"""

import logging

import numpy as np
import scipy.signal as ss
import torch

from songshield.audio import Waveform, stft_tensor
from songshield.const import (
    BACKING, FLOOR_DB, JOINT, MASKER_MIN_BARK_DISTANCE, REFERENCE_DB,
    TONAL_NEIGHBORHOOD, TONAL_PROMINENCE_DB, VOICE, ValidationError
)

logger = logging.getLogger(__name__)

# Power below which a bin counts as silent.
SILENT_POWER = 1e-30
GAIN = np.sqrt(8.0 / 3.0)


class Psd(object):
    """
    Log-magnitude power spectral density, ``T`` frames by ``F`` bins, in dB.

    :arg numpy.ndarray values:
        The ``(T, F)`` matrix.
    :arg float reference_db:
        The raw dB level that was mapped to the 96 dB reference.
    :arg float floor_db:
        Optional. Level given to silent bins.

    """
    def __init__(self, values, reference_db, floor_db=FLOOR_DB):
        self.values = np.asarray(values, dtype=np.float64)
        self.reference_db = float(reference_db)
        self.floor_db = float(floor_db)


    def __repr__(self):
        return "Psd(frames=%d, bins=%d, reference_db=%.2f)" % (
            self.values.shape + (self.reference_db,))


    @property
    def shape(self):
        return self.values.shape


class MaskingThreshold(object):
    """
    Per-frame, per-frequency ceiling in dB below which a simultaneous
    perturbation is inaudible.

    :arg numpy.ndarray values:
        The ``(T, F)`` matrix.
    :arg str source:
        ``const.VOICE``, ``const.BACKING`` or ``const.JOINT``.
    :arg float reference_db:
        The raw dB level of the 96 dB reference the threshold was computed
        against. Perturbation PSDs are compared on this same scale.

    """
    def __init__(self, values, source, reference_db):
        if source not in (VOICE, BACKING, JOINT):
            raise ValidationError('Unknown threshold source %r' % (source,))
        self.values = np.asarray(values, dtype=np.float64)
        self.source = source
        self.reference_db = float(reference_db)


    def __repr__(self):
        return "MaskingThreshold(source=%r, frames=%d, bins=%d)" % (
            (self.source,) + self.values.shape)


    @property
    def shape(self):
        return self.values.shape


    def as_tensor(self):
        return torch.tensor(self.values, dtype=torch.float64)


def as_samples(x):
    """Returns ``x`` as a float64 tensor; accepts a Waveform or a tensor."""
    if isinstance(x, Waveform):
        return x.as_tensor()
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def raw_power_db(x, spec):
    """
    Un-normalized power in dB and the mask of silent bins.

    :arg torch.Tensor x:
        Samples of shape ``(..., L)``.
    :arg FrameSpec spec:
        The framing.

    :returns:
        ``(raw_db, silent)`` tensors of shape ``(..., T, F)``.

    """
    bins = stft_tensor(x, spec) * (GAIN / spec.frame_length)
    power = bins.real ** 2 + bins.imag ** 2
    silent = power <= SILENT_POWER
    return 10.0 * torch.log10(power.clamp(min=SILENT_POWER)), silent


def peak_db(x, spec):
    """Raw dB of the loudest non-silent bin of ``x``, or ``None`` if silent."""
    with torch.no_grad():
        raw, silent = raw_power_db(as_samples(x), spec)
    if bool(silent.all()):
        return None
    return float(raw[~silent].max())


def power_spectral_density(x, spec, reference_db=None, floor_db=FLOOR_DB):
    """
    Differentiable PSD in dB. The bin at ``reference_db`` (by default the
    loudest bin of ``x`` itself) maps to 96 dB; silent bins sit at
    ``floor_db``.

    :arg x:
        Samples, a ``Waveform`` or a tensor of shape ``(..., L)``.
    :arg FrameSpec spec:
        The framing.
    :arg float reference_db:
        Optional. The raw level mapped to 96 dB.
    :arg float floor_db:
        Optional. The silence floor.

    :returns:
        ``(psd, reference_db)``, the PSD tensor of shape ``(..., T, F)`` and
        the reference actually used.

    """
    raw, silent = raw_power_db(as_samples(x), spec)
    if reference_db is None:
        if bool(silent.all()):
            reference_db = 0.0
        else:
            reference_db = float(raw.detach()[~silent].max())

    values = (REFERENCE_DB - reference_db + raw).clamp(min=floor_db)
    values = torch.where(silent, torch.full_like(values, floor_db), values)
    return values, reference_db


def compute_psd(w, spec, reference_db=None, floor_db=FLOOR_DB):
    """
    Log-magnitude power spectral density of a waveform.

    :arg Waveform w:
        The waveform, at least one frame long.
    :arg FrameSpec spec:
        The framing.
    :arg float reference_db:
        Optional. Raw level mapped to 96 dB; defaults to the global maximum.
    :arg float floor_db:
        Optional. The silence floor (default -200 dB).

    :returns:
        A new ``Psd``.

    """
    with torch.no_grad():
        values, reference_db = power_spectral_density(w, spec, reference_db, floor_db)
    return Psd(values.numpy(), reference_db, floor_db)


def bark_scale(frequencies):
    """Critical band rate (Bark) of each frequency in Hz."""
    f = np.asarray(frequencies, dtype=np.float64)
    return 13 * np.arctan(0.00076 * f) + 3.5 * np.arctan(np.square(f / 7500.0))


def absolute_threshold_of_hearing(frequencies):
    """
    Threshold in quiet, in dB, for each frequency in Hz. Frequencies below
    20 Hz are evaluated at 20 Hz so the curve stays finite at DC.
    """
    khz = np.maximum(np.asarray(frequencies, dtype=np.float64), 20.0) * 0.001
    return 3.64 * khz ** -0.8 - 6.5 * np.exp(-0.6 * np.square(khz - 3.3)) + 0.001 * khz ** 4


def power_sum_db(levels, axis=0):
    levels = np.asarray(levels, dtype=np.float64)
    return 10 * np.log10(np.sum(10 ** (levels / 10), axis=axis))


class MaskerModel(object):
    """
    Per-frequency tables of the masking model for one framing and sample
    rate, plus the masker identification parameters.

    :arg FrameSpec spec:
        The framing.
    :arg int sample_rate:
        Samples per second.
    :arg int neighborhood:
        Optional. Half-width, in bins, of the tonal neighborhood.
    :arg float prominence_db:
        Optional. How far a tonal peak must stand above its neighborhood.
    :arg float min_bark_distance:
        Optional. Maskers closer than this are decimated to the louder one.

    """
    def __init__(self, spec, sample_rate,
                 neighborhood=TONAL_NEIGHBORHOOD,
                 prominence_db=TONAL_PROMINENCE_DB,
                 min_bark_distance=MASKER_MIN_BARK_DISTANCE):
        self.spec = spec
        self.sample_rate = int(sample_rate)
        self.neighborhood = int(neighborhood)
        self.prominence_db = float(prominence_db)
        self.min_bark_distance = float(min_bark_distance)

        self.frequencies = spec.frequencies(sample_rate)
        self.bark = bark_scale(self.frequencies)
        self.ath = absolute_threshold_of_hearing(self.frequencies)
        self.bands = np.floor(self.bark).astype(int)


    def find_tonal(self, psd_vector):
        """
        Tonal maskers: local maxima standing ``prominence_db`` above every bin
        at distance 2..neighborhood. Their level is the power sum of the peak
        and its direct neighbors.

        :arg numpy.ndarray psd_vector:
            One frame of PSD, in dB.

        :returns:
            ``(levels, indices)``.

        """
        candidates = ss.argrelmax(psd_vector)[0]
        size = psd_vector.shape[0]
        keep = []
        for k in candidates:
            far = [k + j for j in range(-self.neighborhood, self.neighborhood + 1)
                   if abs(j) >= 2 and 0 <= k + j < size]
            if all(psd_vector[k] - psd_vector[i] >= self.prominence_db for i in far):
                keep.append(k)
        idx = np.array(keep, dtype=int)
        if idx.size == 0:
            return np.zeros(0), idx

        levels = power_sum_db([psd_vector[np.clip(idx + i, 0, size - 1)] for i in (-1, 0, 1)])
        return levels, idx


    def find_noise(self, psd_vector, tonal_idx):
        """
        Non-tonal maskers: for each Bark band, the power sum of the bins not
        claimed by a tonal masker, placed at the bin nearest the band's
        geometric-mean frequency.

        :arg numpy.ndarray psd_vector:
            One frame of PSD, in dB.
        :arg numpy.ndarray tonal_idx:
            Indices of the tonal maskers of the frame.

        :returns:
            ``(levels, indices)``.

        """
        claimed = np.zeros(psd_vector.shape[0], dtype=bool)
        for k in tonal_idx:
            claimed[max(0, k - self.neighborhood):k + self.neighborhood + 1] = True

        levels, idx = [], []
        for band in np.unique(self.bands):
            members = np.where((self.bands == band) & ~claimed)[0]
            if members.size == 0:
                continue
            freqs = np.maximum(self.frequencies[members], self.frequencies[1])
            centre = np.exp(np.mean(np.log(freqs)))
            idx.append(members[np.argmin(np.abs(self.frequencies[members] - centre))])
            levels.append(power_sum_db(psd_vector[members]))

        return np.array(levels, dtype=np.float64), np.array(idx, dtype=int)


    def filter_maskers(self, levels, idx, tonal):
        """
        Drops maskers below the threshold in quiet, then keeps only the louder
        of any two maskers closer than ``min_bark_distance``.

        :returns:
            ``(levels, idx, tonal)`` after filtering.

        """
        audible = levels > self.ath[idx]
        levels, idx, tonal = levels[audible], idx[audible], tonal[audible]

        order = np.argsort(idx, kind='stable')
        levels, idx, tonal = levels[order], idx[order], tonal[order]

        keep = np.ones(idx.shape, dtype=bool)
        prev = None
        for i in range(len(idx)):
            if prev is not None and self.bark[idx[i]] - self.bark[idx[prev]] < self.min_bark_distance:
                if levels[prev] < levels[i]:
                    keep[prev] = False
                    prev = i
                else:
                    keep[i] = False
            else:
                prev = i

        return levels[keep], idx[keep], tonal[keep]


    def individual_thresholds(self, levels, idx, tonal):
        """
        Two-slope spreading of each masker across the Bark scale.

        :returns:
            Matrix of shape ``(maskers, F)`` in dB.

        """
        z = self.bark[idx][:, None]
        delta_z = self.bark[None, :] - z
        upper = -27 + 0.37 * np.maximum(levels - 40, 0)
        spread = np.where(delta_z <= 0, 27 * delta_z, upper[:, None] * delta_z)
        offset = np.where(tonal, -6.025 - 0.275 * z[:, 0], -2.025 - 0.175 * z[:, 0])
        return levels[:, None] + offset[:, None] + spread


    def frame_threshold(self, psd_vector):
        """Global masking threshold of one PSD frame."""
        t_levels, t_idx = self.find_tonal(psd_vector)
        n_levels, n_idx = self.find_noise(psd_vector, t_idx)

        levels = np.concatenate([t_levels, n_levels])
        idx = np.concatenate([t_idx, n_idx]).astype(int)
        tonal = np.concatenate([np.ones(t_idx.shape, dtype=bool), np.zeros(n_idx.shape, dtype=bool)])
        levels, idx, tonal = self.filter_maskers(levels, idx, tonal)

        individual = self.individual_thresholds(levels, idx, tonal)
        return power_sum_db(np.vstack([individual, self.ath[None, :]]))


def masking_threshold(p, spec, sample_rate, source=VOICE, **model_params):
    """
    Masking threshold of the masker whose PSD is ``p``.

    :arg Psd p:
        The masker PSD.
    :arg FrameSpec spec:
        The framing ``p`` was computed with.
    :arg int sample_rate:
        Samples per second.
    :arg str source:
        Optional. ``const.VOICE`` (default) or ``const.BACKING``.
    :arg model_params:
        Optional ``MaskerModel`` keyword arguments.

    :returns:
        A new ``MaskingThreshold``, never below the threshold in quiet.

    """
    if p.values.shape[1] != spec.num_bins:
        raise ValidationError('PSD has %d bins, frame spec expects %d' % (
            p.values.shape[1], spec.num_bins))

    model = MaskerModel(spec, sample_rate, **model_params)
    values = np.vstack([model.frame_threshold(frame) for frame in p.values])
    # float rounding in the power sum must not dip below the quiet threshold
    values = np.maximum(values, model.ath[None, :])
    return MaskingThreshold(values, source, p.reference_db)


def joint_threshold(a, b):
    """
    Joint threshold of two maskers: the element-wise maximum.

    :arg MaskingThreshold a:
        First threshold.
    :arg MaskingThreshold b:
        Second threshold, same shape and reference.

    :returns:
        A new ``MaskingThreshold`` with source ``const.JOINT``.

    """
    if a.shape != b.shape:
        raise ValidationError('Threshold shapes differ: %s vs %s' % (a.shape, b.shape))
    if a.reference_db != b.reference_db:
        raise ValidationError('Thresholds were computed against different references')
    return MaskingThreshold(np.maximum(a.values, b.values), JOINT, a.reference_db)


def song_thresholds(song, spec, **model_params):
    """
    Voice, backing-track and joint thresholds of a song, all on a shared
    reference: the louder raw peak of the two channels.

    :arg Song song:
        The unprotected song.
    :arg FrameSpec spec:
        The analysis framing.

    :returns:
        ``(voice, backing, joint)`` ``MaskingThreshold`` instances.

    """
    peaks = [peak_db(song.voice, spec), peak_db(song.backing, spec)]
    peaks = [peak for peak in peaks if peak is not None]
    reference = max(peaks) if peaks else 0.0

    voice = masking_threshold(compute_psd(song.voice, spec, reference), spec,
                              song.sample_rate, VOICE, **model_params)
    backing = masking_threshold(compute_psd(song.backing, spec, reference), spec,
                                song.sample_rate, BACKING, **model_params)
    return voice, backing, joint_threshold(voice, backing)


def utility_loss(x, x0, theta, spec):
    """
    Mean over all ``T * F`` bins of ``max(0, p_{x - x0} - theta)``.

    Passing a joint threshold gives the backing-track refined loss. The
    hinge has zero subgradient at equality.

    :arg x:
        The protected samples, a ``Waveform`` or a tensor.
    :arg x0:
        The original samples, same length.
    :arg MaskingThreshold theta:
        The threshold, on the reference the perturbation is measured against.
    :arg FrameSpec spec:
        The analysis framing.

    :returns:
        A 0-d tensor.

    """
    x, x0 = as_samples(x), as_samples(x0)
    if x.shape != x0.shape:
        raise ValidationError('x and x0 differ in length: %s vs %s' % (tuple(x.shape), tuple(x0.shape)))

    delta_psd, _ = power_spectral_density(x - x0, spec, theta.reference_db)
    if tuple(delta_psd.shape[-2:]) != theta.shape:
        raise ValidationError('Threshold shape %s does not match spectrogram %s' % (
            theta.shape, tuple(delta_psd.shape[-2:])))

    return torch.relu(delta_psd - theta.as_tensor()).mean(dim=(-2, -1))


def save_threshold_csv(theta, path):
    """
    Writes a threshold matrix as CSV, one row per frame.

    :arg MaskingThreshold theta:
        The threshold.
    :arg str path:
        The output filename.

    """
    header = 'source=%s,reference_db=%.6f' % (theta.source, theta.reference_db)
    np.savetxt(str(path), theta.values, delimiter=',', fmt='%.6f', header=header)
