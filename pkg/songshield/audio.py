# -*- coding: utf-8 -*-

"""
This module contains the ``Waveform``, ``Song``, ``FrameSpec`` and
``Spectrogram`` classes, along with WAV I/O, framing, short-time spectral
analysis and channel mixing. Every other module builds on these.
"""

import logging

import numpy as np
import scipy.signal as ss
import soundfile as sf
import torch

from songshield.const import (
    FLOAT, HANN, MAX_SAMPLE_RATE, MIN_SAMPLE_RATE, PCM_16, RECTANGULAR, WINDOWS,
    ValidationError
)

logger = logging.getLogger(__name__)

PCM_16_SCALE = 32768.0


def next_power_of_two(n):
    """Smallest power of two that is >= ``n``."""
    return 1 << (int(n) - 1).bit_length()


class FrameSpec(object):
    """
    Framing parameters shared by the STFT, the psychoacoustic model, the
    encoder front end and the frame-level interaction loss.

    :arg int frame_length:
        Samples per frame.
    :arg int frame_shift:
        Samples between the starts of consecutive frames.
    :arg int fft_size:
        Optional. DFT size; frames are zero-padded up to it. Defaults to the
        next power of two >= ``frame_length``.
    :arg str window:
        Optional. The window shape, one of ``const.WINDOWS``. Default: Hann
        (periodic).

    """
    def __init__(self, frame_length, frame_shift, fft_size=None, window=HANN):
        self.frame_length = int(frame_length)
        self.frame_shift = int(frame_shift)
        if fft_size is None:
            fft_size = next_power_of_two(self.frame_length)
        self.fft_size = int(fft_size)
        self.window = window

        if not 0 < self.frame_shift <= self.frame_length <= self.fft_size:
            raise ValidationError(
                'FrameSpec needs 0 < frame_shift <= frame_length <= fft_size, '
                'got %d, %d, %d' % (self.frame_shift, self.frame_length, self.fft_size))
        if window not in WINDOWS:
            raise ValidationError('Unknown window %r' % (window,))


    @classmethod
    def for_length(cls, length, divisor):
        """
        Builds the frame spec with ``w_l = w_s = max(1, length // divisor)``.

        :arg int length:
            The signal length ``L`` in samples.
        :arg int divisor:
            The divisor of ``L``, e.g. 200.

        :returns:
            A new ``FrameSpec``.

        """
        if divisor < 1:
            raise ValidationError('Frame divisor must be >= 1, got %r' % (divisor,))
        size = max(1, int(length) // int(divisor))
        return cls(size, size, fft_size=size, window=RECTANGULAR)


    def __eq__(self, other):
        if not isinstance(other, FrameSpec):
            return NotImplemented
        return self.as_tuple() == other.as_tuple()


    def __ne__(self, other):
        return not self == other


    def __hash__(self):
        return hash(self.as_tuple())


    def __repr__(self):
        return "FrameSpec(frame_length=%r, frame_shift=%r, fft_size=%r, window=%r)" % (
            self.frame_length, self.frame_shift, self.fft_size, self.window)


    def as_tuple(self):
        return (self.frame_length, self.frame_shift, self.fft_size, self.window)


    @property
    def num_bins(self):
        """Number of one-sided frequency bins, ``fft_size // 2 + 1``."""
        return self.fft_size // 2 + 1


    def num_frames(self, length):
        """
        Number of complete frames in a signal of ``length`` samples.

        :arg int length:
            Signal length in samples.

        :returns:
            ``floor((length - frame_length) / frame_shift) + 1``.

        """
        if length < self.frame_length:
            raise ValidationError(
                'Signal of %d samples is shorter than one frame (%d)' % (length, self.frame_length))
        return (length - self.frame_length) // self.frame_shift + 1


    def window_array(self):
        """The (periodic) window as a float64 numpy array."""
        return ss.get_window(self.window, self.frame_length, fftbins=True).astype(np.float64)


    def frequencies(self, sample_rate):
        """Centre frequency of every one-sided bin, in Hz."""
        return np.linspace(0, sample_rate / 2.0, self.num_bins)


class Waveform(object):
    """
    The Waveform class, a normalized mono sample sequence. Samples are held
    as a read-only float64 array, every sample within [-1, 1].

    :arg samples:
        The samples, any 1-d array-like of reals.
    :arg int sample_rate:
        Samples per second.

    """
    def __init__(self, samples, sample_rate):
        samples = np.array(samples, dtype=np.float64).reshape(-1)
        if samples.size == 0:
            raise ValidationError('Cannot build a Waveform from zero samples')
        if not np.all(np.isfinite(samples)):
            raise ValidationError('Waveform samples must be finite')
        if np.max(np.abs(samples)) > 1.0:
            raise ValidationError('Waveform samples must lie in [-1, 1]')
        if int(sample_rate) <= 0:
            raise ValidationError('Sample rate must be positive, got %r' % (sample_rate,))

        samples.flags.writeable = False
        self.samples = samples
        self.sample_rate = int(sample_rate)


    @classmethod
    def from_tensor(cls, tensor, sample_rate):
        """
        Builds a Waveform from a 1-d torch tensor (detached, copied).

        :arg torch.Tensor tensor:
            The samples.
        :arg int sample_rate:
            Samples per second.

        :returns:
            A new ``Waveform``.

        """
        return cls(tensor.detach().cpu().numpy().astype(np.float64), sample_rate)


    @classmethod
    def silence(cls, length, sample_rate):
        return cls(np.zeros(int(length)), sample_rate)


    def __len__(self):
        return self.samples.shape[0]


    def __eq__(self, other):
        """
        Bit-exact equality of samples and sample rate.

        :arg Waveform other:
            The other waveform.

        :returns:
            ``True`` or ``False``.

        """
        if not isinstance(other, Waveform):
            return NotImplemented
        return (self.sample_rate == other.sample_rate and
                self.samples.shape == other.samples.shape and
                np.array_equal(self.samples, other.samples))


    def __ne__(self, other):
        return not self == other


    def __repr__(self):
        return "Waveform(length=%d, sample_rate=%d)" % (len(self), self.sample_rate)


    @property
    def duration(self):
        """Length in seconds."""
        return len(self) / float(self.sample_rate)


    def as_tensor(self):
        """A fresh float64 torch tensor copy of the samples."""
        return torch.tensor(self.samples, dtype=torch.float64)


    def perturbation(self, original):
        """
        The perturbation ``self - original``, as a numpy array.

        :arg Waveform original:
            The unprotected waveform ``x^0``.

        :returns:
            ``x - x^0``.

        """
        check_aligned(self, original)
        return self.samples - original.samples


class Song(object):
    """
    A Song pairs a singing voice with its backing track. Both channels share
    the sample rate and the length.

    :arg Waveform voice:
        The singing voice channel.
    :arg Waveform backing:
        The backing track channel.

    """
    def __init__(self, voice, backing):
        check_aligned(voice, backing)
        self.voice = voice
        self.backing = backing


    def __repr__(self):
        return "Song(voice=%r, backing=%r)" % (self.voice, self.backing)


    @property
    def sample_rate(self):
        return self.voice.sample_rate


    def with_voice(self, voice):
        """A new Song sharing this song's backing track."""
        return Song(voice, self.backing)


class Spectrogram(object):
    """
    Complex STFT bins, ``T`` frames by ``F`` frequencies.

    :arg numpy.ndarray bins:
        Complex matrix of shape ``(T, F)``.
    :arg FrameSpec spec:
        The framing used.

    """
    def __init__(self, bins, spec):
        bins = np.asarray(bins)
        if bins.ndim != 2 or bins.shape[1] != spec.num_bins:
            raise ValidationError('Spectrogram bins must be T x %d' % spec.num_bins)
        self.bins = bins
        self.spec = spec


    def __repr__(self):
        return "Spectrogram(frames=%d, bins=%d)" % self.bins.shape


    @property
    def shape(self):
        return self.bins.shape


def check_aligned(a, b):
    """Raises ``ValidationError`` unless ``a`` and ``b`` share rate and length."""
    if a.sample_rate != b.sample_rate:
        raise ValidationError('Sample-rate mismatch: %d vs %d' % (a.sample_rate, b.sample_rate))
    if len(a) != len(b):
        raise ValidationError('Length mismatch: %d vs %d' % (len(a), len(b)))


def load_waveform(path):
    """
    Reads a mono PCM WAV file, 16-bit integer or 32-bit float.

    16-bit samples are divided by the bit-width maximum (32768), so 32767
    becomes 0.99997 and 0 stays 0.0. Float samples are taken as they are,
    clipped into [-1, 1].

    :arg str path:
        The file to read.

    :returns:
        A new ``Waveform``.

    """
    try:
        info = sf.info(str(path))
    except Exception as exc:
        raise ValidationError('Cannot read %s: %s' % (path, exc))

    if info.channels != 1:
        raise ValidationError('%s has %d channels, expected mono' % (path, info.channels))
    if not MIN_SAMPLE_RATE <= info.samplerate <= MAX_SAMPLE_RATE:
        raise ValidationError('%s has unsupported sample rate %d' % (path, info.samplerate))

    if info.subtype == PCM_16:
        data, rate = sf.read(str(path), dtype='int16')
        samples = data.astype(np.float64) / PCM_16_SCALE
    elif info.subtype == FLOAT:
        data, rate = sf.read(str(path), dtype='float32')
        samples = data.astype(np.float64)
        if np.max(np.abs(samples), initial=0.0) > 1.0:
            logger.warning("Clipping out-of-range float samples in %s", path)
            samples = np.clip(samples, -1.0, 1.0)
    else:
        raise ValidationError('%s has unsupported subtype %s' % (path, info.subtype))

    if samples.size == 0:
        raise ValidationError('%s holds zero-length audio' % (path,))

    return Waveform(samples, rate)


def save_waveform(w, path, subtype=PCM_16):
    """
    Writes a Waveform as a mono WAV file.

    :arg Waveform w:
        The waveform to save.
    :arg str path:
        The output filename.
    :arg str subtype:
        Optional. ``const.PCM_16`` (default) or ``const.FLOAT``.

    """
    if subtype == PCM_16:
        data = np.clip(np.round(w.samples * PCM_16_SCALE), -PCM_16_SCALE, PCM_16_SCALE - 1)
        sf.write(str(path), data.astype(np.int16), w.sample_rate, subtype=PCM_16)
    elif subtype == FLOAT:
        sf.write(str(path), w.samples.astype(np.float32), w.sample_rate, subtype=FLOAT)
    else:
        raise ValidationError('Unsupported subtype %r' % (subtype,))


def fit_length(w, length):
    """
    Crops ``w`` to ``length`` samples, or extends it cyclically.

    :arg Waveform w:
        The waveform to fit.
    :arg int length:
        The wanted length.

    :returns:
        A new ``Waveform`` of exactly ``length`` samples.

    """
    return Waveform(np.resize(w.samples, int(length)), w.sample_rate)


def load_song(voice_path, backing_path):
    """
    Loads a song from its voice and backing-track files. The backing track is
    cropped, or cyclically extended, to the voice length.

    :arg str voice_path:
        The singing voice WAV file.
    :arg str backing_path:
        The backing track WAV file.

    :returns:
        A new ``Song``.

    """
    voice = load_waveform(voice_path)
    backing = load_waveform(backing_path)
    if voice.sample_rate != backing.sample_rate:
        raise ValidationError('Sample-rate mismatch between %s (%d) and %s (%d)' % (
            voice_path, voice.sample_rate, backing_path, backing.sample_rate))

    return Song(voice, fit_length(backing, len(voice)))


def stft_tensor(x, spec):
    """
    Differentiable STFT of a torch tensor.

    :arg torch.Tensor x:
        Samples of shape ``(..., L)``.
    :arg FrameSpec spec:
        The framing.

    :returns:
        Complex tensor of shape ``(..., T, F)``.

    """
    spec.num_frames(x.shape[-1])
    window = torch.tensor(spec.window_array(), dtype=x.dtype)
    frames = x.unfold(-1, spec.frame_length, spec.frame_shift) * window
    return torch.fft.rfft(frames, n=spec.fft_size, dim=-1)


def stft(w, spec):
    """
    Windowed DFT of every complete frame of ``w``.

    :arg Waveform w:
        The waveform, at least one frame long.
    :arg FrameSpec spec:
        The framing.

    :returns:
        A new ``Spectrogram``.

    """
    with torch.no_grad():
        bins = stft_tensor(w.as_tensor(), spec)
    return Spectrogram(bins.numpy(), spec)


def stft_adjoint(w, spec, cotangent):
    """
    Vector-Jacobian product of the STFT at ``w``: the gradient of
    ``Re <stft(x), cotangent>`` with respect to the samples.

    :arg Waveform w:
        The point of linearization (the STFT is linear, so only its length
        matters).
    :arg numpy.ndarray cotangent:
        Complex matrix of the spectrogram's shape.

    :returns:
        A numpy array of ``len(w)`` reals.

    """
    x = w.as_tensor().requires_grad_(True)
    bins = stft_tensor(x, spec)
    cotangent = torch.as_tensor(np.asarray(cotangent), dtype=torch.complex128)
    if tuple(cotangent.shape) != tuple(bins.shape):
        raise ValidationError('Cotangent shape %s does not match %s' % (
            tuple(cotangent.shape), tuple(bins.shape)))
    inner = (bins.real * cotangent.real + bins.imag * cotangent.imag).sum()
    grad, = torch.autograd.grad(inner, x)
    return grad.numpy()


def frame_boundaries(length, spec):
    """
    Frame boundaries for the frame-level interaction loss: the ``i``-th frame
    spans ``i * w_s`` to ``i * w_s + w_l``, clipped to ``length``. Frames are
    emitted until one reaches the end of the signal.

    :arg int length:
        Signal length in samples, at least ``frame_length``.
    :arg FrameSpec spec:
        The framing.

    :returns:
        A list of ``(start, end)`` index pairs.

    """
    if length < spec.frame_length:
        raise ValidationError(
            'Signal of %d samples is shorter than one frame (%d)' % (length, spec.frame_length))

    bounds = []
    start = 0
    while start < length:
        end = min(start + spec.frame_length, length)
        bounds.append((start, end))
        if end == length:
            break
        start += spec.frame_shift

    return bounds


def mix_to_mono(song):
    """
    Merges a song into mono audio: sample-wise sum of the voice and the
    backing track, clipped to [-1, 1].

    :arg Song song:
        The song.

    :returns:
        A new ``Waveform``.

    """
    mixed = np.clip(song.voice.samples + song.backing.samples, -1.0, 1.0)
    return Waveform(mixed, song.sample_rate)
