# -*- coding: utf-8 -*-

"""
This module contains the clip container used everywhere a set of songs is
handled, and the seeded synthetic corpus the toy encoders are trained and
evaluated on.
"""

import logging
import os
import string

import numpy as np

from songshield.audio import Song, Waveform, load_song, save_waveform
from songshield.const import (
    CLIP_SECONDS, CLIPS_PER_SINGER, FEMALE, GENDERS, MALE, SAMPLE_RATE,
    SINGERS, SYMBOLS, SYMBOLS_PER_CLIP, ValidationError
)
from songshield.utils import open_manifest, save_manifest

logger = logging.getLogger(__name__)

# (F1, F2) in Hz of the first vowel-like symbols; more are drawn at random.
FORMANTS = [
    (730.0, 1090.0), (270.0, 2290.0), (300.0, 870.0), (530.0, 1840.0),
    (570.0, 840.0), (660.0, 1720.0), (520.0, 1190.0), (390.0, 1990.0),
]
FORMANT_BANDWIDTHS = (90.0, 120.0)

F0_RANGES = {FEMALE: (220.0, 330.0), MALE: (110.0, 165.0)}
TRACT_SCALES = {FEMALE: (1.08, 1.2), MALE: (0.9, 1.0)}

# Semitone offsets a melody draws its notes from.
SCALE_STEPS = [0, 2, 4, 5, 7, 9]

VOICE_PEAK = 0.5
BACKING_PEAK = 0.3
FADE_SECONDS = 0.005


def symbol_names(count):
    """Symbol names: single letters, or ``s0``, ``s1``... past 26."""
    if count <= len(string.ascii_lowercase):
        return list(string.ascii_lowercase[:count])
    return ['s%d' % i for i in range(count)]


def symbol_index(symbol):
    """Position of ``symbol`` in the order ``symbol_names`` generates it."""
    if len(symbol) == 1 and symbol in string.ascii_lowercase:
        return string.ascii_lowercase.index(symbol)
    if symbol[:1] == 's' and symbol[1:].isdigit():
        return int(symbol[1:])
    raise ValidationError('Not a synthetic symbol name: %r' % (symbol,))


def segment_bounds(length, count):
    """Sample boundaries of ``count`` equal symbol segments."""
    edges = [int(round(i * length / float(count))) for i in range(count + 1)]
    return list(zip(edges[:-1], edges[1:]))


class Clip(object):
    """
    The Clip class: one recorded song with the singer and the symbol
    sequence it carries.

    :arg str name:
        Clip name; also the protected output filename stem.
    :arg str singer:
        Singer id.
    :arg str gender:
        ``const.FEMALE`` or ``const.MALE``.
    :arg list symbols:
        The sung symbol sequence, one symbol per equal-length segment.
    :arg Song song:
        The voice and backing track.

    """
    def __init__(self, name, singer, gender, symbols, song):
        if gender not in GENDERS:
            raise ValidationError('Unknown gender %r for clip %s' % (gender, name))
        if not symbols:
            raise ValidationError('Clip %s carries no symbols' % (name,))
        self.name = str(name)
        self.singer = str(singer)
        self.gender = gender
        self.symbols = tuple(symbols)
        self.song = song


    def __eq__(self, other):
        if not isinstance(other, Clip):
            return NotImplemented
        return self.name == other.name and self.singer == other.singer and \
            self.symbols == other.symbols


    def __ne__(self, other):
        return not self == other


    def __hash__(self):
        return hash((self.name, self.singer, self.symbols))


    def __repr__(self):
        return "Clip(name=%r, singer=%r, symbols=%r)" % (self.name, self.singer, ' '.join(self.symbols))


    @property
    def voice(self):
        return self.song.voice


    def segments(self):
        """``(start, end, symbol)`` for every symbol segment of the voice."""
        bounds = segment_bounds(len(self.voice), len(self.symbols))
        return [(start, end, symbol) for (start, end), symbol in zip(bounds, self.symbols)]


    def frame_labels(self, spec):
        """
        Symbol index of every front-end frame lying entirely inside one
        segment; ``-1`` for frames straddling a boundary.

        :arg FrameSpec spec:
            The encoder framing.

        :returns:
            A list of ints, one per frame.

        """
        labels = []
        segments = self.segments()
        for t in range(spec.num_frames(len(self.voice))):
            lo, hi = t * spec.frame_shift, t * spec.frame_shift + spec.frame_length
            label = -1
            for i, (start, end, _) in enumerate(segments):
                if start <= lo and hi <= end:
                    label = i
                    break
            labels.append(label)
        return labels


class Corpus(object):
    """
    The Corpus class, an ordered collection of clips with lookups by singer,
    gender and symbols, and seeded splitting.

    :arg list clips:
        Optional. The initial clips.
    :arg dict formants:
        Optional. ``(F1, F2)`` per symbol as the clips were sung.

    """
    def __init__(self, clips=None, formants=None):
        self.clips = list(clips or [])
        self.formants = dict(formants) if formants else None
        names = [clip.name for clip in self.clips]
        if len(set(names)) != len(names):
            raise ValidationError('Clip names must be unique')


    def __contains__(self, clip):
        return clip in self.clips


    def __getitem__(self, key):
        if isinstance(key, str):
            for clip in self.clips:
                if clip.name == key:
                    return clip
            raise ValidationError('No clip named %r' % (key,))
        return self.clips[key]


    def __iter__(self):
        return iter(self.clips)


    def __len__(self):
        return len(self.clips)


    def __repr__(self):
        return "Corpus(clips=%d, singers=%d)" % (len(self), len(self.singers()))


    def add(self, clip):
        if any(c.name == clip.name for c in self.clips):
            raise ValidationError('Duplicate clip name %r' % (clip.name,))
        self.clips.append(clip)


    def singers(self):
        """Sorted singer ids."""
        return sorted(set(clip.singer for clip in self.clips))


    def gender_of(self, singer):
        for clip in self.clips:
            if clip.singer == singer:
                return clip.gender
        raise ValidationError('Unknown singer %r' % (singer,))


    def vocabulary(self):
        """Sorted symbols sung anywhere in the corpus."""
        return sorted(set(s for clip in self.clips for s in clip.symbols))


    def formant_table(self):
        """The formants the clips were sung with."""
        if self.formants is not None:
            return self.formants
        return formant_table(self.vocabulary())


    def find_clips(self, singer=None, gender=None, exclude_symbols=None):
        """
        Clips matching every given term.

        :arg str singer:
            Optional. Keep only this singer's clips.
        :arg str gender:
            Optional. Keep only this gender.
        :arg exclude_symbols:
            Optional. Drop clips with exactly this symbol sequence.

        :returns:
            A list of ``Clip`` instances, in corpus order.

        """
        found = []
        for clip in self.clips:
            if singer is not None and clip.singer != singer:
                continue
            if gender is not None and clip.gender != gender:
                continue
            if exclude_symbols is not None and clip.symbols == tuple(exclude_symbols):
                continue
            found.append(clip)
        return found


    def random_clips(self, num, rng, **terms):
        """
        ``num`` matching clips drawn without replacement; fewer when fewer
        match.

        :arg int num:
            How many to draw.
        :arg numpy.random.Generator rng:
            The random generator.

        """
        pool = self.find_clips(**terms)
        if num >= len(pool):
            return pool
        picked = rng.choice(len(pool), size=num, replace=False)
        return [pool[i] for i in sorted(picked)]


    def split(self, fraction, rng):
        """
        Seeded split into two corpora, stratified by singer: roughly
        ``fraction`` of every singer's clips go to the second one, at least
        one clip staying in the first.

        :arg float fraction:
            Share of clips held out, in [0, 1).
        :arg numpy.random.Generator rng:
            The random generator.

        :returns:
            A ``(kept, held)`` tuple of corpora.

        """
        if not 0.0 <= fraction < 1.0:
            raise ValidationError('Split fraction must lie in [0, 1), got %r' % (fraction,))
        kept, held = [], []
        for singer in self.singers():
            clips = self.find_clips(singer=singer)
            order = rng.permutation(len(clips))
            n_held = min(int(round(fraction * len(clips))), len(clips) - 1)
            held_idx = set(order[:n_held].tolist())
            for i, clip in enumerate(clips):
                (held if i in held_idx else kept).append(clip)
        return Corpus(kept, self.formants), Corpus(held, self.formants)


class SingerVoice(object):
    """
    Synthesis parameters of one synthetic singer.

    :arg str singer:
        Singer id.
    :arg str gender:
        ``const.FEMALE`` or ``const.MALE``.
    :arg float f0:
        Base pitch in Hz.
    :arg float tract_scale:
        Multiplier on every symbol formant.
    :arg float tilt:
        Harmonic amplitude roll-off exponent.
    :arg float singer_formant:
        Centre frequency in Hz of the singer's own resonance.
    :arg float singer_gain:
        Gain of that resonance.
    :arg float vibrato_rate:
        Vibrato rate in Hz.
    :arg float vibrato_depth:
        Relative vibrato depth.

    """
    def __init__(self, singer, gender, f0, tract_scale, tilt, singer_formant,
                 singer_gain, vibrato_rate, vibrato_depth):
        self.singer = singer
        self.gender = gender
        self.f0 = f0
        self.tract_scale = tract_scale
        self.tilt = tilt
        self.singer_formant = singer_formant
        self.singer_gain = singer_gain
        self.vibrato_rate = vibrato_rate
        self.vibrato_depth = vibrato_depth


    def __repr__(self):
        return "SingerVoice(singer=%r, gender=%r, f0=%.1f)" % (self.singer, self.gender, self.f0)


    @classmethod
    def draw(cls, singer, gender, rng):
        lo, hi = F0_RANGES[gender]
        s_lo, s_hi = TRACT_SCALES[gender]
        return cls(singer, gender,
                   f0=rng.uniform(lo, hi),
                   tract_scale=rng.uniform(s_lo, s_hi),
                   tilt=rng.uniform(0.8, 1.6),
                   singer_formant=rng.uniform(2400.0, 3400.0),
                   singer_gain=rng.uniform(0.3, 0.8),
                   vibrato_rate=rng.uniform(4.5, 6.5),
                   vibrato_depth=rng.uniform(0.005, 0.02))


def neutral_voice():
    """A fixed genderless voice, the text-to-speech stand-in."""
    return SingerVoice('neutral', FEMALE, f0=180.0, tract_scale=1.05, tilt=1.2,
                       singer_formant=2900.0, singer_gain=0.2,
                       vibrato_rate=5.0, vibrato_depth=0.0)


def _envelope(freqs, formants, bandwidths):
    env = np.full_like(freqs, 0.02)
    for (f, bw), gain in zip(zip(formants, bandwidths), (1.0, 0.7, 0.5)):
        env += gain * np.exp(-0.5 * ((freqs - f) / bw) ** 2)
    return env


def render_voice(voice, symbols, formants, length, sample_rate, rng):
    """
    Sings ``symbols`` with a harmonic source shaped by each symbol's
    formants, one note per symbol.

    :arg SingerVoice voice:
        The singer.
    :arg list symbols:
        Symbol names, keys of ``formants``.
    :arg dict formants:
        ``(F1, F2)`` per symbol.
    :arg int length:
        Samples to produce.
    :arg int sample_rate:
        Samples per second.
    :arg numpy.random.Generator rng:
        Draws the melody and the breath noise.

    :returns:
        A new ``Waveform``, peak ``VOICE_PEAK``.

    """
    out = np.zeros(length)
    fade = max(1, int(FADE_SECONDS * sample_rate))
    nyquist = sample_rate / 2.0
    for (start, end), symbol in zip(segment_bounds(length, len(symbols)), symbols):
        n = end - start
        t = np.arange(n) / float(sample_rate)
        note = voice.f0 * 2.0 ** (rng.choice(SCALE_STEPS) / 12.0)
        f0_track = note * (1.0 + voice.vibrato_depth * np.sin(2 * np.pi * voice.vibrato_rate * t))
        phase = 2 * np.pi * np.cumsum(f0_track) / sample_rate

        f1, f2 = formants[symbol]
        centres = (f1 * voice.tract_scale, f2 * voice.tract_scale, voice.singer_formant)
        bands = FORMANT_BANDWIDTHS + (300.0,)
        segment = np.zeros(n)
        k = 1
        while k * note < 0.95 * nyquist:
            freq = np.array([k * note])
            gains = _envelope(freq, centres[:2], bands[:2]) + \
                voice.singer_gain * np.exp(-0.5 * ((freq - centres[2]) / bands[2]) ** 2)
            segment += k ** -voice.tilt * gains[0] * np.sin(k * phase)
            k += 1

        ramp = np.ones(n)
        ramp[:fade] = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
        ramp[-fade:] = ramp[:fade][::-1]
        out[start:end] = segment * ramp

    out += 1e-3 * rng.standard_normal(length)
    out *= VOICE_PEAK / np.max(np.abs(out))
    return Waveform(out, sample_rate)


def render_backing(length, sample_rate, rng):
    """
    A backing track: a sustained triad of buzzy tones plus soft noise
    bursts every eighth of a second.

    :returns:
        A new ``Waveform``, peak ``BACKING_PEAK``.

    """
    t = np.arange(length) / float(sample_rate)
    root = rng.uniform(110.0, 220.0)
    out = np.zeros(length)
    for ratio in (1.0, 2 ** (4 / 12.0), 2 ** (7 / 12.0)):
        for k in range(1, 5):
            out += np.sin(2 * np.pi * k * root * ratio * t + rng.uniform(0, 2 * np.pi)) / k

    burst = int(0.02 * sample_rate)
    step = int(0.125 * sample_rate)
    decay = np.exp(-np.arange(burst) / (0.004 * sample_rate))
    for start in range(0, length - burst, step):
        out[start:start + burst] += 0.8 * decay * rng.standard_normal(burst)

    out *= BACKING_PEAK / np.max(np.abs(out))
    return Waveform(out, sample_rate)


def symbol_formants(symbols, rng):
    """``(F1, F2)`` per symbol: the fixed table first, then random draws."""
    formants = {}
    for i, symbol in enumerate(symbols):
        if i < len(FORMANTS):
            formants[symbol] = FORMANTS[i]
        else:
            formants[symbol] = (rng.uniform(250.0, 800.0), rng.uniform(900.0, 2400.0))
    return formants


def formant_table(symbols):
    """
    The formants a ``SyntheticCorpus`` assigned to ``symbols``, rebuilt in
    generation order from the symbol names alone.

    :arg symbols:
        Any symbols of the corpus; unsung ones need not be present.

    :returns:
        ``(F1, F2)`` per symbol, for every symbol up to the highest one named.

    """
    symbols = list(symbols)
    if not symbols:
        raise ValidationError('A formant table needs at least one symbol')
    count = max(symbol_index(s) for s in symbols) + 1
    if any(len(s) == 1 for s in symbols):
        names = list(string.ascii_lowercase[:count])
    else:
        names = ['s%d' % i for i in range(count)]
    return symbol_formants(names, np.random.default_rng(0))


def render_reference(symbols, length, sample_rate=SAMPLE_RATE, seed=0, formants=None):
    """
    A clean clip of ``symbols`` sung by the neutral voice.

    :arg list symbols:
        The symbol sequence.
    :arg int length:
        Samples to produce.
    :arg int sample_rate:
        Optional. Samples per second.
    :arg int seed:
        Optional. Melody seed.
    :arg dict formants:
        Optional. ``(F1, F2)`` per symbol; defaults to ``formant_table(symbols)``.

    :returns:
        A new ``Waveform``.

    """
    formants = formants or formant_table(symbols)
    return render_voice(neutral_voice(), symbols, formants, length, sample_rate,
                        np.random.default_rng(seed))


class SyntheticCorpus(Corpus):
    """
    A seeded synthetic corpus: half female, half male singers, each singing
    ``clips_per_singer`` random symbol sequences over a backing track. The
    same arguments give the same audio.

    :arg int singers:
        Optional. Singer count, even (default 8).
    :arg int symbols:
        Optional. Vocabulary size (default 8).
    :arg int clips_per_singer:
        Optional. Clips per singer (default 5).
    :arg int seed:
        Optional. The seed.
    :arg int sample_rate:
        Optional. Samples per second.
    :arg float clip_seconds:
        Optional. Clip duration.
    :arg int symbols_per_clip:
        Optional. Symbols sung per clip (default 4).

    """
    def __init__(self, singers=SINGERS, symbols=SYMBOLS, clips_per_singer=CLIPS_PER_SINGER,
                 seed=0, sample_rate=SAMPLE_RATE, clip_seconds=CLIP_SECONDS,
                 symbols_per_clip=SYMBOLS_PER_CLIP):
        if singers < 4 or singers % 2:
            raise ValidationError('Need an even singer count with at least 2 per gender, got %r' % (singers,))
        if symbols < 2:
            raise ValidationError('Need at least 2 symbols, got %r' % (symbols,))
        if clips_per_singer < 1 or symbols_per_clip < 1:
            raise ValidationError('Clip and symbol counts must be positive')

        self.seed = int(seed)
        self.sample_rate = int(sample_rate)
        self.length = int(round(clip_seconds * sample_rate))
        self.symbols_per_clip = int(symbols_per_clip)
        super(SyntheticCorpus, self).__init__()
        self.build(singers, symbols, clips_per_singer)


    def __repr__(self):
        return "SyntheticCorpus(clips=%d, singers=%d, seed=%d)" % (
            len(self), len(self.singers()), self.seed)


    def build(self, singers, symbols, clips_per_singer):
        rng = np.random.default_rng(self.seed)
        self.symbol_names = symbol_names(symbols)
        self.formants = symbol_formants(self.symbol_names, np.random.default_rng(0))
        self.voices = []
        for i in range(singers):
            gender = FEMALE if i < singers // 2 else MALE
            self.voices.append(SingerVoice.draw('singer%02d' % i, gender, rng))

        for voice in self.voices:
            for j in range(clips_per_singer):
                sequence = [str(s) for s in rng.choice(self.symbol_names, size=self.symbols_per_clip)]
                vocal = render_voice(voice, sequence, self.formants, self.length,
                                     self.sample_rate, rng)
                backing = render_backing(self.length, self.sample_rate, rng)
                name = '%s_%02d' % (voice.singer, j)
                self.add(Clip(name, voice.singer, voice.gender, sequence, Song(vocal, backing)))

        logger.info('Synthesized %d clips from %d singers (seed %d)', len(self), singers, self.seed)


def open_corpus(manifest):
    """
    Loads a corpus from a manifest CSV written by ``save_corpus``.

    :arg str manifest:
        The manifest filename. WAV paths in it are relative to its folder.

    :returns:
        A new ``Corpus``.

    """
    root = os.path.dirname(os.path.abspath(manifest))
    clips = []
    for row in open_manifest(manifest):
        song = load_song(os.path.join(root, row['voice']), os.path.join(root, row['backing']))
        clips.append(Clip(row['clip'], row['singer'], row['gender'], row['symbols'].split(), song))
    logger.info('Loaded %d clips from %s', len(clips), manifest)
    return Corpus(clips)


def save_corpus(corpus, out_dir, filename='manifest.csv'):
    """
    Writes every clip as two 16-bit WAV files plus a manifest CSV.

    :arg Corpus corpus:
        The corpus.
    :arg str out_dir:
        The output folder, created when missing.

    :returns:
        The manifest filename.

    """
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for clip in corpus:
        voice_name, backing_name = '%s_voice.wav' % clip.name, '%s_backing.wav' % clip.name
        save_waveform(clip.song.voice, os.path.join(out_dir, voice_name))
        save_waveform(clip.song.backing, os.path.join(out_dir, backing_name))
        rows.append({'clip': clip.name, 'singer': clip.singer, 'gender': clip.gender,
                     'symbols': ' '.join(clip.symbols), 'voice': voice_name,
                     'backing': backing_name})
    path = os.path.join(out_dir, filename)
    save_manifest(rows, path)
    return path
