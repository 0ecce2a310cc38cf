#===============================================================================
# SongShield - Tests - Helpers
#-------------------------------------------------------------------------------
# Shared fixtures: small signals, a small synthetic corpus, untrained
# encoders, and directional finite differences.
#===============================================================================

#===============================================================================
# Imports
#===============================================================================

import functools
import os

import numpy as np
import torch

from songshield.audio import Waveform
from songshield.const import IDENTITY, LYRIC
from songshield.corpus import SyntheticCorpus
from songshield.encoders import EncoderHandle, EncoderRegistry


#===============================================================================
# Gates
#===============================================================================

SLOW = os.environ.get('SONGSHIELD_SLOW') == '1'
SLOW_REASON = 'set SONGSHIELD_SLOW=1 to run desk-scale training runs'


#===============================================================================
# Signals
#===============================================================================

def tone(freq, length=2048, sample_rate=8000, amplitude=0.5):
    """A sine of ``freq`` Hz."""
    t = np.arange(length) / float(sample_rate)
    return Waveform(amplitude * np.sin(2 * np.pi * freq * t), sample_rate)


def noise(length=2048, sample_rate=8000, amplitude=0.3, seed=0):
    """Uniform noise in [-amplitude, amplitude]."""
    rng = np.random.default_rng(seed)
    return Waveform(rng.uniform(-amplitude, amplitude, length), sample_rate)


#===============================================================================
# Corpus and encoders
#===============================================================================

@functools.lru_cache(maxsize=1)
def small_corpus():
    """Four singers (2F/2M), four symbols, two one-second clips each."""
    return SyntheticCorpus(singers=4, symbols=4, clips_per_singer=2, seed=3)


def handle(kind=IDENTITY, encoder_id=None, seed=1, n_classes=4, held_out=False):
    """A frozen, untrained encoder."""
    encoder_id = encoder_id or '%s%d' % (kind, seed)
    return EncoderHandle(kind, encoder_id, n_classes=n_classes, seed=seed,
                         held_out=held_out).freeze()


def untrained_registry():
    """Two ensemble encoders and one held-out encoder per kind, untrained."""
    handles = []
    for kind, base in ((IDENTITY, 10), (LYRIC, 20)):
        handles.append(handle(kind, '%s0' % kind, base))
        handles.append(handle(kind, '%s1' % kind, base + 1))
        handles.append(handle(kind, '%s_eval' % kind, base + 5, held_out=True))
    registry = EncoderRegistry(handles)
    corpus = small_corpus()
    symbols = corpus.vocabulary()
    rng = np.random.default_rng(0)
    registry.vocabulary = dict((s, rng.normal(size=handles[-1].out_dim)) for s in symbols)
    return registry


#===============================================================================
# Finite differences
#===============================================================================

def directional_check(f, x, direction, h=1e-4):
    """
    Analytic against central-difference directional derivative of ``f``.

    :arg f:
        Maps a float64 tensor to a 0-d tensor.
    :arg torch.Tensor x:
        The evaluation point.
    :arg torch.Tensor direction:
        The perturbation direction.

    :returns:
        ``(analytic, numeric)`` floats.

    """
    point = x.clone().requires_grad_(True)
    grad, = torch.autograd.grad(f(point), point)
    analytic = float((grad * direction).sum())
    with torch.no_grad():
        numeric = float((f(x + h * direction) - f(x - h * direction)) / (2 * h))
    return analytic, numeric


def relative_error(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


def random_direction(length, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=length)
    return torch.tensor(v / np.linalg.norm(v), dtype=torch.float64)
