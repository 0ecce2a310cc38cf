# -*- coding: utf-8 -*-

"""
This module loads run configurations: a JSON document of sections whose
keys and value types are fixed by ``SCHEMA``. Missing keys take the shipped
defaults; unknown keys are rejected before any work starts.
"""

import copy
import json
import logging
import os

from songshield.audio import FrameSpec
from songshield.const import (
    ACCURACY_FLOOR, ADVERSARIES, ANALYSIS_FRAME_LENGTH, ANALYSIS_FRAME_SHIFT, AUTO,
    BOTH, CLIP_SECONDS, CLIPS_PER_SINGER, ENSEMBLE_SIZE, F1_PLUS_F2, FLIR_DIVISOR,
    FLIR_SAMPLES, FRONT_END_FRAME_LENGTH, FRONT_END_FRAME_SHIFT, FULL, HANN,
    HELD_IN_FRACTION, ITERATIONS, JOINT, LEARNING_RATE, MIN_RUN, N_MELS,
    NES_ITERATIONS, NES_SAMPLES_PER_DRAW, NES_SIGMA, NES_STEP_SIZE, NUM_PAIRS,
    NUM_TARGETS, PROTECT_RATIOS, SAMPLE_RATE, SINGERS, SYMBOLS, SYMBOLS_PER_CLIP,
    TRAIN_EPOCHS, TRAIN_LEARNING_RATE, WINDOWS, WORKERS_ENV, XI_I, ValidationError
)

logger = logging.getLogger(__name__)

INT = (int,)
REAL = (int, float)
TEXT = (str,)
FLAG = (bool,)
LIST = (list,)
NONE = (type(None),)

# section -> key -> (accepted types, default)
SCHEMA = {
    'paths': {
        'corpus_dir': (TEXT, 'corpus'),
        'manifest': (TEXT + NONE, None),
        'encoders_dir': (TEXT, 'encoders'),
        'protected_dir': (TEXT, 'protected'),
        'reports_dir': (TEXT, 'reports'),
    },
    'audio': {
        'sample_rate': (INT, SAMPLE_RATE),
        'clip_seconds': (REAL, CLIP_SECONDS),
        'analysis_frame_length': (INT, ANALYSIS_FRAME_LENGTH),
        'analysis_frame_shift': (INT, ANALYSIS_FRAME_SHIFT),
        'analysis_fft_size': (INT + NONE, None),
        'window': (TEXT, HANN),
        'front_end_frame_length': (INT, FRONT_END_FRAME_LENGTH),
        'front_end_frame_shift': (INT, FRONT_END_FRAME_SHIFT),
        'n_mels': (INT, N_MELS),
    },
    'corpus': {
        'singers': (INT, SINGERS),
        'symbols': (INT, SYMBOLS),
        'clips_per_singer': (INT, CLIPS_PER_SINGER),
        'symbols_per_clip': (INT, SYMBOLS_PER_CLIP),
    },
    'training': {
        'epochs': (INT, TRAIN_EPOCHS),
        'learning_rate': (REAL, TRAIN_LEARNING_RATE),
        'ensemble_size': (INT, ENSEMBLE_SIZE),
        'accuracy_floor': (REAL, ACCURACY_FLOOR),
        'held_in_fraction': (REAL, HELD_IN_FRACTION),
    },
    'protection': {
        'iterations': (INT, ITERATIONS),
        'learning_rate': (REAL, LEARNING_RATE),
        'protect_target': (FLAG, True),
        'protect_source': (FLAG, True),
        'transfer_identity': (FLAG, False),
        'transfer_lyric': (FLAG, False),
        'num_targets': (INT, NUM_TARGETS),
        'identity_ids': (LIST + NONE, None),
        'lyric_ids': (LIST + NONE, None),
        'balance': (TEXT + (dict,), AUTO),
        'identity_variant': (TEXT, FULL),
        'lyric_hierarchy': (TEXT, BOTH),
        'utility_masker': (TEXT, JOINT),
    },
    'flir': {
        'samples': (INT, FLIR_SAMPLES),
        'divisor': (INT, FLIR_DIVISOR),
    },
    'nes': {
        'samples_per_draw': (INT, NES_SAMPLES_PER_DRAW),
        'iterations': (INT, NES_ITERATIONS),
        'sigma': (REAL, NES_SIGMA),
        'step_size': (REAL, NES_STEP_SIZE),
        'songs': (INT + NONE, None),
    },
    'finetune': {
        'loss_mode': (TEXT, F1_PLUS_F2),
        'epochs': (INT, 50),
        'learning_rate': (REAL, 1e-3),
        'retrain_decoder_analog': (FLAG, False),
    },
    'srr': {
        'xi_i': (REAL, XI_I),
        'xi_l': (REAL + NONE, None),
    },
    'evaluation': {
        'pairs': (INT, NUM_PAIRS),
        'protect_ratios': (LIST, PROTECT_RATIOS),
        'min_run': (INT, MIN_RUN),
    },
    'attack': {
        'adversaries': (LIST, ADVERSARIES),
        'gaussian_snr_db': (REAL, 30.0),
        'requantize_bits': (INT, 8),
    },
}


def _check_type(where, value, types):
    # bool is an int subclass; only FLAG accepts it
    if isinstance(value, bool) and bool not in types:
        raise ValidationError('%s must not be a boolean' % (where,))
    if not isinstance(value, types):
        names = ', '.join(sorted(t.__name__ for t in types))
        raise ValidationError('%s has type %s, expected %s' % (where, type(value).__name__, names))


class RunConfig(object):
    """
    A validated run configuration. Every section is a dict attribute
    (``cfg.protection['iterations']``); ``seed`` is an int.

    :arg dict data:
        Optional. The parsed document; missing keys take defaults.

    """
    def __init__(self, data=None):
        data = data or {}
        if not isinstance(data, dict):
            raise ValidationError('A config document must be a JSON object')
        unknown = set(data) - set(SCHEMA) - set(['seed'])
        if unknown:
            raise ValidationError('Unknown config sections: %s' % (', '.join(sorted(unknown)),))

        self.seed = data.get('seed', 0)
        _check_type('seed', self.seed, INT)
        for section, fields in SCHEMA.items():
            given = data.get(section, {})
            if not isinstance(given, dict):
                raise ValidationError('Config section %s must be an object' % (section,))
            unknown = set(given) - set(fields)
            if unknown:
                raise ValidationError('Unknown keys in %s: %s' % (section, ', '.join(sorted(unknown))))
            values = {}
            for key, (types, default) in fields.items():
                value = given.get(key, copy.deepcopy(default))
                _check_type('%s.%s' % (section, key), value, types)
                values[key] = value
            setattr(self, section, values)
        self.validate()


    def __repr__(self):
        return "RunConfig(seed=%d, iterations=%d)" % (self.seed, self.protection['iterations'])


    def validate(self):
        """Range checks, by building every settings object once."""
        if self.audio['window'] not in WINDOWS:
            raise ValidationError('Unknown window %r' % (self.audio['window'],))
        for ratio in self.evaluation['protect_ratios']:
            if isinstance(ratio, bool) or not isinstance(ratio, REAL) or not 0.0 <= ratio <= 1.0:
                raise ValidationError('Protect ratios must lie in [0, 1], got %r' % (ratio,))
        for name in self.attack['adversaries']:
            if name not in ADVERSARIES:
                raise ValidationError('Unknown adversary %r' % (name,))
        if self.evaluation['min_run'] < 1:
            raise ValidationError('min_run must be at least 1')
        if self.evaluation['pairs'] < 1:
            raise ValidationError('Evaluation needs at least one pair')
        if not 0.0 < self.training['held_in_fraction'] <= 1.0:
            raise ValidationError('held_in_fraction must lie in (0, 1]')
        self.analysis_spec()
        self.front_end_spec()
        self.protection_config()
        self.nes_config()
        self.finetune_config()
        self.srr_thresholds()


    def analysis_spec(self):
        a = self.audio
        return FrameSpec(a['analysis_frame_length'], a['analysis_frame_shift'],
                         a['analysis_fft_size'], a['window'])


    def front_end_spec(self):
        a = self.audio
        return FrameSpec(a['front_end_frame_length'], a['front_end_frame_shift'], window=a['window'])


    def flir_config(self):
        from songshield.losses import FlirConfig

        return FlirConfig(self.flir['samples'], self.flir['divisor'])


    def protection_config(self, **overrides):
        """A ``ProtectionConfig``; ``None`` overrides are ignored."""
        from songshield.optimizer import ProtectionConfig

        params = dict(self.protection, seed=self.seed)
        params.update((k, v) for k, v in overrides.items() if v is not None)
        return ProtectionConfig(flir=self.flir_config(), analysis=self.analysis_spec(), **params)


    def nes_config(self):
        from songshield.adversary import NesConfig

        return NesConfig(**self.nes)


    def finetune_config(self):
        from songshield.adversary import FinetuneConfig

        return FinetuneConfig(**self.finetune)


    def srr_thresholds(self):
        from songshield.metrics import SrrThresholds

        return SrrThresholds(self.srr['xi_i'], self.srr['xi_l'])


def load_config(filename=None):
    """
    Reads and validates a JSON run configuration.

    :arg str filename:
        Optional. The config file; shipped defaults when omitted.

    :returns:
        A ``RunConfig``.

    """
    if filename is None:
        return RunConfig()
    try:
        with open(filename, 'r') as config_file:
            data = json.load(config_file)
    except ValueError as e:
        raise ValidationError('Config %s is not valid JSON: %s' % (filename, e))
    logger.debug('Loaded config %s', filename)
    return RunConfig(data)


def worker_count(default=1):
    """Worker slots from the ``SONGSHIELD_WORKERS`` environment variable."""
    raw = os.environ.get(WORKERS_ENV)
    if raw is None or raw == '':
        return default
    try:
        workers = int(raw)
    except ValueError:
        raise ValidationError('%s must be an integer, got %r' % (WORKERS_ENV, raw))
    if workers < 1:
        raise ValidationError('%s must be at least 1, got %d' % (WORKERS_ENV, workers))
    return workers
