# -*- coding: utf-8 -*-

"""
This module contains the shipped defaults, the enumerations shared by the
other modules, and the two exception classes raised throughout the package.
"""

#===============================================================================
# Audio
#===============================================================================

SAMPLE_RATE = 8000
CLIP_SECONDS = 1.0
MIN_SAMPLE_RATE = 8000
MAX_SAMPLE_RATE = 48000

PCM_16 = 'PCM_16'
FLOAT = 'FLOAT'

HANN = 'hann'
RECTANGULAR = 'boxcar'
HAMMING = 'hamming'
WINDOWS = [HANN, RECTANGULAR, HAMMING]

# Psychoacoustic analysis frames (masking thresholds, utility loss).
ANALYSIS_FRAME_LENGTH = 256
ANALYSIS_FRAME_SHIFT = 128

# Encoder front end (log-mel).
FRONT_END_FRAME_LENGTH = 512
FRONT_END_FRAME_SHIFT = 128
N_MELS = 64
LOG_EPS = 1e-6

#===============================================================================
# Psychoacoustic model
#===============================================================================

REFERENCE_DB = 96.0
FLOOR_DB = -200.0
TONAL_NEIGHBORHOOD = 3
TONAL_PROMINENCE_DB = 7.0
MASKER_MIN_BARK_DISTANCE = 0.5

VOICE = 'voice'
BACKING = 'backing'
JOINT = 'joint'

#===============================================================================
# Encoders
#===============================================================================

IDENTITY = 'identity'
LYRIC = 'lyric'
ACOUSTIC = 'acoustic'
KINDS = [IDENTITY, LYRIC, ACOUSTIC]

HIDDEN_UNITS = 128
EMBEDDING_DIM = 32
ENSEMBLE_SIZE = 3
ACCURACY_FLOOR = 0.95
TRAIN_EPOCHS = 300
HELD_IN_FRACTION = 0.8
TRAIN_LEARNING_RATE = 0.01

FEMALE = 'F'
MALE = 'M'
GENDERS = [FEMALE, MALE]

#===============================================================================
# Protection
#===============================================================================

ITERATIONS = 1000
LEARNING_RATE = 0.001
NUM_TARGETS = 10
FLIR_SAMPLES = 32
FLIR_DIVISOR = 200
NORMALIZE_EPS = 1e-8

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

AUTO = 'auto'

F_UT = 'f_id_ut'
F_T = 'f_id_t'
F_H = 'f_ly_h'
F_L = 'f_ly_l'
F_U = 'f_u'
F_ID_TE = 'f_id_te'
F_LY_TE = 'f_ly_te'

# Fixed evaluation order of the seven losses.
LOSSES = [F_UT, F_T, F_H, F_L, F_U, F_ID_TE, F_LY_TE]

# Loss ablation variants.
FULL = 'full'
UNTARGETED = 'untargeted'
RANDOM_DESTINATION = 'random_destination'
VOICE_DESTINATION = 'voice_destination'
IDENTITY_VARIANTS = [FULL, UNTARGETED, RANDOM_DESTINATION, VOICE_DESTINATION]

BOTH = 'both'
HIGH = 'high'
LOW = 'low'
LYRIC_HIERARCHIES = [BOTH, HIGH, LOW]

UTILITY_MASKERS = [JOINT, VOICE]

#===============================================================================
# Metrics and adversaries
#===============================================================================

XI_I = 0.41
NUM_PAIRS = 64
MIN_RUN = 3
PROTECT_RATIOS = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]

NES_SAMPLES_PER_DRAW = 50
NES_ITERATIONS = 1000
NES_SIGMA = 0.001
NES_STEP_SIZE = 0.0005

F1 = 'f1'
F1_PLUS_F2 = 'f1_plus_f2'
FINETUNE_MODES = [F1, F1_PLUS_F2]

GAUSSIAN = 'gaussian'
REQUANTIZE = 'requantize'
NES = 'nes'
FINETUNE = 'finetune'
ADVERSARIES = [GAUSSIAN, REQUANTIZE, NES, FINETUNE]

#===============================================================================
# Corpus and CLI
#===============================================================================

SINGERS = 8
SYMBOLS = 8
CLIPS_PER_SINGER = 5
SYMBOLS_PER_CLIP = 4

WORKERS_ENV = 'SONGSHIELD_WORKERS'

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


class ValidationError(ValueError):
    """Raised when a config, file or argument breaks a precondition."""


class NumericalError(ArithmeticError):
    """Raised when a loss, gradient or training run goes non-finite."""


class TrainingError(NumericalError):
    """Raised when a toy encoder misses its configured accuracy floor."""
