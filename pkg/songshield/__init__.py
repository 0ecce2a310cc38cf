from songshield.audio import FrameSpec, Song, Waveform
from songshield.config import RunConfig, load_config
from songshield.const import NumericalError, TrainingError, ValidationError
from songshield.corpus import Clip, Corpus, SyntheticCorpus
from songshield.encoders import EncoderHandle, EncoderRegistry, SingerProfile
from songshield.metrics import EvalReport, Evaluator, SrrThresholds
from songshield.optimizer import ProtectionConfig, ProtectionResult, protect
