"""RNN-T lab: transducer lattice, toy model, decoding, overlapping inference and regularizers."""

from .corpus import TaskConfig, Utterance, WerBreakdown, generate_corpus, long_form_corpus, wer
from .decoding import BeamConfig, beam_search, greedy_decode
from .lattice import LogitsLattice, rnnt_forward, rnnt_loss_and_grad
from .model import ModelConfig, ModelParams, NumericalError, init_params, loss_and_grads
from .overlap import MergeConfig, SegmentationConfig, doi_decode, overlapping_decode
from .regularization import RspConfig, RssConfig, SpecAugmentConfig, VariationalNoiseConfig
from .training import ConfigError, ExperimentConfig, train

__all__ = [
    "BeamConfig", "ConfigError", "ExperimentConfig", "LogitsLattice", "MergeConfig",
    "ModelConfig", "ModelParams", "NumericalError", "RspConfig", "RssConfig",
    "SegmentationConfig", "SpecAugmentConfig", "TaskConfig", "Utterance",
    "VariationalNoiseConfig", "WerBreakdown", "beam_search", "doi_decode", "generate_corpus",
    "greedy_decode", "init_params", "long_form_corpus", "loss_and_grads", "overlapping_decode",
    "rnnt_forward", "rnnt_loss_and_grad", "train", "wer",
]
