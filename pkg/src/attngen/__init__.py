"""AttnGen: attention-guided saliency training for DNA sequence classifiers."""

from attngen.dataio import (EncodedSequence, SyntheticSpec, encode_sequence, generate_synthetic,
                            load_csv_corpus, split_corpus)
from attngen.estimator import AttnGenClassifier
from attngen.model import AttnGenConfig, AttnGenModel, attngen_loss, init_model
from attngen.trainer import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AttnGenClassifier",
    "AttnGenConfig",
    "AttnGenModel",
    "EncodedSequence",
    "SyntheticSpec",
    "TrainConfig",
    "attngen_loss",
    "encode_sequence",
    "evaluate",
    "generate_synthetic",
    "init_model",
    "load_csv_corpus",
    "split_corpus",
    "train",
]
