"""Static analysis and neural classification of low-rating apps.

Programs in a small textual IR are summarized into per-instruction-type
semantic vectors (frequency, loop depth, branch count), layout documents into
per-element layout vectors (count, tree depth), and both feed a pair of
convolutional models whose feature layers are fused by a small classifier.
"""

from .ir import Program, Vocabulary, parse_program
from .layout import UiVocabulary, layout_vector, parse_layout
from .pipeline import AppRecord, kfold_evaluate, predict, train_bundle
from .semvec import inter_vector

__version__ = "0.1.0"

__all__ = [
    "AppRecord", "Program", "UiVocabulary", "Vocabulary", "inter_vector", "kfold_evaluate", "layout_vector",
    "parse_layout", "parse_program", "predict", "train_bundle",
]
