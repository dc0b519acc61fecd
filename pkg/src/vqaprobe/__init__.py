"""Language-prior bias lab for miniature VQA models.

Question decomposition and variant questions, a synthetic benchmark with a
controlled answer-prior shift, a small attention VQA model with hand-written
gradients, debiasing objectives, and the metrics to compare them.
"""
from .exceptions import VQAProbeError
from .metrics import PredictionRecord, accuracy, flip_breakdown, flip_ratios, rob, simi
from .model import VQAClassifier
from .perturb import VariantKind, apply_variant, variant1, variant2, variant3
from .preprocessing import QuestionEncoder
from .question import Question, QTypeLexicon
from .synthgen import BiasConfig, generate

__version__ = "0.1.0"

__all__ = [
    "BiasConfig", "PredictionRecord", "QTypeLexicon", "Question", "QuestionEncoder", "VQAClassifier",
    "VQAProbeError", "VariantKind", "accuracy", "apply_variant", "flip_breakdown", "flip_ratios",
    "generate", "rob", "simi", "variant1", "variant2", "variant3", "__version__",
]
