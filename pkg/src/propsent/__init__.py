"""Sentence-level propaganda classification toolkit.

Corpus ingestion, a weighted-loss fine-tuned transformer with k-fold
ensembling, two reference baselines, positive-class P/R/F1 evaluation,
and behavioral probes of the resulting classifiers.
"""

from .corpus import (
    DatasetSplit,
    FoldAssignment,
    LabeledSentence,
    Sentence,
    SlcLabel,
    SplitName,
)
from .errors import ExternalServiceError, PropsentError, ValidationError
from .metrics import ConfusionCounts, EvalReport, apply_threshold, confusion, score
from .perspective import ATTRIBUTES, AttributeScores, PerspectiveClient, StubScorer

__version__ = "0.1.0"

__all__ = [
    "ATTRIBUTES",
    "AttributeScores",
    "ConfusionCounts",
    "DatasetSplit",
    "EvalReport",
    "ExternalServiceError",
    "FoldAssignment",
    "LabeledSentence",
    "PerspectiveClient",
    "PropsentError",
    "Sentence",
    "SlcLabel",
    "SplitName",
    "StubScorer",
    "ValidationError",
    "apply_threshold",
    "confusion",
    "score",
    "__version__",
]
