"""Positive-class precision/recall/F1 scoring and threshold application."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from . import corpus
from .corpus import Key, SlcLabel
from .errors import ValidationError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            if getattr(self, name) < 0:
                raise ValidationError(f"negative confusion count {name}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class EvalReport:
    counts: ConfusionCounts
    precision: float
    recall: float
    f1: float


def apply_threshold(probability: float, threshold: float = 0.5) -> SlcLabel:
    """PROPAGANDA iff probability >= threshold (boundary counts as positive)."""
    if not 0.0 <= probability <= 1.0:
        raise ValidationError(f"probability {probability} outside [0, 1]")
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"threshold {threshold} outside [0, 1]")
    return SlcLabel.PROPAGANDA if probability >= threshold else SlcLabel.NON_PROPAGANDA


def confusion(predictions: Mapping[Key, SlcLabel],
              gold: Mapping[Key, SlcLabel]) -> ConfusionCounts:
    """Count tp/fp/fn/tn with PROPAGANDA as the positive class."""
    pred_keys = set(predictions)
    gold_keys = set(gold)
    if pred_keys != gold_keys:
        parts = []
        missing = gold_keys - pred_keys
        if missing:
            parts.append(f"keys missing from predictions: {_list_keys(missing)}")
        extra = pred_keys - gold_keys
        if extra:
            parts.append(f"keys missing from gold: {_list_keys(extra)}")
        raise ValidationError("; ".join(parts))
    tp = fp = fn = tn = 0
    for key, pred in predictions.items():
        is_pos_pred = pred is SlcLabel.PROPAGANDA
        is_pos_gold = gold[key] is SlcLabel.PROPAGANDA
        if is_pos_pred and is_pos_gold:
            tp += 1
        elif is_pos_pred:
            fp += 1
        elif is_pos_gold:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def _list_keys(keys) -> str:
    listed = sorted(keys)[:10]
    shown = ", ".join(f"{aid}:{idx}" for aid, idx in listed)
    more = len(keys) - len(listed)
    return shown + (f" (+{more} more)" if more > 0 else "")


def score(counts: ConfusionCounts) -> EvalReport:
    """precision = tp/(tp+fp), recall = tp/(tp+fn), f1 = 2PR/(P+R); 0/0 -> 0."""
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvalReport(counts=counts, precision=precision, recall=recall, f1=f1)


def format_report(report: EvalReport) -> str:
    return (
        f"F1={report.f1:.4f} P={report.precision:.4f} R={report.recall:.4f}"
    )


def report_to_mapping(report: EvalReport) -> dict:
    return {
        "f1": report.f1,
        "precision": report.precision,
        "recall": report.recall,
        "tp": report.counts.tp,
        "fp": report.counts.fp,
        "fn": report.counts.fn,
        "tn": report.counts.tn,
    }


def report_to_json(report: EvalReport) -> str:
    return json.dumps(report_to_mapping(report), sort_keys=True, indent=2) + "\n"


def _sniff_probability_file(path: Path) -> bool:
    """True when the third column of the first data row parses as a float."""
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                return False
            try:
                float(parts[2])
                return True
            except ValueError:
                return False
    return False


def evaluate_files(pred_path: str | Path, gold_path: str | Path,
                   threshold: float = 0.5) -> EvalReport:
    """Score a prediction file (labels or probabilities) against gold labels."""
    pred_path = Path(pred_path)
    if not pred_path.is_file():
        raise ValidationError(f"prediction file not found: {pred_path}")
    gold = corpus.load_labels(gold_path)
    if _sniff_probability_file(pred_path):
        probs = corpus.load_probabilities(pred_path)
        predictions = {k: apply_threshold(p, threshold) for k, p in probs.items()}
    else:
        predictions = corpus.load_labels(pred_path)
    return score(confusion(predictions, gold))
