"""K-fold ensemble: one classifier per held-out fold, probabilities
aggregated by arithmetic mean.

Members are duck-typed: anything exposing predict_proba/score_texts and
a training_articles attribute can participate, so the invariant checks
also run against lightweight stand-ins.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from . import classifier as _classifier
from . import corpus as _corpus
from .classifier import ClassifierModel, TrainConfig
from .corpus import DatasetSplit, FoldAssignment, Key, Sentence
from .errors import PropsentError, ValidationError

MEAN_AGGREGATION = "mean"
_MANIFEST_NAME = "manifest.json"


@dataclass
class EnsembleModel:
    members: tuple
    fold_assignment: FoldAssignment
    aggregation: str = MEAN_AGGREGATION

    def __post_init__(self):
        if len(self.members) != self.fold_assignment.k:
            raise ValidationError(
                f"{len(self.members)} members for k={self.fold_assignment.k}"
            )
        if self.aggregation != MEAN_AGGREGATION:
            raise ValidationError(
                f"unsupported aggregation {self.aggregation!r}"
            )

    @property
    def k(self) -> int:
        return self.fold_assignment.k

    def predict_proba(self, sentences: Sequence[Sentence],
                      batch_size: int = 32) -> list[float]:
        return predict(self, sentences, batch_size=batch_size)

    def score_texts(self, texts: Sequence[str],
                    batch_size: int = 32) -> list[float]:
        texts = list(texts)
        if not texts:
            return []
        per_member = [m.score_texts(texts, batch_size=batch_size)
                      for m in self.members]
        return [sum(col) / len(col) for col in zip(*per_member)]


def verify_fold_discipline(ensemble: EnsembleModel) -> None:
    """Member i must never have trained on an article of fold i."""
    for i, member in enumerate(ensemble.members):
        held_out = ensemble.fold_assignment.articles_in_fold(i)
        leaked = set(member.training_articles) & held_out
        if leaked:
            raise ValidationError(
                f"member {i} trained on held-out articles: {sorted(leaked)[:10]}"
            )


def _subset_split(split: DatasetSplit, articles: set[str]) -> DatasetSplit:
    sentences = tuple(s for s in split.sentences if s.article_id in articles)
    labels = {s.key: split.labels[s.key] for s in sentences}
    return DatasetSplit(name=split.name, sentences=sentences, labels=labels)


def train_kfold(split: DatasetSplit, k: int = 10,
                config: TrainConfig = TrainConfig(), seed: int = 0,
                *, device=None, cache_dir=None) -> EnsembleModel:
    """Train k members; member i sees every fold except i.

    Member i trains with seed + i so runs are reproducible end to end.
    """
    if split.labels is None:
        raise ValidationError("k-fold training requires a labeled split")
    assignment = _corpus.split_folds(split, k, seed)
    members = []
    for i in range(k):
        subset = _subset_split(split, assignment.training_articles(i))
        member_config = replace(config, seed=seed + i)
        try:
            member = _classifier.train(subset, member_config,
                                       device=device, cache_dir=cache_dir)
        except PropsentError as exc:
            raise type(exc)(f"fold {i}: {exc}") from exc
        members.append(member)
    ensemble = EnsembleModel(members=tuple(members), fold_assignment=assignment)
    verify_fold_discipline(ensemble)
    return ensemble


def predict(ensemble: EnsembleModel, sentences: Sequence[Sentence],
            batch_size: int = 32) -> list[float]:
    """Per sentence, the unweighted mean of member probabilities."""
    sentences = list(sentences)
    if not sentences:
        return []
    per_member = [m.predict_proba(sentences, batch_size=batch_size)
                  for m in ensemble.members]
    return [sum(col) / len(col) for col in zip(*per_member)]


def oof_predictions(ensemble: EnsembleModel,
                    split: DatasetSplit) -> dict[Key, float]:
    """Score each sentence only with the member that held out its article."""
    assignment = ensemble.fold_assignment.assignment
    unknown = {s.article_id for s in split.sentences} - assignment.keys()
    if unknown:
        raise ValidationError(
            f"articles without a fold assignment: {sorted(unknown)[:10]}"
        )
    by_fold: dict[int, list[Sentence]] = {}
    for sentence in split.sentences:
        by_fold.setdefault(assignment[sentence.article_id], []).append(sentence)
    result: dict[Key, float] = {}
    for fold, sentences in by_fold.items():
        probs = ensemble.members[fold].predict_proba(sentences)
        for sentence, p in zip(sentences, probs):
            result[sentence.key] = p
    return result


def save_ensemble(ensemble: EnsembleModel, directory: str | Path) -> Path:
    """Persist member checkpoints plus a manifest describing the ensemble."""
    directory = Path(directory)
    checkpoints = directory / "checkpoints"
    fingerprints = []
    member_meta = []
    for member in ensemble.members:
        _classifier.save_checkpoint(member, checkpoints)
        fingerprints.append(member.training_fingerprint)
        member_meta.append({
            "fingerprint": member.training_fingerprint,
            "seed": member.config.seed,
            "initial_loss": member.initial_loss,
            "final_loss": member.final_loss,
            "num_optimizer_steps": member.num_optimizer_steps,
        })
    manifest = {
        "k": ensemble.k,
        "aggregation": ensemble.aggregation,
        "fold_assignment": dict(sorted(ensemble.fold_assignment.assignment.items())),
        "members": fingerprints,
        "member_details": member_meta,
    }
    path = directory / _MANIFEST_NAME
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")
    return path


def manifest_path(directory_or_manifest: str | Path) -> Path:
    path = Path(directory_or_manifest)
    return path / _MANIFEST_NAME if path.is_dir() else path


def is_ensemble_dir(path: str | Path) -> bool:
    return manifest_path(path).is_file()


def load_ensemble(directory_or_manifest: str | Path, *,
                  device=None) -> EnsembleModel:
    path = manifest_path(directory_or_manifest)
    if not path.is_file():
        raise ValidationError(f"ensemble manifest not found: {path}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    base = path.parent
    members = tuple(
        _classifier.load_checkpoint(base / "checkpoints" / fingerprint,
                                    device=device)
        for fingerprint in manifest["members"]
    )
    assignment = FoldAssignment(
        k=manifest["k"],
        assignment={a: int(f) for a, f in manifest["fold_assignment"].items()},
    )
    return EnsembleModel(members=members, fold_assignment=assignment,
                         aggregation=manifest["aggregation"])
