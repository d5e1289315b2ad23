"""Shared builders for synthetic corpora used across the test suite."""

from __future__ import annotations

import random
from pathlib import Path

from propsent.corpus import DatasetSplit, Sentence, SlcLabel, join

POSITIVE_PHRASES = [
    "this devastating and cruel decision is a disgrace",
    "what a vile and pathetic display of monstrous fraud",
    "these shameless traitors doomed the nation",
    "absolutely disgusting and utterly insane nonsense",
    "the hysterical coward spread terrifying lies",
    "a horrible and idiotic plan from ignorant fools",
]

NEGATIVE_PHRASES = [
    "the committee reviewed the annual budget on tuesday",
    "the report was published by the local agency",
    "members of the panel met to plan the review",
    "the spokesman described the schedule for the week",
    "the city council approved the new transit plan",
    "officials presented the quarterly economic data",
]


def synthetic_sentences(n_articles: int = 6, lines: int = 6, seed: int = 3,
                        positive_rate: float = 0.5,
                        first_article: int = 100):
    """Deterministic labeled sentences over loaded vs. neutral phrasing."""
    rng = random.Random(seed)
    sentences: list[Sentence] = []
    labels: dict[tuple[str, int], SlcLabel] = {}
    for a in range(n_articles):
        article_id = str(first_article + a)
        for i in range(1, lines + 1):
            positive = rng.random() < positive_rate
            phrases = POSITIVE_PHRASES if positive else NEGATIVE_PHRASES
            sentences.append(Sentence(article_id, i, rng.choice(phrases)))
            labels[(article_id, i)] = (
                SlcLabel.PROPAGANDA if positive else SlcLabel.NON_PROPAGANDA
            )
    return sentences, labels


def synthetic_split(n_articles: int = 6, lines: int = 6, seed: int = 3,
                    positive_rate: float = 0.5) -> DatasetSplit:
    sentences, labels = synthetic_sentences(n_articles, lines, seed,
                                            positive_rate)
    return join(sentences, labels)


def write_corpus_files(root: Path, n_articles: int = 6, lines: int = 6,
                       seed: int = 3, positive_rate: float = 0.5):
    """Write article files plus a label file; returns (articles_dir, labels)."""
    sentences, labels = synthetic_sentences(n_articles, lines, seed,
                                            positive_rate)
    articles_dir = root / "articles"
    articles_dir.mkdir(parents=True, exist_ok=True)
    by_article: dict[str, list[Sentence]] = {}
    for s in sentences:
        by_article.setdefault(s.article_id, []).append(s)
    for article_id, sents in by_article.items():
        body = "\n".join(s.text for s in sorted(sents, key=lambda s: s.index))
        (articles_dir / f"article{article_id}.txt").write_text(
            body + "\n", encoding="utf-8"
        )
    labels_path = root / "labels.tsv"
    rows = [
        f"{aid}\t{idx}\t{labels[(aid, idx)].value}"
        for aid, idx in sorted(labels)
    ]
    labels_path.write_text("".join(r + "\n" for r in rows), encoding="utf-8")
    return articles_dir, labels_path
