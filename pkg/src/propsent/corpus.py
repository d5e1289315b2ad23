"""Shared-task corpus handling: article/label files, splits, fold assignment.

External formats (shared-task convention):
  * article files: one file per article named ``article<ID>.txt``, plain
    UTF-8 text, one sentence per line, 1-based line numbering; blank lines
    are kept as empty sentences.
  * label files: tab-separated, three columns, no header:
    ``<article_id> TAB <sentence_index> TAB <label>`` with label in
    {"propaganda", "non-propaganda"}.
  * prediction files reuse the label format, or carry a probability in the
    third column instead of a label.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import ValidationError

ARTICLE_FILE_RE = re.compile(r"^article(?P<aid>.+)\.txt$")

# (article_id, sentence index) — the per-sentence key used everywhere.
Key = tuple[str, int]

_MAX_LISTED_KEYS = 10


class SlcLabel(Enum):
    """Binary sentence label; PROPAGANDA is the positive class."""

    PROPAGANDA = "propaganda"
    NON_PROPAGANDA = "non-propaganda"

    @classmethod
    def from_string(cls, raw: str) -> "SlcLabel":
        try:
            return cls(raw)
        except ValueError:
            raise ValidationError(
                f"unknown label {raw!r}; expected 'propaganda' or 'non-propaganda'"
            ) from None


class SplitName(Enum):
    TRAIN = "train"
    DEV = "dev"
    TEST = "test"


@dataclass(frozen=True)
class Sentence:
    """One physical line of an article; text may be empty for blank lines."""

    article_id: str
    index: int  # 1-based line number within the article
    text: str

    def __post_init__(self):
        if self.index < 1:
            raise ValidationError(
                f"sentence index must be >= 1, got {self.index} "
                f"(article {self.article_id!r})"
            )
        if "\n" in self.text or "\r" in self.text:
            raise ValidationError(
                f"sentence text contains a line break (article "
                f"{self.article_id!r}, line {self.index})"
            )

    @property
    def key(self) -> Key:
        return (self.article_id, self.index)


@dataclass(frozen=True)
class LabeledSentence:
    sentence: Sentence
    label: SlcLabel


def _format_keys(keys) -> str:
    listed = sorted(keys)[:_MAX_LISTED_KEYS]
    shown = ", ".join(f"{aid}:{idx}" for aid, idx in listed)
    more = len(keys) - len(listed)
    return shown + (f" (+{more} more)" if more > 0 else "")


@dataclass
class DatasetSplit:
    """An ordered sentence collection with optional full label coverage."""

    name: SplitName
    sentences: tuple[Sentence, ...]
    labels: dict[Key, SlcLabel] | None = None

    def __post_init__(self):
        ordered = tuple(sorted(self.sentences, key=lambda s: s.key))
        keys = [s.key for s in ordered]
        key_set = set(keys)
        if len(key_set) != len(keys):
            dupes = {k for k in keys if keys.count(k) > 1}
            raise ValidationError(f"duplicate sentence keys: {_format_keys(dupes)}")
        self.sentences = ordered
        if self.labels is not None:
            unlabeled = key_set - self.labels.keys()
            if unlabeled:
                raise ValidationError(
                    f"sentences without a label: {_format_keys(unlabeled)}"
                )
            orphaned = self.labels.keys() - key_set
            if orphaned:
                raise ValidationError(
                    f"labels without a sentence: {_format_keys(orphaned)}"
                )

    @property
    def keys(self) -> list[Key]:
        return [s.key for s in self.sentences]

    @property
    def articles(self) -> list[str]:
        return sorted({s.article_id for s in self.sentences})

    def labeled_sentences(self) -> list[LabeledSentence]:
        if self.labels is None:
            raise ValidationError(f"split {self.name.value!r} has no labels")
        return [LabeledSentence(s, self.labels[s.key]) for s in self.sentences]


@dataclass(frozen=True)
class FoldAssignment:
    """Article-level fold membership for k-fold cross-validation."""

    k: int
    assignment: dict[str, int]

    def __post_init__(self):
        if self.k < 2:
            raise ValidationError(f"fold count must be >= 2, got {self.k}")
        bad = {a: f for a, f in self.assignment.items() if not 0 <= f < self.k}
        if bad:
            raise ValidationError(f"fold index out of range: {bad}")

    def articles_in_fold(self, fold: int) -> set[str]:
        return {a for a, f in self.assignment.items() if f == fold}

    def training_articles(self, fold: int) -> set[str]:
        """Articles seen by the member that holds out `fold`."""
        return {a for a, f in self.assignment.items() if f != fold}


def load_articles(directory: str | Path) -> list[Sentence]:
    """Parse every ``article<ID>.txt`` in `directory` into sentences.

    One Sentence per physical line, index = 1-based line number; blank
    lines become empty-text sentences. Output is sorted by
    (article_id, index) regardless of filesystem enumeration order.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise ValidationError(f"article directory not found: {directory}")

    sentences: list[Sentence] = []
    seen: set[str] = set()
    for path in sorted(directory.iterdir()):
        match = ARTICLE_FILE_RE.match(path.name)
        if not match or not path.is_file():
            continue
        article_id = match.group("aid")
        if article_id in seen:
            raise ValidationError(f"duplicate article id {article_id!r} ({path})")
        seen.add(article_id)
        raw = path.read_bytes()
        try:
            content = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            line = raw[: exc.start].count(b"\n") + 1
            raise ValidationError(
                f"undecodable UTF-8 in {path} at byte {exc.start} (line {line})"
            ) from None
        content = content.replace("\r\n", "\n")
        if content.endswith("\n"):
            content = content[:-1]
        if content == "" and raw == b"":
            continue  # a truly empty file has no lines
        for i, line_text in enumerate(content.split("\n"), start=1):
            sentences.append(Sentence(article_id, i, line_text))
    sentences.sort(key=lambda s: s.key)
    return sentences


def _parse_rows(path: str | Path) -> list[tuple[int, str, int, str]]:
    """Yield (row_number, article_id, index, third_column) for a 3-col TSV."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"file not found: {path}")
    rows = []
    lines = path.read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()  # trailing newline at EOF
    for row_no, line in enumerate(lines, start=1):
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValidationError(
                f"{path}: row {row_no}: expected 3 tab-separated columns, "
                f"got {len(parts)}"
            )
        article_id, index_raw, third = parts
        try:
            index = int(index_raw)
        except ValueError:
            raise ValidationError(
                f"{path}: row {row_no}: sentence index {index_raw!r} is not an integer"
            ) from None
        rows.append((row_no, article_id, index, third))
    return rows


def load_labels(path: str | Path) -> dict[Key, SlcLabel]:
    """Parse a 3-column label file into a (article_id, index) -> label map."""
    labels: dict[Key, SlcLabel] = {}
    for row_no, article_id, index, raw_label in _parse_rows(path):
        try:
            label = SlcLabel.from_string(raw_label)
        except ValidationError as exc:
            raise ValidationError(f"{path}: row {row_no}: {exc}") from None
        key = (article_id, index)
        if key in labels:
            raise ValidationError(
                f"{path}: row {row_no}: duplicate entry for {article_id}:{index}"
            )
        labels[key] = label
    return labels


def load_probabilities(path: str | Path) -> dict[Key, float]:
    """Parse a 3-column prediction file whose third column is a probability."""
    probs: dict[Key, float] = {}
    for row_no, article_id, index, raw in _parse_rows(path):
        try:
            p = float(raw)
        except ValueError:
            raise ValidationError(
                f"{path}: row {row_no}: probability {raw!r} is not a number"
            ) from None
        if not 0.0 <= p <= 1.0:
            raise ValidationError(
                f"{path}: row {row_no}: probability {p} outside [0, 1]"
            )
        key = (article_id, index)
        if key in probs:
            raise ValidationError(
                f"{path}: row {row_no}: duplicate entry for {article_id}:{index}"
            )
        probs[key] = p
    return probs


def join(sentences: list[Sentence], labels: dict[Key, SlcLabel],
         name: SplitName = SplitName.TRAIN) -> DatasetSplit:
    """Combine sentences and labels into a split; coverage must be exact."""
    return DatasetSplit(name=name, sentences=tuple(sentences), labels=dict(labels))


def split_folds(split: DatasetSplit, k: int, seed: int) -> FoldAssignment:
    """Assign whole articles to k folds, sizes differing by at most one.

    Article-level assignment prevents sentences of one article from
    landing on both sides of a fold boundary.
    """
    if k < 2:
        raise ValidationError(f"fold count must be >= 2, got {k}")
    articles = split.articles
    if len(articles) < k:
        raise ValidationError(
            f"cannot make {k} folds from {len(articles)} articles"
        )
    shuffled = list(articles)
    random.Random(seed).shuffle(shuffled)
    assignment = {aid: i % k for i, aid in enumerate(shuffled)}
    return FoldAssignment(k=k, assignment=assignment)


# ---------------------------------------------------------------------------
# Serialization back to the external formats, plus a single-file split form.

def save_articles(split: DatasetSplit, directory: str | Path) -> None:
    """Write one ``article<ID>.txt`` per article, one sentence per line."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    by_article: dict[str, list[Sentence]] = {}
    for s in split.sentences:
        by_article.setdefault(s.article_id, []).append(s)
    for article_id, sents in by_article.items():
        indices = [s.index for s in sents]
        if indices != list(range(1, len(sents) + 1)):
            raise ValidationError(
                f"article {article_id!r} has non-contiguous line numbers; "
                "cannot serialize to the line-per-sentence format"
            )
        body = "\n".join(s.text for s in sents)
        (directory / f"article{article_id}.txt").write_text(
            body + "\n", encoding="utf-8"
        )


def save_labels(path: str | Path, labels: dict[Key, SlcLabel]) -> None:
    lines = [
        f"{aid}\t{idx}\t{labels[(aid, idx)].value}"
        for aid, idx in sorted(labels)
    ]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def save_probabilities(path: str | Path, probs: dict[Key, float]) -> None:
    lines = [
        f"{aid}\t{idx}\t{probs[(aid, idx)]!r}"
        for aid, idx in sorted(probs)
    ]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def save_split(path: str | Path, split: DatasetSplit) -> None:
    """Write a split as a single deterministic JSON document."""
    doc = {
        "name": split.name.value,
        "sentences": [[s.article_id, s.index, s.text] for s in split.sentences],
        "labels": (
            None if split.labels is None
            else [[aid, idx, split.labels[(aid, idx)].value]
                  for aid, idx in sorted(split.labels)]
        ),
    }
    Path(path).write_text(
        json.dumps(doc, ensure_ascii=False, separators=(",", ":")) + "\n",
        encoding="utf-8",
    )


def load_split(path: str | Path) -> DatasetSplit:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"split file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from None
    try:
        name = SplitName(doc["name"])
        sentences = tuple(
            Sentence(aid, idx, text) for aid, idx, text in doc["sentences"]
        )
        labels = None
        if doc["labels"] is not None:
            labels = {
                (aid, idx): SlcLabel.from_string(raw)
                for aid, idx, raw in doc["labels"]
            }
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path} has malformed split structure: {exc}") from None
    return DatasetSplit(name=name, sentences=sentences, labels=labels)
