"""Behavioral probes: n-gram likelihood ranking, quotation invariance,
and scoring of out-of-corpus text.

A scorer here is any callable mapping a list of texts to a list of
probabilities — ensemble, single classifier, or baseline alike.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence

from ._text import word_tokens
from .corpus import DatasetSplit
from .errors import ValidationError

TextScorer = Callable[[Sequence[str]], Sequence[float]]

PLACEHOLDER = "{s}"
DEFAULT_DELTA_THRESHOLD = 0.05
_SCORE_BATCH = 256


@dataclass(frozen=True)
class NgramScore:
    ngram: str  # lowercased, whitespace-joined tokens
    n: int
    probability: float

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValidationError(f"ngram order must be 1 or 2, got {self.n}")
        if len(self.ngram.split()) != self.n:
            raise ValidationError(
                f"ngram {self.ngram!r} does not have {self.n} tokens"
            )


@dataclass(frozen=True)
class QuoteProbeResult:
    original_text: str
    framed_texts: tuple[str, ...]
    original_p: float
    framed_p: tuple[float, ...]
    max_abs_delta: float


def default_templates() -> list[str]:
    text = resources.files("propsent").joinpath(
        "fixtures/quote_templates.txt"
    ).read_text(encoding="utf-8")
    return _parse_templates(text.splitlines())


def load_templates(path: str | Path) -> list[str]:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"template file not found: {path}")
    templates = _parse_templates(path.read_text(encoding="utf-8").splitlines())
    if not templates:
        raise ValidationError(f"{path} contains no templates")
    return templates


def _parse_templates(lines: Iterable[str]) -> list[str]:
    return [
        line for line in lines
        if line.strip() and not line.lstrip().startswith("#")
    ]


def build_ngram_vocab(splits: Sequence[DatasetSplit]) -> list[tuple[str, int]]:
    """All distinct unigrams and adjacent bigrams across the given splits.

    No frequency cutoff; output is sorted for determinism.
    """
    if not splits:
        raise ValidationError("at least one split is required")
    vocab: set[tuple[str, int]] = set()
    for split in splits:
        for sentence in split.sentences:
            tokens = word_tokens(sentence.text)
            for tok in tokens:
                vocab.add((tok, 1))
            for left, right in zip(tokens, tokens[1:]):
                vocab.add((f"{left} {right}", 2))
    return sorted(vocab)


def rank_ngrams(scorer: TextScorer, vocab: Sequence[tuple[str, int]],
                top_n: int = 20) -> list[NgramScore]:
    """Score every n-gram as standalone text and keep the top ones.

    Sorted by probability descending; ties break lexicographically
    ascending, which makes the ranking a total order.
    """
    if top_n < 0:
        raise ValidationError(f"top_n must be >= 0, got {top_n}")
    entries = sorted(vocab)
    scored: list[NgramScore] = []
    for start in range(0, len(entries), _SCORE_BATCH):
        chunk = entries[start : start + _SCORE_BATCH]
        probs = scorer([ngram for ngram, _ in chunk])
        scored.extend(
            NgramScore(ngram=ngram, n=n, probability=float(p))
            for (ngram, n), p in zip(chunk, probs)
        )
    scored.sort(key=lambda s: (-s.probability, s.ngram))
    return scored[: min(top_n, len(scored))]


def quote_probe(scorer: TextScorer, sentence_text: str,
                templates: Sequence[str] | None = None) -> QuoteProbeResult:
    """Measure how reframing a sentence as quoted speech moves its score.

    The probe only reports deltas; deciding whether a delta matters is
    left to the report layer.
    """
    templates = list(templates) if templates is not None else default_templates()
    for template in templates:
        if template.count(PLACEHOLDER) != 1:
            raise ValidationError(
                f"template must contain exactly one {PLACEHOLDER} slot: "
                f"{template!r}"
            )
    framed = [t.replace(PLACEHOLDER, sentence_text) for t in templates]
    probs = [float(p) for p in scorer([sentence_text] + framed)]
    original_p, framed_p = probs[0], probs[1:]
    max_abs_delta = max((abs(p - original_p) for p in framed_p), default=0.0)
    return QuoteProbeResult(
        original_text=sentence_text,
        framed_texts=tuple(framed),
        original_p=original_p,
        framed_p=tuple(framed_p),
        max_abs_delta=max_abs_delta,
    )


def strip_template(framed_text: str, template: str) -> str:
    """Recover the sentence from a framed text (substitution fidelity)."""
    if template.count(PLACEHOLDER) != 1:
        raise ValidationError(f"template has no single slot: {template!r}")
    prefix, suffix = template.split(PLACEHOLDER)
    if not (framed_text.startswith(prefix) and framed_text.endswith(suffix)):
        raise ValidationError(
            f"framed text does not match template {template!r}"
        )
    return framed_text[len(prefix) : len(framed_text) - len(suffix)]


def score_external(scorer: TextScorer,
                   texts: Sequence[str]) -> list[tuple[str, float]]:
    """Score arbitrary out-of-corpus texts, bypassing corpus ingestion."""
    texts = list(texts)
    if not texts:
        return []
    probs = scorer(texts)
    return [(text, float(p)) for text, p in zip(texts, probs)]


# ---------------------------------------------------------------------------
# Reporting

def emit_probe_report(ngrams: Sequence[NgramScore] = (),
                      quotes: Sequence[QuoteProbeResult] = (),
                      external: Sequence[tuple[str, float]] = (),
                      delta_threshold: float = DEFAULT_DELTA_THRESHOLD,
                      ) -> tuple[str, dict]:
    """Render probe results as (plain-text report, machine-readable dict).

    Regeneration from identical inputs is byte-identical.
    """
    lines: list[str] = ["PROBE REPORT", "============", ""]

    lines.append(f"Top n-grams by propaganda probability ({len(ngrams)} rows)")
    lines.append("rank  n  probability  ngram")
    for rank, item in enumerate(ngrams, start=1):
        lines.append(
            f"{rank:>4}  {item.n}  {item.probability:>11.4f}  {item.ngram}"
        )
    lines.append("")

    lines.append(f"Quotation invariance (delta threshold {delta_threshold})")
    lines.append("original_p  max_abs_delta  changed  text")
    for result in quotes:
        changed = "yes" if result.max_abs_delta > delta_threshold else "no"
        lines.append(
            f"{result.original_p:>10.4f}  {result.max_abs_delta:>13.4f}  "
            f"{changed:>7}  {result.original_text}"
        )
        for framed, p in zip(result.framed_texts, result.framed_p):
            lines.append(f"{p:>10.4f}  {'':>13}  {'':>7}  > {framed}")
    lines.append("")

    lines.append(f"External texts ({len(external)} rows)")
    lines.append("probability  text")
    for text, p in external:
        lines.append(f"{p:>11.4f}  {text}")
    lines.append("")

    document = {
        "ngrams": [
            {"ngram": s.ngram, "n": s.n, "probability": s.probability}
            for s in ngrams
        ],
        "quotes": [
            {
                "original_text": r.original_text,
                "framed_texts": list(r.framed_texts),
                "original_p": r.original_p,
                "framed_p": list(r.framed_p),
                "max_abs_delta": r.max_abs_delta,
                "changed": r.max_abs_delta > delta_threshold,
            }
            for r in quotes
        ],
        "external": [
            {"text": text, "probability": p} for text, p in external
        ],
        "delta_threshold": delta_threshold,
    }
    return "\n".join(lines), document


def report_from_documents(documents: Sequence[dict]) -> tuple[str, dict]:
    """Merge machine-readable probe documents back into one report."""
    ngrams: list[NgramScore] = []
    quotes: list[QuoteProbeResult] = []
    external: list[tuple[str, float]] = []
    threshold = DEFAULT_DELTA_THRESHOLD
    for doc in documents:
        ngrams.extend(
            NgramScore(d["ngram"], d["n"], d["probability"])
            for d in doc.get("ngrams", ())
        )
        quotes.extend(
            QuoteProbeResult(
                original_text=d["original_text"],
                framed_texts=tuple(d["framed_texts"]),
                original_p=d["original_p"],
                framed_p=tuple(d["framed_p"]),
                max_abs_delta=d["max_abs_delta"],
            )
            for d in doc.get("quotes", ())
        )
        external.extend(
            (d["text"], d["probability"]) for d in doc.get("external", ())
        )
        if "delta_threshold" in doc:
            threshold = doc["delta_threshold"]
    return emit_probe_report(ngrams=ngrams, quotes=quotes, external=external,
                             delta_threshold=threshold)


def save_report(path: str | Path, text: str, document: dict) -> tuple[Path, Path]:
    """Write the plain-text report and its JSON twin next to each other."""
    path = Path(path)
    path.write_text(text + "\n", encoding="utf-8")
    json_path = path.with_suffix(path.suffix + ".json")
    json_path.write_text(
        json.dumps(document, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    return path, json_path
