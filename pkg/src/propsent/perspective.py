"""Client for the external comment-analysis attribute API.

Fetches 12 per-sentence attribute scores with a persistent cache, simple
rate limiting, bounded retries, and a deterministic offline stub so the
rest of the toolkit can run without credentials or network access.

Cache file format: one line per distinct normalized text,
``<sha256> TAB <12 tab-separated scores>``, append-only.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping

import requests

from ._text import normalize_text, word_tokens
from .corpus import DatasetSplit, Key
from .errors import ExternalServiceError, ValidationError

# Canonical attribute order; feature vectors and cache lines follow it.
ATTRIBUTES = (
    "toxicity",
    "severe_toxicity",
    "identity_attack",
    "insult",
    "profanity",
    "threat",
    "sexually_explicit",
    "flirtation",
    "inflammatory",
    "obscene",
    "likely_to_reject",
    "unsubstantial",
)

DEFAULT_ENDPOINT = (
    "https://commentanalyzer.googleapis.com/v1alpha1/comments:analyze"
)
API_KEY_ENV = "PERSPECTIVE_API_KEY"

_RETRYABLE_STATUSES = {429, 500, 502, 503, 504}


@dataclass(frozen=True)
class AttributeScores:
    """The 12 attribute probabilities for one sentence, each in [0, 1]."""

    toxicity: float
    severe_toxicity: float
    identity_attack: float
    insult: float
    profanity: float
    threat: float
    sexually_explicit: float
    flirtation: float
    inflammatory: float
    obscene: float
    likely_to_reject: float
    unsubstantial: float

    def __post_init__(self):
        for name in ATTRIBUTES:
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
                raise ValidationError(
                    f"attribute {name!r} score {value!r} outside [0, 1]"
                )

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(float(getattr(self, name)) for name in ATTRIBUTES)

    def as_mapping(self) -> dict[str, float]:
        return {name: float(getattr(self, name)) for name in ATTRIBUTES}

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, float]) -> "AttributeScores":
        missing = [name for name in ATTRIBUTES if name not in mapping]
        if missing:
            raise ValidationError(f"missing attribute scores: {', '.join(missing)}")
        return cls(**{name: float(mapping[name]) for name in ATTRIBUTES})


ZERO_SCORES = AttributeScores(*(0.0,) * 12)


def text_digest(text: str) -> str:
    """Cache key: sha256 of the NFC-normalized, whitespace-collapsed text."""
    return hashlib.sha256(normalize_text(text).encode("utf-8")).hexdigest()


@dataclass
class ScoreCacheEntry:
    text_hash: str
    scores: AttributeScores
    fetched_at: float


class ScoreCache:
    """Append-only file-backed score cache keyed by normalized-text hash."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, ScoreCacheEntry] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        for line_no, line in enumerate(
            self.path.read_text(encoding="utf-8").splitlines(), start=1
        ):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 1 + len(ATTRIBUTES):
                raise ValidationError(
                    f"{self.path}: line {line_no}: expected "
                    f"{1 + len(ATTRIBUTES)} columns, got {len(parts)}"
                )
            digest = parts[0]
            try:
                scores = AttributeScores(*(float(v) for v in parts[1:]))
            except ValueError:
                raise ValidationError(
                    f"{self.path}: line {line_no}: malformed score value"
                ) from None
            self._entries[digest] = ScoreCacheEntry(digest, scores, time.time())

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, digest: str) -> AttributeScores | None:
        entry = self._entries.get(digest)
        return entry.scores if entry else None

    def put(self, digest: str, scores: AttributeScores) -> None:
        with self._lock:
            if digest in self._entries:
                return
            self._entries[digest] = ScoreCacheEntry(digest, scores, time.time())
            if self.path is not None:
                line = "\t".join([digest] + [repr(v) for v in scores.as_tuple()])
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
                    fh.flush()


class RateLimiter:
    """Spaces grants at least 1/rate seconds apart across threads."""

    def __init__(self, requests_per_second: float):
        if requests_per_second <= 0:
            raise ValidationError("requests_per_second must be > 0")
        self._interval = 1.0 / requests_per_second
        self._lock = threading.Lock()
        self._next_at = 0.0

    def acquire(self) -> None:
        with self._lock:
            now = time.monotonic()
            wait = self._next_at - now
            self._next_at = max(now, self._next_at) + self._interval
        if wait > 0:
            time.sleep(wait)


def load_stub_lexicon() -> dict:
    """The versioned per-attribute word lists backing the offline stub."""
    data = resources.files("propsent").joinpath("fixtures/stub_lexicon.json")
    return json.loads(data.read_text(encoding="utf-8"))


class StubScorer:
    """Deterministic offline transport: a pure function of the text.

    Each attribute scores min(1, match_weight * d) where d is the number
    of distinct lexicon terms of that attribute present in the text's
    tokens. Keeps a request log for rate/concurrency assertions.
    """

    def __init__(self, lexicon: dict | None = None):
        lexicon = lexicon if lexicon is not None else load_stub_lexicon()
        self.match_weight = float(lexicon["match_weight"])
        self.terms = {
            attr: frozenset(lexicon["attributes"].get(attr, ()))
            for attr in ATTRIBUTES
        }
        self.calls: list[tuple[str, float, int]] = []  # (text, time, in-flight)
        self._lock = threading.Lock()
        self._in_flight = 0

    def __call__(self, text: str) -> dict[str, float]:
        with self._lock:
            self._in_flight += 1
            self.calls.append((text, time.monotonic(), self._in_flight))
        try:
            tokens = set(word_tokens(text))
            return {
                attr: min(1.0, self.match_weight * len(tokens & terms))
                for attr, terms in self.terms.items()
            }
        finally:
            with self._lock:
                self._in_flight -= 1


class HttpTransport:
    """Live API transport; one POST per text, all 12 attributes requested."""

    def __init__(self, api_key: str, endpoint: str = DEFAULT_ENDPOINT,
                 timeout: float = 30.0, session: requests.Session | None = None):
        self.api_key = api_key
        self.endpoint = endpoint
        self.timeout = timeout
        self.session = session or requests.Session()

    def __call__(self, text: str) -> dict[str, float]:
        body = {
            "comment": {"text": text},
            "requestedAttributes": {name.upper(): {} for name in ATTRIBUTES},
            "languages": ["en"],
            "doNotStore": True,
        }
        try:
            response = self.session.post(
                self.endpoint,
                params={"key": self.api_key},
                json=body,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise ExternalServiceError(f"request failed: {exc}", status=None) from exc
        if response.status_code != 200:
            raise ExternalServiceError(
                f"attribute service returned HTTP {response.status_code}",
                status=response.status_code,
            )
        payload = response.json()
        scores: dict[str, float] = {}
        attribute_scores = payload.get("attributeScores", {})
        for name in ATTRIBUTES:
            block = attribute_scores.get(name.upper())
            if block is None:
                raise ExternalServiceError(
                    f"response missing attribute {name!r}",
                    status=response.status_code,
                    attribute=name,
                )
            scores[name] = float(block["summaryScore"]["value"])
        return scores


class ScoreSplitError(ExternalServiceError):
    """Raised after a batch run when some sentences could not be scored."""

    def __init__(self, failures: dict[Key, str]):
        shown = ", ".join(
            f"{aid}:{idx}" for aid, idx in sorted(failures)[:10]
        )
        more = len(failures) - min(len(failures), 10)
        suffix = f" (+{more} more)" if more > 0 else ""
        super().__init__(
            f"failed to score {len(failures)} sentences: {shown}{suffix}"
        )
        self.failures = failures


class PerspectiveClient:
    """Shared, cached, rate-limited access to the attribute service."""

    def __init__(self, transport: Callable[[str], Mapping[str, float]] | None = None,
                 *, api_key: str | None = None, endpoint: str = DEFAULT_ENDPOINT,
                 cache: ScoreCache | None = None,
                 requests_per_second: float = 1.0, max_in_flight: int = 1,
                 max_retries: int = 3, backoff_seconds: float = 1.0,
                 sleep: Callable[[float], None] = time.sleep):
        if transport is None:
            api_key = api_key or os.environ.get(API_KEY_ENV)
            if not api_key:
                raise ValidationError(
                    "no transport given and no API key: set "
                    f"{API_KEY_ENV} or pass stub transport"
                )
            transport = HttpTransport(api_key, endpoint)
        if max_in_flight < 1:
            raise ValidationError("max_in_flight must be >= 1")
        self.transport = transport
        self.cache = cache if cache is not None else ScoreCache()
        self.max_in_flight = max_in_flight
        self.max_retries = max_retries
        self.backoff_seconds = backoff_seconds
        self._sleep = sleep
        self._limiter = RateLimiter(requests_per_second)
        self._slots = threading.Semaphore(max_in_flight)

    def _fetch(self, text: str) -> AttributeScores:
        last_error: ExternalServiceError | None = None
        for attempt in range(self.max_retries + 1):
            if attempt > 0:
                self._sleep(self.backoff_seconds * 2 ** (attempt - 1))
            with self._slots:
                self._limiter.acquire()
                try:
                    raw = self.transport(text)
                except ExternalServiceError as exc:
                    if exc.status is not None and exc.status not in _RETRYABLE_STATUSES:
                        raise
                    last_error = exc
                    continue
            return AttributeScores.from_mapping(raw)
        assert last_error is not None
        raise last_error

    def score_sentence(self, text: str) -> AttributeScores:
        """Score one text; empty text yields all zeros with no request."""
        normalized = normalize_text(text)
        if not normalized:
            return ZERO_SCORES
        digest = text_digest(text)
        cached = self.cache.get(digest)
        if cached is not None:
            return cached
        scores = self._fetch(normalized)
        self.cache.put(digest, scores)
        return scores

    def score_split(self, split: DatasetSplit) -> dict[Key, AttributeScores]:
        """Score every sentence of a split, resuming from the cache.

        Distinct texts are fetched once; per-sentence failures are
        collected and raised together after all attempts.
        """
        distinct: dict[str, str] = {}  # digest -> representative text
        for sentence in split.sentences:
            if normalize_text(sentence.text):
                distinct.setdefault(text_digest(sentence.text), sentence.text)

        errors: dict[str, str] = {}
        to_fetch = [d for d in distinct if self.cache.get(d) is None]

        def fetch_one(digest: str) -> None:
            try:
                self.score_sentence(distinct[digest])
            except ExternalServiceError as exc:
                errors[digest] = str(exc)

        if self.max_in_flight > 1 and len(to_fetch) > 1:
            with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
                list(pool.map(fetch_one, to_fetch))
        else:
            for digest in to_fetch:
                fetch_one(digest)

        if errors:
            failures = {
                s.key: errors[text_digest(s.text)]
                for s in split.sentences
                if text_digest(s.text) in errors
            }
            raise ScoreSplitError(failures)

        result: dict[Key, AttributeScores] = {}
        for sentence in split.sentences:
            if not normalize_text(sentence.text):
                result[sentence.key] = ZERO_SCORES
            else:
                scores = self.cache.get(text_digest(sentence.text))
                assert scores is not None
                result[sentence.key] = scores
        return result


def save_attribute_table(path: str | Path,
                         table: Mapping[Key, AttributeScores]) -> None:
    """Write per-sentence scores as TSV: article_id, index, 12 scores."""
    lines = []
    for aid, idx in sorted(table):
        values = "\t".join(repr(v) for v in table[(aid, idx)].as_tuple())
        lines.append(f"{aid}\t{idx}\t{values}")
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_attribute_table(path: str | Path) -> dict[Key, AttributeScores]:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"attribute table not found: {path}")
    table: dict[Key, AttributeScores] = {}
    for line_no, line in enumerate(
        path.read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2 + len(ATTRIBUTES):
            raise ValidationError(
                f"{path}: line {line_no}: expected {2 + len(ATTRIBUTES)} columns"
            )
        try:
            key = (parts[0], int(parts[1]))
            scores = AttributeScores(*(float(v) for v in parts[2:]))
        except ValueError:
            raise ValidationError(
                f"{path}: line {line_no}: malformed value"
            ) from None
        if key in table:
            raise ValidationError(
                f"{path}: line {line_no}: duplicate key {key[0]}:{key[1]}"
            )
        table[key] = scores
    return table
