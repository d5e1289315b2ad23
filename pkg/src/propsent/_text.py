"""Small text helpers shared by the scoring stub and the probes."""

from __future__ import annotations

import string
import unicodedata

# ASCII punctuation plus the typographic marks common in news text.
_PUNCT = string.punctuation + "“”‘’«»…—–‐‑"


def normalize_text(text: str) -> str:
    """NFC-normalize and collapse all whitespace runs to single spaces."""
    return unicodedata.normalize("NFC", " ".join(text.split()))


def word_tokens(text: str) -> list[str]:
    """Lowercased whitespace tokens with surrounding punctuation stripped."""
    tokens = []
    for raw in text.lower().split():
        tok = raw.strip(_PUNCT)
        if tok:
            tokens.append(tok)
    return tokens
