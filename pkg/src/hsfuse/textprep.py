"""Text cleanup, dictionary-based word segmentation, and spell correction.

The three stages chain per record field: lowercase and strip everything that
is not a letter, split concatenated chunks with a unigram language model, and
repair near-miss tokens against the same frequency dictionary.

Segmentation maximizes the sum of log unigram probabilities; unknown words
are penalized with 1/(total 10^len) so long gibberish never outscores real
dictionary words. Correction is plain Levenshtein (insert, delete,
substitute; no transposition): an in-dictionary token passes through, else
the most frequent candidate at distance 1, else at distance 2, else the
token itself. Frequency ties go to the lexicographically smallest word.
"""

import math
import re
import string
from dataclasses import dataclass

from .data import SampleRecord, TEXT_FIELDS
from .errors import UsageError, ValidationError

_NON_LETTER = re.compile(r"[^a-z]+")
_WORD_RE = re.compile(r"^[a-z]+$")
_LETTERS = string.ascii_lowercase


@dataclass
class FreqDict:
    """Immutable word -> count table with the total kept alongside."""

    counts: dict[str, int]
    total: int

    @classmethod
    def from_counts(cls, counts: dict[str, int]) -> "FreqDict":
        for word, count in counts.items():
            if not _WORD_RE.match(word):
                raise UsageError(f"dictionary word {word!r} must be lowercase letters")
            if count < 1:
                raise UsageError(f"dictionary count for {word!r} must be positive")
        return cls(counts=dict(counts), total=sum(counts.values()))

    @classmethod
    def load(cls, path: str) -> "FreqDict":
        """Parse `word count` lines."""
        counts: dict[str, int] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) != 2:
                    raise ValidationError(f"{path}:{lineno}: expected 'word count'")
                word, count_s = parts
                try:
                    count = int(count_s)
                except ValueError as exc:
                    raise ValidationError(f"{path}:{lineno}: bad count {count_s!r}") from exc
                if not _WORD_RE.match(word) or count < 1:
                    raise ValidationError(f"{path}:{lineno}: bad entry {word!r} {count}")
                if word in counts:
                    raise ValidationError(f"{path}:{lineno}: duplicate word {word!r}")
                counts[word] = count
        return cls(counts=counts, total=sum(counts.values()))

    @classmethod
    def empty(cls) -> "FreqDict":
        return cls(counts={}, total=0)

    def __contains__(self, word: str) -> bool:
        return word in self.counts

    def log_prob(self, word: str) -> float:
        total = max(self.total, 1)
        if word in self.counts:
            return math.log(self.counts[word] / total)
        # unseen word: penalize exponentially in its length
        return math.log(1.0 / total) - len(word) * math.log(10.0)


def clean_text(s: str) -> str:
    """Lowercase, replace every non-letter run with a space, collapse, trim."""
    return _NON_LETTER.sub(" ", s.lower()).strip()


def segment_words(s: str, d: FreqDict) -> list[str]:
    """Best segmentation of a letters-only chunk under the unigram model.

    Ties break toward fewer tokens, then toward the leftmost-longest token.
    """
    if s == "":
        return []
    if not _WORD_RE.match(s):
        raise UsageError(f"segment_words expects lowercase letters only, got {s!r}")
    n = len(s)
    # best[i] = (score, -ntokens, lengths tuple) and backpointer for s[:i];
    # all three compare "bigger is better", lengths desc-lex encodes the
    # leftmost-longest rule applied recursively
    best: list[tuple | None] = [None] * (n + 1)
    back: list[int] = [0] * (n + 1)
    best[0] = (0.0, 0, ())
    for i in range(1, n + 1):
        for j in range(i):
            if best[j] is None:
                continue
            score_j, neg_count_j, lengths_j = best[j]
            cand = (score_j + d.log_prob(s[j:i]), neg_count_j - 1, lengths_j + (i - j,))
            if best[i] is None or cand > best[i]:
                best[i] = cand
                back[i] = j
    tokens = []
    i = n
    while i > 0:
        j = back[i]
        tokens.append(s[j:i])
        i = j
    tokens.reverse()
    return tokens


def _edits1(word: str) -> set[str]:
    # Levenshtein distance exactly <= 1: deletes, substitutes, inserts
    splits = [(word[:i], word[i:]) for i in range(len(word) + 1)]
    deletes = {left + right[1:] for left, right in splits if right}
    substitutes = {left + c + right[1:] for left, right in splits if right for c in _LETTERS}
    inserts = {left + c + right for left, right in splits for c in _LETTERS}
    return deletes | substitutes | inserts


def _best_candidate(candidates: set[str], d: FreqDict) -> str | None:
    known = [w for w in candidates if w in d]
    if not known:
        return None
    # highest frequency; ties go to the lexicographically smallest word
    return min(known, key=lambda w: (-d.counts[w], w))


def correct_token(t: str, d: FreqDict) -> str:
    """In-dictionary tokens pass through; otherwise the most frequent
    dictionary word within edit distance 1, then 2, else the token itself."""
    if not _WORD_RE.match(t):
        raise UsageError(f"correct_token expects lowercase letters only, got {t!r}")
    if t in d:
        return t
    e1 = _edits1(t)
    hit = _best_candidate(e1, d)
    if hit is not None:
        return hit
    e2 = set()
    for e in e1:
        e2 |= _edits1(e)
    hit = _best_candidate(e2, d)
    return hit if hit is not None else t


def preprocess_text(s: str, d: FreqDict) -> str:
    """clean -> per-chunk segmentation -> per-token correction -> rejoin."""
    cleaned = clean_text(s)
    if not cleaned:
        return ""
    tokens = []
    for chunk in cleaned.split(" "):
        for token in segment_words(chunk, d):
            tokens.append(correct_token(token, d))
    return " ".join(tokens)


def preprocess_record(rec: SampleRecord, d: FreqDict) -> SampleRecord:
    text = {key: preprocess_text(value, d) for key, value in rec.text.items() if key in TEXT_FIELDS}
    return SampleRecord(id=rec.id, hs6=rec.hs6, text=text)
